// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

// One PASS/FAIL line per acceptance criterion. The end-to-end run drives the
// command-line tool; SGDA_ACCEPT_EPOCHS and SGDA_ACCEPT_SEEDS shrink or grow it.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "froc_oracle.hpp"
#include "sgda/checkpoint.hpp"
#include "sgda/cross_attention.hpp"
#include "sgda/ct.hpp"
#include "sgda/froc.hpp"
#include "sgda/sgda_block.hpp"
#include "sgda/sgse.hpp"
#include "sgda/suite.hpp"

namespace fs = std::filesystem;
using namespace sgda;
using ad::Var;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += "; over the time limit";
  }
  if (!o.pass) ++failures;
  std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Var c(Tensor t) { return ad::constant(std::move(t)); }

SgdaConfig config(std::size_t ch, std::size_t g, std::size_t n, std::size_t r, Fuse fuse) {
  SgdaConfig cfg;
  cfg.channels = ch;
  cfg.groups = g;
  cfg.adapters = n;
  cfg.reduction = r;
  cfg.fuse = fuse;
  return cfg;
}

Shape desk_shape(std::mt19937_64& rng, std::size_t ch) {
  static constexpr std::size_t kExt[] = {4, 8, 12};
  return {ch, kExt[rng() % 3], kExt[rng() % 3], kExt[rng() % 3]};
}

Outcome reductions() {
  std::mt19937_64 rng(774);
  double worst_sgse = 0, worst_da = 0, worst_se = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = oracle::random_tensor(desk_shape(rng, 8), rng, -2, 2);

    SgdaConfig a = config(8, 2, 1, 2, Fuse::mean_only);
    SgdaParams pa = init_params(a, rng);
    fixture::randomize_all(pa, a, rng);
    const Tensor ref_sgse = sgse::forward(nullptr, c(x), pa.bank.adapters[0], {8, 2, 2}).value();
    worst_sgse = std::max(worst_sgse, max_abs_diff(sgda_forward(nullptr, c(x), pa, a).value(), ref_sgse));

    SgdaConfig b = config(8, 1, 3, 2, Fuse::mean_only);
    SgdaParams pb = init_params(b, rng);
    fixture::randomize_all(pb, b, rng);
    Tensor ref_da(x.shape(), 0.0);
    for (Direction d : kAllDirections) {
      const Tensor m = oracle::plain_da(x, fixture::oracle_bank(pb.bank, d), pb.bank.assignment(d).value);
      for (std::size_t i = 0; i < ref_da.size(); ++i) ref_da[i] += m[i] / 3.0;
    }
    worst_da = std::max(worst_da, max_abs_diff(sgda_forward(nullptr, c(x), pb, b).value(), ref_da));

    SgdaConfig s = config(8, 1, 1, 2, Fuse::mean_only);
    SgdaParams ps = init_params(s, rng);
    fixture::randomize_all(ps, s, rng);
    auto& ad0 = ps.bank.adapters[0];
    ad0[Direction::coronal] = ad0[Direction::axial];
    ad0[Direction::sagittal] = ad0[Direction::axial];
    const Tensor ref_se = oracle::plain_se(x, ad0[Direction::axial].w1.value, ad0[Direction::axial].w2.value);
    worst_se = std::max(worst_se, max_abs_diff(sgda_forward(nullptr, c(x), ps, s).value(), ref_se));
  }
  const bool ok = worst_sgse < 1e-12 && worst_da < 1e-12 && worst_se < 1e-12;
  return {ok, "50 inputs each, max |diff| N=1 vs SGSE " + fmt(worst_sgse) + ", G=1 vs 3D-DA " + fmt(worst_da) +
                  ", N=1,G=1 vs 3D-SE " + fmt(worst_se)};
}

Outcome grouped_cross_attention() {
  std::mt19937_64 rng(775);
  bool identical = true;
  double worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    CrossAttnWeights w = make_cross_attn_weights(4);
    for (ad::Parameter* p : {&w.theta, &w.phi, &w.g, &w.ca}) fixture::randomize(*p, rng);
    const Shape shape{4, 8, 4, 8};
    const Tensor xa = oracle::random_tensor(shape, rng), xc = oracle::random_tensor(shape, rng),
                 xs = oracle::random_tensor(shape, rng);
    identical = identical && cross_attention::cross_attend_grouped(nullptr, c(xa), c(xc), c(xs), w, {1}).value() ==
                                 cross_attention::cross_attend(nullptr, c(xa), c(xc), c(xs), w).value();
    for (std::size_t g : {2u, 4u}) {
      const Tensor got = cross_attention::cross_attend_grouped(nullptr, c(xa), c(xc), c(xs), w, {g}).value();
      const Tensor ref =
          oracle::cross_attention(xa, xc, xs, w.theta.value, w.phi.value, w.g.value, w.ca.value, g);
      worst = std::max(worst, max_abs_diff(got, ref));
    }
  }
  return {identical && worst < 1e-10, std::string("G=1 ") + (identical ? "bit-identical" : "DIFFERS") +
                                          ", G in {2,4} max |diff| " + fmt(worst)};
}

Outcome module_gradcheck() {
  const SuiteReport r = gradcheck_suite({});
  std::size_t checked = 0;
  for (const auto& row : r.rows) checked += row.checked;
  return {r.passed, std::to_string(r.rows.size()) + " parameter tensors, " + std::to_string(checked) +
                        " coordinates, worst rel. err " + fmt(r.worst) + ", " + std::to_string(r.reprobed) +
                        " re-probed at a smaller step"};
}

Outcome froc_engine() {
  std::mt19937_64 rng(777);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto f = oracle::random_froc_instance(rng);
    const froc::FrocResult r = froc::froc(f.cands, f.anns, f.scans);
    const auto sweep = oracle::brute_sweep(f.cands, f.anns, f.scans);
    const auto sens = oracle::brute_sensitivities(sweep);
    bool same = r.curve.size() == sweep.size();
    for (std::size_t i = 0; same && i < sweep.size(); ++i)
      same = r.curve[i].threshold == sweep[i].threshold && r.curve[i].fp_per_scan == sweep[i].fp_per_scan &&
             r.curve[i].sensitivity == sweep[i].sensitivity;
    for (std::size_t k = 0; same && k < 7; ++k) same = r.sensitivities[k] == sens[k];
    if (!same) ++mismatches;
  }
  const auto f = oracle::froc_fixture();
  const froc::FrocResult r = froc::froc(f.cands, f.anns, f.scans);
  const std::array<double, 7> want = {1.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3, 2.0 / 3, 2.0 / 3, 2.0 / 3};
  bool fixture_ok = std::abs(r.average - 4.0 / 7.0) < 1e-9;
  for (std::size_t k = 0; k < 7; ++k) fixture_ok = fixture_ok && std::abs(r.sensitivities[k] - want[k]) < 1e-12;
  char avg[32];
  std::snprintf(avg, sizeof avg, "%.5f", r.average);
  return {mismatches == 0 && fixture_ok, std::to_string(1000 - mismatches) +
                                             "/1000 random instances equal the brute-force sweep; fixture average " +
                                             avg + " (4/7 from sensitivities 1/3,1/3,2/3 x5)"};
}

Outcome preprocessing() {
  const bool ends = ct::window_value(ct::kHuLow) == 0.0 && ct::window_value(ct::kHuHigh) == 255.0;

  ct::Volume v;
  v.kind = ct::VoxelKind::windowed;
  v.voxels = Tensor({20, 24, 28}, 3.0);
  const Tensor patch = ct::extract_patch(v, {10, -5, 12}, 32);
  std::size_t outside = 0, wrong = 0;
  for (std::size_t z = 0; z < 32; ++z)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) {
        const bool in = x + 10 < 28 && y >= 5 && y - 5 < 24 && z + 12 < 20;
        const double got = patch[(z * 32 + y) * 32 + x];
        if (!in) ++outside;
        if (got != (in ? 3.0 : 170.0)) ++wrong;
      }

  ct::Volume ramp;
  ramp.voxels = Tensor({9, 11, 13});
  ramp.spacing = {0.7, 1.3, 2.1};
  auto f = [](double x, double y, double z) { return 5.0 + 1.5 * x - 2.25 * y + 0.75 * z; };
  for (std::size_t z = 0; z < 9; ++z)
    for (std::size_t y = 0; y < 11; ++y)
      for (std::size_t x = 0; x < 13; ++x) ramp.at(x, y, z) = f(double(x), double(y), double(z));
  const ct::Volume r = ct::resample_isotropic(ramp, 1.0);
  double worst = 0;
  for (std::size_t z = 0; z < r.depth(); ++z)
    for (std::size_t y = 0; y < r.height(); ++y)
      for (std::size_t x = 0; x < r.width(); ++x) {
        const double px = std::min(double(x) / 0.7, 12.0), py = std::min(double(y) / 1.3, 10.0),
                     pz = std::min(double(z) / 2.1, 8.0);
        worst = std::max(worst, std::abs(r.at(x, y, z) - f(px, py, pz)));
      }
  const bool ok = ends && outside > 0 && wrong == 0 && worst < 1e-6;
  return {ok, std::string("endpoints ") + (ends ? "0/255" : "WRONG") + ", " + std::to_string(outside) +
                  " padded voxels with " + std::to_string(wrong) + " not 170, ramp max |diff| " + fmt(worst)};
}

Outcome parameter_accounting() {
  const fs::path dir = fs::temp_directory_path() / "sgda_accept_count";
  std::size_t checked = 0, mismatches = 0;
  for (std::size_t ch : {8u, 16u, 32u, 64u})
    for (std::size_t g : {1u, 2u, 4u})
      for (std::size_t n : {1u, 2u, 3u, 5u})
        for (std::size_t r : {1u, 2u, 4u, 16u})
          for (Fuse f : {Fuse::mean_only, Fuse::cross_attention}) {
            SgdaConfig cfg = config(ch, g, n, r, f);
            if (ch % r != 0) continue;
            SgdaParams p = init_params(cfg, 1);
            fs::remove_all(dir);
            checkpoint::save(dir, cfg, fixture::collect(p, cfg));
            if (checkpoint::scalar_count(dir) != parameter_count(cfg)) ++mismatches;
            ++checked;
          }
  fs::remove_all(dir);
  const std::size_t example = parameter_count(config(64, 4, 3, 16, Fuse::cross_attention));
  return {mismatches == 0 && example == 13376, std::to_string(checked - mismatches) + "/" + std::to_string(checked) +
                                                   " configs match the saved scalar count; C=64,r=16,N=3,CA gives " +
                                                   std::to_string(example)};
}

// ---- end to end -----------------------------------------------------------

struct Cli {
  int code;
  std::string out;
};

Cli run_cli(const std::string& args) {
  const std::string cmd = SGDA_CLI_PATH " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, "popen failed"};
  std::string out;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

void must(const std::string& args) {
  const Cli r = run_cli(args);
  if (r.code != 0) throw std::runtime_error("'sgda " + args + "' exited " + std::to_string(r.code) + ": " + r.out);
}

std::size_t env_size(const char* name, std::size_t def) {
  const char* v = std::getenv(name);
  return v ? std::stoul(v) : def;
}

double average_from(const std::string& eval_out) {
  const auto at = eval_out.find("average");
  if (at == std::string::npos) throw std::runtime_error("eval printed no average: " + eval_out);
  return std::stod(eval_out.substr(at + 7));
}

struct Variant {
  double mean_froc = 0;
  std::string per_domain;
};

Variant pipeline(const fs::path& work, const std::vector<std::string>& domains, bool sgda, std::size_t seed,
                 std::size_t epochs, double* worst_sum) {
  const fs::path run = work / ((sgda ? "sgda_s" : "base_s") + std::to_string(seed));
  const std::string data = (work / "data").string();
  std::string train = "train --data " + data + " --out " + run.string() + " --seed " + std::to_string(seed) +
                      " --epochs " + std::to_string(epochs) + " --milestones " + std::to_string(epochs * 4 / 5);
  if (!sgda) train += " --no-sgda";
  must(train);
  must("detect --checkpoint " + (run / "checkpoint").string() + " --data " + data + " --out " +
       (run / "detect").string());
  Variant v;
  for (const auto& d : domains) {
    const fs::path dd = run / "detect" / d;
    const Cli e = run_cli("eval --candidates " + (dd / "candidates.csv").string() + " --annotations " +
                          (dd / "annotations.csv").string() + " --scans 5 --out " + (dd / "froc.csv").string());
    if (e.code != 0 || !fs::exists(dd / "froc.csv")) throw std::runtime_error("eval failed for " + d + ": " + e.out);
    const double a = average_from(e.out);
    v.mean_froc += a / static_cast<double>(domains.size());
    v.per_domain += (v.per_domain.empty() ? "" : " ") + d + "=" + fmt(a);
  }
  if (sgda) {
    must("assignments --checkpoint " + (run / "checkpoint").string() + " --data " + data + " --out " +
         (run / "assignments").string());
    std::ifstream is(run / "assignments" / "assignments.json");
    const auto j = nlohmann::json::parse(is);
    if (j.at("assignments").empty()) throw std::runtime_error("empty assignments export");
    for (const auto& row : j.at("assignments")) {
      double s = 0;
      for (double w : row.at("mean_weights")) s += w;
      *worst_sum = std::max(*worst_sum, std::abs(s - 1.0));
    }
  }
  return v;
}

Outcome end_to_end() {
  const fs::path work = fs::current_path() / "acceptance_run";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::size_t epochs = env_size("SGDA_ACCEPT_EPOCHS", 15), seeds = env_size("SGDA_ACCEPT_SEEDS", 3);
  must("synth --out " + (work / "data").string() + " --count 20 --seed 1");
  const std::vector<std::string> domains = {"alpha", "beta", "gamma"};
  double worst_sum = 0, gap = 0, sgda_mean = 0, base_mean = 0;
  for (std::size_t s = 1; s <= seeds; ++s) {
    const Variant a = pipeline(work, domains, true, s, epochs, &worst_sum);
    const Variant b = pipeline(work, domains, false, s, epochs, &worst_sum);
    std::printf("  seed %zu: SGDA mean FROC %.4f (%s), baseline %.4f (%s)\n", s, a.mean_froc, a.per_domain.c_str(),
                b.mean_froc, b.per_domain.c_str());
    std::fflush(stdout);
    sgda_mean += a.mean_froc / static_cast<double>(seeds);
    base_mean += b.mean_froc / static_cast<double>(seeds);
  }
  gap = sgda_mean - base_mean;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%zu seeds x %zu epochs; assignment sums within %.2g of 1; mean FROC SGDA %.4f vs baseline %.4f, "
                "gap %+.4f (informational)",
                seeds, epochs, worst_sum, sgda_mean, base_mean, gap);
  return {worst_sum <= 1e-6, buf};
}

}  // namespace

int main() {
  report("reduction identities", 60, reductions);
  report("grouped cross attention", 60, grouped_cross_attention);
  report("full-module gradient check", 300, module_gradcheck);
  report("FROC engine and fixture", 60, froc_engine);
  report("preprocessing exactness", 0, preprocessing);
  report("parameter accounting", 0, parameter_accounting);
  report("end-to-end pipeline", 0, end_to_end);
  return failures == 0 ? 0 : 1;
}
