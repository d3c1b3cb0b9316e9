// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "sgda/toy_detector.hpp"

using namespace sgda;
using namespace sgda::toy;

TEST_CASE("one domain, 20 volumes, 30 epochs halves the loss") {
  const Dataset alpha = make_dataset(default_domains()[0], 20, 1);
  NetConfig nc;
  nc.datasets = {alpha.id};
  ToyNet net = make_net(nc, 1);
  const TrainResult r = train(net, {alpha}, TrainConfig{});
  REQUIRE(r.epoch_loss.size() == 30);
  MESSAGE("epoch loss " << r.epoch_loss.front() << " -> " << r.epoch_loss.back());
  CHECK(r.epoch_loss.back() < 0.5 * r.epoch_loss.front());
}
