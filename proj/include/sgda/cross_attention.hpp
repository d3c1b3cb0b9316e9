// Copyright (c) 2026, The sgda3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Three-way cross attention over the axial, coronal and sagittal maps.
//
// The axial map supplies queries, the coronal map keys and the sagittal map
// values, each through a 1x1x1 embedding to C/2 channels; keys and values are
// then max-pooled (2x2x2). Each query position takes a softmax-weighted
// average of value vectors over the pooled positions. The result is lifted
// back to C channels and added to the mean of the three maps.

#pragma once

#include <cstddef>

#include "sgda/autodiff.hpp"

namespace sgda {

struct CrossAttnWeights {
  ad::Parameter theta;  // [C/2, C] query embedding
  ad::Parameter phi;    // [C/2, C] key embedding
  ad::Parameter g;      // [C/2, C] value embedding
  ad::Parameter ca;     // [C, C/2] output projection
};

CrossAttnWeights make_cross_attn_weights(std::size_t channels);

struct CrossAttnConfig {
  /// Matching depth groups. 1 is the ungrouped form.
  std::size_t groups = 1;
};

namespace cross_attention {

/// Throws ConfigError unless C is even, the spatial extents are even, and both
/// the full and pooled depth divide into `groups`.
void validate(const Shape& x, std::size_t groups);

ad::Var cross_attend(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc, const ad::Var& xs,
                     CrossAttnWeights& w);

/// Queries split along the full depth, keys/values along the pooled depth;
/// per-group outputs are concatenated along depth.
ad::Var cross_attend_grouped(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc,
                             const ad::Var& xs, CrossAttnWeights& w, const CrossAttnConfig& cfg);

/// The ungrouped [S, s] attention matrix (rows sum to one).
ad::Var attention_weights(ad::Tape* tape, const ad::Var& xa, const ad::Var& xc,
                          CrossAttnWeights& w);

}  // namespace cross_attention
}  // namespace sgda
