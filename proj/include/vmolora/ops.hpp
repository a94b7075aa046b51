// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "vmolora/tape.hpp"

// Differentiable operations recorded on a Tape. Every op validates shapes
// and throws ShapeError naming the offending shapes.
namespace vmolora::ops {

Var matmul(Var a, Var b);
/// a * b^T; used for row-major activations against (out x in) weights.
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x n row to every row of `a`.
Var add_row(Var a, Var row);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
Var transpose(Var a);

/// GPT-2 tanh approximation.
Var gelu(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

Var softmax_rows(Var a);
/// Softmax over a square score matrix with entries above the diagonal
/// masked out (query t attends only to keys <= t).
Var causal_softmax(Var scores);

Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
/// Row-major reinterpretation; rows*cols must be preserved.
Var reshape(Var a, std::size_t rows, std::size_t cols);
/// Zero-pads columns on the right up to `cols`.
Var pad_cols(Var a, std::size_t cols);
/// Repeats the columns of `a` cyclically and truncates to `cols`.
Var tile_cols(Var a, std::size_t cols);

/// Gathers rows of `table` by index.
Var embedding(Var table, std::span<const int> ids);

/// Index marking a position that does not contribute to the loss.
inline constexpr int kIgnore = -1;

/// Mean over non-ignored positions of -log softmax(logits)[t, target_t].
Var cross_entropy(Var logits, std::span<const int> targets);

}  // namespace vmolora::ops
