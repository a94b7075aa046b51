// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vmolora/matrix.hpp"
#include "vmolora/rng.hpp"
#include "vmolora/tape.hpp"

namespace vmolora {

/// Per-block adapter ranks, one entry per transformer block, larger ranks on
/// earlier blocks. Entries are >= 1 and monotone non-increasing.
class RankVector {
 public:
  RankVector() = default;
  explicit RankVector(std::vector<int> ranks);

  const std::vector<int>& ranks() const { return ranks_; }
  std::size_t size() const { return ranks_.size(); }
  int operator[](std::size_t i) const { return ranks_[i]; }

  void require_length(std::size_t layers, const char* what) const;
  /// MoRA ranks pair dimensions into 2x2 rotations, so every entry must be even.
  void require_even(const char* what) const;

  friend bool operator==(const RankVector&, const RankVector&) = default;

 private:
  std::vector<int> ranks_;
};

/// ranks[i] = start - step * floor(i / period), clamped at `end`. The last
/// entry must land exactly on `end`.
RankVector stepped_schedule(int start, int end, int step, int period, int layers);

/// Low-rank pair realizing delta_W = scale * B * A, with B (d x r) and A (r x k).
struct LoraAdapter {
  Matrix b;
  Matrix a;
  double scale = 1.0;

  std::size_t rank() const { return a.rows(); }
  std::size_t in_dim() const { return a.cols(); }
  std::size_t out_dim() const { return b.rows(); }

  /// B = 0, A ~ N(0, 0.02^2). Requires rank < min(d, k).
  static LoraAdapter init(std::size_t d, std::size_t k, std::size_t rank, double scale, Rng& rng);
};

/// RoPE angles theta_k = 10000^(-2(k-1)/r_hat), k = 1..r_hat/2.
std::vector<double> rope_angles(std::size_t r_hat);

/// Non-parametric compression/decompression pair around a MoRA square matrix.
///
/// The input (length k) is cut into n_in = ceil(k / r_hat) chunks, the last
/// one zero-padded; chunk j is rotated pairwise by angles j * theta. The
/// decompressor repeats the concatenated n_in * r_hat outputs and truncates
/// to d.
class RotaryCodec {
 public:
  RotaryCodec() = default;
  RotaryCodec(std::size_t r_hat, std::size_t in_dim, std::size_t out_dim);

  std::size_t r_hat() const { return r_hat_; }
  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  std::size_t n_in() const { return n_in_; }
  std::size_t tile() const { return tile_; }
  std::size_t padded_width() const { return n_in_ * r_hat_; }
  const std::vector<double>& angles() const { return angles_; }

  /// Block-diagonal rotation for chunk `j` as an r_hat x r_hat matrix.
  Matrix rotation(std::size_t j) const;

  /// k x (n_in * r_hat) matrix G with x^T G = [b^0 ... b^{n_in-1}] for any
  /// row vector x; used by the batched tape path.
  const Matrix& compression_matrix() const { return compression_; }

  /// Repeats `concat` (length n_in * r_hat) cyclically and truncates to d.
  std::vector<double> decompress(std::span<const double> concat) const;

 private:
  std::size_t r_hat_ = 0;
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  std::size_t n_in_ = 0;
  std::size_t tile_ = 0;
  std::vector<double> angles_;
  Matrix compression_;
};

/// Rotates an r_hat-long chunk: pair (2i, 2i+1) by angle j * theta_{i+1}.
std::vector<double> rotate_chunk(std::span<const double> chunk, std::size_t j,
                                 const RotaryCodec& codec);

/// Splits, pads and rotates `x` into n_in chunks b^0..b^{n_in-1}.
std::vector<std::vector<double>> mora_compress(std::span<const double> x,
                                               const RotaryCodec& codec);

struct MoraAdapter {
  Matrix m;
  RotaryCodec codec;

  /// M = 0. Rejects odd r_hat.
  static MoraAdapter init(std::size_t d, std::size_t k, std::size_t r_hat);
};

/// Adapter contribution f(M g(x)) only.
std::vector<double> mora_forward(const MoraAdapter& adapter, std::span<const double> x);

/// Dense d x k matrix equal to the linear map x -> mora_forward(adapter, x),
/// built block by block from P^j = M R_j.
Matrix materialize_delta_w(const MoraAdapter& adapter);

/// One injection site: frozen W (d x k) plus a LoRA and a MoRA branch.
struct MoLoraLayer {
  Matrix weight;
  LoraAdapter lora;
  MoraAdapter mora;
  std::size_t layer_index = 0;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }

  static MoLoraLayer init(Matrix weight, std::size_t lora_rank, std::size_t mora_rank,
                          double lora_scale, std::size_t layer_index, Rng& rng);
};

/// W x + scale * B (A x). Never forms B A.
std::vector<double> lora_forward(const MoLoraLayer& layer, std::span<const double> x);

/// W x + scale * B (A x) + f(M g(x)).
std::vector<double> molora_forward(const MoLoraLayer& layer, std::span<const double> x);

// Batched differentiable forms over row-major activations (T x k).

/// scale * X A^T B^T
Var lora_delta(Var x, Var a, Var b, double scale);
/// Rows of f(M g(x)) for each row x of X.
Var mora_delta(Var x, Var m, const RotaryCodec& codec);

struct LayerBudget {
  std::size_t layer = 0;
  int lora_rank = 0;
  int mora_rank = 0;
  std::size_t lora_params = 0;
  std::size_t mora_params = 0;
  std::size_t total() const { return lora_params + mora_params; }
};

struct ParamBudget {
  std::vector<LayerBudget> layers;
  std::size_t total = 0;
};

/// Trainable scalars per block: r_l * (d + k) + r_m^2.
ParamBudget param_count(std::size_t d, std::size_t k, const RankVector& lora_ranks,
                        const RankVector& mora_ranks);

}  // namespace vmolora
