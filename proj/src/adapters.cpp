// SPDX-License-Identifier: Apache-2.0

#include "vmolora/adapters.hpp"

#include <cmath>
#include <string>

#include "vmolora/ops.hpp"

namespace vmolora {

namespace {

std::string join(const std::vector<int>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s + "]";
}

}  // namespace

RankVector::RankVector(std::vector<int> ranks) : ranks_(std::move(ranks)) {
  if (ranks_.empty()) throw ContractError("rank vector is empty");
  for (std::size_t i = 0; i < ranks_.size(); ++i) {
    if (ranks_[i] < 1) {
      throw ContractError("rank vector " + join(ranks_) + " has entry < 1 at block " +
                          std::to_string(i));
    }
    if (i > 0 && ranks_[i] > ranks_[i - 1]) {
      throw ContractError("rank vector " + join(ranks_) + " increases at block " +
                          std::to_string(i));
    }
  }
}

void RankVector::require_length(std::size_t layers, const char* what) const {
  if (ranks_.size() != layers) {
    throw ContractError(std::string(what) + " rank vector has " + std::to_string(ranks_.size()) +
                        " entries for " + std::to_string(layers) + " blocks");
  }
}

void RankVector::require_even(const char* what) const {
  for (std::size_t i = 0; i < ranks_.size(); ++i) {
    if (ranks_[i] % 2 != 0) {
      throw ContractError(std::string(what) + " rank " + std::to_string(ranks_[i]) +
                          " at block " + std::to_string(i) + " is odd");
    }
  }
}

RankVector stepped_schedule(int start, int end, int step, int period, int layers) {
  const std::string args = "(" + std::to_string(start) + ", " + std::to_string(end) + ", " +
                           std::to_string(step) + ", " + std::to_string(period) + ", " +
                           std::to_string(layers) + ")";
  if (layers < 1 || period < 1 || step < 0 || end < 1 || start < end) {
    throw ContractError("infeasible schedule " + args);
  }
  if (step == 0 && start != end) {
    throw ContractError("infeasible schedule " + args + ": zero step needs start == end");
  }
  if (step > 0 && (start - end) % step != 0) {
    throw ContractError("infeasible schedule " + args + ": step does not divide start - end");
  }
  std::vector<int> ranks(static_cast<std::size_t>(layers));
  for (int i = 0; i < layers; ++i) {
    ranks[static_cast<std::size_t>(i)] = std::max(end, start - step * (i / period));
  }
  if (ranks.back() != end) {
    throw ContractError("infeasible schedule " + args + ": last block reaches " +
                        std::to_string(ranks.back()) + ", not " + std::to_string(end));
  }
  return RankVector(std::move(ranks));
}

LoraAdapter LoraAdapter::init(std::size_t d, std::size_t k, std::size_t rank, double scale,
                              Rng& rng) {
  if (rank < 1 || rank >= std::min(d, k)) {
    throw ContractError("LoRA rank " + std::to_string(rank) + " must lie in [1, min(" +
                        std::to_string(d) + ", " + std::to_string(k) + "))");
  }
  LoraAdapter out;
  out.b = Matrix(d, rank);
  out.a = Matrix(rank, k);
  for (double& v : out.a.data()) v = rng.normal(0.0, 0.02);
  out.scale = scale;
  return out;
}

std::vector<double> rope_angles(std::size_t r_hat) {
  if (r_hat < 2 || r_hat % 2 != 0) {
    throw ContractError("rotary rank must be even and >= 2, got " + std::to_string(r_hat));
  }
  std::vector<double> angles(r_hat / 2);
  for (std::size_t k = 1; k <= angles.size(); ++k) {
    angles[k - 1] =
        std::pow(10000.0, -2.0 * static_cast<double>(k - 1) / static_cast<double>(r_hat));
  }
  return angles;
}

RotaryCodec::RotaryCodec(std::size_t r_hat, std::size_t in_dim, std::size_t out_dim)
    : r_hat_(r_hat), in_dim_(in_dim), out_dim_(out_dim), angles_(rope_angles(r_hat)) {
  if (in_dim == 0 || out_dim == 0) throw ShapeError("rotary codec needs positive dimensions");
  n_in_ = (in_dim + r_hat - 1) / r_hat;
  tile_ = (out_dim + padded_width() - 1) / padded_width();
  compression_ = Matrix(in_dim, padded_width());
  for (std::size_t j = 0; j < n_in_; ++j) {
    const Matrix rot = rotation(j);
    for (std::size_t p = 0; p < r_hat; ++p) {
      for (std::size_t q = 0; q < r_hat; ++q) {
        const std::size_t c = j * r_hat + q;
        if (c < in_dim) compression_(c, j * r_hat + p) = rot(p, q);
      }
    }
  }
}

Matrix RotaryCodec::rotation(std::size_t j) const {
  Matrix r(r_hat_, r_hat_);
  for (std::size_t i = 0; i < angles_.size(); ++i) {
    const double phi = static_cast<double>(j) * angles_[i];
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    r(2 * i, 2 * i) = c;
    r(2 * i, 2 * i + 1) = -s;
    r(2 * i + 1, 2 * i) = s;
    r(2 * i + 1, 2 * i + 1) = c;
  }
  return r;
}

std::vector<double> RotaryCodec::decompress(std::span<const double> concat) const {
  if (concat.size() != padded_width()) {
    throw ShapeError("decompress: expected " + std::to_string(padded_width()) +
                     " values, got " + std::to_string(concat.size()));
  }
  std::vector<double> out(out_dim_);
  for (std::size_t i = 0; i < out_dim_; ++i) out[i] = concat[i % concat.size()];
  return out;
}

std::vector<double> rotate_chunk(std::span<const double> chunk, std::size_t j,
                                 const RotaryCodec& codec) {
  if (chunk.size() != codec.r_hat()) {
    throw ShapeError("rotate_chunk: chunk length " + std::to_string(chunk.size()) +
                     " != rank " + std::to_string(codec.r_hat()));
  }
  std::vector<double> out(chunk.size());
  const auto& angles = codec.angles();
  for (std::size_t i = 0; i < angles.size(); ++i) {
    const double phi = static_cast<double>(j) * angles[i];
    const double c = std::cos(phi);
    const double s = std::sin(phi);
    const double x0 = chunk[2 * i];
    const double x1 = chunk[2 * i + 1];
    out[2 * i] = c * x0 - s * x1;
    out[2 * i + 1] = s * x0 + c * x1;
  }
  return out;
}

std::vector<std::vector<double>> mora_compress(std::span<const double> x,
                                               const RotaryCodec& codec) {
  if (x.size() != codec.in_dim()) {
    throw ShapeError("mora_compress: input length " + std::to_string(x.size()) + " != " +
                     std::to_string(codec.in_dim()));
  }
  const std::size_t r = codec.r_hat();
  std::vector<std::vector<double>> chunks;
  chunks.reserve(codec.n_in());
  for (std::size_t j = 0; j < codec.n_in(); ++j) {
    std::vector<double> chunk(r, 0.0);
    for (std::size_t p = 0; p < r && j * r + p < x.size(); ++p) chunk[p] = x[j * r + p];
    chunks.push_back(rotate_chunk(chunk, j, codec));
  }
  return chunks;
}

MoraAdapter MoraAdapter::init(std::size_t d, std::size_t k, std::size_t r_hat) {
  MoraAdapter out;
  out.codec = RotaryCodec(r_hat, k, d);
  out.m = Matrix(r_hat, r_hat);
  return out;
}

std::vector<double> mora_forward(const MoraAdapter& adapter, std::span<const double> x) {
  const auto chunks = mora_compress(x, adapter.codec);
  std::vector<double> concat;
  concat.reserve(adapter.codec.padded_width());
  for (const auto& b : chunks) {
    const auto y = matvec(adapter.m, b);
    concat.insert(concat.end(), y.begin(), y.end());
  }
  return adapter.codec.decompress(concat);
}

Matrix materialize_delta_w(const MoraAdapter& adapter) {
  const RotaryCodec& codec = adapter.codec;
  const std::size_t r = codec.r_hat();
  const std::size_t width = codec.padded_width();
  // Square block-diagonal of P^j = M R_j over the padded input.
  Matrix block(width, width);
  for (std::size_t j = 0; j < codec.n_in(); ++j) {
    const Matrix p = matmul(adapter.m, codec.rotation(j));
    for (std::size_t a = 0; a < r; ++a) {
      for (std::size_t b = 0; b < r; ++b) block(j * r + a, j * r + b) = p(a, b);
    }
  }
  // Drop pad columns, then repeat rows down to d.
  Matrix out(codec.out_dim(), codec.in_dim());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const std::size_t src = i % width;
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) = block(src, c);
  }
  return out;
}

MoLoraLayer MoLoraLayer::init(Matrix weight, std::size_t lora_rank, std::size_t mora_rank,
                              double lora_scale, std::size_t layer_index, Rng& rng) {
  MoLoraLayer layer;
  const std::size_t d = weight.rows();
  const std::size_t k = weight.cols();
  layer.lora = LoraAdapter::init(d, k, lora_rank, lora_scale, rng);
  layer.mora = MoraAdapter::init(d, k, mora_rank);
  layer.weight = std::move(weight);
  layer.layer_index = layer_index;
  return layer;
}

namespace {

void add_lora(const LoraAdapter& lora, std::span<const double> x, std::vector<double>& out) {
  const auto ax = matvec(lora.a, x);
  const auto bax = matvec(lora.b, ax);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += lora.scale * bax[i];
}

}  // namespace

std::vector<double> lora_forward(const MoLoraLayer& layer, std::span<const double> x) {
  auto out = matvec(layer.weight, x);
  add_lora(layer.lora, x, out);
  return out;
}

std::vector<double> molora_forward(const MoLoraLayer& layer, std::span<const double> x) {
  auto out = matvec(layer.weight, x);
  add_lora(layer.lora, x, out);
  const auto mora = mora_forward(layer.mora, x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += mora[i];
  return out;
}

Var lora_delta(Var x, Var a, Var b, double scale) {
  Var down = ops::matmul_nt(x, a);
  Var up = ops::matmul_nt(down, b);
  return scale == 1.0 ? up : ops::scale(up, scale);
}

Var mora_delta(Var x, Var m, const RotaryCodec& codec) {
  if (x.cols() != codec.in_dim()) {
    throw ShapeError("mora_delta: input width " + std::to_string(x.cols()) + " != " +
                     std::to_string(codec.in_dim()));
  }
  Tape& tape = *x.tape;
  const std::size_t rows = x.rows();
  const std::size_t r = codec.r_hat();
  Var compressed = ops::matmul(x, tape.constant_ref(codec.compression_matrix()));
  Var chunks = ops::reshape(compressed, rows * codec.n_in(), r);
  Var mixed = ops::matmul_nt(chunks, m);
  Var concat = ops::reshape(mixed, rows, codec.padded_width());
  return ops::tile_cols(concat, codec.out_dim());
}

ParamBudget param_count(std::size_t d, std::size_t k, const RankVector& lora_ranks,
                        const RankVector& mora_ranks) {
  if (lora_ranks.size() != mora_ranks.size()) {
    throw ContractError("param_count: LoRA vector has " + std::to_string(lora_ranks.size()) +
                        " entries, MoRA vector has " + std::to_string(mora_ranks.size()));
  }
  ParamBudget budget;
  for (std::size_t i = 0; i < lora_ranks.size(); ++i) {
    LayerBudget row;
    row.layer = i;
    row.lora_rank = lora_ranks[i];
    row.mora_rank = mora_ranks[i];
    row.lora_params = static_cast<std::size_t>(lora_ranks[i]) * (d + k);
    row.mora_params = static_cast<std::size_t>(mora_ranks[i]) * static_cast<std::size_t>(mora_ranks[i]);
    budget.total += row.total();
    budget.layers.push_back(row);
  }
  return budget;
}

}  // namespace vmolora
