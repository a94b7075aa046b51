// SPDX-License-Identifier: Apache-2.0

#include "vmolora/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eigen_view.hpp"

namespace vmolora::ops {

using detail::view;

namespace {

void accumulate(Tape& t, Var v, const Matrix& g) {
  if (t.requires_grad(v)) axpy(1.0, g, t.grad(v));
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

std::string shapes(const Matrix& a, const Matrix& b) {
  return a.shape_string() + " and " + b.shape_string();
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  Matrix out = vmolora::matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) view(t.grad(a)).noalias() += view(g) * view(b.value()).transpose();
    if (t.requires_grad(b)) view(t.grad(b)).noalias() += view(a.value()).transpose() * view(g);
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  Matrix out = vmolora::matmul_nt(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) view(t.grad(a)).noalias() += view(g) * view(b.value());
    if (t.requires_grad(b)) view(t.grad(b)).noalias() += view(g).transpose() * view(a.value());
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: shape mismatch " + shapes(a.value(), b.value()));
  }
  Matrix out = vmolora::add(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: cannot broadcast " + rv.shape_string() + " over " +
                     av.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += rv(0, c);
  }
  return a.tape->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    accumulate(t, a, g);
    if (t.requires_grad(row)) {
      Matrix& gr = t.grad(row);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
      }
    }
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("mul: shape mismatch " + shapes(a.value(), b.value()));
  }
  Matrix out = a.value();
  auto bd = b.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    auto gd = g.data();
    if (t.requires_grad(a)) {
      auto dst = t.grad(a).data();
      auto bv = b.value().data();
      for (std::size_t i = 0; i < gd.size(); ++i) dst[i] += gd[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto dst = t.grad(b).data();
      auto av = a.value().data();
      for (std::size_t i = 0; i < gd.size(); ++i) dst[i] += gd[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Matrix out = vmolora::scale(a.value(), s);
  return a.tape->record(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) {
    axpy(s, g, t.grad(a));
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return a.tape->record(Matrix(1, 1, total), {a}, [a](Tape& t, const Matrix& g) {
    for (double& v : t.grad(a).data()) v += g(0, 0);
  });
}

Var transpose(Var a) {
  return a.tape->record(vmolora::transpose(a.value()), {a}, [a](Tape& t, const Matrix& g) {
    view(t.grad(a)) += view(g).transpose();
  });
}

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Var gelu(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  auto xd = x.data();
  auto od = out.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    od[i] = 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v)));
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    auto xv = a.value().data();
    auto gd = g.data();
    auto dst = t.grad(a).data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double th = std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v));
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
      dst[i] += gd[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain " + gain.value().shape_string() + " / bias " +
                     bias.value().shape_string() + " do not match input " + xv.shape_string());
  }
  Matrix normed(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  Matrix out(xv.rows(), n);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      normed(r, c) = (in[c] - mean) * inv;
      out(r, c) = normed(r, c) * gv(0, c) + bv(0, c);
    }
  }
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](
          Tape& t, const Matrix& g) {
        const std::size_t n = normed.cols();
        const Matrix& gv = gain.value();
        if (t.requires_grad(gain) || t.requires_grad(bias)) {
          Matrix& gg = t.grad(gain);
          Matrix& gb = t.grad(bias);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              gg(0, c) += g(r, c) * normed(r, c);
              gb(0, c) += g(r, c);
            }
          }
        }
        if (!t.requires_grad(x)) return;
        Matrix& gx = t.grad(x);
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          double sum_d = 0.0;
          double sum_dx = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            dxhat[c] = g(r, c) * gv(0, c);
            sum_d += dxhat[c];
            sum_dx += dxhat[c] * normed(r, c);
          }
          const double k = inv_std[r] / static_cast<double>(n);
          for (std::size_t c = 0; c < n; ++c) {
            gx(r, c) += k * (static_cast<double>(n) * dxhat[c] - sum_d - normed(r, c) * sum_dx);
          }
        }
      });
}

namespace {

// dL/dx for y = softmax(x) row-wise: y * (g - <g, y>).
void softmax_backward(const Matrix& y, const Matrix& g, Matrix& gx) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
    for (std::size_t c = 0; c < y.cols(); ++c) gx(r, c) += y(r, c) * (g(r, c) - dot);
  }
}

}  // namespace

Var softmax_rows(Var a) {
  Matrix out = vmolora::softmax_rows(a.value());
  Matrix cached = out;
  return a.tape->record(std::move(out), {a}, [a, y = std::move(cached)](Tape& t, const Matrix& g) {
    softmax_backward(y, g, t.grad(a));
  });
}

Var causal_softmax(Var scores) {
  const Matrix& s = scores.value();
  if (s.rows() != s.cols()) {
    throw ShapeError("causal_softmax: scores must be square, got " + s.shape_string());
  }
  const std::size_t n = s.rows();
  Matrix out(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = s(r, 0);
    for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, s(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c <= r; ++c) {
      out(r, c) = std::exp(s(r, c) - mx);
      total += out(r, c);
    }
    for (std::size_t c = 0; c <= r; ++c) out(r, c) /= total;
  }
  Matrix cached = out;
  return scores.tape->record(std::move(out), {scores},
                             [scores, y = std::move(cached)](Tape& t, const Matrix& g) {
                               softmax_backward(y, g, t.grad(scores));
                             });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Matrix& av = a.value();
  if (count == 0 || start + count > av.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + av.shape_string());
  }
  Matrix out(av.rows(), count);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy_n(av.row(r).begin() + static_cast<std::ptrdiff_t>(start), count,
                out.row(r).begin());
  }
  return a.tape->record(std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < count; ++c) ga(r, start + c) += g(r, c);
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shapes(parts[0].value(), p.value()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.row(r).begin(), pv.row(r).end(),
                out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), inputs, [inputs](Tape& t, const Matrix& g) {
    std::size_t off = 0;
    for (Var p : inputs) {
      const std::size_t w = p.cols();
      if (t.requires_grad(p)) {
        Matrix& gp = t.grad(p);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += g(r, off + c);
        }
      }
      off += w;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shapes(parts[0].value(), p.value()));
    }
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (Var p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(Matrix(rows, cols, std::move(data)), inputs,
                               [inputs](Tape& t, const Matrix& g) {
                                 std::size_t off = 0;
                                 for (Var p : inputs) {
                                   const std::size_t n = p.value().size();
                                   if (t.requires_grad(p)) {
                                     auto dst = t.grad(p).data();
                                     for (std::size_t i = 0; i < n; ++i) dst[i] += g.data()[off + i];
                                   }
                                   off += n;
                                 }
                               });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Matrix& av = a.value();
  if (rows * cols != av.size()) {
    throw ShapeError("reshape: cannot view " + av.shape_string() + " as " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out(rows, cols, std::vector<double>(av.data().begin(), av.data().end()));
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    auto dst = t.grad(a).data();
    auto src = g.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  });
}

Var pad_cols(Var a, std::size_t cols) {
  const Matrix& av = a.value();
  if (cols < av.cols()) {
    throw ShapeError("pad_cols: target width " + std::to_string(cols) + " narrower than " +
                     av.shape_string());
  }
  Matrix out(av.rows(), cols);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, c);
    }
  });
}

Var tile_cols(Var a, std::size_t cols) {
  const Matrix& av = a.value();
  if (cols == 0) throw ShapeError("tile_cols: zero target width");
  const std::size_t w = av.cols();
  Matrix out(av.rows(), cols);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = av(r, c % w);
  }
  return a.tape->record(std::move(out), {a}, [a, w](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(a);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c % w) += g(r, c);
    }
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw ContractError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                          std::to_string(tv.rows()) + " rows");
    }
    auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return table.tape->record(std::move(out), {table},
                            [table, idx = std::vector<int>(ids.begin(), ids.end())](
                                Tape& t, const Matrix& g) {
                              Matrix& gt = t.grad(table);
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                auto dst = gt.row(static_cast<std::size_t>(idx[i]));
                                auto src = g.row(i);
                                for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                              }
                            });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  const Matrix& z = logits.value();
  if (targets.size() != z.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + z.shape_string());
  }
  std::size_t counted = 0;
  for (int t : targets) {
    if (t == kIgnore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= z.cols()) {
      throw ContractError("cross_entropy: target id " + std::to_string(t) +
                          " out of range for vocabulary of " + std::to_string(z.cols()));
    }
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy: every position is ignored");
  Matrix probs = vmolora::softmax_rows(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (targets[r] == kIgnore) continue;
    auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    loss += (mx + std::log(total)) - row[static_cast<std::size_t>(targets[r])];
  }
  const double inv = 1.0 / static_cast<double>(counted);
  return logits.tape->record(
      Matrix(1, 1, loss * inv), {logits},
      [logits, probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
       inv](Tape& t, const Matrix& g) {
        Matrix& gz = t.grad(logits);
        const double s = g(0, 0) * inv;
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          if (tg[r] == kIgnore) continue;
          for (std::size_t c = 0; c < probs.cols(); ++c) gz(r, c) += s * probs(r, c);
          gz(r, static_cast<std::size_t>(tg[r])) -= s;
        }
      });
}

}  // namespace vmolora::ops
