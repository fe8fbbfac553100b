#include "vmoe/numkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vmoe/numkit/flops.hpp"
#include "vmoe/numkit/kernels.hpp"
#include "vmoe/numkit/special.hpp"

namespace vmoe::numkit {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void accumulate(Tensor* sink, const Tensor& g) {
  if (!sink) return;
  for (std::size_t i = 0; i < g.size(); ++i) (*sink)[i] += g[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  return g.record(numkit::matmul(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, const Tensor& dy) {
                    if (Tensor* da = g.grad_sink(a)) accumulate(da, matmul_bt(dy, b.value()));
                    if (Tensor* db = g.grad_sink(b)) accumulate(db, matmul_at(a.value(), dy));
                  },
                  "matmul");
}

Var matmul_bt(Var a, Var b) {
  Graph& g = a.graph();
  return g.record(numkit::matmul_bt(a.value(), b.value()), {a, b},
                  [a, b](Graph& g, const Tensor& dy) {
                    if (Tensor* da = g.grad_sink(a)) accumulate(da, numkit::matmul(dy, b.value()));
                    if (Tensor* db = g.grad_sink(b)) accumulate(db, matmul_at(dy, a.value()));
                  },
                  "matmul_bt");
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph().record(std::move(out), {a, b},
                          [a, b](Graph& g, const Tensor& dy) {
                            accumulate(g.grad_sink(a), dy);
                            accumulate(g.grad_sink(b), dy);
                          },
                          "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.graph().record(std::move(out), {a, b},
                          [a, b](Graph& g, const Tensor& dy) {
                            accumulate(g.grad_sink(a), dy);
                            if (Tensor* db = g.grad_sink(b))
                              for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] -= dy[i];
                          },
                          "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.graph().record(std::move(out), {a, b},
                          [a, b](Graph& g, const Tensor& dy) {
                            const Tensor& av = a.value();
                            const Tensor& bv = b.value();
                            if (Tensor* da = g.grad_sink(a))
                              for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
                            if (Tensor* db = g.grad_sink(b))
                              for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
                          },
                          "mul");
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.graph().record(std::move(out), {a},
                          [a, s](Graph& g, const Tensor& dy) {
                            if (Tensor* da = g.grad_sink(a))
                              for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += s * dy[i];
                          },
                          "scale");
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.size() != xv.cols()) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " does not fit " + shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
  return x.graph().record(std::move(out), {x, bias},
                          [x, bias](Graph& g, const Tensor& dy) {
                            accumulate(g.grad_sink(x), dy);
                            if (Tensor* db = g.grad_sink(bias))
                              for (std::size_t r = 0; r < dy.rows(); ++r)
                                for (std::size_t c = 0; c < dy.cols(); ++c) (*db)[c] += dy(r, c);
                          },
                          "add_bias");
}

Var gelu(Var x) {
  return x.graph().record(numkit::gelu(x.value()), {x},
                          [x](Graph& g, const Tensor& dy) {
                            const Tensor& xv = x.value();
                            if (Tensor* dx = g.grad_sink(x))
                              for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * gelu_grad_scalar(xv[i]);
                          },
                          "gelu");
}

namespace {

// dx_i = y_i * (dy_i - sum_j y_j dy_j), row-wise.
void softmax_backward(const Tensor& y, const Tensor& dy, Tensor* dx) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const auto yr = y.row(r);
    const auto dyr = dy.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * dyr[c];
    auto dxr = dx->row(r);
    for (std::size_t c = 0; c < yr.size(); ++c) dxr[c] += yr[c] * (dyr[c] - dot);
  }
}

}  // namespace

Var softmax_rows(Var x) {
  Tensor y = numkit::softmax_rows(x.value());
  Tensor saved = y;
  return x.graph().record(std::move(y), {x},
                          [x, y = std::move(saved)](Graph& g, const Tensor& dy) {
                            if (Tensor* dx = g.grad_sink(x)) softmax_backward(y, dy, dx);
                          },
                          "softmax_rows");
}

Var masked_softmax_rows(Var x, const Tensor& mask) {
  const Tensor& xv = x.value();
  require_same_shape(xv, mask, "masked_softmax_rows");
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < xv.cols(); ++c)
      if (mask(r, c) != 0.0) mx = std::max(mx, xv(r, c));
    if (!std::isfinite(mx)) throw std::invalid_argument("masked_softmax_rows: empty mask row");
    double total = 0.0;
    for (std::size_t c = 0; c < xv.cols(); ++c) {
      if (mask(r, c) != 0.0) {
        y(r, c) = std::exp(xv(r, c) - mx);
        total += y(r, c);
      }
    }
    for (std::size_t c = 0; c < xv.cols(); ++c) y(r, c) /= total;
  }
  Tensor saved = y;
  return x.graph().record(std::move(y), {x},
                          [x, y = std::move(saved)](Graph& g, const Tensor& dy) {
                            if (Tensor* dx = g.grad_sink(x)) softmax_backward(y, dy, dx);
                          },
                          "masked_softmax_rows");
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) throw ShapeError("layer_norm_rows: affine size mismatch");
  Tensor normed(xv.shape());
  Tensor inv_std({n});
  Tensor out(xv.shape());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      normed(r, c) = (row[c] - mu) * inv_std[r];
      out(r, c) = normed(r, c) * gv[c] + bv[c];
    }
  }
  return x.graph().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, normed = std::move(normed), inv_std = std::move(inv_std)](Graph& g, const Tensor& dy) {
        const std::size_t n = dy.rows(), d = dy.cols();
        if (Tensor* dg = g.grad_sink(gamma))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) (*dg)[c] += dy(r, c) * normed(r, c);
        if (Tensor* db = g.grad_sink(beta))
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) (*db)[c] += dy(r, c);
        if (Tensor* dx = g.grad_sink(x)) {
          std::vector<double> dn(d);
          const Tensor& gv = gamma.value();
          for (std::size_t r = 0; r < n; ++r) {
            double mean_dn = 0.0, mean_dn_n = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dn[c] = dy(r, c) * gv[c];
              mean_dn += dn[c];
              mean_dn_n += dn[c] * normed(r, c);
            }
            mean_dn /= static_cast<double>(d);
            mean_dn_n /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c)
              (*dx)(r, c) += inv_std[r] * (dn[c] - mean_dn - normed(r, c) * mean_dn_n);
          }
        }
      },
      "layer_norm_rows");
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.graph().record(Tensor::scalar(total), {x},
                          [x](Graph& g, const Tensor& dy) {
                            if (Tensor* dx = g.grad_sink(x))
                              for (auto& v : dx->data()) v += dy[0];
                          },
                          "sum");
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var column_sum(Var x) {
  const Tensor& xv = x.value();
  Tensor out({xv.cols()});
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < xv.cols(); ++c) out[c] += xv(r, c);
  return x.graph().record(std::move(out), {x},
                          [x](Graph& g, const Tensor& dy) {
                            if (Tensor* dx = g.grad_sink(x))
                              for (std::size_t r = 0; r < dx->rows(); ++r)
                                for (std::size_t c = 0; c < dx->cols(); ++c) (*dx)(r, c) += dy[c];
                          },
                          "column_sum");
}

Var cv_squared(Var v) {
  const Tensor& x = v.value();
  const double n = static_cast<double>(x.size());
  double mu = 0.0;
  for (double e : x.data()) mu += e;
  mu /= n;
  if (!(mu > 0.0)) throw std::domain_error("cv_squared: mean must be positive");
  double var = 0.0;
  for (double e : x.data()) var += (e - mu) * (e - mu);
  var /= n;
  return v.graph().record(Tensor::scalar(var / (mu * mu)), {v},
                          [v, mu, var, n](Graph& g, const Tensor& dy) {
                            if (Tensor* dx = g.grad_sink(v)) {
                              const Tensor& x = v.value();
                              for (std::size_t i = 0; i < x.size(); ++i) {
                                const double d = 2.0 * (x[i] - mu) / (n * mu * mu) - 2.0 * var / (n * mu * mu * mu);
                                (*dx)[i] += dy[0] * d;
                              }
                            }
                          },
                          "cv_squared");
}

Var gather_rows(Var x, std::span<const std::int64_t> index) {
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  Tensor out({index.size(), d});
  for (std::size_t r = 0; r < index.size(); ++r) {
    const std::int64_t src = index[r];
    if (src < 0) continue;
    if (static_cast<std::size_t>(src) >= xv.rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(xv.row(static_cast<std::size_t>(src)).begin(), d, out.row(r).begin());
  }
  return x.graph().record(std::move(out), {x},
                          [x, idx = std::vector<std::int64_t>(index.begin(), index.end())](Graph& g, const Tensor& dy) {
                            Tensor* dx = g.grad_sink(x);
                            if (!dx) return;
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                              if (idx[r] < 0) continue;
                              auto dst = dx->row(static_cast<std::size_t>(idx[r]));
                              const auto src = dy.row(r);
                              for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
                            }
                          },
                          "gather_rows");
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (begin > end || end > xv.rows()) throw std::out_of_range("slice_rows: bad range");
  const std::size_t d = xv.cols();
  Tensor out({end - begin, d});
  std::copy(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
            xv.data().begin() + static_cast<std::ptrdiff_t>(end * d), out.data().begin());
  return x.graph().record(std::move(out), {x},
                          [x, begin, d](Graph& g, const Tensor& dy) {
                            if (Tensor* dx = g.grad_sink(x))
                              for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[begin * d + i] += dy[i];
                          },
                          "slice_rows");
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t d = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != d) throw ShapeError("concat_rows: column mismatch");
    rows += p.value().rows();
  }
  Tensor out({rows, d});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.value().size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts.front().graph().record(std::move(out), parts,
                                      [inputs](Graph& g, const Tensor& dy) {
                                        std::size_t offset = 0;
                                        for (const Var& p : inputs) {
                                          const std::size_t n = p.value().size();
                                          if (Tensor* dp = g.grad_sink(p))
                                            for (std::size_t i = 0; i < n; ++i) (*dp)[i] += dy[offset + i];
                                          offset += n;
                                        }
                                      },
                                      "concat_rows");
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.rows() != labels.size()) throw ShapeError("cross_entropy: label count mismatch");
  Tensor probs = numkit::softmax_rows(z);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) throw std::out_of_range("cross_entropy: label out of range");
    const auto row = z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    loss += mx + std::log(total) - row[static_cast<std::size_t>(y)];
  }
  const double n = static_cast<double>(z.rows());
  return logits.graph().record(
      Tensor::scalar(loss / n), {logits},
      [logits, probs = std::move(probs), ys = std::vector<int>(labels.begin(), labels.end()), n](Graph& g,
                                                                                               const Tensor& dy) {
        Tensor* dz = g.grad_sink(logits);
        if (!dz) return;
        for (std::size_t r = 0; r < probs.rows(); ++r)
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            const double onehot = static_cast<int>(c) == ys[r] ? 1.0 : 0.0;
            (*dz)(r, c) += dy[0] * (probs(r, c) - onehot) / n;
          }
      },
      "cross_entropy");
}

Var attention(Var qkv, std::size_t images, std::size_t seq, std::size_t heads) {
  const Tensor& in = qkv.value();
  if (in.rank() != 2 || in.rows() != images * seq || in.cols() % 3 != 0) {
    throw ShapeError("attention: packed qkv shape " + shape_string(in.shape()));
  }
  const std::size_t d = in.cols() / 3;
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor out({images * seq, d});
  // Attention probabilities per (image, head), kept for the backward pass.
  std::vector<Tensor> probs;
  probs.reserve(images * heads);
  for (std::size_t n = 0; n < images; ++n) {
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor scores({seq, seq});
      for (std::size_t i = 0; i < seq; ++i) {
        const double* q = &in(n * seq + i, h * dh);
        for (std::size_t j = 0; j < seq; ++j) {
          const double* k = &in(n * seq + j, d + h * dh);
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += q[c] * k[c];
          scores(i, j) = acc * inv_sqrt;
        }
      }
      Tensor a = numkit::softmax_rows(scores);
      for (std::size_t i = 0; i < seq; ++i) {
        double* o = &out(n * seq + i, h * dh);
        for (std::size_t j = 0; j < seq; ++j) {
          const double w = a(i, j);
          const double* v = &in(n * seq + j, 2 * d + h * dh);
          for (std::size_t c = 0; c < dh; ++c) o[c] += w * v[c];
        }
      }
      probs.push_back(std::move(a));
    }
  }
  // scores and weighted sum are two [seq, dh] x [dh, seq] sized products per head.
  record_madds(2ULL * images * heads * seq * seq * dh);

  return qkv.graph().record(
      std::move(out), {qkv},
      [qkv, images, seq, heads, d, dh, inv_sqrt, probs = std::move(probs)](Graph& g, const Tensor& dy) {
        Tensor* dqkv = g.grad_sink(qkv);
        if (!dqkv) return;
        const Tensor& in = qkv.value();
        Tensor da({seq, seq});
        for (std::size_t n = 0; n < images; ++n) {
          for (std::size_t h = 0; h < heads; ++h) {
            const Tensor& a = probs[n * heads + h];
            // dA = dO V^T, dV = A^T dO
            for (std::size_t i = 0; i < seq; ++i) {
              const double* dout = &dy(n * seq + i, h * dh);
              for (std::size_t j = 0; j < seq; ++j) {
                const double* v = &in(n * seq + j, 2 * d + h * dh);
                double* dv = &(*dqkv)(n * seq + j, 2 * d + h * dh);
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  acc += dout[c] * v[c];
                  dv[c] += a(i, j) * dout[c];
                }
                da(i, j) = acc;
              }
            }
            // Softmax backward in place: dS = A * (dA - rowdot(dA, A)).
            for (std::size_t i = 0; i < seq; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < seq; ++j) dot += da(i, j) * a(i, j);
              for (std::size_t j = 0; j < seq; ++j) da(i, j) = a(i, j) * (da(i, j) - dot) * inv_sqrt;
            }
            // dQ = dS K, dK = dS^T Q
            for (std::size_t i = 0; i < seq; ++i) {
              const double* q = &in(n * seq + i, h * dh);
              double* dq = &(*dqkv)(n * seq + i, h * dh);
              for (std::size_t j = 0; j < seq; ++j) {
                const double s = da(i, j);
                const double* k = &in(n * seq + j, d + h * dh);
                double* dk = &(*dqkv)(n * seq + j, d + h * dh);
                for (std::size_t c = 0; c < dh; ++c) {
                  dq[c] += s * k[c];
                  dk[c] += s * q[c];
                }
              }
            }
          }
        }
      },
      "attention");
}

}  // namespace vmoe::numkit
