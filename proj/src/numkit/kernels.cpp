#include "vmoe/numkit/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "vmoe/numkit/flops.hpp"
#include "vmoe/numkit/special.hpp"

namespace vmoe::numkit {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  record_madds(static_cast<std::uint64_t>(m) * k * n);
  return out;
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_bt");
  require_rank2(b, "matmul_bt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_bt: inner dimensions disagree " + shape_string(a.shape()) + " * " +
                     shape_string(b.shape()) + "^T");
  }
  // Transposing first lets the inner loop run along contiguous output rows;
  // each output still accumulates over p in increasing order.
  const Tensor bt = transpose(b);
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = bt.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  record_madds(static_cast<std::uint64_t>(m) * k * n);
  return out;
}

Tensor matmul_at(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_at");
  require_rank2(b, "matmul_at");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul_at: inner dimensions disagree " + shape_string(a.shape()) + "^T * " +
                     shape_string(b.shape()));
  }
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  record_madds(static_cast<std::uint64_t>(m) * k * n);
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    for (auto& v : o) v /= total;
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
  return out;
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  Tensor out({x.cols(), x.rows()});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
  return out;
}

}  // namespace vmoe::numkit
