#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vmoe/numkit/graph.hpp"

namespace vmoe::numkit {

// Differentiable ops. All inputs must live on the same Graph.

Var matmul(Var a, Var b);     // a[m,k] * b[k,n]
Var matmul_bt(Var a, Var b);  // a[m,k] * b[n,k]^T, i.e. x * W^T for W stored [out, in]

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var x, Var bias);  // x[m,n] + bias[n] broadcast over rows

Var gelu(Var x);
Var softmax_rows(Var x);
// Softmax over the entries where mask != 0; masked entries are exactly 0.
Var masked_softmax_rows(Var x, const Tensor& mask);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-6);

Var sum(Var x);
Var mean(Var x);
Var column_sum(Var x);  // [m,n] -> [n]
// Squared coefficient of variation (population std over mean) of a vector.
Var cv_squared(Var v);

// Row gather; index -1 produces a zero row. Backward scatter-adds.
Var gather_rows(Var x, std::span<const std::int64_t> index);
Var slice_rows(Var x, std::size_t begin, std::size_t end);
Var concat_rows(std::span<const Var> parts);

// Mean softmax cross-entropy of logits[n, classes] against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

// Multi-head self-attention core over a packed [q | k | v] projection of
// `images` sequences of `seq` tokens each: [images*seq, 3D] -> [images*seq, D].
Var attention(Var qkv, std::size_t images, std::size_t seq, std::size_t heads);

}  // namespace vmoe::numkit
