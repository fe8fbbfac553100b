#pragma once

#include "vmoe/numkit/tensor.hpp"

namespace vmoe::numkit {

// Plain (non-recording) kernels over rank-2 tensors. Every product records
// m*k*n multiply-adds with the active FlopCounter.
Tensor matmul(const Tensor& a, const Tensor& b);     // a[m,k] * b[k,n]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // a[m,k] * b[n,k]^T
Tensor matmul_at(const Tensor& a, const Tensor& b);  // a[k,m]^T * b[k,n]

Tensor softmax_rows(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor transpose(const Tensor& x);

}  // namespace vmoe::numkit
