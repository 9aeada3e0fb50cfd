// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "qebench/tensor.hpp"

namespace qebench {
namespace ops {

// Differentiable op set. Every op allocates a fresh output; when any input is
// on a tape the output is recorded there with a backward closure. Inputs on
// different tapes are an error. Shapes: 1-D vectors [k] and row-major
// matrices [n x k]; conv kernels are [s x in x out].

// -- elementwise ------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// -- linear algebra ---------------------------------------------------------
// y = x W (+ b). x may be [k] or [n x k]; W is [k x m]; b is [m].
Tensor apply_linear(const Tensor& x, const Tensor& w);
Tensor apply_affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // a[n x k] + v[k] rows
Tensor matmul(const Tensor& a, const Tensor& b);     // [n x k] . [k x m]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [n x k] . [m x k]^T
Tensor matvec(const Tensor& a, const Tensor& x);     // [n x k] . [k]
Tensor vecmat(const Tensor& x, const Tensor& a);     // [n] . [n x k]
Tensor outer_add(const Tensor& u, const Tensor& v);  // out[i][j] = u[i]+v[j]

// -- shape surgery ----------------------------------------------------------
Tensor slice(const Tensor& v, std::size_t lo, std::size_t hi);  // 1-D [lo,hi)
Tensor concat(const std::vector<Tensor>& parts);                // 1-D chain
Tensor concat_cols(const std::vector<Tensor>& parts);           // shared rows
Tensor row(const Tensor& a, std::size_t i);
Tensor permute_rows(const Tensor& a, const std::vector<std::size_t>& order);
// Row gather; rows equal to skip_grad_id receive no gradient (padding).
Tensor take_rows(const Tensor& table, const std::vector<std::size_t>& ids,
                 std::size_t skip_grad_id = static_cast<std::size_t>(-1));

// -- reductions / normalizers ----------------------------------------------
Tensor softmax(const Tensor& v);        // 1-D
Tensor softmax_rows(const Tensor& a);   // per-row over a [n x m]
Tensor sum_pool(const Tensor& a);       // [n x d] -> [d]
Tensor sum_all(const Tensor& a);        // -> scalar
Tensor weighted_sum(const Tensor& a, const std::vector<double>& w);  // scalar
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain,
                       const Tensor& shift, double eps);

// -- sequence conv ----------------------------------------------------------
// Positions i..i+s-1 with zero padding on the right: output length equals
// input length. kernel [s x in x out], bias [out].
Tensor conv1d_seq(const Tensor& seq, const Tensor& kernel, const Tensor& bias);

// -- losses -----------------------------------------------------------------
// Stable mean binary cross-entropy with logits; targets are constants
// in [0,1] and receive no gradient.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);

}  // namespace ops
}  // namespace qebench
