#pragma once

#include <functional>
#include <vector>

#include "mmvt/tape.hpp"
#include "mmvt/tensor.hpp"

namespace mmvt {

// Differentiable ops. Each records its gradient rule on the active tape when
// an input is tracked there; with no tape they are plain evaluations.
// Shapes must agree exactly; the only broadcast is add_bias over the last
// axis and tile_leading.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

// x [..., W] + bias [W]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// [m,k]x[k,n], [B,m,k]x[B,k,n], or [B,m,k]x[k,n] with a shared rhs
Tensor matmul(const Tensor& a, const Tensor& b);

// [m,k]x[n,k] -> a * b^T, without materializing the transpose
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// non-overlapping t x ph x pw patches of [F,H,W,C] -> [T*S, t*ph*pw*C],
// flattened (dt, y, x, c) with channels fastest
Tensor patch_gather(const Tensor& x, std::size_t t, std::size_t ph, std::size_t pw);

Tensor transpose(const Tensor& x);  // 2-d
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor reshape(const Tensor& x, const std::vector<std::size_t>& dims);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);

// [dims...] -> [n, dims...]; gradient sums over the new axis
Tensor tile_leading(const Tensor& x, std::size_t n);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor gelu(const Tensor& x);
Tensor sum_all(const Tensor& x);

// mean over the batch of CE against the smoothed target distribution:
// 1-s on the true class, s/(C-1) elsewhere
Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& targets,
                              double smoothing);

std::size_t argmax(const Tensor& x);

// central differences (f(x+h) - f(x-h)) / 2h per coordinate; the gradcheck
// oracle, kept independent of the tape machinery
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

}  // namespace mmvt
