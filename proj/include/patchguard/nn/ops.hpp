#pragma once

#include <vector>

#include "patchguard/nn/graph.hpp"

namespace patchguard::nn {

// Row-major shapes: token matrices are [N, d], images/feature maps are
// [C, H, W], linear weights are [out, in], conv weights are [Co, Ci, kh, kw].

/// x[N,k] · W[d,k]ᵀ (+ b[d]) -> [N,d]. Pass an invalid Var to skip the bias.
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b);

template <class T>
Var add(Graph<T>& g, Var a, Var b);

/// a + s·b
template <class T>
Var add_scaled(Graph<T>& g, Var a, Var b, T s);

template <class T>
Var scale(Graph<T>& g, Var a, T s);

/// Row-wise LayerNorm over the last dimension with affine gamma/beta.
template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps = T(1e-6));

/// tanh approximation.
template <class T>
Var gelu(Graph<T>& g, Var x);

template <class T>
Var relu(Graph<T>& g, Var x);

template <class T>
Var sigmoid(Graph<T>& g, Var x);

/// Multi-head self-attention core on a fused qkv[N, 3d] projection
/// (q, k, v blocks contiguous, heads contiguous inside each block) -> [N,d].
template <class T>
Var attention(Graph<T>& g, Var qkv, std::size_t heads);

/// Per-row 1 - cos(pred_i, target_i) -> [N].
template <class T>
Var cosine_distance_rows(Graph<T>& g, Var pred, Var target);

/// Mean of all elements -> [1].
template <class T>
Var mean(Graph<T>& g, Var x);

/// mean((pred - target)^2) -> [1].
template <class T>
Var mse(Graph<T>& g, Var pred, Var target);

/// 2D convolution of x[Ci,H,W] with square kernel, zero padding.
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, std::size_t stride, std::size_t pad);

/// Nearest-neighbor ×2 upsampling of [C,H,W].
template <class T>
Var upsample2x(Graph<T>& g, Var x);

/// [N, d] token grid (row-major h×w) -> [d, h, w].
template <class T>
Var tokens_to_chw(Graph<T>& g, Var x, std::size_t h, std::size_t w);

/// Elementwise x ⊙ m with a constant m of the same size (dropout masks).
template <class T>
Var mul_constant(Graph<T>& g, Var x, Tensor<T> m);

/// Copies the value and cuts the gradient path.
template <class T>
Var stop_gradient(Graph<T>& g, Var x);

}  // namespace patchguard::nn
