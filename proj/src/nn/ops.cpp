#include "patchguard/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "patchguard/core/errors.hpp"
#include "patchguard/simd/kernels.hpp"

namespace patchguard::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw DimensionMismatch(what);
}

template <class T>
bool any_grad(Graph<T>& g, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (v.valid() && g.requires_grad(v)) return true;
  return false;
}

template <class T>
bool wants(Graph<T>& g, Var v) {
  return v.valid() && g.requires_grad(v);
}

// Id the next pushed node will receive; closures capture it to find their
// own output gradient.
template <class T>
Var next_var(Graph<T>& g) {
  return Var{g.size()};
}

}  // namespace

template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1), "linear: shape mismatch");
  const std::size_t n = xv.dim(0), k = xv.dim(1), d = wv.dim(0);
  Tensor<T> y({n, d});
  simd::gemm(false, true, n, d, k, T{1}, xv.ptr(), k, wv.ptr(), k, T{0}, y.ptr(), d);
  if (b.valid()) {
    const auto& bv = g.value(b);
    require(bv.numel() == d, "linear: bias size");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) y.data[i * d + j] += bv.data[j];
  }
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x, w, b}), [&g, x, w, b, out, n, k, d]() {
    const auto& dy = g.grad(out);
    if (wants(g, x)) {
      simd::gemm(false, false, n, k, d, T{1}, dy.ptr(), d, g.value(w).ptr(), k, T{1}, g.grad(x).ptr(), k);
    }
    if (wants(g, w)) {
      simd::gemm(true, false, d, k, n, T{1}, dy.ptr(), d, g.value(x).ptr(), k, T{1}, g.grad(w).ptr(), k);
    }
    if (wants(g, b)) {
      auto& db = g.grad(b);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) db.data[j] += dy.data[i * d + j];
    }
  });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  return add_scaled(g, a, b, T{1});
}

template <class T>
Var add_scaled(Graph<T>& g, Var a, Var b, T s) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require(av.numel() == bv.numel(), "add: size mismatch");
  Tensor<T> y = av;
  simd::axpy(y.numel(), s, bv.ptr(), y.ptr());
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {a, b}), [&g, a, b, s, out]() {
    const auto& dy = g.grad(out);
    if (wants(g, a)) simd::axpy(dy.numel(), T{1}, dy.ptr(), g.grad(a).ptr());
    if (wants(g, b)) simd::axpy(dy.numel(), s, dy.ptr(), g.grad(b).ptr());
  });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s) {
  Tensor<T> y = g.value(a);
  for (auto& v : y.data) v *= s;
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {a}), [&g, a, s, out]() {
    const auto& dy = g.grad(out);
    simd::axpy(dy.numel(), s, dy.ptr(), g.grad(a).ptr());
  });
}

template <class T>
Var layer_norm(Graph<T>& g, Var x, Var gamma, Var beta, T eps) {
  const auto& xv = g.value(x);
  require(xv.rank() == 2, "layer_norm: expects [N,d]");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  const auto& gv = g.value(gamma);
  const auto& bv = g.value(beta);
  require(gv.numel() == d && bv.numel() == d, "layer_norm: affine size");
  Tensor<T> y({n, d});
  Tensor<T> xhat({n, d});
  std::vector<T> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = xv.ptr() + i * d;
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat.data[i * d + j] = h;
      y.data[i * d + j] = h * gv.data[j] + bv.data[j];
    }
  }
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x, gamma, beta}),
                [&g, x, gamma, beta, out, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)]() {
                  const auto& dy = g.grad(out);
                  const auto& gv = g.value(gamma);
                  if (wants(g, gamma) || wants(g, beta)) {
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < d; ++j) {
                        const T gy = dy.data[i * d + j];
                        if (wants(g, gamma)) g.grad(gamma).data[j] += gy * xhat.data[i * d + j];
                        if (wants(g, beta)) g.grad(beta).data[j] += gy;
                      }
                    }
                  }
                  if (wants(g, x)) {
                    auto& dx = g.grad(x);
                    for (std::size_t i = 0; i < n; ++i) {
                      T m1{0}, m2{0};
                      for (std::size_t j = 0; j < d; ++j) {
                        const T dh = dy.data[i * d + j] * gv.data[j];
                        m1 += dh;
                        m2 += dh * xhat.data[i * d + j];
                      }
                      m1 /= static_cast<T>(d);
                      m2 /= static_cast<T>(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        const T dh = dy.data[i * d + j] * gv.data[j];
                        dx.data[i * d + j] += inv_std[i] * (dh - m1 - xhat.data[i * d + j] * m2);
                      }
                    }
                  }
                });
}

template <class T>
Var gelu(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  const T c = std::sqrt(T{2} / T(M_PI));
  Tensor<T> y(xv.shape);
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const T v = xv.data[i];
    y.data[i] = T(0.5) * v * (T{1} + std::tanh(c * (v + T(0.044715) * v * v * v)));
  }
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out, c]() {
    const auto& dy = g.grad(out);
    const auto& xv = g.value(x);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const T v = xv.data[i];
      const T u = c * (v + T(0.044715) * v * v * v);
      const T t = std::tanh(u);
      const T du = c * (T{1} + T(3 * 0.044715) * v * v);
      dx.data[i] += dy.data[i] * (T(0.5) * (T{1} + t) + T(0.5) * v * (T{1} - t * t) * du);
    }
  });
}

template <class T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> y = g.value(x);
  for (auto& v : y.data) v = v > T{0} ? v : T{0};
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out]() {
    const auto& dy = g.grad(out);
    const auto& xv = g.value(x);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < xv.numel(); ++i)
      if (xv.data[i] > T{0}) dx.data[i] += dy.data[i];
  });
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  Tensor<T> y = g.value(x);
  for (auto& v : y.data) v = T{1} / (T{1} + std::exp(-v));
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out]() {
    const auto& dy = g.grad(out);
    const auto& yv = g.value(out);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < yv.numel(); ++i) dx.data[i] += dy.data[i] * yv.data[i] * (T{1} - yv.data[i]);
  });
}

template <class T>
Var attention(Graph<T>& g, Var qkv, std::size_t heads) {
  const auto& qv = g.value(qkv);
  require(qv.rank() == 2 && qv.dim(1) % 3 == 0, "attention: expects [N,3d]");
  const std::size_t n = qv.dim(0), d = qv.dim(1) / 3;
  require(heads > 0 && d % heads == 0, "attention: d not divisible by heads");
  const std::size_t dh = d / heads, ld = 3 * d;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  Tensor<T> probs({heads, n, n});
  Tensor<T> y({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const T* q = qv.ptr() + h * dh;
    const T* k = qv.ptr() + d + h * dh;
    const T* v = qv.ptr() + 2 * d + h * dh;
    T* p = probs.ptr() + h * n * n;
    simd::gemm(false, true, n, n, dh, sc, q, ld, k, ld, T{0}, p, n);
    for (std::size_t i = 0; i < n; ++i) {
      T* row = p + i * n;
      const T mx = *std::max_element(row, row + n);
      T sum{0};
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T{1} / sum;
      for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
    }
    simd::gemm(false, false, n, dh, n, T{1}, p, n, v, ld, T{0}, y.ptr() + h * dh, d);
  }
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {qkv}),
                [&g, qkv, out, n, d, dh, ld, heads, sc, probs = std::move(probs)]() {
                  const auto& dy = g.grad(out);
                  const auto& qv = g.value(qkv);
                  auto& dq = g.grad(qkv);
                  std::vector<T> dp(n * n);
                  for (std::size_t h = 0; h < heads; ++h) {
                    const T* q = qv.ptr() + h * dh;
                    const T* k = qv.ptr() + d + h * dh;
                    const T* v = qv.ptr() + 2 * d + h * dh;
                    const T* p = probs.ptr() + h * n * n;
                    const T* dout = dy.ptr() + h * dh;
                    // dV = Pᵀ dO
                    simd::gemm(true, false, n, dh, n, T{1}, p, n, dout, d, T{1}, dq.ptr() + 2 * d + h * dh, ld);
                    // dP = dO Vᵀ
                    simd::gemm(false, true, n, n, dh, T{1}, dout, d, v, ld, T{0}, dp.data(), n);
                    for (std::size_t i = 0; i < n; ++i) {
                      const T* prow = p + i * n;
                      T* drow = dp.data() + i * n;
                      T dotv{0};
                      for (std::size_t j = 0; j < n; ++j) dotv += prow[j] * drow[j];
                      for (std::size_t j = 0; j < n; ++j) drow[j] = prow[j] * (drow[j] - dotv) * sc;
                    }
                    // dQ = dS K, dK = dSᵀ Q
                    simd::gemm(false, false, n, dh, n, T{1}, dp.data(), n, k, ld, T{1}, dq.ptr() + h * dh, ld);
                    simd::gemm(true, false, n, dh, n, T{1}, dp.data(), n, q, ld, T{1}, dq.ptr() + d + h * dh, ld);
                  }
                });
}

template <class T>
Var cosine_distance_rows(Graph<T>& g, Var pred, Var target) {
  const auto& pv = g.value(pred);
  const auto& tv = g.value(target);
  require(pv.shape == tv.shape && pv.rank() == 2, "cosine_distance_rows: shape mismatch");
  const std::size_t n = pv.dim(0), d = pv.dim(1);
  constexpr T kEps = T(1e-8);
  Tensor<T> y({n});
  std::vector<T> np(n), nt(n), cs(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* a = pv.ptr() + i * d;
    const T* b = tv.ptr() + i * d;
    np[i] = std::max(std::sqrt(simd::dot(a, a, d)), kEps);
    nt[i] = std::max(std::sqrt(simd::dot(b, b, d)), kEps);
    cs[i] = simd::dot(a, b, d) / (np[i] * nt[i]);
    y.data[i] = T{1} - cs[i];
  }
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {pred, target}),
                [&g, pred, target, out, n, d, np = std::move(np), nt = std::move(nt), cs = std::move(cs)]() {
                  const auto& dy = g.grad(out);
                  const auto& pv = g.value(pred);
                  const auto& tv = g.value(target);
                  for (std::size_t i = 0; i < n; ++i) {
                    const T gi = -dy.data[i];  // d(1-c) = -dc
                    const T* a = pv.ptr() + i * d;
                    const T* b = tv.ptr() + i * d;
                    const T inv = T{1} / (np[i] * nt[i]);
                    if (wants(g, pred)) {
                      T* da = g.grad(pred).ptr() + i * d;
                      const T ca = cs[i] / (np[i] * np[i]);
                      for (std::size_t j = 0; j < d; ++j) da[j] += gi * (b[j] * inv - ca * a[j]);
                    }
                    if (wants(g, target)) {
                      T* db = g.grad(target).ptr() + i * d;
                      const T cb = cs[i] / (nt[i] * nt[i]);
                      for (std::size_t j = 0; j < d; ++j) db[j] += gi * (a[j] * inv - cb * b[j]);
                    }
                  }
                });
}

template <class T>
Var mean(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  T s{0};
  for (T v : xv.data) s += v;
  const std::size_t n = xv.numel();
  Tensor<T> y({1}, s / static_cast<T>(n));
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out, n]() {
    const T gy = g.grad(out).data[0] / static_cast<T>(n);
    for (auto& v : g.grad(x).data) v += gy;
  });
}

template <class T>
Var mse(Graph<T>& g, Var pred, Var target) {
  const auto& pv = g.value(pred);
  const auto& tv = g.value(target);
  require(pv.numel() == tv.numel(), "mse: size mismatch");
  const std::size_t n = pv.numel();
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += (pv.data[i] - tv.data[i]) * (pv.data[i] - tv.data[i]);
  Tensor<T> y({1}, s / static_cast<T>(n));
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {pred, target}), [&g, pred, target, out, n]() {
    const T gy = g.grad(out).data[0] * T{2} / static_cast<T>(n);
    const auto& pv = g.value(pred);
    const auto& tv = g.value(target);
    if (wants(g, pred)) {
      auto& dp = g.grad(pred);
      for (std::size_t i = 0; i < n; ++i) dp.data[i] += gy * (pv.data[i] - tv.data[i]);
    }
    if (wants(g, target)) {
      auto& dt = g.grad(target);
      for (std::size_t i = 0; i < n; ++i) dt.data[i] -= gy * (pv.data[i] - tv.data[i]);
    }
  });
}

namespace {

template <class T>
void im2col(const T* x, std::size_t ci, std::size_t h, std::size_t w, std::size_t ks, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* cols) {
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < ks; ++ky)
      for (std::size_t kx = 0; kx < ks; ++kx) {
        T* dst = cols + ((c * ks + ky) * ks + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          T* drow = dst + oy * wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(drow, drow + wo, T{0});
            continue;
          }
          const T* srow = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T{0} : srow[ix];
          }
        }
      }
}

template <class T>
void col2im(const T* cols, std::size_t ci, std::size_t h, std::size_t w, std::size_t ks, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* dx) {
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < ks; ++ky)
      for (std::size_t kx = 0; kx < ks; ++kx) {
        const T* src = cols + ((c * ks + ky) * ks + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* drow = dx + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) drow[ix] += src[oy * wo + ox];
          }
        }
      }
}

}  // namespace

template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  const auto& xv = g.value(x);
  const auto& wv = g.value(w);
  require(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0) && wv.dim(2) == wv.dim(3),
          "conv2d: shape mismatch");
  const std::size_t ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const std::size_t co = wv.dim(0), ks = wv.dim(2);
  require(h + 2 * pad >= ks && wd + 2 * pad >= ks, "conv2d: kernel larger than input");
  const std::size_t ho = (h + 2 * pad - ks) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - ks) / stride + 1;
  const std::size_t kk = ci * ks * ks, hw = ho * wo;
  Tensor<T> cols({kk, hw});
  im2col(xv.ptr(), ci, h, wd, ks, stride, pad, ho, wo, cols.ptr());
  Tensor<T> y({co, ho, wo});
  simd::gemm(false, false, co, hw, kk, T{1}, wv.ptr(), kk, cols.ptr(), hw, T{0}, y.ptr(), hw);
  if (b.valid()) {
    const auto& bv = g.value(b);
    require(bv.numel() == co, "conv2d: bias size");
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t i = 0; i < hw; ++i) y.data[c * hw + i] += bv.data[c];
  }
  const bool need = any_grad(g, {x, w, b});
  if (!need) cols = Tensor<T>();
  const Var out = next_var(g);
  return g.push(std::move(y), need,
                [&g, x, w, b, out, ci, h, wd, co, ks, stride, pad, ho, wo, kk, hw, cols = std::move(cols)]() {
                  const auto& dy = g.grad(out);
                  if (wants(g, w)) {
                    simd::gemm(false, true, co, kk, hw, T{1}, dy.ptr(), hw, cols.ptr(), hw, T{1}, g.grad(w).ptr(), kk);
                  }
                  if (wants(g, b)) {
                    auto& db = g.grad(b);
                    for (std::size_t c = 0; c < co; ++c) {
                      T s{0};
                      for (std::size_t i = 0; i < hw; ++i) s += dy.data[c * hw + i];
                      db.data[c] += s;
                    }
                  }
                  if (wants(g, x)) {
                    std::vector<T> dcols(kk * hw);
                    simd::gemm(true, false, kk, hw, co, T{1}, g.value(w).ptr(), kk, dy.ptr(), hw, T{0}, dcols.data(),
                               hw);
                    col2im(dcols.data(), ci, h, wd, ks, stride, pad, ho, wo, g.grad(x).ptr());
                  }
                });
}

template <class T>
Var upsample2x(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  require(xv.rank() == 3, "upsample2x: expects [C,H,W]");
  const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  Tensor<T> y({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t yy = 0; yy < 2 * h; ++yy)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        y.data[(ch * 2 * h + yy) * 2 * w + xx] = xv.data[(ch * h + yy / 2) * w + xx / 2];
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out, c, h, w]() {
    const auto& dy = g.grad(out);
    auto& dx = g.grad(x);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t yy = 0; yy < 2 * h; ++yy)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          dx.data[(ch * h + yy / 2) * w + xx / 2] += dy.data[(ch * 2 * h + yy) * 2 * w + xx];
  });
}

template <class T>
Var tokens_to_chw(Graph<T>& g, Var x, std::size_t h, std::size_t w) {
  const auto& xv = g.value(x);
  require(xv.rank() == 2 && xv.dim(0) == h * w, "tokens_to_chw: grid mismatch");
  const std::size_t n = xv.dim(0), d = xv.dim(1);
  Tensor<T> y({d, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) y.data[c * n + i] = xv.data[i * d + c];
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out, n, d]() {
    const auto& dy = g.grad(out);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) dx.data[i * d + c] += dy.data[c * n + i];
  });
}

template <class T>
Var mul_constant(Graph<T>& g, Var x, Tensor<T> m) {
  const auto& xv = g.value(x);
  require(xv.numel() == m.numel(), "mul_constant: size mismatch");
  Tensor<T> y = xv;
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] *= m.data[i];
  const Var out = next_var(g);
  return g.push(std::move(y), any_grad(g, {x}), [&g, x, out, m = std::move(m)]() {
    const auto& dy = g.grad(out);
    auto& dx = g.grad(x);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i] * m.data[i];
  });
}

template <class T>
Var stop_gradient(Graph<T>& g, Var x) {
  return g.push(g.value(x), false, {});
}

#define PATCHGUARD_INSTANTIATE_OPS(T)                                             \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                               \
  template Var add<T>(Graph<T>&, Var, Var);                                       \
  template Var add_scaled<T>(Graph<T>&, Var, Var, T);                             \
  template Var scale<T>(Graph<T>&, Var, T);                                       \
  template Var layer_norm<T>(Graph<T>&, Var, Var, Var, T);                        \
  template Var gelu<T>(Graph<T>&, Var);                                           \
  template Var relu<T>(Graph<T>&, Var);                                           \
  template Var sigmoid<T>(Graph<T>&, Var);                                        \
  template Var attention<T>(Graph<T>&, Var, std::size_t);                         \
  template Var cosine_distance_rows<T>(Graph<T>&, Var, Var);                      \
  template Var mean<T>(Graph<T>&, Var);                                           \
  template Var mse<T>(Graph<T>&, Var, Var);                                       \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, std::size_t, std::size_t);     \
  template Var upsample2x<T>(Graph<T>&, Var);                                     \
  template Var tokens_to_chw<T>(Graph<T>&, Var, std::size_t, std::size_t);        \
  template Var mul_constant<T>(Graph<T>&, Var, Tensor<T>);                        \
  template Var stop_gradient<T>(Graph<T>&, Var);

PATCHGUARD_INSTANTIATE_OPS(float)
PATCHGUARD_INSTANTIATE_OPS(double)

}  // namespace patchguard::nn
