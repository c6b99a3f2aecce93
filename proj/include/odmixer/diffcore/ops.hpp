#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <type_traits>
#include <vector>

#include "odmixer/diffcore/tape.hpp"

namespace odmixer::diffcore {

namespace detail {

// Forward reductions in single precision accumulate in double; rounding then
// happens once per output instead of once per term.
template <typename T>
using Acc = std::conditional_t<std::is_same_v<T, float>, double, T>;

template <typename T>
Tape<T>& tape_of(Var<T> a)
{
    if (!a.tape) throw StateError("variable is not attached to a tape");
    return *a.tape;
}

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b)
{
    if (a.tape != b.tape) throw StateError("operands live on different tapes");
    return tape_of(a);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

} // namespace detail

/// y[..., o] = sum_i W[o, i] * x[..., i] (+ bias[o]).
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias = std::nullopt)
{
    auto& tape = detail::tape_of(x, weight);
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    if (wv.rank() != 2)
        throw DimensionError("linear: weight must be rank 2, got " + shape_str(wv.shape()));
    const std::size_t k_out = wv.dim(0);
    const std::size_t k_in = wv.dim(1);
    if (xv.rank() == 0 || xv.last_dim() != k_in)
        throw DimensionError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                             shape_str(wv.shape()));
    if (bias) {
        detail::tape_of(x, *bias);
        const auto& bv = tape.value(*bias);
        if (bv.rank() != 1 || bv.dim(0) != k_out)
            throw DimensionError("linear: bias " + shape_str(bv.shape()) + " incompatible with weight " +
                                 shape_str(wv.shape()));
    }

    const std::size_t rows = xv.size() / k_in;
    Shape out_shape = xv.shape();
    out_shape.back() = k_out;
    Tensor<T> out(out_shape);
    const T* xd = xv.data().data();
    const T* wd = wv.data().data();
    T* yd = out.data().data();
    const T* bd = bias ? tape.value(*bias).data().data() : nullptr;
    // Accumulate along the output axis over W^T so the inner loop has no
    // loop-carried dependency and vectorizes; summation order stays fixed.
    std::vector<T> wt(k_in * k_out);
    for (std::size_t o = 0; o < k_out; ++o)
        for (std::size_t i = 0; i < k_in; ++i) wt[i * k_out + o] = wd[o * k_in + i];
    std::vector<detail::Acc<T>> acc(k_out);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xd + r * k_in;
        T* yr = yd + r * k_out;
        for (std::size_t o = 0; o < k_out; ++o) acc[o] = bd ? bd[o] : T(0);
        for (std::size_t i = 0; i < k_in; ++i) {
            const detail::Acc<T> xi = xr[i];
            const T* wc = wt.data() + i * k_out;
            for (std::size_t o = 0; o < k_out; ++o) acc[o] += xi * wc[o];
        }
        for (std::size_t o = 0; o < k_out; ++o) yr[o] = static_cast<T>(acc[o]);
    }

    const bool rg = tape.requires_grad(x) || tape.requires_grad(weight) || (bias && tape.requires_grad(*bias));
    const std::size_t xid = x.id, wid = weight.id;
    const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
    return tape.push(std::move(out), rg, [xid, wid, bid, rows, k_in, k_out](Tape<T>& t, std::size_t self) {
        const T* gy = t.grad_buffer(self).data();
        const T* xd = t.value(xid).data().data();
        const T* wd = t.value(wid).data().data();
        if (t.requires_grad(xid)) {
            T* gx = t.grad_buffer(xid).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < k_out; ++o) {
                    const T g = gy[r * k_out + o];
                    const T* wr = wd + o * k_in;
                    T* gxr = gx + r * k_in;
                    for (std::size_t i = 0; i < k_in; ++i) gxr[i] += g * wr[i];
                }
        }
        if (t.requires_grad(wid)) {
            T* gw = t.grad_buffer(wid).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < k_out; ++o) {
                    const T g = gy[r * k_out + o];
                    const T* xr = xd + r * k_in;
                    T* gwr = gw + o * k_in;
                    for (std::size_t i = 0; i < k_in; ++i) gwr[i] += g * xr[i];
                }
        }
        if (bid && t.requires_grad(*bid)) {
            T* gb = t.grad_buffer(*bid).data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < k_out; ++o) gb[o] += gy[r * k_out + o];
        }
    });
}

/// Normalizes each last-axis vector with population variance, then applies gamma/beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5))
{
    auto& tape = detail::tape_of(x, gamma);
    detail::tape_of(x, beta);
    const auto& xv = tape.value(x);
    const std::size_t d = xv.last_dim();
    if (xv.rank() == 0) throw DimensionError("layer_norm: input must have rank >= 1");
    if (tape.value(gamma).shape() != Shape{d} || tape.value(beta).shape() != Shape{d})
        throw DimensionError("layer_norm: affine parameters must have shape (" + std::to_string(d) + "), got " +
                             shape_str(tape.value(gamma).shape()) + " and " + shape_str(tape.value(beta).shape()));

    const std::size_t rows = xv.size() / d;
    Tensor<T> out(xv.shape());
    const T* xd = xv.data().data();
    const T* gd = tape.value(gamma).data().data();
    const T* bd = tape.value(beta).data().data();
    T* yd = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        using A = detail::Acc<T>;
        const T* xr = xd + r * d;
        A mean{};
        for (std::size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= A(d);
        A var{};
        for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= A(d);
        const A inv = A(1) / std::sqrt(var + A(eps));
        for (std::size_t i = 0; i < d; ++i) yd[r * d + i] = static_cast<T>(gd[i] * (xr[i] - mean) * inv + bd[i]);
    }

    const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
    const std::size_t xid = x.id, gid = gamma.id, bid = beta.id;
    return tape.push(std::move(out), rg, [xid, gid, bid, rows, d, eps](Tape<T>& t, std::size_t self) {
        const T* gy = t.grad_buffer(self).data();
        const T* xd = t.value(xid).data().data();
        const T* gd = t.value(gid).data().data();
        T* gx = t.requires_grad(xid) ? t.grad_buffer(xid).data() : nullptr;
        T* gg = t.requires_grad(gid) ? t.grad_buffer(gid).data() : nullptr;
        T* gb = t.requires_grad(bid) ? t.grad_buffer(bid).data() : nullptr;
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = xd + r * d;
            const T* gyr = gy + r * d;
            T mean{};
            for (std::size_t i = 0; i < d; ++i) mean += xr[i];
            mean /= T(d);
            T var{};
            for (std::size_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
            var /= T(d);
            const T inv = T(1) / std::sqrt(var + eps);
            T sum_dxhat{}, sum_dxhat_xhat{};
            for (std::size_t i = 0; i < d; ++i) {
                xhat[i] = (xr[i] - mean) * inv;
                dxhat[i] = gyr[i] * gd[i];
                sum_dxhat += dxhat[i];
                sum_dxhat_xhat += dxhat[i] * xhat[i];
            }
            if (gx) {
                const T m1 = sum_dxhat / T(d);
                const T m2 = sum_dxhat_xhat / T(d);
                for (std::size_t i = 0; i < d; ++i) gx[r * d + i] += inv * (dxhat[i] - m1 - xhat[i] * m2);
            }
            if (gg)
                for (std::size_t i = 0; i < d; ++i) gg[i] += gyr[i] * xhat[i];
            if (gb)
                for (std::size_t i = 0; i < d; ++i) gb[i] += gyr[i];
        }
    });
}

namespace detail {

// Elementwise unary op from value and derivative functors.
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df)
{
    auto& tape = tape_of(x);
    const auto& xv = tape.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    const std::size_t xid = x.id;
    return tape.push(std::move(out), tape.requires_grad(x), [xid, df](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(xid)) return;
        const auto& gy = t.grad_buffer(self);
        const auto& xv = t.value(xid);
        const auto& yv = t.value(self);
        auto& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
    });
}

} // namespace detail

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> x)
{
    return detail::unary(
        x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>)); },
        [](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
            const T pdf = std::exp(T(-0.5) * v * v) / std::sqrt(T(2) * std::numbers::pi_v<T>);
            return cdf + v * pdf;
        });
}

template <typename T>
Var<T> relu(Var<T> x)
{
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> x)
{
    return detail::unary(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> abs(Var<T> x)
{
    return detail::unary(
        x, [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> scale(Var<T> x, T factor)
{
    return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

enum class Activation { gelu, relu };

template <typename T>
Var<T> activate(Var<T> x, Activation act)
{
    return act == Activation::gelu ? gelu(x) : relu(x);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b)
{
    auto& tape = detail::tape_of(a, b);
    detail::require_same_shape("add", tape.value(a), tape.value(b));
    Tensor<T> out = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t aid = a.id, bid = b.id;
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(out), rg, [aid, bid](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_buffer(self);
        for (std::size_t id : {aid, bid}) {
            if (!t.requires_grad(id)) continue;
            auto& g = t.grad_buffer(id);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b)
{
    auto& tape = detail::tape_of(a, b);
    detail::require_same_shape("sub", tape.value(a), tape.value(b));
    Tensor<T> out = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    const std::size_t aid = a.id, bid = b.id;
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(out), rg, [aid, bid](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_buffer(self);
        if (t.requires_grad(aid)) {
            auto& g = t.grad_buffer(aid);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
        if (t.requires_grad(bid)) {
            auto& g = t.grad_buffer(bid);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
        }
    });
}

template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b)
{
    auto& tape = detail::tape_of(a, b);
    detail::require_same_shape("hadamard", tape.value(a), tape.value(b));
    Tensor<T> out = tape.value(a);
    const auto& bv = tape.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t aid = a.id, bid = b.id;
    const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
    return tape.push(std::move(out), rg, [aid, bid](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_buffer(self);
        if (t.requires_grad(aid)) {
            auto& g = t.grad_buffer(aid);
            const auto& bv = t.value(bid);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bv[i];
        }
        if (t.requires_grad(bid)) {
            auto& g = t.grad_buffer(bid);
            const auto& av = t.value(aid);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * av[i];
        }
    });
}

/// Concatenates along the last axis; all leading axes must agree.
template <typename T>
Var<T> concat_last_axis(const std::vector<Var<T>>& xs)
{
    if (xs.empty()) throw DimensionError("concat_last_axis: no operands");
    auto& tape = detail::tape_of(xs.front());
    const Shape& first = tape.value(xs.front()).shape();
    if (first.empty()) throw DimensionError("concat_last_axis: scalar operand");
    Shape lead(first.begin(), first.end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    bool rg = false;
    for (auto x : xs) {
        detail::tape_of(xs.front(), x);
        const Shape& s = tape.value(x).shape();
        if (s.empty() || Shape(s.begin(), s.end() - 1) != lead)
            throw DimensionError("concat_last_axis: leading axes differ, " + shape_str(first) + " vs " + shape_str(s));
        widths.push_back(s.back());
        total += s.back();
        rg = rg || tape.requires_grad(x);
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor<T> out(out_shape);
    const std::size_t rows = shape_size(lead);
    std::size_t col = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& xv = tape.value(xs[k]);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < widths[k]; ++i) out[r * total + col + i] = xv[r * widths[k] + i];
        col += widths[k];
    }
    std::vector<std::size_t> ids;
    for (auto x : xs) ids.push_back(x.id);
    return tape.push(std::move(out), rg, [ids, widths, rows, total](Tape<T>& t, std::size_t self) {
        const auto& gy = t.grad_buffer(self);
        std::size_t col = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.requires_grad(ids[k])) {
                auto& g = t.grad_buffer(ids[k]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < widths[k]; ++i) g[r * widths[k] + i] += gy[r * total + col + i];
            }
            col += widths[k];
        }
    });
}

/// out.shape[k] = x.shape[perm[k]].
template <typename T>
Var<T> permute(Var<T> x, const std::vector<std::size_t>& perm)
{
    auto& tape = detail::tape_of(x);
    const auto& xv = tape.value(x);
    const std::size_t rank = xv.rank();
    if (perm.size() != rank) throw DimensionError("permute: axis list does not match " + shape_str(xv.shape()));
    std::vector<bool> seen(rank, false);
    for (auto p : perm) {
        if (p >= rank || seen[p]) throw DimensionError("permute: invalid axis permutation");
        seen[p] = true;
    }
    Shape out_shape(rank);
    for (std::size_t k = 0; k < rank; ++k) out_shape[k] = xv.dim(perm[k]);

    // src_index[flat_out] computed once, shared with backward
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t k = rank; k-- > 1;) in_strides[k - 1] = in_strides[k] * xv.dim(k);
    auto src = std::make_shared<std::vector<std::size_t>>(xv.size());
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t o = 0; o < xv.size(); ++o) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < rank; ++k) off += idx[k] * in_strides[perm[k]];
        (*src)[o] = off;
        for (std::size_t k = rank; k-- > 0;) {
            if (++idx[k] < out_shape[k]) break;
            idx[k] = 0;
        }
    }
    Tensor<T> out(out_shape);
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*src)[o]];
    const std::size_t xid = x.id;
    return tape.push(std::move(out), tape.requires_grad(x), [xid, src](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(xid)) return;
        const auto& gy = t.grad_buffer(self);
        auto& gx = t.grad_buffer(xid);
        for (std::size_t o = 0; o < gy.size(); ++o) gx[(*src)[o]] += gy[o];
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape)
{
    auto& tape = detail::tape_of(x);
    Tensor<T> out = tape.value(x).reshaped(std::move(shape));
    const std::size_t xid = x.id;
    return tape.push(std::move(out), tape.requires_grad(x), [xid](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(xid)) return;
        const auto& gy = t.grad_buffer(self);
        auto& gx = t.grad_buffer(xid);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
}

/// Sum of all entries, as a rank-0 tensor. Accumulates in ascending index order.
template <typename T>
Var<T> sum(Var<T> x)
{
    auto& tape = detail::tape_of(x);
    const auto& xv = tape.value(x);
    T acc{};
    for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
    const std::size_t xid = x.id;
    return tape.push(Tensor<T>::scalar(acc), tape.requires_grad(x), [xid](Tape<T>& t, std::size_t self) {
        if (!t.requires_grad(xid)) return;
        const T g = t.grad_buffer(self)[0];
        auto& gx = t.grad_buffer(xid);
        for (auto& v : gx) v += g;
    });
}

template <typename T>
Var<T> mean(Var<T> x)
{
    const std::size_t n = detail::tape_of(x).value(x).size();
    return scale(sum(x), T(1) / T(n));
}

/// mean(|a - b|) over all entries.
template <typename T>
Var<T> mean_abs_error(Var<T> a, Var<T> b)
{
    return mean(abs(sub(a, b)));
}

} // namespace odmixer::diffcore
