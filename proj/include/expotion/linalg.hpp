#ifndef EXPOTION_LINALG_HPP
#define EXPOTION_LINALG_HPP

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "expotion/mat.hpp"

// Dense kernels shared by the encoder, decoder and adaptor. All GEMMs go
// through Eigen maps over the row-major Mat storage; everything here is
// single-threaded and deterministic.

namespace expotion {

template <typename S>
using EigenMap =
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstEigenMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
EigenMap<S> as_eigen(Mat<S>& m) {
    return EigenMap<S>(m.data.data(), m.rows, m.cols);
}
template <typename S>
ConstEigenMap<S> as_eigen(const Mat<S>& m) {
    return ConstEigenMap<S>(m.data.data(), m.rows, m.cols);
}

template <typename S>
void add_into(Mat<S>& dst, const Mat<S>& src) {
    check_same_shape(dst, src, "add_into");
    as_eigen(dst) += as_eigen(src);
}

// C = A * B
template <typename S>
void matmul(const Mat<S>& a, const Mat<S>& b, Mat<S>& c) {
    if (a.cols != b.rows)
        throw shape_error("matmul: inner dims " + std::to_string(a.cols) + " vs " +
                          std::to_string(b.rows));
    c = Mat<S>(a.rows, b.cols);
    as_eigen(c).noalias() = as_eigen(a) * as_eigen(b);
}

template <typename S>
Mat<S> matmul(const Mat<S>& a, const Mat<S>& b) {
    Mat<S> c;
    matmul(a, b, c);
    return c;
}

// C = A * B^T
template <typename S>
Mat<S> matmul_nt(const Mat<S>& a, const Mat<S>& b) {
    if (a.cols != b.cols)
        throw shape_error("matmul_nt: inner dims mismatch");
    Mat<S> c(a.rows, b.rows);
    as_eigen(c).noalias() = as_eigen(a) * as_eigen(b).transpose();
    return c;
}

// C += A^T * B
template <typename S>
void add_matmul_tn(const Mat<S>& a, const Mat<S>& b, Mat<S>& c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw shape_error("add_matmul_tn: dims mismatch");
    as_eigen(c).noalias() += as_eigen(a).transpose() * as_eigen(b);
}

// Y = X * W + b (b broadcast over rows)
template <typename S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const std::vector<S>& b) {
    if (x.cols != w.rows)
        throw shape_error("linear: input width " + std::to_string(x.cols) +
                          " vs weight rows " + std::to_string(w.rows));
    Mat<S> y(x.rows, w.cols);
    as_eigen(y).noalias() = as_eigen(x) * as_eigen(w);
    if (!b.empty()) {
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bv(b.data(), w.cols);
        as_eigen(y).rowwise() += bv;
    }
    return y;
}

// Backward of linear: returns dX; accumulates dW, db when given.
template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& w, const Mat<S>& dy, Mat<S>* dw,
                       std::vector<S>* db) {
    Mat<S> dx(x.rows, x.cols);
    as_eigen(dx).noalias() = as_eigen(dy) * as_eigen(w).transpose();
    if (dw) as_eigen(*dw).noalias() += as_eigen(x).transpose() * as_eigen(dy);
    if (db) {
        for (int i = 0; i < dy.rows; ++i) {
            const S* r = dy.row(i);
            for (int j = 0; j < dy.cols; ++j) (*db)[j] += r[j];
        }
    }
    return dx;
}

// Row-wise softmax in place, max-subtracted.
template <typename S>
void softmax_rows(Mat<S>& m) {
    for (int i = 0; i < m.rows; ++i) {
        Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> r(m.row(i), m.cols);
        S mx = r.maxCoeff();
        r = (r - mx).exp();
        r /= r.sum();
    }
}

// dscores = p .* (dp - rowsum(p .* dp)), row-wise.
template <typename S>
Mat<S> softmax_backward(const Mat<S>& probs, const Mat<S>& dprobs) {
    Mat<S> ds(probs.rows, probs.cols);
    for (int i = 0; i < probs.rows; ++i) {
        const S* p = probs.row(i);
        const S* dp = dprobs.row(i);
        S dot = S(0);
        for (int j = 0; j < probs.cols; ++j) dot += p[j] * dp[j];
        S* o = ds.row(i);
        for (int j = 0; j < probs.cols; ++j) o[j] = p[j] * (dp[j] - dot);
    }
    return ds;
}

constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct LayerNormParams {
    std::vector<S> gain, bias;
    explicit LayerNormParams(int d = 0) : gain(d, S(1)), bias(d, S(0)) {}
};

// Per-row stats needed by the backward pass.
template <typename S>
struct LnCache {
    Mat<S> xhat;                 // normalized rows
    std::vector<S> inv_std;      // 1/sqrt(var + eps) per row
};

template <typename S>
Mat<S> layernorm(const Mat<S>& x, const LayerNormParams<S>& p, LnCache<S>* cache) {
    const int d = x.cols;
    Mat<S> y(x.rows, d);
    if (cache) {
        cache->xhat = Mat<S>(x.rows, d);
        cache->inv_std.assign(x.rows, S(0));
    }
    for (int i = 0; i < x.rows; ++i) {
        const S* r = x.row(i);
        S mu = S(0);
        for (int j = 0; j < d; ++j) mu += r[j];
        mu /= S(d);
        S var = S(0);
        for (int j = 0; j < d; ++j) {
            S c = r[j] - mu;
            var += c * c;
        }
        var /= S(d);
        S rs = S(1) / std::sqrt(var + S(kLayerNormEps));
        S* o = y.row(i);
        S* xh = cache ? cache->xhat.row(i) : nullptr;
        if (cache) cache->inv_std[i] = rs;
        for (int j = 0; j < d; ++j) {
            S h = (r[j] - mu) * rs;
            if (xh) xh[j] = h;
            o[j] = h * p.gain[j] + p.bias[j];
        }
    }
    return y;
}

// Returns dX; accumulates dgain/dbias when given (frozen layers pass null).
template <typename S>
Mat<S> layernorm_backward(const Mat<S>& dy, const LnCache<S>& cache, const LayerNormParams<S>& p,
                          std::vector<S>* dgain, std::vector<S>* dbias) {
    const int d = cache.xhat.cols;
    Mat<S> dx(dy.rows, d);
    for (int i = 0; i < dy.rows; ++i) {
        const S* g = dy.row(i);
        const S* xh = cache.xhat.row(i);
        S rs = cache.inv_std[i];
        S mean_dxh = S(0), mean_dxh_xh = S(0);
        for (int j = 0; j < d; ++j) {
            S dxh = g[j] * p.gain[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
            if (dgain) (*dgain)[j] += g[j] * xh[j];
            if (dbias) (*dbias)[j] += g[j];
        }
        mean_dxh /= S(d);
        mean_dxh_xh /= S(d);
        S* o = dx.row(i);
        for (int j = 0; j < d; ++j) {
            S dxh = g[j] * p.gain[j];
            o[j] = rs * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
    return dx;
}

template <typename S>
inline S sigmoid(S x) {
    return S(1) / (S(1) + std::exp(-x));
}

// x * sigmoid(x); smooth, so finite-difference gradient checks stay clean.
template <typename S>
Mat<S> silu(const Mat<S>& x) {
    Mat<S> y(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] * sigmoid(x.data[i]);
    return y;
}

template <typename S>
Mat<S> silu_backward(const Mat<S>& x, const Mat<S>& dy) {
    Mat<S> dx(x.rows, x.cols);
    for (size_t i = 0; i < x.data.size(); ++i) {
        S s = sigmoid(x.data[i]);
        dx.data[i] = dy.data[i] * s * (S(1) + x.data[i] * (S(1) - s));
    }
    return dx;
}

// --- Multi-head scaled dot-product attention -------------------------------
//
// Q, K, V are T x d with heads laid out as contiguous column blocks of
// width d/h. Probabilities are cached per head for the backward pass.

template <typename S>
struct AttnCache {
    std::vector<Mat<S>> probs; // per head: q_rows x k_rows
};

template <typename S>
Mat<S> mha_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int n_heads, bool causal,
                   AttnCache<S>* cache) {
    const int d = q.cols;
    if (k.cols != d || v.cols != d || d % n_heads != 0)
        throw shape_error("mha_forward: bad head layout");
    const int dh = d / n_heads;
    const S scale = S(1) / std::sqrt(S(dh));
    Mat<S> ctx(q.rows, d);
    if (cache) cache->probs.assign(n_heads, Mat<S>());
    for (int h = 0; h < n_heads; ++h) {
        using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        using Stride = Eigen::OuterStride<>;
        Eigen::Map<const EMat, 0, Stride> qh(q.data.data() + h * dh, q.rows, dh, Stride(d));
        Eigen::Map<const EMat, 0, Stride> kh(k.data.data() + h * dh, k.rows, dh, Stride(d));
        Eigen::Map<const EMat, 0, Stride> vh(v.data.data() + h * dh, v.rows, dh, Stride(d));
        Mat<S> scores(q.rows, k.rows);
        as_eigen(scores).noalias() = qh * kh.transpose();
        as_eigen(scores) *= scale;
        if (causal) {
            for (int i = 0; i < scores.rows; ++i) {
                S* r = scores.row(i);
                for (int j = i + 1; j < scores.cols; ++j)
                    r[j] = -std::numeric_limits<S>::infinity();
            }
        }
        softmax_rows(scores);
        Eigen::Map<EMat, 0, Stride> ch(ctx.data.data() + h * dh, q.rows, dh, Stride(d));
        ch.noalias() = as_eigen(scores) * vh;
        if (cache) cache->probs[h] = std::move(scores);
    }
    return ctx;
}

// Backward for one attention call. Accumulates into dq/dk/dv (which must be
// pre-sized T x d); probs come from the forward cache.
template <typename S>
void mha_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, const AttnCache<S>& cache,
                  const Mat<S>& dctx, int n_heads, Mat<S>& dq, Mat<S>& dk, Mat<S>& dv) {
    const int d = q.cols;
    const int dh = d / n_heads;
    const S scale = S(1) / std::sqrt(S(dh));
    using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Stride = Eigen::OuterStride<>;
    for (int h = 0; h < n_heads; ++h) {
        Eigen::Map<const EMat, 0, Stride> qh(q.data.data() + h * dh, q.rows, dh, Stride(d));
        Eigen::Map<const EMat, 0, Stride> kh(k.data.data() + h * dh, k.rows, dh, Stride(d));
        Eigen::Map<const EMat, 0, Stride> vh(v.data.data() + h * dh, v.rows, dh, Stride(d));
        Eigen::Map<const EMat, 0, Stride> dch(dctx.data.data() + h * dh, dctx.rows, dh, Stride(d));
        const Mat<S>& probs = cache.probs[h];

        Mat<S> dprobs(probs.rows, probs.cols);
        as_eigen(dprobs).noalias() = dch * vh.transpose();
        Mat<S> dscores = softmax_backward(probs, dprobs);
        as_eigen(dscores) *= scale;

        Eigen::Map<EMat, 0, Stride> dqh(dq.data.data() + h * dh, dq.rows, dh, Stride(d));
        Eigen::Map<EMat, 0, Stride> dkh(dk.data.data() + h * dh, dk.rows, dh, Stride(d));
        Eigen::Map<EMat, 0, Stride> dvh(dv.data.data() + h * dh, dv.rows, dh, Stride(d));
        dqh.noalias() += as_eigen(dscores) * kh;
        dkh.noalias() += as_eigen(dscores).transpose() * qh;
        dvh.noalias() += as_eigen(probs).transpose() * dch;
    }
}

} // namespace expotion

#endif
