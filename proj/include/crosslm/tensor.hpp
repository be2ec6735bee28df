#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "crosslm/common.hpp"
#include "crosslm/rng.hpp"

namespace crosslm {

// Dense row-major array of float or double. Copies are shallow handles
// sharing data and gradient storage; clone() copies. Gradient buffers are
// created lazily inside a slot that exists from construction, so every
// handle sees accumulated gradients.
template <class T>
class Tensor {
public:
    Tensor() : data_(std::make_shared<std::vector<T>>()),
               grad_(std::make_shared<std::vector<T>>()) {}

    static Tensor zeros(std::vector<int64_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_->assign(static_cast<size_t>(t.compute_numel()), T(0));
        return t;
    }

    static Tensor full(std::vector<int64_t> shape, T value) {
        Tensor t = zeros(std::move(shape));
        for (T& v : *t.data_) v = value;
        return t;
    }

    static Tensor from(std::vector<int64_t> shape, std::vector<T> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        CLX_CHECK(static_cast<int64_t>(data.size()) == t.compute_numel(),
                  "tensor data length ", data.size(), " != product of extents");
        *t.data_ = std::move(data);
        return t;
    }

    static Tensor scalar(T value) { return from({1}, {value}); }

    // Zero-mean normal entries, the standard init for embeddings and
    // linear maps here.
    static Tensor randn(std::vector<int64_t> shape, T stddev, Rng& rng) {
        Tensor t = zeros(std::move(shape));
        for (T& v : *t.data_) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_[i]; }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_->size()); }

    std::span<T> data() { return {data_->data(), data_->size()}; }
    std::span<const T> data() const { return {data_->data(), data_->size()}; }
    T item() const {
        CLX_CHECK(numel() == 1, "item(): tensor is not scalar");
        return (*data_)[0];
    }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool on = true) {
        requires_grad_ = on;
        return *this;
    }

    bool has_grad() const { return !grad_->empty(); }
    std::span<T> grad() {
        ensure_grad();
        return {grad_->data(), grad_->size()};
    }
    std::span<const T> grad_view() const { return {grad_->data(), grad_->size()}; }
    void ensure_grad() {
        if (grad_->size() != data_->size()) grad_->assign(data_->size(), T(0));
    }
    void clear_grad() { grad_->clear(); }

    // Deep copy of values; gradient starts empty.
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        *t.data_ = *data_;
        t.requires_grad_ = requires_grad_;
        return t;
    }

    // Same storage (data and grad) under a different shape.
    Tensor reshaped(std::vector<int64_t> shape) const {
        Tensor t = *this;
        t.shape_ = std::move(shape);
        CLX_CHECK(t.compute_numel() == numel(), "reshape changes element count");
        return t;
    }

    // Rows of the collapsed [rows, cols] view with cols = last extent.
    int64_t rows() const {
        CLX_CHECK(!shape_.empty(), "rows(): tensor has no shape");
        return numel() / shape_.back();
    }
    int64_t cols() const { return shape_.back(); }

private:
    std::vector<int64_t> shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;

    int64_t compute_numel() const {
        int64_t n = 1;
        for (int64_t e : shape_) {
            CLX_CHECK(e > 0, "tensor extents must be positive");
            n *= e;
        }
        return n;
    }
};

// Recorded operations for one reverse pass. Creation order is a valid
// topological order, so backward just walks the node list in reverse.
template <class T>
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        CLX_CHECK(!consumed_, "tape: recording after backward");
        nodes_.push_back(std::move(backward_fn));
    }

    size_t size() const { return nodes_.size(); }

    void backward(Tensor<T> loss) {
        CLX_CHECK(!consumed_, "backward called twice on a cleared tape");
        CLX_CHECK(loss.numel() == 1, "backward: loss must be scalar");
        loss.grad()[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
        nodes_.clear();
        consumed_ = true;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

namespace detail {

// Serial kernels. Each output element is computed in a fixed k order, so
// values never depend on threading; the parallel wrappers below split only
// across output rows. __restrict holds because operands come from distinct
// allocations.

// C = A * B (or += with accumulate).  A[m,k] B[k,n] C[m,n].
template <class T>
void gemm_nn(const T* __restrict A, const T* __restrict B, T* __restrict C,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        T* __restrict c = C + i * n;
        if (!accumulate)
            for (int64_t j = 0; j < n; ++j) c[j] = T(0);
        const T* __restrict a = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T aip = a[p];
            const T* __restrict b = B + p * n;
            for (int64_t j = 0; j < n; ++j) c[j] += aip * b[j];
        }
    }
}

// C = A * B^T.  A[m,k] B[n,k] C[m,n].
template <class T>
void gemm_nt(const T* __restrict A, const T* __restrict B, T* __restrict C,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        const T* __restrict a = A + i * k;
        T* __restrict c = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* __restrict b = B + j * k;
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] = accumulate ? c[j] + acc : acc;
        }
    }
}

// C = A^T * B.  A[m,k] B[m,n] C[k,n].
template <class T>
void gemm_tn(const T* __restrict A, const T* __restrict B, T* __restrict C,
             int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t p = 0; p < k; ++p) {
        T* __restrict c = C + p * n;
        if (!accumulate)
            for (int64_t j = 0; j < n; ++j) c[j] = T(0);
        for (int64_t i = 0; i < m; ++i) {
            const T aip = A[i * k + p];
            const T* __restrict b = B + i * n;
            for (int64_t j = 0; j < n; ++j) c[j] += aip * b[j];
        }
    }
}

// Row-parallel wrappers for the 2-D products.
template <class T>
void pgemm_nn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n,
              bool accumulate) {
    constexpr int64_t kChunk = 64;
#pragma omp parallel for schedule(static)
    for (int64_t i0 = 0; i0 < m; i0 += kChunk) {
        const int64_t rows = std::min(kChunk, m - i0);
        gemm_nn(A + i0 * k, B, C + i0 * n, rows, k, n, accumulate);
    }
}

template <class T>
void pgemm_nt(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n,
              bool accumulate) {
    constexpr int64_t kChunk = 64;
#pragma omp parallel for schedule(static)
    for (int64_t i0 = 0; i0 < m; i0 += kChunk) {
        const int64_t rows = std::min(kChunk, m - i0);
        gemm_nt(A + i0 * k, B, C + i0 * n, rows, k, n, accumulate);
    }
}

template <class T>
void pgemm_tn(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n,
              bool accumulate) {
    constexpr int64_t kChunk = 16;
#pragma omp parallel for schedule(static)
    for (int64_t p0 = 0; p0 < k; p0 += kChunk) {
        const int64_t cols = std::min(kChunk, k - p0);
        // thread-owned slice of C rows [p0, p0+cols)
        for (int64_t p = p0; p < p0 + cols; ++p) {
            T* __restrict c = C + p * n;
            if (!accumulate)
                for (int64_t j = 0; j < n; ++j) c[j] = T(0);
            for (int64_t i = 0; i < m; ++i) {
                const T aip = A[i * k + p];
                const T* __restrict b = B + i * n;
                for (int64_t j = 0; j < n; ++j) c[j] += aip * b[j];
            }
        }
    }
}

}  // namespace detail

// ---- elementwise and shape ops ----

template <class T>
Tensor<T> add(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    CLX_CHECK(a.shape() == b.shape(), "add: shape mismatch");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto av = a.data(), bv = b.data(), ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([a, b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

// x[.., d] + b[d], broadcast over the leading axes.
template <class T>
Tensor<T> add_bias(Tape<T>* tape, Tensor<T> x, Tensor<T> b) {
    const int64_t d = x.cols();
    CLX_CHECK(b.numel() == d, "add_bias: bias length ", b.numel(), " != ", d);
    const int64_t rows = x.rows();
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xv = x.data(), bv = b.data(), ov = out.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + bv[j];
    if (tape && (x.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([x, b, out, rows, d]() mutable {
            auto g = out.grad();
            if (x.requires_grad()) {
                auto gx = x.grad();
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    CLX_CHECK(a.shape() == b.shape(), "mul: shape mismatch");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    auto av = a.data(), bv = b.data(), ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([a, b, out]() mutable {
            auto g = out.grad();
            auto av2 = a.data(), bv2 = b.data();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>* tape, Tensor<T> x, T c) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto xv = x.data(), ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * c;
    if (tape && x.requires_grad()) {
        out.set_requires_grad();
        tape->record([x, out, c]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
        });
    }
    return out;
}

template <class T>
Tensor<T> sum(Tape<T>* tape, Tensor<T> x) {
    T total = T(0);
    for (T v : x.data()) total += v;
    Tensor<T> out = Tensor<T>::scalar(total);
    if (tape && x.requires_grad()) {
        out.set_requires_grad();
        tape->record([x, out]() mutable {
            const T g = out.grad()[0];
            auto gx = x.grad();
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

// ---- matrix products ----

// A[.., k] times B[k, n]; leading axes of A are collapsed.
template <class T>
Tensor<T> matmul(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    CLX_CHECK(b.ndim() == 2, "matmul: rhs must be 2-D");
    const int64_t k = a.cols(), m = a.rows(), n = b.dim(1);
    CLX_CHECK(b.dim(0) == k, "matmul: inner extents ", k, " vs ", b.dim(0));
    std::vector<int64_t> out_shape(a.shape());
    out_shape.back() = n;
    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
    detail::pgemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n,
                     false);
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([a, b, out, m, k, n]() mutable {
            auto g = out.grad();
            if (a.requires_grad())
                detail::pgemm_nt(g.data(), b.data().data(), a.grad().data(), m, n, k,
                                 true);
            if (b.requires_grad())
                detail::pgemm_tn(a.data().data(), g.data(), b.grad().data(), m, k, n,
                                 true);
        });
    }
    return out;
}

// A[.., k] times B[n, k]^T -> [.., n]; used for the tied prediction head.
template <class T>
Tensor<T> matmul_nt(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    CLX_CHECK(b.ndim() == 2, "matmul_nt: rhs must be 2-D");
    const int64_t k = a.cols(), m = a.rows(), n = b.dim(0);
    CLX_CHECK(b.dim(1) == k, "matmul_nt: inner extents ", k, " vs ", b.dim(1));
    std::vector<int64_t> out_shape(a.shape());
    out_shape.back() = n;
    Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
    detail::pgemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n,
                     false);
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([a, b, out, m, k, n]() mutable {
            auto g = out.grad();
            if (a.requires_grad())
                detail::pgemm_nn(g.data(), b.data().data(), a.grad().data(), m, n, k,
                                 true);
            if (b.requires_grad())
                detail::pgemm_tn(g.data(), a.data().data(), b.grad().data(), m, n, k,
                                 true);
        });
    }
    return out;
}

// Grouped products for attention: A[g,m,k] B[g,k,n] -> [g,m,n].
template <class T>
Tensor<T> bmm(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    CLX_CHECK(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == b.dim(1),
              "bmm: bad shapes");
    const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> out = Tensor<T>::zeros({g, m, n});
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* op = out.data().data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < g; ++i)
        detail::gemm_nn(ap + i * m * k, bp + i * k * n, op + i * m * n, m, k, n,
                        false);
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([a, b, out, g, m, k, n]() mutable {
            auto gr = out.grad();
            const bool need_a = a.requires_grad(), need_b = b.requires_grad();
            auto ga = need_a ? a.grad() : std::span<T>();
            auto gb = need_b ? b.grad() : std::span<T>();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < g; ++i) {
                const T* gi = gr.data() + i * m * n;
                if (need_a)
                    detail::gemm_nt(gi, b.data().data() + i * k * n,
                                    ga.data() + i * m * k, m, n, k, true);
                if (need_b)
                    detail::gemm_tn(a.data().data() + i * m * k, gi,
                                    gb.data() + i * k * n, m, k, n, true);
            }
        });
    }
    return out;
}

// A[g,m,k] B[g,n,k] -> [g,m,n] with B transposed per group.
template <class T>
Tensor<T> bmm_nt(Tape<T>* tape, Tensor<T> a, Tensor<T> b) {
    CLX_CHECK(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == b.dim(2),
              "bmm_nt: bad shapes");
    const int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor<T> out = Tensor<T>::zeros({g, m, n});
    const T* ap = a.data().data();
    const T* bp = b.data().data();
    T* op = out.data().data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < g; ++i)
        detail::gemm_nt(ap + i * m * k, bp + i * n * k, op + i * m * n, m, k, n,
                        false);
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad();
        tape->record([a, b, out, g, m, k, n]() mutable {
            auto gr = out.grad();
            const bool need_a = a.requires_grad(), need_b = b.requires_grad();
            auto ga = need_a ? a.grad() : std::span<T>();
            auto gb = need_b ? b.grad() : std::span<T>();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < g; ++i) {
                const T* gi = gr.data() + i * m * n;
                if (need_a)
                    detail::gemm_nn(gi, b.data().data() + i * n * k,
                                    ga.data() + i * m * k, m, n, k, true);
                if (need_b)  // dB[n,k] = dY^T A: gemm_tn over k'=n, n'=k
                    detail::gemm_tn(gi, a.data().data() + i * m * k,
                                    gb.data() + i * n * k, m, n, k, true);
            }
        });
    }
    return out;
}

// [B*L, d] -> [B*h, L, d/h] head split for attention.
template <class T>
Tensor<T> split_heads(Tape<T>* tape, Tensor<T> x, int64_t batch, int64_t len,
                      int64_t heads) {
    const int64_t d = x.cols();
    CLX_CHECK(x.rows() == batch * len, "split_heads: row count mismatch");
    CLX_CHECK(d % heads == 0, "split_heads: dim ", d, " not divisible by ", heads);
    const int64_t hd = d / heads;
    Tensor<T> out = Tensor<T>::zeros({batch * heads, len, hd});
    auto xv = x.data();
    auto ov = out.data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t t = 0; t < len; ++t) {
                const T* src = xv.data() + (b * len + t) * d + h * hd;
                T* dst = ov.data() + ((b * heads + h) * len + t) * hd;
                for (int64_t j = 0; j < hd; ++j) dst[j] = src[j];
            }
    if (tape && x.requires_grad()) {
        out.set_requires_grad();
        tape->record([x, out, batch, len, heads, hd, d]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t h = 0; h < heads; ++h)
                    for (int64_t t = 0; t < len; ++t) {
                        const T* src = g.data() + ((b * heads + h) * len + t) * hd;
                        T* dst = gx.data() + (b * len + t) * d + h * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

// [B*h, L, d/h] -> [B*L, d], inverse of split_heads.
template <class T>
Tensor<T> merge_heads(Tape<T>* tape, Tensor<T> x, int64_t batch, int64_t len,
                      int64_t heads) {
    CLX_CHECK(x.ndim() == 3 && x.dim(0) == batch * heads && x.dim(1) == len,
              "merge_heads: bad shape");
    const int64_t hd = x.dim(2);
    const int64_t d = heads * hd;
    Tensor<T> out = Tensor<T>::zeros({batch * len, d});
    auto xv = x.data();
    auto ov = out.data();
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t h = 0; h < heads; ++h)
            for (int64_t t = 0; t < len; ++t) {
                const T* src = xv.data() + ((b * heads + h) * len + t) * hd;
                T* dst = ov.data() + (b * len + t) * d + h * hd;
                for (int64_t j = 0; j < hd; ++j) dst[j] = src[j];
            }
    if (tape && x.requires_grad()) {
        out.set_requires_grad();
        tape->record([x, out, batch, len, heads, hd, d]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            for (int64_t b = 0; b < batch; ++b)
                for (int64_t h = 0; h < heads; ++h)
                    for (int64_t t = 0; t < len; ++t) {
                        const T* src = g.data() + (b * len + t) * d + h * hd;
                        T* dst = gx.data() + ((b * heads + h) * len + t) * hd;
                        for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
                    }
        });
    }
    return out;
}

// ---- nonlinearities and normalization ----

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

namespace detail {

// tanh for the 32-bit path: branch-free rational approximation (the
// classic float-accurate p(x^2)/q(x^2) form), which the compiler can
// vectorize. The 64-bit path stays on std::tanh so gradient verification
// sees the reference function.
inline float fast_tanh(float x) {
    // clamp where the rational form reads 0.9999994; it must stay <= 1
    const float c = x < -4.97f ? -4.97f : (x > 4.97f ? 4.97f : x);
    const float x2 = c * c;
    const float p = c * (135135.0f + x2 * (17325.0f + x2 * (378.0f + x2)));
    const float q = 135135.0f + x2 * (62370.0f + x2 * (3150.0f + x2 * 28.0f));
    return p / q;
}
inline double fast_tanh(double x) { return std::tanh(x); }

}  // namespace detail

template <class T>
Tensor<T> gelu(Tape<T>* tape, Tensor<T> x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    Tensor<T> tanh_u = Tensor<T>::zeros(x.shape());  // cached for backward
    auto xv = x.data(), ov = out.data(), tv = tanh_u.data();
    const int64_t n = static_cast<int64_t>(ov.size());
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const T v = xv[i];
        const T u = static_cast<T>(kGeluC) * (v + T(0.044715) * v * v * v);
        const T t = detail::fast_tanh(u);
        tv[i] = t;
        ov[i] = T(0.5) * v * (T(1) + t);
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad();
        tape->record([x, out, tanh_u, n]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            auto xv2 = x.data();
            auto tv2 = tanh_u.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                const T v = xv2[i];
                const T t = tv2[i];
                const T du = static_cast<T>(kGeluC) * (T(1) + T(3) * T(0.044715) * v * v);
                const T deriv = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
                gx[i] += g[i] * deriv;
            }
        });
    }
    return out;
}

// Per-last-axis normalization with the biased variance estimator.
template <class T>
Tensor<T> layer_norm(Tape<T>* tape, Tensor<T> x, Tensor<T> gain, Tensor<T> bias,
                     T eps = T(1e-5)) {
    const int64_t d = x.cols();
    CLX_CHECK(d > 0, "layer_norm: zero feature dimension");
    CLX_CHECK(gain.numel() == d && bias.numel() == d, "layer_norm: gain/bias size");
    const int64_t rows = x.rows();
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    Tensor<T> xhat = Tensor<T>::zeros({rows, d});   // saved for backward
    Tensor<T> inv_sigma = Tensor<T>::zeros({rows});
    auto xv = x.data(), gv = gain.data(), bv = bias.data(), ov = out.data();
    auto hv = xhat.data(), sv = inv_sigma.data();
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        T mean = T(0);
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(d);
        const T inv = T(1) / std::sqrt(var + eps);
        sv[r] = inv;
        for (int64_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * inv;
            hv[r * d + j] = h;
            ov[r * d + j] = h * gv[j] + bv[j];
        }
    }
    if (tape && (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
        out.set_requires_grad();
        tape->record([x, gain, bias, out, xhat, inv_sigma, rows, d]() mutable {
            auto g = out.grad();
            auto hv2 = xhat.data();
            auto sv2 = inv_sigma.data();
            auto gv2 = gain.data();
            if (x.requires_grad()) {
                auto gx = x.grad();
#pragma omp parallel for schedule(static)
                for (int64_t r = 0; r < rows; ++r) {
                    // dx = inv/d * (d*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    T sum_dh = T(0), sum_dh_h = T(0);
                    for (int64_t j = 0; j < d; ++j) {
                        const T dh = g[r * d + j] * gv2[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hv2[r * d + j];
                    }
                    const T inv = sv2[r];
                    for (int64_t j = 0; j < d; ++j) {
                        const T dh = g[r * d + j] * gv2[j];
                        gx[r * d + j] += inv / static_cast<T>(d) *
                                         (static_cast<T>(d) * dh - sum_dh -
                                          hv2[r * d + j] * sum_dh_h);
                    }
                }
            }
            if (gain.requires_grad()) {
                auto gg = gain.grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j)
                        gg[j] += g[r * d + j] * hv2[r * d + j];
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
            }
        });
    }
    return out;
}

// Inverted-scaling dropout; identity when not training. The mask comes
// from the caller's generator in index order, so runs reproduce.
template <class T>
Tensor<T> dropout(Tape<T>* tape, Tensor<T> x, double rate, bool train, Rng* rng) {
    if (!train || rate <= 0.0) return x;
    CLX_CHECK(rate < 1.0, "dropout: rate must be below 1");
    CLX_CHECK(rng != nullptr, "dropout: training mode needs a generator");
    Tensor<T> mask = Tensor<T>::zeros(x.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    auto mv = mask.data();
    for (size_t i = 0; i < mv.size(); ++i)
        mv[i] = rng->uniform() >= rate ? keep_scale : T(0);
    return mul(tape, x, mask);
}

// ---- lookups and gathers ----

template <class T>
Tensor<T> embedding_lookup(Tape<T>* tape, Tensor<T> table,
                           std::span<const int32_t> ids) {
    CLX_CHECK(table.ndim() == 2, "embedding_lookup: table must be 2-D");
    const int64_t v = table.dim(0), d = table.dim(1);
    Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(ids.size()), d});
    auto tv = table.data();
    auto ov = out.data();
    for (size_t i = 0; i < ids.size(); ++i) {
        CLX_CHECK(ids[i] >= 0 && ids[i] < v, "embedding_lookup: id ", ids[i],
                  " outside table of ", v, " rows");
        const T* src = tv.data() + static_cast<int64_t>(ids[i]) * d;
        T* dst = ov.data() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (tape && table.requires_grad()) {
        out.set_requires_grad();
        std::vector<int32_t> ids_copy(ids.begin(), ids.end());
        tape->record([table, out, ids_copy, d]() mutable {
            auto g = out.grad();
            auto gt = table.grad();
            // serial scatter-add keeps accumulation order fixed
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                const T* src = g.data() + static_cast<int64_t>(i) * d;
                T* dst = gt.data() + static_cast<int64_t>(ids_copy[i]) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// Row gather over activations, used to pull target positions before the
// prediction head.
template <class T>
Tensor<T> gather_rows(Tape<T>* tape, Tensor<T> x, std::span<const int32_t> idx) {
    const int64_t rows = x.rows(), d = x.cols();
    Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(idx.size()), d});
    auto xv = x.data();
    auto ov = out.data();
    for (size_t i = 0; i < idx.size(); ++i) {
        CLX_CHECK(idx[i] >= 0 && idx[i] < rows, "gather_rows: index out of range");
        const T* src = xv.data() + static_cast<int64_t>(idx[i]) * d;
        T* dst = ov.data() + static_cast<int64_t>(i) * d;
        for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
    }
    if (tape && x.requires_grad()) {
        out.set_requires_grad();
        std::vector<int32_t> idx_copy(idx.begin(), idx.end());
        tape->record([x, out, idx_copy, d]() mutable {
            auto g = out.grad();
            auto gx = x.grad();
            for (size_t i = 0; i < idx_copy.size(); ++i) {
                const T* src = g.data() + static_cast<int64_t>(i) * d;
                T* dst = gx.data() + static_cast<int64_t>(idx_copy[i]) * d;
                for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

// ---- attention softmax and loss ----

// Key-side visibility for attention: pad cells are never attended to, and
// causal mode hides keys after the query position.
struct AttentionMask {
    std::vector<uint8_t> pad;  // [rows * len], 1 = real cell
    int32_t rows = 0;
    int32_t len = 0;
    bool causal = false;
};

// scores[g, L, L] scaled then masked (additive -1e9) then row-softmax.
// g must equal mask.rows * heads with heads = g / rows.
template <class T>
Tensor<T> masked_softmax(Tape<T>* tape, Tensor<T> scores, const AttentionMask& mask,
                         T scale_factor) {
    CLX_CHECK(scores.ndim() == 3 && scores.dim(1) == scores.dim(2),
              "masked_softmax: scores must be [g, L, L]");
    const int64_t g = scores.dim(0), L = scores.dim(1);
    CLX_CHECK(mask.len == L && g % mask.rows == 0,
              "masked_softmax: mask does not match scores");
    const int64_t heads = g / mask.rows;
    Tensor<T> out = Tensor<T>::zeros(scores.shape());
    auto sv = scores.data();
    auto ov = out.data();
    const std::vector<uint8_t> pad = mask.pad;  // copy captured for backward
    const bool causal = mask.causal;
#pragma omp parallel for schedule(static)
    for (int64_t gi = 0; gi < g; ++gi) {
        const int64_t b = gi / heads;
        for (int64_t q = 0; q < L; ++q) {
            const T* row = sv.data() + (gi * L + q) * L;
            T* prow = ov.data() + (gi * L + q) * L;
            T maxv = -std::numeric_limits<T>::infinity();
            for (int64_t j = 0; j < L; ++j) {
                T z = row[j] * scale_factor;
                if (!pad[static_cast<size_t>(b * L + j)] || (causal && j > q))
                    z += T(-1e9);
                prow[j] = z;
                maxv = std::max(maxv, z);
            }
            T total = T(0);
            for (int64_t j = 0; j < L; ++j) {
                prow[j] = std::exp(prow[j] - maxv);
                total += prow[j];
            }
            for (int64_t j = 0; j < L; ++j) prow[j] /= total;
        }
    }
    if (tape && scores.requires_grad()) {
        out.set_requires_grad();
        tape->record([scores, out, g, L, scale_factor]() mutable {
            auto gr = out.grad();
            auto pv = out.data();
            auto gs = scores.grad();
#pragma omp parallel for schedule(static)
            for (int64_t r = 0; r < g * L; ++r) {
                const T* p = pv.data() + r * L;
                const T* dy = gr.data() + r * L;
                T dot = T(0);
                for (int64_t j = 0; j < L; ++j) dot += dy[j] * p[j];
                T* ds = gs.data() + r * L;
                for (int64_t j = 0; j < L; ++j)
                    ds[j] += scale_factor * p[j] * (dy[j] - dot);
            }
        });
    }
    return out;
}

// Mean negative log-likelihood over rows whose target is not kIgnore (-1).
// Stabilized by max subtraction; ignored rows get exactly zero gradient.
template <class T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, Tensor<T> logits,
                                std::span<const int32_t> targets) {
    CLX_CHECK(logits.ndim() == 2, "cross_entropy: logits must be [n, V]");
    const int64_t n = logits.dim(0), v = logits.dim(1);
    CLX_CHECK(static_cast<int64_t>(targets.size()) == n,
              "cross_entropy: target count mismatch");
    auto lv = logits.data();
    for (int64_t i = 0; i < n; ++i) {
        const int32_t t = targets[static_cast<size_t>(i)];
        CLX_CHECK(t < v, "cross_entropy: target ", t, " outside vocabulary");
    }
    int64_t active = 0;
    T total = T(0);
    std::vector<T> losses(static_cast<size_t>(n), T(0));
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        const int32_t t = targets[static_cast<size_t>(i)];
        if (t < 0) continue;
        const T* row = lv.data() + i * v;
        T maxv = row[0];
        for (int64_t j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
        T lse = T(0);
        for (int64_t j = 0; j < v; ++j) lse += std::exp(row[j] - maxv);
        losses[static_cast<size_t>(i)] = std::log(lse) - (row[t] - maxv);
    }
    for (int64_t i = 0; i < n; ++i) {
        if (targets[static_cast<size_t>(i)] < 0) continue;
        total += losses[static_cast<size_t>(i)];
        ++active;
    }
    CLX_CHECK(active > 0, "cross_entropy: every row is ignored");
    Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(active));
    if (tape && logits.requires_grad()) {
        out.set_requires_grad();
        std::vector<int32_t> tgt(targets.begin(), targets.end());
        tape->record([logits, out, tgt, n, v, active]() mutable {
            const T gscale = out.grad()[0] / static_cast<T>(active);
            auto lv2 = logits.data();
            auto gl = logits.grad();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                const int32_t t = tgt[static_cast<size_t>(i)];
                if (t < 0) continue;
                const T* row = lv2.data() + i * v;
                T* grow = gl.data() + i * v;
                T maxv = row[0];
                for (int64_t j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
                T lse = T(0);
                for (int64_t j = 0; j < v; ++j) lse += std::exp(row[j] - maxv);
                for (int64_t j = 0; j < v; ++j) {
                    const T p = std::exp(row[j] - maxv) / lse;
                    grow[j] += gscale * (p - (j == t ? T(1) : T(0)));
                }
            }
        });
    }
    return out;
}

}  // namespace crosslm
