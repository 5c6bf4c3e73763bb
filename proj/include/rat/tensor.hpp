#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rat/error.hpp"
#include "rat/rng.hpp"

namespace rat {

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats. Value-semantics handle to a
/// shared node; the buffer is treated as immutable once an op has consumed
/// it (mutable_values exists for parameter updates between forward passes).
class Tensor {
  public:
    Tensor() = default;

    Tensor(Shape shape, double fill, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        node_->shape = std::move(shape);
        node_->data.assign(detail::numel(node_->shape), fill);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::TensorNode>()) {
        if (data.size() != detail::numel(shape))
            throw ShapeError(concat("Tensor: data length ", data.size(), " does not match shape ",
                                    detail::shape_str(shape)));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), 0.0, requires_grad);
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    std::size_t rows() const {
        require_2d("rows");
        return node_->shape[0];
    }
    std::size_t cols() const {
        require_2d("cols");
        return node_->shape[1];
    }

    const std::vector<double>& values() const { return node_->data; }

    /// In-place access for optimizers and finite-difference probes. Never
    /// call on a tensor that participates in a live tape.
    std::vector<double>& mutable_values() { return node_->data; }

    double item() const {
        if (size() != 1) throw ShapeError(concat("item: tensor has ", size(), " elements"));
        return node_->data[0];
    }

    double at(std::size_t r, std::size_t c) const {
        require_2d("at");
        return node_->data[r * cols() + c];
    }

    bool has_grad() const { return node_ && !node_->grad.empty(); }

    const std::vector<double>& grad() const {
        if (!has_grad()) throw Error("Tensor::grad: no gradient recorded; run Tape::backward first");
        return node_->grad;
    }

    std::vector<double> grad_or_zeros() const {
        if (has_grad()) return node_->grad;
        return std::vector<double>(size(), 0.0);
    }

    /// Allocates (zero-filled) on first use; backward accumulates into this.
    std::vector<double>& grad_buffer() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
        return node_->grad;
    }

    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
    void drop_grad() { node_->grad.clear(); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }

  private:
    void require_2d(const char* what) const {
        if (!node_ || node_->shape.size() != 2)
            throw ShapeError(concat(what, ": tensor is not 2-D: ",
                                    node_ ? detail::shape_str(node_->shape) : "undefined"));
    }

    std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of executed operations. Ops append in execution order,
/// which is topological by construction; backward consumes the record in
/// exact reverse order and is single-shot.
class Tape {
  public:
    void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward step in
    /// reverse. Gradients accumulate (sum over uses) into each node's buffer.
    void backward(Tensor loss) {
        if (loss.size() != 1) throw ShapeError(concat("backward: loss must be scalar, got shape ",
                                                      detail::shape_str(loss.shape())));
        if (entries_.empty()) throw Error("backward: tape is empty");
        loss.grad_buffer()[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
        entries_.clear();
    }

  private:
    std::vector<std::function<void()>> entries_;
};

enum class Reduction { Sum, Mean };

/// Attention connectivity mask: rows index queries, cols index keys,
/// 1 = may attend. Plain data, not differentiable.
struct AttnMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> allowed;

    static AttnMask all(std::size_t r, std::size_t c) {
        return AttnMask{r, c, std::vector<std::uint8_t>(r * c, 1)};
    }

    static AttnMask causal(std::size_t n) {
        AttnMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) m.allowed[i * n + j] = 1;
        return m;
    }

    /// Every query row sees exactly the keys marked valid.
    static AttnMask from_key_validity(std::size_t rows, const std::vector<std::uint8_t>& key_valid) {
        AttnMask m{rows, key_valid.size(), std::vector<std::uint8_t>(rows * key_valid.size(), 0)};
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < key_valid.size(); ++j)
                m.allowed[i * m.cols + j] = key_valid[j] ? 1 : 0;
        return m;
    }

    /// Square mask where attention stays inside each consecutive segment.
    static AttnMask block_diagonal(const std::vector<std::size_t>& segment_lengths) {
        std::size_t n = 0;
        for (auto len : segment_lengths) n += len;
        AttnMask m{n, n, std::vector<std::uint8_t>(n * n, 0)};
        std::size_t base = 0;
        for (auto len : segment_lengths) {
            for (std::size_t i = 0; i < len; ++i)
                for (std::size_t j = 0; j < len; ++j) m.allowed[(base + i) * n + (base + j)] = 1;
            base += len;
        }
        return m;
    }

    AttnMask& intersect(const AttnMask& other) {
        if (rows != other.rows || cols != other.cols)
            throw ShapeError(concat("AttnMask::intersect: ", rows, "x", cols, " vs ", other.rows,
                                    "x", other.cols));
        for (std::size_t i = 0; i < allowed.size(); ++i) allowed[i] &= other.allowed[i];
        return *this;
    }

    bool allowed_at(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

namespace detail {

constexpr double kMaskFill = -1e9;

inline void check_finite(const char* op, const Tensor& t) {
    for (double v : t.values())
        if (!std::isfinite(v)) throw NumericError(concat(op, ": non-finite value in output"));
}

inline bool track_grad(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs)
        if ((*t).requires_grad()) return true;
    return false;
}

inline void require_2d(const char* op, const Tensor& t) {
    if (t.shape().size() != 2)
        throw ShapeError(concat(op, ": expected 2-D tensor, got ", shape_str(t.shape())));
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(concat(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                                shape_str(b.shape())));
}

// C += A (m x k) * B (k x n)
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* B,
                    double* C) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        double* c_row = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = a_row[p];
            const double* b_row = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// dA (m x k) += G (m x n) * B^T, B is (k x n)
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* G, const double* B,
                    double* dA) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* g_row = G + i * n;
        double* da_row = dA + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* b_row = B + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g_row[j] * b_row[j];
            da_row[p] += acc;
        }
    }
}

// dB (k x n) += A^T * G, A is (m x k), G is (m x n)
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* A, const double* G,
                    double* dB) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a_row = A + i * k;
        const double* g_row = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = a_row[p];
            double* db_row = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) db_row[j] += a * g_row[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops. Every op validates shapes, checks outputs for NaN/Inf, and
// records its backward step on the tape when any input requires grad.
// ---------------------------------------------------------------------------

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(Tensor a, Tensor b, Tape* tape) {
    detail::require_2d("matmul", a);
    detail::require_2d("matmul", b);
    if (a.cols() != b.rows())
        throw ShapeError(concat("matmul: inner dimensions differ: ", detail::shape_str(a.shape()),
                                " x ", detail::shape_str(b.shape())));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const bool track = detail::track_grad(tape, {&a, &b});
    Tensor out(Shape{m, n}, 0.0, track);
    detail::gemm_nn(m, k, n, a.values().data(), b.values().data(), out.mutable_values().data());
    detail::check_finite("matmul", out);
    if (track) {
        tape->record([a, b, out, m, k, n]() mutable {
            if (!out.has_grad()) return;
            const double* go = out.grad().data();
            if (a.requires_grad())
                detail::gemm_nt(m, k, n, go, b.values().data(), a.grad_buffer().data());
            if (b.requires_grad())
                detail::gemm_tn(m, k, n, a.values().data(), go, b.grad_buffer().data());
        });
    }
    return out;
}

/// Elementwise sum; shapes must match exactly.
inline Tensor add(Tensor a, Tensor b, Tape* tape) {
    detail::require_same_shape("add", a, b);
    const bool track = detail::track_grad(tape, {&a, &b});
    Tensor out(a.shape(), 0.0, track);
    const std::size_t n = out.size();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    detail::check_finite("add", out);
    if (track) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

/// [m,n] plus a length-n vector broadcast over rows.
inline Tensor add_bias(Tensor a, Tensor bias, Tape* tape) {
    detail::require_2d("add_bias", a);
    if (bias.shape() != Shape{a.cols()})
        throw ShapeError(concat("add_bias: bias shape ", detail::shape_str(bias.shape()),
                                " does not match columns of ", detail::shape_str(a.shape())));
    const bool track = detail::track_grad(tape, {&a, &bias});
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out(a.shape(), 0.0, track);
    const double* pa = a.values().data();
    const double* pb = bias.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) po[i * n + j] = pa[i * n + j] + pb[j];
    detail::check_finite("add_bias", out);
    if (track) {
        tape->record([a, bias, out, m, n]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
            }
        });
    }
    return out;
}

/// Elementwise product; shapes must match exactly.
inline Tensor mul(Tensor a, Tensor b, Tape* tape) {
    detail::require_same_shape("mul", a, b);
    const bool track = detail::track_grad(tape, {&a, &b});
    Tensor out(a.shape(), 0.0, track);
    const std::size_t n = out.size();
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    detail::check_finite("mul", out);
    if (track) {
        tape->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad_buffer();
                const double* pb2 = b.values().data();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * pb2[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad_buffer();
                const double* pa2 = a.values().data();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * pa2[i];
            }
        });
    }
    return out;
}

inline Tensor scale(Tensor a, double c, Tape* tape) {
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(a.shape(), 0.0, track);
    const std::size_t n = out.size();
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * c;
    detail::check_finite("scale", out);
    if (track) {
        tape->record([a, out, c]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
        });
    }
    return out;
}

inline Tensor relu(Tensor a, Tape* tape) {
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(a.shape(), 0.0, track);
    const std::size_t n = out.size();
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
    if (track) {
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            const double* pa2 = a.values().data();
            for (std::size_t i = 0; i < go.size(); ++i)
                if (pa2[i] > 0.0) ga[i] += go[i];
        });
    }
    return out;
}

namespace detail {
// tanh form of GELU; constants are part of the contract so tests can pin
// exact values.
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace detail

inline Tensor gelu(Tensor a, Tape* tape) {
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(a.shape(), 0.0, track);
    const std::size_t n = out.size();
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = pa[i];
        po[i] = 0.5 * x * (1.0 + std::tanh(detail::kGeluC * (x + detail::kGeluA * x * x * x)));
    }
    detail::check_finite("gelu", out);
    if (track) {
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            const double* pa2 = a.values().data();
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double x = pa2[i];
                const double u = detail::kGeluC * (x + detail::kGeluA * x * x * x);
                const double t = std::tanh(u);
                const double du = detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * x * x);
                ga[i] += go[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
            }
        });
    }
    return out;
}

/// Softmax over the last axis of a 2-D tensor (each row sums to 1).
inline Tensor softmax_rows(Tensor a, Tape* tape) {
    detail::require_2d("softmax", a);
    const bool track = detail::track_grad(tape, {&a});
    const std::size_t m = a.rows(), n = a.cols();
    if (n == 0) throw ShapeError("softmax: zero-width rows");
    Tensor out(a.shape(), 0.0, track);
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = pa + i * n;
        double* orow = po + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            z += orow[j];
        }
        for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
    }
    detail::check_finite("softmax", out);
    if (track) {
        tape->record([a, out, m, n]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            const auto& y = out.values();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                const double* yr = y.data() + i * n;
                const double* gr = go.data() + i * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
                double* gar = ga.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gar[j] += yr[j] * (gr[j] - dot);
            }
        });
    }
    return out;
}

/// Log-softmax over the last axis of a 2-D tensor.
inline Tensor log_softmax_rows(Tensor a, Tape* tape) {
    detail::require_2d("log_softmax", a);
    const bool track = detail::track_grad(tape, {&a});
    const std::size_t m = a.rows(), n = a.cols();
    if (n == 0) throw ShapeError("log_softmax: zero-width rows");
    Tensor out(a.shape(), 0.0, track);
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = pa + i * n;
        double* orow = po + i * n;
        double mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        const double lz = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) orow[j] = row[j] - lz;
    }
    detail::check_finite("log_softmax", out);
    if (track) {
        tape->record([a, out, m, n]() mutable {
            if (!out.has_grad() || !a.requires_grad()) return;
            const auto& go = out.grad();
            const auto& y = out.values();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                const double* yr = y.data() + i * n;
                const double* gr = go.data() + i * n;
                double gsum = 0.0;
                for (std::size_t j = 0; j < n; ++j) gsum += gr[j];
                double* gar = ga.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) gar[j] += gr[j] - std::exp(yr[j]) * gsum;
            }
        });
    }
    return out;
}

/// Per-row layer normalization of a 2-D tensor with learned gain/bias of
/// length cols. Epsilon sits inside the square root: (x-mu)/sqrt(var+eps).
inline Tensor layer_norm(Tensor a, Tensor gain, Tensor bias, Tape* tape,
                         double eps = 1e-6) {
    detail::require_2d("layer_norm", a);
    const std::size_t m = a.rows(), n = a.cols();
    if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
        throw ShapeError(concat("layer_norm: gain/bias must have shape [", n, "], got ",
                                detail::shape_str(gain.shape()), " and ",
                                detail::shape_str(bias.shape())));
    const bool track = detail::track_grad(tape, {&a, &gain, &bias});
    Tensor out(a.shape(), 0.0, track);
    // Saved for backward: normalized values and per-row inverse stddev.
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    const double* pa = a.values().data();
    const double* pg = gain.values().data();
    const double* pb = bias.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = pa + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += row[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (row[j] - mean) * is;
            (*xhat)[i * n + j] = xh;
            po[i * n + j] = xh * pg[j] + pb[j];
        }
    }
    detail::check_finite("layer_norm", out);
    if (track) {
        tape->record([a, gain, bias, out, xhat, inv_std, m, n]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            const double* pg2 = gain.values().data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* gr = go.data() + i * n;
                const double* xh = xhat->data() + i * n;
                if (a.requires_grad()) {
                    auto& ga = a.grad_buffer();
                    double* gar = ga.data() + i * n;
                    // dxhat = go * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = gr[j] * pg2[j];
                        s1 += dxh;
                        s2 += dxh * xh[j];
                    }
                    s1 /= static_cast<double>(n);
                    s2 /= static_cast<double>(n);
                    const double is = (*inv_std)[i];
                    for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = gr[j] * pg2[j];
                        gar[j] += (dxh - s1 - xh[j] * s2) * is;
                    }
                }
                if (gain.requires_grad()) {
                    auto& gg = gain.grad_buffer();
                    for (std::size_t j = 0; j < n; ++j) gg[j] += gr[j] * xh[j];
                }
                if (bias.requires_grad()) {
                    auto& gb = bias.grad_buffer();
                    for (std::size_t j = 0; j < n; ++j) gb[j] += gr[j];
                }
            }
        });
    }
    return out;
}

/// Gather rows of an embedding table: [V,d] indexed by n ids -> [n,d].
inline Tensor embedding_lookup(Tensor table, const std::vector<int>& ids, Tape* tape) {
    detail::require_2d("embedding_lookup", table);
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ShapeError(concat("embedding_lookup: id ", id, " out of range [0, ", v, ")"));
    const bool track = detail::track_grad(tape, {&table});
    Tensor out(Shape{ids.size(), d}, 0.0, track);
    const double* pt = table.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy_n(pt + static_cast<std::size_t>(ids[i]) * d, d, po + i * d);
    if (track) {
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        tape->record([table, out, ids_copy, d]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& gt = table.grad_buffer();
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>((*ids_copy)[i]) * d;
                const double* src = go.data() + i * d;
                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

/// Stack 2-D tensors vertically; all parts must share a column count.
inline Tensor concat_rows(std::span<const Tensor> parts, Tape* tape) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const std::size_t n = parts[0].cols();
    std::size_t total = 0;
    bool track = false;
    for (const auto& p : parts) {
        detail::require_2d("concat_rows", p);
        if (p.cols() != n)
            throw ShapeError(concat("concat_rows: column mismatch ", p.cols(), " vs ", n));
        total += p.rows();
        track = track || (tape && p.requires_grad());
    }
    Tensor out(Shape{total, n}, 0.0, track);
    double* po = out.mutable_values().data();
    std::size_t row = 0;
    for (const auto& p : parts) {
        std::copy_n(p.values().data(), p.size(), po + row * n);
        row += p.rows();
    }
    if (track) {
        auto parts_copy = std::make_shared<std::vector<Tensor>>(parts.begin(), parts.end());
        tape->record([parts_copy, out, n]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            std::size_t row = 0;
            for (auto& p : *parts_copy) {
                if (p.requires_grad()) {
                    auto& gp = p.grad_buffer();
                    const double* src = go.data() + row * n;
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
                }
                row += p.rows();
            }
        });
    }
    return out;
}

/// Stack 2-D tensors side by side; all parts must share a row count.
inline Tensor concat_cols(std::span<const Tensor> parts, Tape* tape) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    bool track = false;
    for (const auto& p : parts) {
        detail::require_2d("concat_cols", p);
        if (p.rows() != m) throw ShapeError(concat("concat_cols: row mismatch ", p.rows(), " vs ", m));
        total += p.cols();
        track = track || (tape && p.requires_grad());
    }
    Tensor out(Shape{m, total}, 0.0, track);
    double* po = out.mutable_values().data();
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t pc = p.cols();
        const double* src = p.values().data();
        for (std::size_t i = 0; i < m; ++i) std::copy_n(src + i * pc, pc, po + i * total + col);
        col += pc;
    }
    if (track) {
        auto parts_copy = std::make_shared<std::vector<Tensor>>(parts.begin(), parts.end());
        tape->record([parts_copy, out, m, total]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            std::size_t col = 0;
            for (auto& p : *parts_copy) {
                const std::size_t pc = p.cols();
                if (p.requires_grad()) {
                    auto& gp = p.grad_buffer();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < pc; ++j)
                            gp[i * pc + j] += go[i * total + col + j];
                }
                col += pc;
            }
        });
    }
    return out;
}

/// Copy of rows [r0, r1) of a 2-D tensor.
inline Tensor slice_rows(Tensor a, std::size_t r0, std::size_t r1, Tape* tape) {
    detail::require_2d("slice_rows", a);
    if (r0 >= r1 || r1 > a.rows())
        throw ShapeError(concat("slice_rows: range [", r0, ", ", r1, ") invalid for ", a.rows(),
                                " rows"));
    const std::size_t n = a.cols();
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(Shape{r1 - r0, n}, 0.0, track);
    std::copy_n(a.values().data() + r0 * n, (r1 - r0) * n, out.mutable_values().data());
    if (track) {
        tape->record([a, out, r0, n]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            double* dst = ga.data() + r0 * n;
            for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
        });
    }
    return out;
}

/// Copy of columns [c0, c1) of a 2-D tensor.
inline Tensor slice_cols(Tensor a, std::size_t c0, std::size_t c1, Tape* tape) {
    detail::require_2d("slice_cols", a);
    if (c0 >= c1 || c1 > a.cols())
        throw ShapeError(concat("slice_cols: range [", c0, ", ", c1, ") invalid for ", a.cols(),
                                " cols"));
    const std::size_t m = a.rows(), n = a.cols(), w = c1 - c0;
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(Shape{m, w}, 0.0, track);
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pa + i * n + c0, w, po + i * w);
    if (track) {
        tape->record([a, out, c0, m, n, w]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) ga[i * n + c0 + j] += go[i * w + j];
        });
    }
    return out;
}

inline Tensor transpose(Tensor a, Tape* tape) {
    detail::require_2d("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(Shape{n, m}, 0.0, track);
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
    if (track) {
        tape->record([a, out, m, n]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        });
    }
    return out;
}

/// Same data, new shape; element count must be preserved.
inline Tensor reshape(Tensor a, Shape new_shape, Tape* tape) {
    if (detail::numel(new_shape) != a.size())
        throw ShapeError(concat("reshape: cannot view ", detail::shape_str(a.shape()), " as ",
                                detail::shape_str(new_shape)));
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(std::move(new_shape), a.values(), track);
    if (track) {
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

/// Inverted dropout: kept activations are scaled by 1/(1-p) so the expected
/// value is unchanged. p = 0 returns the input tensor itself. The mask is a
/// pure function of the rng state, so a fixed seed reproduces it exactly.
inline Tensor dropout(Tensor a, double p, Rng& rng, Tape* tape) {
    if (p < 0.0 || p >= 1.0) throw ConfigError(concat("dropout: probability ", p, " outside [0, 1)"));
    if (p == 0.0) return a;
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(a.shape(), 0.0, track);
    const std::size_t n = out.size();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(n);
    const double inv_keep = 1.0 / (1.0 - p);
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < n; ++i) {
        const bool keep = rng.uniform() >= p;
        (*mask)[i] = keep;
        po[i] = keep ? pa[i] * inv_keep : 0.0;
    }
    detail::check_finite("dropout", out);
    if (track) {
        tape->record([a, out, mask, inv_keep]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i)
                if ((*mask)[i]) ga[i] += go[i] * inv_keep;
        });
    }
    return out;
}

/// Adds -1e9 to positions the mask forbids, leaving allowed logits intact.
/// A row with no allowed position would make the following softmax
/// meaningless, so it is rejected here.
inline Tensor masked_fill(Tensor a, const AttnMask& mask, Tape* tape) {
    detail::require_2d("masked_fill", a);
    if (a.rows() != mask.rows || a.cols() != mask.cols)
        throw ShapeError(concat("masked_fill: tensor ", detail::shape_str(a.shape()),
                                " vs mask ", mask.rows, "x", mask.cols));
    const std::size_t m = a.rows(), n = a.cols();
    for (std::size_t i = 0; i < m; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < n && !any; ++j) any = mask.allowed[i * n + j] != 0;
        if (!any) throw Error(concat("masked_fill: row ", i, " has every position masked"));
    }
    const bool track = detail::track_grad(tape, {&a});
    Tensor out(a.shape(), 0.0, track);
    const double* pa = a.values().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m * n; ++i)
        po[i] = mask.allowed[i] ? pa[i] : pa[i] + detail::kMaskFill;
    detail::check_finite("masked_fill", out);
    if (track) {
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const auto& go = out.grad();
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        });
    }
    return out;
}

/// Sum of all elements -> scalar.
inline Tensor sum(Tensor a, Tape* tape) {
    const bool track = detail::track_grad(tape, {&a});
    double total = 0.0;
    for (double v : a.values()) total += v;
    Tensor out = Tensor::scalar(total, track);
    detail::check_finite("sum", out);
    if (track) {
        tape->record([a, out]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            auto& ga = a.grad_buffer();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

/// Cross-entropy against the label-smoothed target q = (1-eps)*onehot + eps/V,
/// summed (or averaged) over positions where valid is nonzero. Positions
/// marked invalid contribute nothing to the loss or the gradient.
inline Tensor label_smoothed_cross_entropy(Tensor logits, const std::vector<int>& gold,
                                           const std::vector<std::uint8_t>& valid, double eps,
                                           Reduction reduction, Tape* tape) {
    detail::require_2d("cross_entropy", logits);
    const std::size_t t = logits.rows(), v = logits.cols();
    if (gold.size() != t || valid.size() != t)
        throw ShapeError(concat("cross_entropy: logits have ", t, " rows but gold/valid have ",
                                gold.size(), "/", valid.size()));
    if (eps < 0.0 || eps >= 1.0) throw ConfigError(concat("cross_entropy: smoothing ", eps,
                                                          " outside [0, 1)"));
    std::size_t count = 0;
    for (std::size_t i = 0; i < t; ++i) {
        if (!valid[i]) continue;
        ++count;
        if (gold[i] < 0 || static_cast<std::size_t>(gold[i]) >= v)
            throw ShapeError(concat("cross_entropy: gold id ", gold[i], " out of range [0, ", v, ")"));
    }
    if (count == 0) throw Error("cross_entropy: every position is masked out");

    // Stable log-softmax, saved for the backward pass.
    auto logp = std::make_shared<std::vector<double>>(t * v);
    const double* pl = logits.values().data();
    double loss = 0.0;
    const double unif = eps / static_cast<double>(v);
    for (std::size_t i = 0; i < t; ++i) {
        if (!valid[i]) continue;
        const double* row = pl + i * v;
        double mx = row[0];
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        const double lz = mx + std::log(z);
        double row_sum_logp = 0.0;
        double* lp = logp->data() + i * v;
        for (std::size_t j = 0; j < v; ++j) {
            lp[j] = row[j] - lz;
            row_sum_logp += lp[j];
        }
        loss -= (1.0 - eps) * lp[gold[i]] + unif * row_sum_logp;
    }
    const double denom = reduction == Reduction::Mean ? static_cast<double>(count) : 1.0;
    const bool track = detail::track_grad(tape, {&logits});
    Tensor out = Tensor::scalar(loss / denom, track);
    detail::check_finite("cross_entropy", out);
    if (track) {
        auto gold_copy = std::make_shared<std::vector<int>>(gold);
        auto valid_copy = std::make_shared<std::vector<std::uint8_t>>(valid);
        tape->record([logits, out, logp, gold_copy, valid_copy, t, v, eps, unif, denom]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0] / denom;
            auto& gl = logits.grad_buffer();
            for (std::size_t i = 0; i < t; ++i) {
                if (!(*valid_copy)[i]) continue;
                const double* lp = logp->data() + i * v;
                double* gr = gl.data() + i * v;
                const std::size_t gi = static_cast<std::size_t>((*gold_copy)[i]);
                for (std::size_t j = 0; j < v; ++j) {
                    const double q = (j == gi ? 1.0 - eps : 0.0) + unif;
                    gr[j] += g * (std::exp(lp[j]) - q);
                }
            }
        });
    }
    return out;
}

/// Compares the tape gradient of a scalar function against central finite
/// differences, coordinate by coordinate over every leaf. Returns the largest
/// relative error max(|analytic - fd|) / max(|analytic|, |fd|, 1e-8). The
/// function must rebuild its graph on each call and be deterministic.
inline double grad_check(const std::function<Tensor(Tape&)>& f, std::span<Tensor> leaves,
                         double step) {
    if (step <= 0.0) throw ConfigError("grad_check: step must be positive");
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) throw Error("grad_check: every leaf must require grad");
        leaf.drop_grad();
    }
    Tape tape;
    Tensor loss = f(tape);
    if (loss.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad_or_zeros());

    auto eval = [&f]() {
        Tape scratch;
        Tensor out = f(scratch);
        scratch.clear();
        return out.item();
    };

    double max_err = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& x = leaves[li].mutable_values();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + step;
            const double up = eval();
            x[i] = saved - step;
            const double down = eval();
            x[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            if (!std::isfinite(fd)) throw NumericError("grad_check: non-finite finite-difference estimate");
            const double a = analytic[li][i];
            const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace rat
