#ifndef MEMDFA_TENSOR_HPP
#define MEMDFA_TENSOR_HPP

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "memdfa/ledger.hpp"
#include "memdfa/rng.hpp"

namespace memdfa {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = s.empty() ? 0 : 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Dense n-dimensional array, row-major. Every construction of a non-empty
/// tensor reports one alloc event to the ledger and every destruction the
/// matching free; moves transfer the reporting identity without events.
/// The tag names the tensor's role ("activation:a3", "weight:W1", ...) and
/// is fixed for the tensor's lifetime.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor() = default;

    explicit Tensor(Shape shape, std::string tag = "tmp")
        : shape_(std::move(shape)), tag_(std::move(tag)) {
        validate_shape();
        data_.assign(shape_numel(shape_), T(0));
        report_alloc();
    }

    Tensor(Shape shape, std::vector<T> data, std::string tag = "tmp")
        : shape_(std::move(shape)), data_(std::move(data)), tag_(std::move(tag)) {
        validate_shape();
        if (shape_numel(shape_) != data_.size())
            throw ShapeError("Tensor: shape " + shape_str(shape_) + " wants " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(data_.size()));
        report_alloc();
    }

    Tensor(const Tensor& o) : shape_(o.shape_), data_(o.data_), tag_(o.tag_) { report_alloc(); }

    Tensor(Tensor&& o) noexcept
        : shape_(std::move(o.shape_)), data_(std::move(o.data_)), tag_(std::move(o.tag_)),
          gen_(o.gen_) {
        o.shape_.clear();
        o.data_.clear();
        o.gen_ = 0;
    }

    Tensor& operator=(const Tensor& o) {
        if (this == &o) return *this;
        report_free();
        shape_ = o.shape_;
        data_ = o.data_;
        tag_ = o.tag_;
        report_alloc();
        return *this;
    }

    Tensor& operator=(Tensor&& o) noexcept {
        if (this == &o) return *this;
        report_free();
        shape_ = std::move(o.shape_);
        data_ = std::move(o.data_);
        tag_ = std::move(o.tag_);
        gen_ = o.gen_;
        o.shape_.clear();
        o.data_.clear();
        o.gen_ = 0;
        return *this;
    }

    ~Tensor() { report_free(); }

    Tensor clone(std::string tag) const {
        Tensor c;
        c.shape_ = shape_;
        c.data_ = data_;
        c.tag_ = std::move(tag);
        c.report_alloc();
        return c;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t numel() const { return data_.size(); }
    std::uint64_t bytes() const { return static_cast<std::uint64_t>(data_.size()) * sizeof(T); }
    bool empty() const { return data_.empty(); }
    const std::string& tag() const { return tag_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) {
        assert(rank() == 2);
        return data_[r * shape_[1] + c];
    }
    const T& operator()(std::size_t r, std::size_t c) const {
        assert(rank() == 2);
        return data_[r * shape_[1] + c];
    }
    T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
        assert(rank() == 4);
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }
    const T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        assert(rank() == 4);
        return data_[((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
    }

    /// In-place metadata change; element count must be preserved. No event.
    void reshape(Shape s) {
        if (shape_numel(s) != data_.size())
            throw ShapeError("reshape: " + shape_str(shape_) + " -> " + shape_str(s) +
                             " changes element count");
        shape_ = std::move(s);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

private:
    void validate_shape() const {
        for (std::size_t d : shape_)
            if (d == 0) throw ShapeError("Tensor: zero dimension in " + shape_str(shape_));
    }

    void report_alloc() {
        if (!data_.empty()) gen_ = Ledger::instance().on_alloc(bytes(), tag_);
    }
    void report_free() {
        if (gen_ != 0) {
            Ledger::instance().on_free(bytes(), tag_, gen_);
            gen_ = 0;
        }
    }

    Shape shape_;
    std::vector<T> data_;
    std::string tag_;
    std::uint32_t gen_ = 0;
};

namespace detail {
template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2)
        throw ShapeError(std::string(op) + ": need rank-2 tensor, got " + shape_str(t.shape()));
}
}  // namespace detail

/// C = A * B. Accumulation over the inner dimension runs in ascending
/// order for every output element; the equality tests between algorithms
/// rely on this being true of all three matmul variants.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, std::string tag = "tmp") {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n}, std::move(tag));
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const T ail = pa[i * k + l];
            const T* brow = pb + l * n;
            T* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
        }
    Ledger::instance().count_matmul();
    return c;
}

/// C = A^T * B for A[k x m], B[k x n], without materializing the transpose.
template <typename T>
Tensor<T> matmul_transpose_left(const Tensor<T>& a, const Tensor<T>& b, std::string tag = "tmp") {
    detail::require_rank2(a, "matmul_transpose_left");
    detail::require_rank2(b, "matmul_transpose_left");
    if (a.dim(0) != b.dim(0))
        throw ShapeError("matmul_transpose_left: leading dimensions disagree, " +
                         shape_str(a.shape()) + "^T * " + shape_str(b.shape()));
    const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n}, std::move(tag));
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::size_t l = 0; l < k; ++l)
        for (std::size_t i = 0; i < m; ++i) {
            const T ali = pa[l * m + i];
            const T* brow = pb + l * n;
            T* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += ali * brow[j];
        }
    Ledger::instance().count_matmul();
    return c;
}

/// C = A * B^T for A[m x k], B[n x k].
template <typename T>
Tensor<T> matmul_transpose_right(const Tensor<T>& a, const Tensor<T>& b, std::string tag = "tmp") {
    detail::require_rank2(a, "matmul_transpose_right");
    detail::require_rank2(b, "matmul_transpose_right");
    if (a.dim(1) != b.dim(1))
        throw ShapeError("matmul_transpose_right: trailing dimensions disagree, " +
                         shape_str(a.shape()) + " * " + shape_str(b.shape()) + "^T");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> c(Shape{m, n}, std::move(tag));
    const T* pa = a.data();
    const T* pb = b.data();
    T* pc = c.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const T* arow = pa + i * k;
            const T* brow = pb + j * k;
            T acc = 0;
            for (std::size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
            pc[i * n + j] = acc;
        }
    Ledger::instance().count_matmul();
    return c;
}

/// result[i][j] = u[i] * v[j] for rank-1 u, v.
template <typename T>
Tensor<T> outer(const Tensor<T>& u, const Tensor<T>& v, std::string tag = "tmp") {
    if (u.rank() != 1 || v.rank() != 1)
        throw ShapeError("outer: need rank-1 inputs, got " + shape_str(u.shape()) + " and " +
                         shape_str(v.shape()));
    const std::size_t m = u.dim(0), n = v.dim(0);
    Tensor<T> c(Shape{m, n}, std::move(tag));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = u[i] * v[j];
    return c;
}

/// Elementwise product; shapes must match exactly.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b, std::string tag = "tmp") {
    if (a.shape() != b.shape())
        throw ShapeError("hadamard: shape mismatch, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor<T> c(a.shape(), std::move(tag));
    for (std::size_t i = 0; i < a.numel(); ++i) c[i] = a[i] * b[i];
    return c;
}

struct Uniform {
    double lo, hi;
};
struct Normal {
    double mean, stddev;
};
using Distribution = std::variant<Uniform, Normal>;

template <typename T>
Tensor<T> random_fill(Rng& rng, Shape shape, const Distribution& dist, std::string tag = "tmp") {
    if (const auto* u = std::get_if<Uniform>(&dist)) {
        if (!(u->lo < u->hi))
            throw std::invalid_argument("random_fill: uniform requires lo < hi");
    } else if (const auto* n = std::get_if<Normal>(&dist)) {
        if (!(n->stddev > 0.0))
            throw std::invalid_argument("random_fill: normal requires stddev > 0");
    }
    Tensor<T> t(std::move(shape), std::move(tag));
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = std::visit(
            [&](const auto& d) -> T {
                if constexpr (std::is_same_v<std::decay_t<decltype(d)>, Uniform>)
                    return static_cast<T>(rng.uniform(d.lo, d.hi));
                else
                    return static_cast<T>(rng.normal(d.mean, d.stddev));
            },
            dist);
    return t;
}

// ---- small in-place / reduction helpers used by the layer math ----

/// m[r][c] += v[c] for every row r.
template <typename T>
void add_row_vector(Tensor<T>& m, const Tensor<T>& v) {
    detail::require_rank2(m, "add_row_vector");
    if (v.rank() != 1 || v.dim(0) != m.dim(1))
        throw ShapeError("add_row_vector: " + shape_str(m.shape()) + " += " +
                         shape_str(v.shape()));
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m[r * cols + c] += v[c];
}

/// Column means of a [rows x cols] matrix: out[c] = sum_r m[r][c] / rows.
template <typename T>
Tensor<T> column_mean(const Tensor<T>& m, std::string tag = "tmp") {
    detail::require_rank2(m, "column_mean");
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    Tensor<T> out(Shape{cols}, std::move(tag));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c] += m[r * cols + c];
    const T inv = T(1) / static_cast<T>(rows);
    for (std::size_t c = 0; c < cols; ++c) out[c] *= inv;
    return out;
}

template <typename T>
void scale_inplace(Tensor<T>& t, T s) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] *= s;
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

/// First index of the row maximum (ties resolve to the lowest index).
template <typename T>
std::size_t argmax_row(const Tensor<T>& m, std::size_t row) {
    detail::require_rank2(m, "argmax_row");
    const std::size_t cols = m.dim(1);
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
        if (m[row * cols + c] > m[row * cols + best]) best = c;
    return best;
}

}  // namespace memdfa

#endif  // MEMDFA_TENSOR_HPP
