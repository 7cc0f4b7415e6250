#ifndef MEMDFA_LAYERS_HPP
#define MEMDFA_LAYERS_HPP

#include <cmath>
#include <cstddef>
#include <type_traits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "memdfa/feedback.hpp"
#include "memdfa/tensor.hpp"

namespace memdfa {

enum class SublayerKind : std::uint8_t { Affine, Relu, Conv2d, MaxPool, AvgPool, Flatten };

/// One operation inside a layer. A layer starts with exactly one
/// parameterized op (affine or conv2d) followed by any number of
/// non-parameterized ops. Weights are stored input-major: affine W is
/// [in_dim x out_dim], conv kernels are [in_c*kh*kw x filters], so the
/// forward is a plain matmul for both (conv goes through patch expansion).
template <typename T>
struct Sublayer {
    SublayerKind kind = SublayerKind::Relu;

    std::size_t out_dim = 0;                                // affine
    std::size_t filters = 0, kh = 0, kw = 0, stride = 1;    // conv2d
    std::size_t pool = 0, pool_stride = 0;                  // pools

    // filled in when the model is finalized
    std::size_t in_dim = 0;  // affine
    std::size_t in_c = 0;    // conv2d
    Tensor<T> weight, bias;

    bool has_params() const {
        return kind == SublayerKind::Affine || kind == SublayerKind::Conv2d;
    }

    static Sublayer affine(std::size_t out) {
        Sublayer s;
        s.kind = SublayerKind::Affine;
        s.out_dim = out;
        return s;
    }
    static Sublayer relu() { return Sublayer{}; }
    static Sublayer conv2d(std::size_t filters, std::size_t kh, std::size_t kw,
                           std::size_t stride = 1) {
        Sublayer s;
        s.kind = SublayerKind::Conv2d;
        s.filters = filters;
        s.kh = kh;
        s.kw = kw;
        s.stride = stride;
        return s;
    }
    static Sublayer maxpool(std::size_t size, std::size_t stride) {
        Sublayer s;
        s.kind = SublayerKind::MaxPool;
        s.pool = size;
        s.pool_stride = stride;
        return s;
    }
    static Sublayer avgpool(std::size_t size, std::size_t stride) {
        Sublayer s;
        s.kind = SublayerKind::AvgPool;
        s.pool = size;
        s.pool_stride = stride;
        return s;
    }
    static Sublayer flatten() {
        Sublayer s;
        s.kind = SublayerKind::Flatten;
        return s;
    }
};

template <typename T>
struct Layer {
    std::vector<Sublayer<T>> ops;
    Shape in_shape, out_shape;  // per-sample, filled when the model is finalized
};

/// Per-sample output shape as a pure function of (op, input shape).
template <typename T>
Shape sublayer_out_shape(const Sublayer<T>& op, const Shape& in) {
    auto pooled = [&](std::size_t window, std::size_t stride) -> Shape {
        if (in.size() != 3)
            throw ShapeError("pool: need [c,h,w] input, got " + shape_str(in));
        if (in[1] < window || in[2] < window)
            throw ShapeError("pool: window " + std::to_string(window) + " exceeds input " +
                             shape_str(in));
        return {in[0], (in[1] - window) / stride + 1, (in[2] - window) / stride + 1};
    };
    switch (op.kind) {
        case SublayerKind::Affine:
            if (in.size() != 1)
                throw ShapeError("affine: need flat [d] input, got " + shape_str(in) +
                                 " (missing flatten?)");
            return {op.out_dim};
        case SublayerKind::Relu: return in;
        case SublayerKind::Conv2d: {
            if (in.size() != 3)
                throw ShapeError("conv2d: need [c,h,w] input, got " + shape_str(in));
            if (in[1] < op.kh || in[2] < op.kw)
                throw ShapeError("conv2d: kernel " + std::to_string(op.kh) + "x" +
                                 std::to_string(op.kw) + " exceeds input " + shape_str(in));
            return {op.filters, (in[1] - op.kh) / op.stride + 1, (in[2] - op.kw) / op.stride + 1};
        }
        case SublayerKind::MaxPool: return pooled(op.pool, op.pool_stride);
        case SublayerKind::AvgPool: return pooled(op.pool, op.pool_stride);
        case SublayerKind::Flatten: return {shape_numel(in)};
    }
    throw std::logic_error("sublayer_out_shape: unhandled kind");
}

/// What a cached forward keeps per sublayer: the op's input tensor when its
/// local backward needs it (affine, conv, relu, maxpool) and always the
/// input shape. Flatten and avgpool recover everything from the shape.
template <typename T>
struct SublayerCache {
    Tensor<T> input;
    Shape in_shape;  // full tensor shape including the batch dimension
};

template <typename T>
struct LayerCache {
    std::vector<SublayerCache<T>> slots;

    std::size_t tensor_count() const {
        std::size_t n = 0;
        for (const auto& s : slots) n += s.input.empty() ? 0 : 1;
        return n;
    }
};

// ---------------------------------------------------------------- conv --

namespace detail {

struct ConvDims {
    std::size_t b, c, h, w, oh, ow;
};

template <typename T>
ConvDims conv_dims(const Sublayer<T>& op, const Shape& in) {
    if (in.size() != 4)
        throw ShapeError("conv2d: need [batch,c,h,w] input, got " + shape_str(in));
    if (in[1] != op.in_c)
        throw ShapeError("conv2d: expected " + std::to_string(op.in_c) + " channels, got " +
                         shape_str(in));
    ConvDims d{in[0], in[1], in[2], in[3], 0, 0};
    d.oh = (d.h - op.kh) / op.stride + 1;
    d.ow = (d.w - op.kw) / op.stride + 1;
    return d;
}

/// Patch expansion: rows are output positions (b-major), columns the
/// receptive field (c, ky, kx). Scratch, not an activation.
template <typename T>
Tensor<T> im2col(const Tensor<T>& in, const Sublayer<T>& op, const ConvDims& d) {
    const std::size_t ckk = d.c * op.kh * op.kw;
    Tensor<T> cols(Shape{d.b * d.oh * d.ow, ckk}, "scratch:cols");
    std::size_t row = 0;
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t oy = 0; oy < d.oh; ++oy)
            for (std::size_t ox = 0; ox < d.ow; ++ox, ++row) {
                T* dst = cols.data() + row * ckk;
                for (std::size_t c = 0; c < d.c; ++c)
                    for (std::size_t ky = 0; ky < op.kh; ++ky) {
                        const T* src = &in(b, c, oy * op.stride + ky, ox * op.stride);
                        for (std::size_t kx = 0; kx < op.kw; ++kx) *dst++ = src[kx];
                    }
            }
    return cols;
}

/// Inverse scatter-add of im2col: accumulates patch-space values back into
/// image space.
template <typename T>
Tensor<T> col2im_add(const Tensor<T>& cols, const Sublayer<T>& op, const ConvDims& d,
                     std::string tag) {
    const std::size_t ckk = d.c * op.kh * op.kw;
    Tensor<T> img(Shape{d.b, d.c, d.h, d.w}, std::move(tag));
    std::size_t row = 0;
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t oy = 0; oy < d.oh; ++oy)
            for (std::size_t ox = 0; ox < d.ow; ++ox, ++row) {
                const T* src = cols.data() + row * ckk;
                for (std::size_t c = 0; c < d.c; ++c)
                    for (std::size_t ky = 0; ky < op.kh; ++ky) {
                        T* dst = &img(b, c, oy * op.stride + ky, ox * op.stride);
                        for (std::size_t kx = 0; kx < op.kw; ++kx) dst[kx] += src[kx];
                        src += op.kw;
                    }
            }
    return img;
}

/// [b,f,oh,ow] delta rearranged to im2col row order [b*oh*ow, f].
template <typename T>
Tensor<T> delta_to_rows(const Tensor<T>& delta, const ConvDims& d, std::size_t filters) {
    Tensor<T> rows(Shape{d.b * d.oh * d.ow, filters}, "scratch:drows");
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t f = 0; f < filters; ++f)
            for (std::size_t oy = 0; oy < d.oh; ++oy)
                for (std::size_t ox = 0; ox < d.ow; ++ox)
                    rows[((b * d.oh + oy) * d.ow + ox) * filters + f] = delta(b, f, oy, ox);
    return rows;
}

template <typename T>
Tensor<T> conv_forward(const Sublayer<T>& op, const Tensor<T>& in, std::string tag) {
    const ConvDims d = conv_dims(op, in.shape());
    Tensor<T> out_mat;
    {
        Tensor<T> cols = im2col(in, op, d);
        out_mat = matmul(cols, op.weight, "scratch:convout");
    }
    Tensor<T> out(Shape{d.b, op.filters, d.oh, d.ow}, std::move(tag));
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t oy = 0; oy < d.oh; ++oy)
            for (std::size_t ox = 0; ox < d.ow; ++ox) {
                const T* src = out_mat.data() + ((b * d.oh + oy) * d.ow + ox) * op.filters;
                for (std::size_t f = 0; f < op.filters; ++f)
                    out(b, f, oy, ox) = src[f] + op.bias[f];
            }
    return out;
}

/// delta through the kernel back to image space, shared by the BP path
/// (kernel = weights) and the FA path (kernel = feedback matrix).
template <typename T>
Tensor<T> conv_backward_input(const Sublayer<T>& op, const Tensor<T>& kernel,
                              const Tensor<T>& delta_rows, const ConvDims& d, std::string tag) {
    Tensor<T> dcols = matmul_transpose_right(delta_rows, kernel, "scratch:dcols");
    return col2im_add(dcols, op, d, std::move(tag));
}

}  // namespace detail

// --------------------------------------------------------------- losses --

enum class LossKind : std::uint8_t { Mse, SoftmaxCe };

template <typename T>
struct LossResult {
    double loss = 0;
    Tensor<T> delta;  // d(loss)/d(prediction) per sample, not batch-averaged
};

/// loss = mean over the batch of 0.5*||y - p||^2, delta = p - y.
template <typename T>
LossResult<T> mse_loss_and_delta(const Tensor<T>& prediction, const Tensor<T>& target) {
    if (prediction.shape() != target.shape())
        throw ShapeError("mse: prediction " + shape_str(prediction.shape()) + " vs target " +
                         shape_str(target.shape()));
    LossResult<T> r;
    r.delta = Tensor<T>(prediction.shape(), "delta:out");
    double total = 0;
    for (std::size_t i = 0; i < prediction.numel(); ++i) {
        const T diff = prediction[i] - target[i];
        r.delta[i] = diff;
        total += 0.5 * static_cast<double>(diff) * static_cast<double>(diff);
    }
    const std::size_t batch = prediction.rank() == 2 ? prediction.dim(0) : 1;
    r.loss = total / static_cast<double>(batch);
    return r;
}

/// Fused softmax + cross-entropy with max-subtraction stabilization:
/// loss = mean over the batch of -log softmax(z)[label], delta = p - y.
/// Targets must be exactly one-hot rows.
template <typename T>
LossResult<T> softmax_ce_loss_and_delta(const Tensor<T>& logits, const Tensor<T>& onehot) {
    if (logits.shape() != onehot.shape() || logits.rank() != 2)
        throw ShapeError("softmax_ce: logits " + shape_str(logits.shape()) + " vs target " +
                         shape_str(onehot.shape()));
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    LossResult<T> r;
    r.delta = Tensor<T>(logits.shape(), "delta:out");
    double total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
        std::size_t ones = 0, label = 0;
        for (std::size_t k = 0; k < classes; ++k) {
            const T y = onehot(b, k);
            if (y == T(1)) {
                ++ones;
                label = k;
            } else if (y != T(0)) {
                ones = 2;  // any non-{0,1} value disqualifies the row
                break;
            }
        }
        if (ones != 1)
            throw std::invalid_argument("softmax_ce: target row " + std::to_string(b) +
                                        " is not one-hot");
        T maxz = logits(b, 0);
        for (std::size_t k = 1; k < classes; ++k) maxz = std::max(maxz, logits(b, k));
        T expsum = 0;
        for (std::size_t k = 0; k < classes; ++k) expsum += std::exp(logits(b, k) - maxz);
        for (std::size_t k = 0; k < classes; ++k) {
            const T p = std::exp(logits(b, k) - maxz) / expsum;
            r.delta(b, k) = p - onehot(b, k);
        }
        total += -(static_cast<double>(logits(b, label)) - static_cast<double>(maxz) -
                   std::log(static_cast<double>(expsum)));
    }
    r.loss = total / static_cast<double>(batch);
    return r;
}

template <typename T>
LossResult<T> loss_and_delta(LossKind kind, const Tensor<T>& prediction, const Tensor<T>& target) {
    return kind == LossKind::Mse ? mse_loss_and_delta(prediction, target)
                                 : softmax_ce_loss_and_delta(prediction, target);
}

// ----------------------------------------------------- forward/backward --

namespace detail {

inline std::string act_tag(std::size_t layer_no, std::size_t op_idx, std::size_t op_count) {
    if (op_idx + 1 == op_count) return "activation:a" + std::to_string(layer_no);
    if (op_idx == 0) return "activation:z" + std::to_string(layer_no);
    return "activation:v" + std::to_string(layer_no) + "." + std::to_string(op_idx);
}

template <typename T>
Tensor<T> pool_forward(const Sublayer<T>& op, const Tensor<T>& in, bool take_max,
                       std::string tag) {
    if (in.rank() != 4)
        throw ShapeError("pool: need [batch,c,h,w] input, got " + shape_str(in.shape()));
    const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    if (H < op.pool || W < op.pool)
        throw ShapeError("pool: window exceeds input " + shape_str(in.shape()));
    const std::size_t OH = (H - op.pool) / op.pool_stride + 1;
    const std::size_t OW = (W - op.pool) / op.pool_stride + 1;
    Tensor<T> out(Shape{B, C, OH, OW}, std::move(tag));
    const T inv = T(1) / static_cast<T>(op.pool * op.pool);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oy = 0; oy < OH; ++oy)
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    if (take_max) {
                        T best = in(b, c, oy * op.pool_stride, ox * op.pool_stride);
                        for (std::size_t py = 0; py < op.pool; ++py)
                            for (std::size_t px = 0; px < op.pool; ++px) {
                                const T v =
                                    in(b, c, oy * op.pool_stride + py, ox * op.pool_stride + px);
                                if (v > best) best = v;
                            }
                        out(b, c, oy, ox) = best;
                    } else {
                        T sum = 0;
                        for (std::size_t py = 0; py < op.pool; ++py)
                            for (std::size_t px = 0; px < op.pool; ++px)
                                sum += in(b, c, oy * op.pool_stride + py,
                                          ox * op.pool_stride + px);
                        out(b, c, oy, ox) = sum * inv;
                    }
                }
    return out;
}

}  // namespace detail

/// Applies one sublayer. When `slot` is non-null the tensors needed by the
/// local backward are kept (moving the input in where possible); when it is
/// null nothing beyond the output survives the call.
template <typename T>
Tensor<T> sublayer_forward(const Sublayer<T>& op, Tensor<T> in,
                           std::type_identity_t<SublayerCache<T>*> slot, std::string out_tag) {
    if (slot) slot->in_shape = in.shape();
    switch (op.kind) {
        case SublayerKind::Affine: {
            if (in.rank() != 2 || in.dim(1) != op.in_dim)
                throw ShapeError("affine: input " + shape_str(in.shape()) + " vs weight " +
                                 shape_str(op.weight.shape()));
            Tensor<T> z = matmul(in, op.weight, std::move(out_tag));
            add_row_vector(z, op.bias);
            if (slot) slot->input = std::move(in);
            return z;
        }
        case SublayerKind::Relu: {
            Tensor<T> out(in.shape(), std::move(out_tag));
            for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
            if (slot) slot->input = std::move(in);
            return out;
        }
        case SublayerKind::Conv2d: {
            Tensor<T> out = detail::conv_forward(op, in, std::move(out_tag));
            if (slot) slot->input = std::move(in);
            return out;
        }
        case SublayerKind::MaxPool: {
            Tensor<T> out = detail::pool_forward(op, in, true, std::move(out_tag));
            if (slot) slot->input = std::move(in);
            return out;
        }
        case SublayerKind::AvgPool:
            return detail::pool_forward(op, in, false, std::move(out_tag));
        case SublayerKind::Flatten: {
            if (in.rank() < 2) throw ShapeError("flatten: need batched input");
            const std::size_t batch = in.dim(0);
            in.reshape(Shape{batch, in.numel() / batch});
            return in;
        }
    }
    throw std::logic_error("sublayer_forward: unhandled kind");
}

/// Runs a whole layer forward. The caller keeps ownership of the input; a
/// cached run copies it into slot 0 (it is the one tensor the parameterized
/// backward needs) and later intermediates are moved into their consumers'
/// slots, so the cache holds at most one tensor per sublayer.
template <typename T>
Tensor<T> layer_forward(const Layer<T>& layer, const Tensor<T>& input,
                        std::type_identity_t<LayerCache<T>*> cache, std::size_t layer_no) {
    const std::size_t k = layer.ops.size();
    if (k == 0 || !layer.ops[0].has_params())
        throw std::logic_error("layer_forward: layer " + std::to_string(layer_no) +
                               " does not start with a parameterized op");
    if (cache) cache->slots.assign(k, {});

    const Sublayer<T>& op0 = layer.ops[0];
    Tensor<T> v;
    if (op0.kind == SublayerKind::Affine) {
        if (input.rank() != 2 || input.dim(1) != op0.in_dim)
            throw ShapeError("affine: input " + shape_str(input.shape()) + " vs weight " +
                             shape_str(op0.weight.shape()));
        v = matmul(input, op0.weight, detail::act_tag(layer_no, 0, k));
        add_row_vector(v, op0.bias);
    } else {
        v = detail::conv_forward(op0, input, detail::act_tag(layer_no, 0, k));
    }
    if (cache) {
        cache->slots[0].in_shape = input.shape();
        cache->slots[0].input = input.clone(input.tag());
    }
    for (std::size_t j = 1; j < k; ++j)
        v = sublayer_forward(layer.ops[j], std::move(v), cache ? &cache->slots[j] : nullptr,
                             detail::act_tag(layer_no, j, k));
    return v;
}

enum class CrossDelta : std::uint8_t { None, ThroughWeights, ThroughFeedback };

template <typename T>
struct LayerBackward {
    Tensor<T> delta_in;  // empty when mode == None
    Tensor<T> weight_grad;
    Tensor<T> bias_grad;
};

namespace detail {

template <typename T>
Tensor<T> nonparam_backward(const Sublayer<T>& op, SublayerCache<T>& slot, Tensor<T> delta,
                            std::size_t layer_no, std::size_t op_idx) {
    const std::string where = "local_backward L" + std::to_string(layer_no) + " op " +
                              std::to_string(op_idx);
    switch (op.kind) {
        case SublayerKind::Relu: {
            if (slot.input.empty()) throw std::logic_error(where + ": missing relu cache");
            if (slot.input.shape() != delta.shape())
                throw ShapeError(where + ": delta " + shape_str(delta.shape()) + " vs cached " +
                                 shape_str(slot.input.shape()));
            // derivative taken as 0 at exactly 0; mask applied in place
            for (std::size_t i = 0; i < delta.numel(); ++i)
                if (!(slot.input[i] > T(0))) delta[i] = T(0);
            slot.input = Tensor<T>();
            return delta;
        }
        case SublayerKind::MaxPool: {
            if (slot.input.empty()) throw std::logic_error(where + ": missing maxpool cache");
            const Tensor<T>& in = slot.input;
            const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
            const std::size_t OH = delta.dim(2), OW = delta.dim(3);
            Tensor<T> din(Shape{B, C, H, W},
                          "delta:v" + std::to_string(layer_no) + "." + std::to_string(op_idx));
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < OH; ++oy)
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                            // same scan order as the forward: first max wins
                            std::size_t by = oy * op.pool_stride, bx = ox * op.pool_stride;
                            T best = in(b, c, by, bx);
                            std::size_t besty = by, bestx = bx;
                            for (std::size_t py = 0; py < op.pool; ++py)
                                for (std::size_t px = 0; px < op.pool; ++px) {
                                    const T v = in(b, c, by + py, bx + px);
                                    if (v > best) {
                                        best = v;
                                        besty = by + py;
                                        bestx = bx + px;
                                    }
                                }
                            din(b, c, besty, bestx) += delta(b, c, oy, ox);
                        }
            slot.input = Tensor<T>();
            return din;
        }
        case SublayerKind::AvgPool: {
            const Shape& s = slot.in_shape;
            const std::size_t B = s[0], C = s[1], H = s[2], W = s[3];
            const std::size_t OH = delta.dim(2), OW = delta.dim(3);
            Tensor<T> din(Shape{B, C, H, W},
                          "delta:v" + std::to_string(layer_no) + "." + std::to_string(op_idx));
            const T inv = T(1) / static_cast<T>(op.pool * op.pool);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < OH; ++oy)
                        for (std::size_t ox = 0; ox < OW; ++ox) {
                            const T share = delta(b, c, oy, ox) * inv;
                            for (std::size_t py = 0; py < op.pool; ++py)
                                for (std::size_t px = 0; px < op.pool; ++px)
                                    din(b, c, oy * op.pool_stride + py,
                                        ox * op.pool_stride + px) += share;
                        }
            return din;
        }
        case SublayerKind::Flatten: {
            delta.reshape(slot.in_shape);
            return delta;
        }
        default: throw std::logic_error(where + ": not a non-parameterized op");
    }
}

}  // namespace detail

/// Local backward through a layer whose cache was produced by a matching
/// cached forward. Cache slots are released as they are consumed. The
/// cross-layer delta is produced through the weights (plain chain rule),
/// through the feedback matrix, or not at all.
template <typename T>
LayerBackward<T> layer_backward(const Layer<T>& layer, LayerCache<T>& cache, Tensor<T> delta,
                                CrossDelta mode,
                                std::type_identity_t<const FeedbackMatrix<T>*> fb,
                                std::size_t layer_no) {
    if (cache.slots.size() != layer.ops.size())
        throw std::logic_error("local_backward L" + std::to_string(layer_no) +
                               ": cache does not match layer (missing cached forward?)");
    if (mode == CrossDelta::ThroughFeedback && fb == nullptr)
        throw std::invalid_argument("local_backward: feedback mode without a feedback matrix");

    for (std::size_t j = layer.ops.size(); j-- > 1;)
        delta = detail::nonparam_backward(layer.ops[j], cache.slots[j], std::move(delta),
                                          layer_no, j);

    const Sublayer<T>& op = layer.ops[0];
    SublayerCache<T>& s0 = cache.slots[0];
    if (s0.input.empty())
        throw std::logic_error("local_backward L" + std::to_string(layer_no) +
                               ": missing cached input for the parameterized op");
    LayerBackward<T> out;
    const std::string no = std::to_string(layer_no);

    if (op.kind == SublayerKind::Affine) {
        const std::size_t batch = delta.dim(0);
        out.weight_grad = matmul_transpose_left(s0.input, delta, "grad:dW" + no);
        scale_inplace(out.weight_grad, T(1) / static_cast<T>(batch));
        out.bias_grad = column_mean(delta, "grad:db" + no);
        s0.input = Tensor<T>();
        if (mode == CrossDelta::ThroughWeights)
            out.delta_in = matmul_transpose_right(delta, op.weight,
                                                  "delta:da" + std::to_string(layer_no - 1));
        else if (mode == CrossDelta::ThroughFeedback)
            out.delta_in = project(*fb, delta, "delta:da" + std::to_string(layer_no - 1));
    } else if (op.kind == SublayerKind::Conv2d) {
        const detail::ConvDims d = detail::conv_dims(op, s0.in_shape);
        Tensor<T> drows = detail::delta_to_rows(delta, d, op.filters);
        delta = Tensor<T>();
        {
            Tensor<T> cols = detail::im2col(s0.input, op, d);
            out.weight_grad = matmul_transpose_left(cols, drows, "grad:dW" + no);
        }
        scale_inplace(out.weight_grad, T(1) / static_cast<T>(d.b));
        out.bias_grad = Tensor<T>(Shape{op.filters}, "grad:db" + no);
        for (std::size_t r = 0; r < drows.dim(0); ++r)
            for (std::size_t f = 0; f < op.filters; ++f)
                out.bias_grad[f] += drows(r, f);
        scale_inplace(out.bias_grad, T(1) / static_cast<T>(d.b));
        s0.input = Tensor<T>();
        const std::string dtag = "delta:da" + std::to_string(layer_no - 1);
        if (mode == CrossDelta::ThroughWeights) {
            out.delta_in = detail::conv_backward_input(op, op.weight, drows, d, dtag);
        } else if (mode == CrossDelta::ThroughFeedback) {
            if (!fb->conv_geometry || fb->matrix.shape() != op.weight.shape())
                throw ShapeError("local_backward(FA): feedback matrix " +
                                 shape_str(fb->matrix.shape()) + " must match conv weight " +
                                 shape_str(op.weight.shape()));
            ProjectionScope scope;
            out.delta_in = detail::conv_backward_input(op, fb->matrix, drows, d, dtag);
        }
    } else {
        throw std::logic_error("local_backward: layer " + no +
                               " does not start with a parameterized op");
    }
    return out;
}

}  // namespace memdfa

#endif  // MEMDFA_LAYERS_HPP
