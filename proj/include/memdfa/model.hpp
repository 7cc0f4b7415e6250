#ifndef MEMDFA_MODEL_HPP
#define MEMDFA_MODEL_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "memdfa/layers.hpp"

namespace memdfa {

/// Sequential network: an ordered list of layers plus the loss applied to
/// the last layer's output. Layers must chain shape-wise; the last layer
/// must produce a flat vector (the prediction).
template <typename T>
struct Model {
    std::vector<Layer<T>> layers;
    Shape input_shape;  // per-sample
    LossKind loss = LossKind::SoftmaxCe;

    std::size_t output_dim() const {
        return layers.empty() ? 0 : shape_numel(layers.back().out_shape);
    }

    std::uint64_t param_bytes() const {
        std::uint64_t n = 0;
        for (const auto& l : layers)
            for (const auto& op : l.ops)
                if (op.has_params()) n += op.weight.bytes() + op.bias.bytes();
        return n;
    }

    std::size_t param_tensor_count() const {
        std::size_t n = 0;
        for (const auto& l : layers)
            for (const auto& op : l.ops)
                if (op.has_params()) n += 2;
        return n;
    }
};

/// Walks the layer list, checks the sublayer discipline (exactly one
/// parameterized op, first), infers every shape and initializes parameters:
/// weights uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from a per-layer rng
/// stream, biases zero.
template <typename T>
void finalize_model(Model<T>& model, std::uint64_t seed) {
    if (model.layers.empty()) throw std::invalid_argument("finalize_model: no layers");
    if (model.input_shape.empty()) throw std::invalid_argument("finalize_model: no input shape");
    Shape shape = model.input_shape;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        Layer<T>& layer = model.layers[li];
        const std::string lname = "layer " + std::to_string(li + 1);
        if (layer.ops.empty()) throw std::invalid_argument(lname + ": empty layer");
        if (!layer.ops[0].has_params())
            throw std::invalid_argument(lname + ": must start with affine or conv2d");
        layer.in_shape = shape;
        for (std::size_t oi = 0; oi < layer.ops.size(); ++oi) {
            Sublayer<T>& op = layer.ops[oi];
            if (oi > 0 && op.has_params())
                throw std::invalid_argument(lname + ": only the first op may hold parameters");
            if (op.kind == SublayerKind::Affine) {
                op.in_dim = shape_numel(shape);
                if (shape.size() != 1)
                    throw ShapeError(lname + ": affine needs flat input, got " +
                                     shape_str(shape) + " (missing flatten?)");
                const std::string no = std::to_string(li + 1);
                Rng rng(seed, streams::weights(li));
                const double bound = 1.0 / std::sqrt(static_cast<double>(op.in_dim));
                op.weight = Tensor<T>(Shape{op.in_dim, op.out_dim}, "weight:W" + no);
                for (std::size_t i = 0; i < op.weight.numel(); ++i)
                    op.weight[i] = static_cast<T>(rng.uniform(-bound, bound));
                op.bias = Tensor<T>(Shape{op.out_dim}, "weight:b" + no);
            } else if (op.kind == SublayerKind::Conv2d) {
                if (shape.size() != 3)
                    throw ShapeError(lname + ": conv2d needs [c,h,w] input, got " +
                                     shape_str(shape));
                op.in_c = shape[0];
                const std::size_t fan_in = op.in_c * op.kh * op.kw;
                const std::string no = std::to_string(li + 1);
                Rng rng(seed, streams::weights(li));
                const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
                op.weight = Tensor<T>(Shape{fan_in, op.filters}, "weight:W" + no);
                for (std::size_t i = 0; i < op.weight.numel(); ++i)
                    op.weight[i] = static_cast<T>(rng.uniform(-bound, bound));
                op.bias = Tensor<T>(Shape{op.filters}, "weight:b" + no);
            }
            shape = sublayer_out_shape(op, shape);
        }
        layer.out_shape = shape;
    }
    if (shape.size() != 1)
        throw ShapeError("finalize_model: final output must be flat, got " + shape_str(shape) +
                         " (missing flatten?)");
}

/// Feedback matrices for every layer that receives a cross-layer error
/// signal (all but the last). Entry r produces the delta at layer r's
/// output: FA sources it from layer r+1's weighted vector through a
/// weight-shaped matrix, DFA sources it from the model-output error
/// through a dense [flat(a_r) x output_dim] matrix.
template <typename T>
struct FeedbackSet {
    FeedbackMode mode = FeedbackMode::DFA;
    FeedbackPolicy policy = FeedbackPolicy::Fixed;
    std::uint64_t seed = 0;
    std::vector<FeedbackMatrix<T>> matrices;

    const FeedbackMatrix<T>* for_target(std::size_t layer_idx) const {
        return layer_idx < matrices.size() ? &matrices[layer_idx] : nullptr;
    }
};

namespace detail {
template <typename T>
std::size_t feedback_fan(const FeedbackMatrix<T>& fb, const Model<T>& model) {
    if (fb.conv_geometry) {
        const Sublayer<T>& op = model.layers[fb.target_layer + 1].ops[0];
        return op.filters * op.kh * op.kw;
    }
    return fb.matrix.dim(1);
}
}  // namespace detail

template <typename T>
FeedbackSet<T> make_feedback(const Model<T>& model, FeedbackMode mode, FeedbackPolicy policy,
                             std::uint64_t seed) {
    FeedbackSet<T> set;
    set.mode = mode;
    set.policy = policy;
    set.seed = seed;
    if (model.layers.size() < 2) return set;
    for (std::size_t r = 0; r + 1 < model.layers.size(); ++r) {
        const Layer<T>& next = model.layers[r + 1];
        const Sublayer<T>& op = next.ops[0];
        if (mode == FeedbackMode::FA) {
            const bool conv = op.kind == SublayerKind::Conv2d;
            const std::size_t fan =
                conv ? op.filters * op.kh * op.kw : op.weight.dim(1);
            set.matrices.push_back(generate_feedback<T>(seed, r, mode, policy,
                                                        op.weight.shape(), fan, &op.weight,
                                                        conv));
        } else {
            const std::size_t target = shape_numel(model.layers[r].out_shape);
            const std::size_t source = model.output_dim();
            set.matrices.push_back(generate_feedback<T>(seed, r, mode, policy,
                                                        Shape{target, source}, source));
        }
    }
    return set;
}

/// Applies the per-iteration or sign-concordant refresh before a step.
template <typename T>
void refresh_feedback_set(FeedbackSet<T>& set, const Model<T>& model, std::uint64_t iteration) {
    if (set.policy == FeedbackPolicy::Fixed) return;
    for (auto& fb : set.matrices) {
        const Tensor<T>* wref = nullptr;
        if (set.policy == FeedbackPolicy::SignConcordant)
            wref = &model.layers[fb.target_layer + 1].ops[0].weight;
        refresh_feedback(fb, set.seed, iteration, detail::feedback_fan(fb, model), wref);
    }
}

template <typename T>
std::uint64_t feedback_bytes(const FeedbackSet<T>& set) {
    std::uint64_t n = 0;
    for (const auto& fb : set.matrices) n += fb.matrix.bytes() + fb.magnitudes.bytes();
    return n;
}

}  // namespace memdfa

#endif  // MEMDFA_MODEL_HPP
