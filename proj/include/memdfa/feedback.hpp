#ifndef MEMDFA_FEEDBACK_HPP
#define MEMDFA_FEEDBACK_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "memdfa/tensor.hpp"

namespace memdfa {

enum class FeedbackMode : std::uint8_t { FA, DFA };

/// fixed: drawn once; per_iteration: redrawn before every step;
/// sign_concordant: magnitudes drawn once, signs re-copied from the live
/// weights at every refresh.
enum class FeedbackPolicy : std::uint8_t { Fixed, PerIteration, SignConcordant };

inline const char* feedback_policy_name(FeedbackPolicy p) {
    switch (p) {
        case FeedbackPolicy::Fixed: return "fixed";
        case FeedbackPolicy::PerIteration: return "per_iteration";
        case FeedbackPolicy::SignConcordant: return "sign_concordant";
    }
    return "?";
}

inline FeedbackPolicy parse_feedback_policy(const std::string& s) {
    if (s == "fixed") return FeedbackPolicy::Fixed;
    if (s == "per_iteration") return FeedbackPolicy::PerIteration;
    if (s == "sign_concordant") return FeedbackPolicy::SignConcordant;
    throw std::invalid_argument("unknown feedback policy: " + s);
}

/// Random projection that carries the error signal backward across a layer
/// boundary. The matrix is stored [target x source] for dense projections:
/// row t holds the coefficients producing target element t. For a
/// convolutional layer under FA the matrix instead has the layer's kernel
/// shape and is applied by the conv input-backward (see layers.hpp).
///
/// target_layer is the 0-based index of the layer whose output delta this
/// matrix produces. FA sources that delta from the next layer's weighted
/// vector; DFA sources it from the model-output error.
template <typename T>
struct FeedbackMatrix {
    std::size_t target_layer = 0;
    FeedbackMode mode = FeedbackMode::DFA;
    FeedbackPolicy policy = FeedbackPolicy::Fixed;
    std::uint64_t stream_id = 0;
    Tensor<T> matrix;
    Tensor<T> magnitudes;  // sign_concordant only: |initial draw|

    bool kernel_shaped() const { return mode == FeedbackMode::FA && conv_geometry; }
    bool conv_geometry = false;
};

namespace detail {

// fan = number of source values feeding one target value: columns for a
// dense matrix, filters for a kernel applied transposed per position.
template <typename T>
void refill_uniform(Tensor<T>& m, Rng rng, std::size_t fan) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
    for (std::size_t i = 0; i < m.numel(); ++i)
        m[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void apply_signs_from(Tensor<T>& m, const Tensor<T>& magnitudes, const Tensor<T>& weights) {
    if (m.shape() != weights.shape())
        throw ShapeError("sign_concordant feedback needs weight-shaped matrix, have " +
                         shape_str(m.shape()) + " vs weights " + shape_str(weights.shape()));
    for (std::size_t i = 0; i < m.numel(); ++i)
        m[i] = weights[i] < T(0) ? -magnitudes[i] : magnitudes[i];
}

}  // namespace detail

/// Draws a feedback matrix. `shape` is [target x source] for dense use;
/// pass the layer's stored weight shape (and conv_geometry=true) for an FA
/// projection across a convolution. weight_ref is required exactly for the
/// sign_concordant policy, which also demands FA mode since the signs come
/// from a weight tensor of identical shape.
template <typename T>
FeedbackMatrix<T> generate_feedback(std::uint64_t seed, std::size_t target_layer,
                                    FeedbackMode mode, FeedbackPolicy policy, Shape shape,
                                    std::size_t fan, const Tensor<T>* weight_ref = nullptr,
                                    bool conv_geometry = false) {
    if (policy == FeedbackPolicy::SignConcordant) {
        if (weight_ref == nullptr)
            throw std::invalid_argument("generate_feedback: sign_concordant needs a weight_ref");
        if (mode != FeedbackMode::FA)
            throw std::invalid_argument(
                "generate_feedback: sign_concordant requires FA mode (weight-shaped matrix)");
    }
    FeedbackMatrix<T> fb;
    fb.target_layer = target_layer;
    fb.mode = mode;
    fb.policy = policy;
    fb.stream_id = streams::feedback(target_layer);
    fb.conv_geometry = conv_geometry;
    fb.matrix = Tensor<T>(std::move(shape), "feedback:R" + std::to_string(target_layer + 1));
    detail::refill_uniform(fb.matrix, Rng(seed, fb.stream_id), fan);
    if (policy == FeedbackPolicy::SignConcordant) {
        fb.magnitudes = fb.matrix.clone("feedback:R" + std::to_string(target_layer + 1) + ".mag");
        for (std::size_t i = 0; i < fb.magnitudes.numel(); ++i)
            fb.magnitudes[i] = std::abs(fb.magnitudes[i]);
        detail::apply_signs_from(fb.matrix, fb.magnitudes, *weight_ref);
    }
    return fb;
}

/// Re-draws or re-signs in place according to the policy; fixed matrices
/// are bitwise stable across iterations.
template <typename T>
void refresh_feedback(FeedbackMatrix<T>& fb, std::uint64_t seed, std::uint64_t iteration,
                      std::size_t fan, const Tensor<T>* weight_ref = nullptr) {
    switch (fb.policy) {
        case FeedbackPolicy::Fixed: return;
        case FeedbackPolicy::PerIteration:
            detail::refill_uniform(fb.matrix,
                                   Rng(seed, streams::feedback_iter(fb.target_layer, iteration)),
                                   fan);
            return;
        case FeedbackPolicy::SignConcordant:
            if (weight_ref == nullptr)
                throw std::invalid_argument("refresh_feedback: sign_concordant needs weight_ref");
            detail::apply_signs_from(fb.matrix, fb.magnitudes, *weight_ref);
            return;
    }
}

/// Dense projection of a delta through the feedback matrix: per sample,
/// out = R * delta. Accepts [batch x source] (row-major samples) or a
/// single rank-1 [source] vector. Counted as a feedback projection, not a
/// backward matmul.
template <typename T>
Tensor<T> project(const FeedbackMatrix<T>& fb, const Tensor<T>& delta, std::string tag = "tmp") {
    if (fb.conv_geometry)
        throw std::logic_error("project: kernel-shaped FA feedback is applied by the conv "
                               "backward, not a dense projection");
    const std::size_t target = fb.matrix.dim(0), source = fb.matrix.dim(1);
    const char* mode = fb.mode == FeedbackMode::FA ? "FA" : "DFA";
    if (delta.rank() == 1) {
        if (delta.dim(0) != source)
            throw ShapeError(std::string("project(") + mode + "): delta " +
                             shape_str(delta.shape()) + " does not match source dim " +
                             std::to_string(source));
        ProjectionScope scope;
        Tensor<T> out(Shape{target}, std::move(tag));
        for (std::size_t t = 0; t < target; ++t) {
            T acc = 0;
            for (std::size_t s = 0; s < source; ++s) acc += fb.matrix[t * source + s] * delta[s];
            out[t] = acc;
        }
        return out;
    }
    if (delta.rank() != 2 || delta.dim(1) != source)
        throw ShapeError(std::string("project(") + mode + "): delta " + shape_str(delta.shape()) +
                         " does not match source dim " + std::to_string(source));
    ProjectionScope scope;
    return matmul_transpose_right(delta, fb.matrix, std::move(tag));
}

}  // namespace memdfa

#endif  // MEMDFA_FEEDBACK_HPP
