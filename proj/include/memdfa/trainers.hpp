#ifndef MEMDFA_TRAINERS_HPP
#define MEMDFA_TRAINERS_HPP

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "memdfa/data.hpp"
#include "memdfa/ledger.hpp"
#include "memdfa/model.hpp"

namespace memdfa {

enum class Algorithm : std::uint8_t { BP, FA, DFA, MEMDFA };

inline const char* algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::BP: return "bp";
        case Algorithm::FA: return "fa";
        case Algorithm::DFA: return "dfa";
        case Algorithm::MEMDFA: return "memdfa";
    }
    return "?";
}

inline Algorithm parse_algorithm(const std::string& s) {
    if (s == "bp") return Algorithm::BP;
    if (s == "fa") return Algorithm::FA;
    if (s == "dfa") return Algorithm::DFA;
    if (s == "memdfa") return Algorithm::MEMDFA;
    throw std::invalid_argument("unknown algorithm: " + s);
}

struct TrainConfig {
    Algorithm algorithm = Algorithm::BP;
    double learning_rate = 0.01;
    std::size_t batch_size = 100;
    std::size_t epochs = 1;
    std::uint64_t seed = 1;
    FeedbackPolicy feedback_policy = FeedbackPolicy::Fixed;
    std::string precision = "f32";  // recorded for manifests; dispatch is a template choice

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
        if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be > 0");
    }
};

/// A training step diverged (NaN/Inf in the loss or a delta).
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OpCountSnapshot {
    std::uint64_t forward_matmuls = 0;
    std::uint64_t backward_matmuls = 0;
    std::uint64_t feedback_projections = 0;
};

/// What one training step did: the batch loss, how many parameter tensors
/// were updated, the matmul/projection counts, and the ledger seq range
/// covering the step (for memory queries against the timeline).
struct StepReport {
    double loss = 0;
    std::size_t grads_applied = 0;
    OpCountSnapshot op_counts;
    std::uint64_t seq_begin = 0;
    std::uint64_t seq_end = 0;
};

/// param <- param - lr * grad, in place. Emits no ledger events.
template <typename T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, double lr) {
    if (param.shape() != grad.shape())
        throw ShapeError("sgd_update: param " + shape_str(param.shape()) + " vs grad " +
                         shape_str(grad.shape()));
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < param.numel(); ++i) param[i] -= step * grad[i];
}

namespace detail {

template <typename T>
struct ParamGrads {
    Tensor<T> dW, db;
};

template <typename T>
void ensure_finite(const Tensor<T>& t) {
    if (!all_finite(t))
        throw DivergenceError("non-finite values in " + t.tag() + " — step aborted");
}

inline void ensure_finite_loss(double loss) {
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss — step aborted");
}

/// Updates are applied after all gradients exist, layer by layer in
/// ascending order, identically for every algorithm; the per-algorithm
/// equality contracts compare parameters produced through this one path.
template <typename T>
std::size_t apply_updates(Model<T>& model, std::vector<ParamGrads<T>>& grads, double lr) {
    PhaseScope phase(Phase::Update);
    std::size_t applied = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Sublayer<T>& op = model.layers[i].ops[0];
        sgd_update(op.weight, grads[i].dW, lr);
        sgd_update(op.bias, grads[i].db, lr);
        applied += 2;
        grads[i] = ParamGrads<T>{};  // release the staged tensors as we go
    }
    return applied;
}

template <typename T>
Tensor<T> forward_all(const Model<T>& model, const Tensor<T>& x,
                      std::type_identity_t<std::vector<LayerCache<T>>*> caches) {
    Tensor<T> a = layer_forward(model.layers[0], x, caches ? &(*caches)[0] : nullptr, 1);
    for (std::size_t i = 1; i < model.layers.size(); ++i)
        a = layer_forward(model.layers[i], a, caches ? &(*caches)[i] : nullptr, i + 1);
    return a;
}

template <typename T>
OpCountSnapshot counter_delta(const OpCounters& before, const OpCounters& after) {
    return {after.forward_matmuls - before.forward_matmuls,
            after.backward_matmuls - before.backward_matmuls,
            after.feedback_projections - before.feedback_projections};
}

template <typename T>
void check_batch(const Model<T>& model, const Tensor<T>& x, const Tensor<T>& y) {
    if (x.rank() < 2 || y.rank() != 2 || x.dim(0) != y.dim(0))
        throw ShapeError("step: batch shapes disagree, x " + shape_str(x.shape()) + " y " +
                         shape_str(y.shape()));
    Shape per_sample(x.shape().begin() + 1, x.shape().end());
    if (per_sample != model.input_shape)
        throw ShapeError("step: sample shape " + shape_str(per_sample) +
                         " does not match model input " + shape_str(model.input_shape));
    if (y.dim(1) != model.output_dim())
        throw ShapeError("step: label width " + std::to_string(y.dim(1)) +
                         " does not match model output " + std::to_string(model.output_dim()));
}

}  // namespace detail

/// Plain backpropagation: cached forward, chain-rule backward through the
/// transposed weights, SGD update.
template <typename T>
StepReport bp_step(Model<T>& model, const Tensor<T>& x, const Tensor<T>& y, double lr) {
    detail::check_batch(model, x, y);
    auto& ledger = Ledger::instance();
    StepReport report;
    report.seq_begin = ledger.next_seq();
    const OpCounters before = ledger.counters();
    const std::size_t L = model.layers.size();

    std::vector<LayerCache<T>> caches(L);
    Tensor<T> an;
    {
        PhaseScope phase(Phase::Forward);
        an = detail::forward_all(model, x, &caches);
    }
    std::vector<detail::ParamGrads<T>> grads(L);
    {
        PhaseScope phase(Phase::Backward);
        LossResult<T> res = loss_and_delta(model.loss, an, y);
        detail::ensure_finite_loss(res.loss);
        detail::ensure_finite(res.delta);
        report.loss = res.loss;
        an = Tensor<T>();
        Tensor<T> delta = std::move(res.delta);
        for (std::size_t i = L; i-- > 0;) {
            const CrossDelta mode = i == 0 ? CrossDelta::None : CrossDelta::ThroughWeights;
            auto lb = layer_backward(model.layers[i], caches[i], std::move(delta), mode, nullptr,
                                     i + 1);
            caches[i].slots.clear();
            grads[i] = detail::ParamGrads<T>{std::move(lb.weight_grad), std::move(lb.bias_grad)};
            delta = std::move(lb.delta_in);
            if (i > 0) detail::ensure_finite(delta);
        }
    }
    report.grads_applied = detail::apply_updates(model, grads, lr);
    report.op_counts = detail::counter_delta<T>(before, ledger.counters());
    report.seq_end = ledger.next_seq();
    return report;
}

/// Feedback alignment: as bp_step, but the cross-layer delta goes through
/// the layer's random feedback matrix instead of the transposed weights.
template <typename T>
StepReport fa_step(Model<T>& model, const Tensor<T>& x, const Tensor<T>& y, double lr,
                   FeedbackSet<T>& feedback) {
    detail::check_batch(model, x, y);
    if (feedback.mode != FeedbackMode::FA)
        throw std::invalid_argument("fa_step: feedback set was generated for DFA");
    auto& ledger = Ledger::instance();
    StepReport report;
    report.seq_begin = ledger.next_seq();
    const OpCounters before = ledger.counters();
    const std::size_t L = model.layers.size();

    std::vector<LayerCache<T>> caches(L);
    Tensor<T> an;
    {
        PhaseScope phase(Phase::Forward);
        an = detail::forward_all(model, x, &caches);
    }
    std::vector<detail::ParamGrads<T>> grads(L);
    {
        PhaseScope phase(Phase::Backward);
        LossResult<T> res = loss_and_delta(model.loss, an, y);
        detail::ensure_finite_loss(res.loss);
        detail::ensure_finite(res.delta);
        report.loss = res.loss;
        an = Tensor<T>();
        Tensor<T> delta = std::move(res.delta);
        for (std::size_t i = L; i-- > 0;) {
            const CrossDelta mode = i == 0 ? CrossDelta::None : CrossDelta::ThroughFeedback;
            const FeedbackMatrix<T>* fb = i == 0 ? nullptr : feedback.for_target(i - 1);
            auto lb = layer_backward(model.layers[i], caches[i], std::move(delta), mode, fb,
                                     i + 1);
            caches[i].slots.clear();
            grads[i] = detail::ParamGrads<T>{std::move(lb.weight_grad), std::move(lb.bias_grad)};
            delta = std::move(lb.delta_in);
            if (i > 0) detail::ensure_finite(delta);
        }
    }
    report.grads_applied = detail::apply_updates(model, grads, lr);
    report.op_counts = detail::counter_delta<T>(before, ledger.counters());
    report.seq_end = ledger.next_seq();
    return report;
}

/// Direct feedback alignment: cached forward, then every layer gets its
/// delta straight from the output error through its own matrix and
/// backpropagates only within itself. Gradients are staged and applied
/// after the sweep, which is what memdfa_step must match bit for bit.
template <typename T>
StepReport dfa_step(Model<T>& model, const Tensor<T>& x, const Tensor<T>& y, double lr,
                    FeedbackSet<T>& feedback) {
    detail::check_batch(model, x, y);
    if (feedback.mode != FeedbackMode::DFA)
        throw std::invalid_argument("dfa_step: feedback set was generated for FA");
    auto& ledger = Ledger::instance();
    StepReport report;
    report.seq_begin = ledger.next_seq();
    const OpCounters before = ledger.counters();
    const std::size_t L = model.layers.size();
    const std::size_t batch = x.dim(0);

    std::vector<LayerCache<T>> caches(L);
    Tensor<T> an;
    {
        PhaseScope phase(Phase::Forward);
        an = detail::forward_all(model, x, &caches);
    }
    std::vector<detail::ParamGrads<T>> grads(L);
    {
        PhaseScope phase(Phase::Backward);
        LossResult<T> res = loss_and_delta(model.loss, an, y);
        detail::ensure_finite_loss(res.loss);
        detail::ensure_finite(res.delta);
        report.loss = res.loss;
        an = Tensor<T>();
        Tensor<T> output_delta = std::move(res.delta);
        for (std::size_t i = L; i-- > 0;) {
            Tensor<T> delta_i;
            if (i == L - 1) {
                delta_i = output_delta.clone("delta:da" + std::to_string(L));
            } else {
                delta_i = project(*feedback.for_target(i), output_delta,
                                  "delta:da" + std::to_string(i + 1));
                Shape full{batch};
                for (std::size_t d : model.layers[i].out_shape) full.push_back(d);
                delta_i.reshape(full);
                detail::ensure_finite(delta_i);
            }
            auto lb = layer_backward(model.layers[i], caches[i], std::move(delta_i),
                                     CrossDelta::None, nullptr, i + 1);
            caches[i].slots.clear();
            grads[i] = detail::ParamGrads<T>{std::move(lb.weight_grad), std::move(lb.bias_grad)};
        }
    }
    report.grads_applied = detail::apply_updates(model, grads, lr);
    report.op_counts = detail::counter_delta<T>(before, ledger.counters());
    report.seq_end = ledger.next_seq();
    return report;
}

/// Memory-efficient DFA: one cacheless forward to get the output error,
/// then per layer (first to last) a local cached forward recomputation, a
/// direct projection of the output error, and a local backward. Only one
/// layer's intermediates exist at a time; gradients are staged and applied
/// after the sweep so the result matches dfa_step exactly.
template <typename T>
StepReport memdfa_step(Model<T>& model, const Tensor<T>& x, const Tensor<T>& y, double lr,
                       FeedbackSet<T>& feedback) {
    detail::check_batch(model, x, y);
    if (feedback.mode != FeedbackMode::DFA)
        throw std::invalid_argument("memdfa_step: feedback set was generated for FA");
    auto& ledger = Ledger::instance();
    StepReport report;
    report.seq_begin = ledger.next_seq();
    const OpCounters before = ledger.counters();
    const std::size_t L = model.layers.size();
    const std::size_t batch = x.dim(0);

    Tensor<T> output_delta;
    {
        PhaseScope phase(Phase::Forward);
        Tensor<T> an = detail::forward_all(model, x, nullptr);
        PhaseScope loss_phase(Phase::Backward);
        LossResult<T> res = loss_and_delta(model.loss, an, y);
        detail::ensure_finite_loss(res.loss);
        detail::ensure_finite(res.delta);
        report.loss = res.loss;
        output_delta = std::move(res.delta);
    }

    std::vector<detail::ParamGrads<T>> grads(L);
    Tensor<T> a_prev;  // output of the previous layer's recomputation
    for (std::size_t i = 0; i < L; ++i) {
        LayerCache<T> cache;
        {
            PhaseScope phase(Phase::LocalForward);
            Tensor<T> out = layer_forward(model.layers[i], i == 0 ? x : a_prev, &cache, i + 1);
            a_prev = std::move(out);
        }
        {
            PhaseScope phase(Phase::LocalBackward);
            Tensor<T> delta_i;
            if (i == L - 1) {
                delta_i = output_delta.clone("delta:da" + std::to_string(L));
            } else {
                delta_i = project(*feedback.for_target(i), output_delta,
                                  "delta:da" + std::to_string(i + 1));
                Shape full{batch};
                for (std::size_t d : model.layers[i].out_shape) full.push_back(d);
                delta_i.reshape(full);
                detail::ensure_finite(delta_i);
            }
            auto lb = layer_backward(model.layers[i], cache, std::move(delta_i),
                                     CrossDelta::None, nullptr, i + 1);
            grads[i] = detail::ParamGrads<T>{std::move(lb.weight_grad), std::move(lb.bias_grad)};
        }
    }
    a_prev = Tensor<T>();
    output_delta = Tensor<T>();
    report.grads_applied = detail::apply_updates(model, grads, lr);
    report.op_counts = detail::counter_delta<T>(before, ledger.counters());
    report.seq_end = ledger.next_seq();
    return report;
}

/// Fraction of samples whose argmax prediction matches the argmax label;
/// ties resolve to the lowest index. Forward passes are cacheless.
template <typename T>
double evaluate(const Model<T>& model, const Dataset<T>& dataset) {
    if (dataset.count() == 0) throw std::invalid_argument("evaluate: empty dataset");
    PhaseScope phase(Phase::Io);
    const std::size_t N = dataset.count();
    const std::size_t chunk = std::min<std::size_t>(N, 512);
    std::size_t correct = 0;
    for (std::size_t start = 0; start < N; start += chunk) {
        const std::size_t n = std::min(chunk, N - start);
        Batch<T> b = slice_batch(dataset, start, n, "io:eval");
        Tensor<T> pred = detail::forward_all(model, b.x, nullptr);
        for (std::size_t r = 0; r < n; ++r)
            if (argmax_row(pred, r) == argmax_row(b.y, r)) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(N);
}

struct EpochStat {
    std::size_t epoch = 0;
    double train_loss = 0;
    double test_accuracy = 0;
};

template <typename T>
struct TrainResult {
    std::vector<EpochStat> history;
    std::optional<StepReport> first_step;
};

/// Epoch loop: seeded shuffle, one step per batch, per-epoch evaluation.
/// Deterministic end to end for a given config: two runs with the same
/// TrainConfig produce bitwise-identical weights and history.
template <typename T>
TrainResult<T> train(Model<T>& model, const TrainConfig& cfg, const Dataset<T>& train_ds,
                     const Dataset<T>& test_ds) {
    cfg.validate();
    TrainResult<T> result;
    FeedbackSet<T> feedback;
    if (cfg.algorithm == Algorithm::FA)
        feedback = make_feedback(model, FeedbackMode::FA, cfg.feedback_policy, cfg.seed);
    else if (cfg.algorithm == Algorithm::DFA || cfg.algorithm == Algorithm::MEMDFA)
        feedback = make_feedback(model, FeedbackMode::DFA, cfg.feedback_policy, cfg.seed);

    std::uint64_t iteration = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        BatchStream<T> stream(train_ds, cfg.batch_size, Rng(cfg.seed, streams::shuffle(epoch)));
        double loss_sum = 0;
        std::size_t steps = 0;
        while (auto batch = stream.next()) {
            if (cfg.algorithm != Algorithm::BP)
                refresh_feedback_set(feedback, model, iteration);
            StepReport r;
            switch (cfg.algorithm) {
                case Algorithm::BP: r = bp_step(model, batch->x, batch->y, cfg.learning_rate); break;
                case Algorithm::FA:
                    r = fa_step(model, batch->x, batch->y, cfg.learning_rate, feedback);
                    break;
                case Algorithm::DFA:
                    r = dfa_step(model, batch->x, batch->y, cfg.learning_rate, feedback);
                    break;
                case Algorithm::MEMDFA:
                    r = memdfa_step(model, batch->x, batch->y, cfg.learning_rate, feedback);
                    break;
            }
            if (!result.first_step) result.first_step = r;
            loss_sum += r.loss;
            ++steps;
            ++iteration;
        }
        EpochStat stat;
        stat.epoch = epoch;
        stat.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
        stat.test_accuracy = evaluate(model, test_ds);
        result.history.push_back(stat);
    }
    return result;
}

}  // namespace memdfa

#endif  // MEMDFA_TRAINERS_HPP
