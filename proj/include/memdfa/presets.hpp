#ifndef MEMDFA_PRESETS_HPP
#define MEMDFA_PRESETS_HPP

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "memdfa/model.hpp"

namespace memdfa {

enum class DataKind : std::uint8_t { Mnist, Cifar10, Synthetic };

template <typename T>
struct NamedModel {
    Model<T> model;
    double default_lr = 0.01;
    DataKind data = DataKind::Synthetic;
};

/// 3 fully connected layers of sizes 100, 30, 10 on flat 28x28 input.
template <typename T>
Model<T> make_mnist_fc3(std::uint64_t seed) {
    Model<T> m;
    m.input_shape = {784};
    m.loss = LossKind::SoftmaxCe;
    m.layers = {
        {{Sublayer<T>::affine(100), Sublayer<T>::relu()}, {}, {}},
        {{Sublayer<T>::affine(30), Sublayer<T>::relu()}, {}, {}},
        {{Sublayer<T>::affine(10)}, {}, {}},
    };
    finalize_model(m, seed);
    return m;
}

/// conv20 5x5 + pool, conv50 5x5 + pool, fc500, fc10.
template <typename T>
Model<T> make_conv2_fc2(Shape input, std::uint64_t seed) {
    Model<T> m;
    m.input_shape = std::move(input);
    m.loss = LossKind::SoftmaxCe;
    m.layers = {
        {{Sublayer<T>::conv2d(20, 5, 5, 1), Sublayer<T>::relu(), Sublayer<T>::maxpool(2, 2)},
         {},
         {}},
        {{Sublayer<T>::conv2d(50, 5, 5, 1), Sublayer<T>::relu(), Sublayer<T>::maxpool(2, 2),
          Sublayer<T>::flatten()},
         {},
         {}},
        {{Sublayer<T>::affine(500), Sublayer<T>::relu()}, {}, {}},
        {{Sublayer<T>::affine(10)}, {}, {}},
    };
    finalize_model(m, seed);
    return m;
}

/// conv32 + maxpool, conv64 + avgpool, conv64, fc128, fc10. The 5x5 valid
/// convolutions leave a 1x1 map after the third conv, so it takes no pool.
template <typename T>
Model<T> make_cifar_cnn3(std::uint64_t seed) {
    Model<T> m;
    m.input_shape = {3, 32, 32};
    m.loss = LossKind::SoftmaxCe;
    m.layers = {
        {{Sublayer<T>::conv2d(32, 5, 5, 1), Sublayer<T>::relu(), Sublayer<T>::maxpool(2, 2)},
         {},
         {}},
        {{Sublayer<T>::conv2d(64, 5, 5, 1), Sublayer<T>::relu(), Sublayer<T>::avgpool(2, 2)},
         {},
         {}},
        {{Sublayer<T>::conv2d(64, 5, 5, 1), Sublayer<T>::relu(), Sublayer<T>::flatten()},
         {},
         {}},
        {{Sublayer<T>::affine(128), Sublayer<T>::relu()}, {}, {}},
        {{Sublayer<T>::affine(10)}, {}, {}},
    };
    finalize_model(m, seed);
    return m;
}

/// n hidden layers of one width plus a classifier head — the deep-stack
/// model used for memory measurements.
template <typename T>
Model<T> make_fc_stack(std::size_t hidden_layers, std::size_t width, std::size_t input_dim,
                       std::size_t classes, std::uint64_t seed) {
    Model<T> m;
    m.input_shape = {input_dim};
    m.loss = LossKind::SoftmaxCe;
    for (std::size_t i = 0; i < hidden_layers; ++i)
        m.layers.push_back({{Sublayer<T>::affine(width), Sublayer<T>::relu()}, {}, {}});
    m.layers.push_back({{Sublayer<T>::affine(classes)}, {}, {}});
    finalize_model(m, seed);
    return m;
}

/// n equal-width [affine, relu] layers under MSE — every layer identical,
/// no classifier head. Used to measure how peak memory scales with depth.
template <typename T>
Model<T> make_equal_width_stack(std::size_t layers, std::size_t width, std::uint64_t seed) {
    Model<T> m;
    m.input_shape = {width};
    m.loss = LossKind::Mse;
    for (std::size_t i = 0; i < layers; ++i)
        m.layers.push_back({{Sublayer<T>::affine(width), Sublayer<T>::relu()}, {}, {}});
    finalize_model(m, seed);
    return m;
}

/// Text model description: `input ...` line, `layer <ops...>` lines, and a
/// `loss mse|softmax_ce` line. Ops: affine OUT, conv F KH KW STRIDE,
/// relu, maxpool SIZE STRIDE, avgpool SIZE STRIDE, flatten.
template <typename T>
Model<T> model_from_file(const std::string& path, std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("model file not found: " + path);
    Model<T> m;
    m.loss = LossKind::SoftmaxCe;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string word;
        if (!(ss >> word) || word[0] == '#') continue;
        auto want = [&](const char* what) -> std::size_t {
            std::size_t v;
            if (!(ss >> v))
                throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected " +
                                            what);
            return v;
        };
        if (word == "input") {
            Shape s;
            std::size_t d;
            while (ss >> d) s.push_back(d);
            if (s.empty())
                throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                            ": input needs dimensions");
            m.input_shape = s;
        } else if (word == "layer") {
            Layer<T> layer;
            std::string op;
            while (ss >> op) {
                if (op == "affine")
                    layer.ops.push_back(Sublayer<T>::affine(want("affine out_dim")));
                else if (op == "conv") {
                    const std::size_t f = want("conv filters"), kh = want("conv kh");
                    const std::size_t kw = want("conv kw"), st = want("conv stride");
                    layer.ops.push_back(Sublayer<T>::conv2d(f, kh, kw, st));
                } else if (op == "relu")
                    layer.ops.push_back(Sublayer<T>::relu());
                else if (op == "maxpool") {
                    const std::size_t p = want("maxpool size"), st = want("maxpool stride");
                    layer.ops.push_back(Sublayer<T>::maxpool(p, st));
                } else if (op == "avgpool") {
                    const std::size_t p = want("avgpool size"), st = want("avgpool stride");
                    layer.ops.push_back(Sublayer<T>::avgpool(p, st));
                } else if (op == "flatten")
                    layer.ops.push_back(Sublayer<T>::flatten());
                else
                    throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                                ": unknown op " + op);
            }
            m.layers.push_back(std::move(layer));
        } else if (word == "loss") {
            std::string kind;
            ss >> kind;
            if (kind == "mse")
                m.loss = LossKind::Mse;
            else if (kind == "softmax_ce")
                m.loss = LossKind::SoftmaxCe;
            else
                throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                            ": unknown loss " + kind);
        } else {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                        ": unknown directive " + word);
        }
    }
    finalize_model(m, seed);
    return m;
}

/// Resolves a model name: mnist-fc3, mnist-cnn, cifar-cnn2, cifar-cnn3,
/// fc50 (width/layers configurable), or custom:PATH. Default learning
/// rates follow the experiments each named model comes from.
template <typename T>
NamedModel<T> make_named_model(const std::string& name, std::size_t width, std::size_t layers,
                               std::uint64_t seed) {
    NamedModel<T> nm;
    if (name == "mnist-fc3") {
        nm.model = make_mnist_fc3<T>(seed);
        nm.default_lr = 0.01;
        nm.data = DataKind::Mnist;
    } else if (name == "mnist-cnn") {
        nm.model = make_conv2_fc2<T>({1, 28, 28}, seed);
        nm.default_lr = 0.005;
        nm.data = DataKind::Mnist;
    } else if (name == "cifar-cnn2") {
        nm.model = make_conv2_fc2<T>({3, 32, 32}, seed);
        nm.default_lr = 0.005;
        nm.data = DataKind::Cifar10;
    } else if (name == "cifar-cnn3") {
        nm.model = make_cifar_cnn3<T>(seed);
        nm.default_lr = 0.005;
        nm.data = DataKind::Cifar10;
    } else if (name == "fc50") {
        nm.model = make_fc_stack<T>(layers, width, width, 10, seed);
        nm.default_lr = 0.01;
        nm.data = DataKind::Synthetic;
    } else if (name.rfind("custom:", 0) == 0) {
        nm.model = model_from_file<T>(name.substr(7), seed);
        nm.default_lr = 0.01;
        const Shape& s = nm.model.input_shape;
        if (s == Shape{784} || s == Shape{1, 28, 28})
            nm.data = DataKind::Mnist;
        else if (s == Shape{3, 32, 32})
            nm.data = DataKind::Cifar10;
        else
            nm.data = DataKind::Synthetic;
    } else {
        throw std::invalid_argument("unknown model: " + name);
    }
    return nm;
}

}  // namespace memdfa

#endif  // MEMDFA_PRESETS_HPP
