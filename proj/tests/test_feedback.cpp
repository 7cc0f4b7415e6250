#include "doctest.h"

#include "support.hpp"

#include "memdfa/feedback.hpp"
#include "memdfa/model.hpp"
#include "memdfa/presets.hpp"

using namespace memdfa;

TEST_CASE("fixed policy is bitwise stable across refreshes") {
    auto fb = generate_feedback<double>(7, 0, FeedbackMode::DFA, FeedbackPolicy::Fixed,
                                        Shape{4, 3}, 3);
    auto before = fb.matrix.clone("copy");
    refresh_feedback(fb, 7, 0, 3);
    refresh_feedback(fb, 7, 1, 3);
    CHECK(oracle::bitwise_equal(before, fb.matrix));
}

TEST_CASE("per-iteration policy redraws per iteration, reproducibly") {
    auto fb = generate_feedback<double>(7, 0, FeedbackMode::DFA, FeedbackPolicy::PerIteration,
                                        Shape{4, 3}, 3);
    refresh_feedback(fb, 7, 0, 3);
    auto at0 = fb.matrix.clone("copy");
    refresh_feedback(fb, 7, 1, 3);
    CHECK_FALSE(oracle::bitwise_equal(at0, fb.matrix));
    refresh_feedback(fb, 7, 0, 3);
    CHECK(oracle::bitwise_equal(at0, fb.matrix));  // same iteration counter, same draw
}

TEST_CASE("sign-concordant feedback copies the weight signs") {
    Tensor<double> w(Shape{3, 2}, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5}, "w");
    auto fb = generate_feedback<double>(3, 0, FeedbackMode::FA, FeedbackPolicy::SignConcordant,
                                        w.shape(), 2, &w);
    for (std::size_t i = 0; i < fb.matrix.numel(); ++i) CHECK(fb.matrix[i] > 0);

    w(1, 1) = -2.0;
    refresh_feedback(fb, 3, 1, 2, &w);
    CHECK(fb.matrix(1, 1) < 0);
    CHECK(fb.matrix(0, 0) > 0);
    // magnitudes stay from the initial draw
    CHECK(std::abs(fb.matrix(1, 1)) == fb.magnitudes(1, 1));

    CHECK_THROWS_AS(generate_feedback<double>(3, 0, FeedbackMode::FA,
                                              FeedbackPolicy::SignConcordant, w.shape(), 2,
                                              nullptr),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_feedback<double>(3, 0, FeedbackMode::DFA,
                                              FeedbackPolicy::SignConcordant, w.shape(), 2, &w),
                    std::invalid_argument);
}

TEST_CASE("project: identity matrix passes the delta through") {
    auto fb = generate_feedback<double>(1, 0, FeedbackMode::DFA, FeedbackPolicy::Fixed,
                                        Shape{2, 2}, 2);
    fb.matrix.fill(0);
    fb.matrix(0, 0) = 1;
    fb.matrix(1, 1) = 1;
    Tensor<double> d(Shape{2}, {5, -3}, "d");
    auto out = project(fb, d);
    CHECK(out[0] == 5);
    CHECK(out[1] == -3);
}

TEST_CASE("project: fixed small matrix and a batched loop oracle") {
    auto fb = generate_feedback<double>(1, 0, FeedbackMode::DFA, FeedbackPolicy::Fixed,
                                        Shape{2, 2}, 2);
    fb.matrix = Tensor<double>(Shape{2, 2}, {1, 2, 3, 4}, fb.matrix.tag());
    Tensor<double> d(Shape{2}, {1, 1}, "d");
    auto out = project(fb, d);
    CHECK(out[0] == 3);
    CHECK(out[1] == 7);

    Rng rng(10);
    Tensor<double> batch = random_fill<double>(rng, {5, 2}, Uniform{-1, 1}, "d");
    auto got = project(fb, batch);
    REQUIRE(got.shape() == Shape{5, 2});
    for (std::size_t b = 0; b < 5; ++b)
        for (std::size_t t = 0; t < 2; ++t) {
            double want = 0;
            for (std::size_t s = 0; s < 2; ++s) want += fb.matrix(t, s) * batch(b, s);
            CHECK(got(b, t) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("project rejects mismatched deltas naming the mode") {
    auto fa = generate_feedback<double>(1, 0, FeedbackMode::FA, FeedbackPolicy::Fixed,
                                        Shape{3, 2}, 2);
    Tensor<double> wrong(Shape{1, 5}, "d");
    CHECK_THROWS_WITH_AS(project(fa, wrong), doctest::Contains("FA"), ShapeError);
    auto dfa = generate_feedback<double>(1, 0, FeedbackMode::DFA, FeedbackPolicy::Fixed,
                                         Shape{3, 2}, 2);
    CHECK_THROWS_WITH_AS(project(dfa, wrong), doctest::Contains("DFA"), ShapeError);
}

TEST_CASE("model feedback sets route the expected shape at every layer") {
    auto m = make_mnist_fc3<double>(5);

    auto fa = make_feedback(m, FeedbackMode::FA, FeedbackPolicy::Fixed, 5);
    REQUIRE(fa.matrices.size() == 2);
    // FA: matrix r has the stored shape of layer r+1's weights
    CHECK(fa.matrices[0].matrix.shape() == m.layers[1].ops[0].weight.shape());
    CHECK(fa.matrices[1].matrix.shape() == m.layers[2].ops[0].weight.shape());

    auto dfa = make_feedback(m, FeedbackMode::DFA, FeedbackPolicy::Fixed, 5);
    REQUIRE(dfa.matrices.size() == 2);
    // DFA: matrix r maps the 10-dim output error onto layer r's activation
    CHECK(dfa.matrices[0].matrix.shape() == Shape{100, 10});
    CHECK(dfa.matrices[1].matrix.shape() == Shape{30, 10});

    // correctly routed deltas never raise
    Tensor<double> dan(Shape{7, 10}, "d");
    for (const auto& fb : dfa.matrices) CHECK_NOTHROW(project(fb, dan));
    Tensor<double> dz2(Shape{7, 30}, "d");
    CHECK_NOTHROW(project(fa.matrices[0], dz2));
}

TEST_CASE("feedback matrices on conv layers keep the kernel shape under FA") {
    auto m = make_conv2_fc2<double>({1, 28, 28}, 5);
    auto fa = make_feedback(m, FeedbackMode::FA, FeedbackPolicy::Fixed, 5);
    REQUIRE(fa.matrices.size() == 3);
    CHECK(fa.matrices[0].conv_geometry);  // layer 2 is a conv
    CHECK(fa.matrices[0].matrix.shape() == m.layers[1].ops[0].weight.shape());
    CHECK_FALSE(fa.matrices[1].conv_geometry);  // layer 3 is affine
    CHECK_THROWS_AS(project(fa.matrices[0], Tensor<double>(Shape{1, 4}, "d")), std::logic_error);

    auto dfa = make_feedback(m, FeedbackMode::DFA, FeedbackPolicy::Fixed, 5);
    // DFA on a conv layer maps the output vector to the flattened activation
    CHECK(dfa.matrices[0].matrix.shape() == Shape{shape_numel(m.layers[0].out_shape), 10});
}

TEST_CASE("feedback entries stay within the 1/sqrt(fan) bound") {
    auto fb = generate_feedback<double>(99, 0, FeedbackMode::DFA, FeedbackPolicy::Fixed,
                                        Shape{50, 16}, 16);
    const double bound = 1.0 / 4.0;
    for (std::size_t i = 0; i < fb.matrix.numel(); ++i) {
        CHECK(fb.matrix[i] < bound);
        CHECK(fb.matrix[i] > -bound);
    }
}
