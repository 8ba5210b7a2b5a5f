#include <doctest.h>

#include "hyperlora/optim.hpp"

using namespace hyperlora;

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    ParamStore p;
    p.add("w", Tensor(Shape{3}, {1.0f, -2.0f, 0.5f}));
    AdamState st;
    std::map<std::string, Tensor> grads{{"w", Tensor(Shape{3})}};
    adam_step(p, grads, st);
    CHECK(p.at("w").vec() == std::vector<float>{1.0f, -2.0f, 0.5f});
    CHECK(st.step == 1);
}

TEST_CASE("first adam step is a bias-corrected lr-sized move") {
    // scalar 0, grad 1, lr 0.1: mhat = 1, vhat = 1, update = -lr/(1+eps)
    ParamStore p;
    p.add("w", Tensor(Shape{1}, {0.0f}));
    AdamState st;
    st.cfg = {0.1f, 0.9f, 0.999f, 1e-8f};
    std::map<std::string, Tensor> grads{{"w", Tensor(Shape{1}, {1.0f})}};
    adam_step(p, grads, st);
    CHECK(p.at("w").at(0) == doctest::Approx(-0.1).epsilon(1e-5));
}

TEST_CASE("adam is deterministic") {
    auto run = [] {
        ParamStore p;
        p.add("w", Tensor(Shape{4}, {0.3f, -0.7f, 1.1f, 0.0f}));
        AdamState st;
        for (int i = 0; i < 10; ++i) {
            std::map<std::string, Tensor> grads{{"w", Tensor(Shape{4}, {0.1f, -0.2f, 0.3f, 0.5f})}};
            adam_step(p, grads, st);
        }
        return p.at("w").vec();
    };
    CHECK(run() == run());
}

TEST_CASE("adam rejects shape mismatch and non-finite gradients") {
    ParamStore p;
    p.add("w", Tensor(Shape{2}, {0.0f, 0.0f}));
    AdamState st;
    std::map<std::string, Tensor> bad_shape{{"w", Tensor(Shape{3})}};
    CHECK_THROWS_AS(adam_step(p, bad_shape, st), ShapeError);
    std::map<std::string, Tensor> bad_value{{"w", Tensor(Shape{2}, {0.0f, std::numeric_limits<float>::infinity()})}};
    CHECK_THROWS_AS(adam_step(p, bad_value, st), NumericsError);
}

TEST_CASE("step counter increases strictly") {
    ParamStore p;
    p.add("w", Tensor(Shape{1}, {0.0f}));
    AdamState st;
    std::map<std::string, Tensor> grads{{"w", Tensor(Shape{1}, {1.0f})}};
    for (int64_t i = 1; i <= 5; ++i) {
        adam_step(p, grads, st);
        CHECK(st.step == i);
    }
}
