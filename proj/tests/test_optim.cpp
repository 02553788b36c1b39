#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "naive_ref.hpp"
#include "vssl/optim.hpp"
#include "vssl/rng.hpp"

using namespace vssl;

namespace {

ParamSet one_param(double value, int64_t n = 1) {
    ParamSet params;
    params.add("w", Tensor({n}, value));
    return params;
}

void set_grad(ParamSet& params, double g) {
    auto& grad = params.all()[0].value.grad();
    std::fill(grad.begin(), grad.end(), g);
}

}  // namespace

TEST_CASE("lr_at reproduces the three-plateau schedule") {
    SgdConfig cfg;
    cfg.decay_every = 40000;
    CHECK(lr_at(0, cfg) == doctest::Approx(0.01));
    CHECK(lr_at(39999, cfg) == doctest::Approx(0.01));
    CHECK(lr_at(40000, cfg) == doctest::Approx(0.001));
    CHECK(lr_at(80000, cfg) == doctest::Approx(0.0001));

    // non-increasing, piecewise constant between multiples of decay_every
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const int64_t a = rng.next_index(200000);
        const int64_t b = a + rng.next_index(50000);
        CHECK(lr_at(a, cfg) >= lr_at(b, cfg));
        CHECK(lr_at(a, cfg) == lr_at((a / cfg.decay_every) * cfg.decay_every, cfg));
    }
}

TEST_CASE("plain SGD step without momentum or decay") {
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    ParamSet params = one_param(1.0);
    OptState state = make_opt_state(params);
    set_grad(params, 0.5);
    sgd_step(params, state, 0.1, cfg);
    CHECK(params.all()[0].value.data()[0] == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(state.step_count == 1);
}

TEST_CASE("two-step momentum sequence matches the independent scalar recompute") {
    SgdConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    ParamSet params = one_param(0.0);
    OptState state = make_opt_state(params);

    // independent scalar simulation of v = m v + g; w -= lr v
    double w_ref = 0.0, v_ref = 0.0;
    for (int step = 0; step < 2; ++step) {
        v_ref = 0.9 * v_ref + 1.0;
        w_ref -= 0.1 * v_ref;
    }
    CHECK(w_ref == doctest::Approx(-0.29).epsilon(1e-12));

    set_grad(params, 1.0);
    sgd_step(params, state, 0.1, cfg);
    CHECK(state.velocity[0][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(params.all()[0].value.data()[0] == doctest::Approx(-0.1).epsilon(1e-12));
    set_grad(params, 1.0);
    sgd_step(params, state, 0.1, cfg);
    CHECK(state.velocity[0][0] == doctest::Approx(1.9).epsilon(1e-12));
    CHECK(params.all()[0].value.data()[0] == doctest::Approx(w_ref).epsilon(1e-12));
}

TEST_CASE("coupled weight decay moves a gradient-free parameter") {
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.001;
    ParamSet params = one_param(10.0);
    OptState state = make_opt_state(params);
    // no gradient buffer at all: decay alone applies
    sgd_step(params, state, 0.1, cfg);
    CHECK(params.all()[0].value.data()[0] == doctest::Approx(9.999).epsilon(1e-12));
}

TEST_CASE("momentum 0 / decay 0 equals vanilla gradient descent exactly") {
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    Rng rng(11);
    ParamSet params;
    params.add("w", naive::random_tensor({32}, rng));
    OptState state = make_opt_state(params);
    std::vector<double> expected = params.all()[0].value.values();
    for (int step = 0; step < 5; ++step) {
        auto& grad = params.all()[0].value.grad();
        for (auto& g : grad) g = rng.next_uniform(-1, 1);
        const double lr = rng.next_uniform(0.001, 0.1);
        for (size_t i = 0; i < expected.size(); ++i) expected[i] -= lr * grad[i];
        sgd_step(params, state, lr, cfg);
        CHECK(params.all()[0].value.values() == expected);
    }
    CHECK(state.step_count == 5);
}

TEST_CASE("optimizer state shape mismatches are rejected") {
    ParamSet params = one_param(1.0, 4);
    OptState state = make_opt_state(params);
    state.velocity[0].resize(3);
    CHECK_THROWS_AS(sgd_step(params, state, 0.1, SgdConfig{}), ShapeError);

    ParamSet two;
    two.add("a", Tensor({2}));
    two.add("b", Tensor({2}));
    OptState one_buf = make_opt_state(params);
    CHECK_THROWS_AS(sgd_step(two, one_buf, 0.1, SgdConfig{}), ShapeError);
}
