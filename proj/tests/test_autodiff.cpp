#include "op_cases.hpp"

#include "hml/error.hpp"

#include <doctest.h>

#include <cmath>
#include <thread>

using namespace hml;
using hml::test::make_probe;

namespace {

ad::Var p(double v) { return ad::Var::param(Array::scalar(v)); }

}  // namespace

TEST_CASE("softmax cross-entropy of uniform logits is ln N for any label") {
    for (int label = 0; label < 5; ++label) {
        const ad::Var logits = ad::Var::constant(Array(1, 5, 0.7));
        CHECK(ad::softmax_cross_entropy(logits, {label}).value().item() == doctest::Approx(std::log(5.0)).epsilon(1e-15));
    }
    CHECK(std::log(5.0) == doctest::Approx(1.6094379).epsilon(1e-7));
}

TEST_CASE("mse of identical prediction and target is zero") {
    hml::Engine eng(3);
    const Array a = test::random_array(4, 3, eng);
    CHECK(ad::mse(ad::Var::constant(a), ad::Var::constant(a)).value().item() == 0.0);
}

TEST_CASE("matmul with identity returns the input") {
    hml::Engine eng(4);
    const Array a = test::random_array(3, 5, eng);
    CHECK(bitwise_equal(ad::matmul(ad::Var::constant(a), ad::Var::constant(Array::identity(5))).value(), a));
}

TEST_CASE("gradient of w^2 at 3 is 6") {
    const ad::Var w = p(3.0);
    CHECK(ad::grad(ad::mul(w, w), std::vector{w})[0].value().item() == 6.0);
}

TEST_CASE("mse of w*1 + b against 2 at zero has gradient -4 in both") {
    const ad::Var w = p(0.0), b = p(0.0);
    const ad::Var pred = ad::add_bias(ad::matmul(ad::Var::constant(Array::scalar(1.0)), w), b);
    const ad::Var loss = ad::mse(pred, ad::Var::constant(Array::scalar(2.0)));
    const auto g = ad::gradient_values(loss, std::vector{w, b});
    CHECK(g[0].item() == doctest::Approx(-4.0).epsilon(1e-15));
    CHECK(g[1].item() == doctest::Approx(-4.0).epsilon(1e-15));

    const auto fd = ad::finite_difference(
        [](std::span<const Array> x) {
            const double r = x[0].item() + x[1].item() - 2.0;
            return r * r;
        },
        std::vector{Array::scalar(0.0), Array::scalar(0.0)});
    CHECK(fd[0].item() == doctest::Approx(-4.0).epsilon(1e-9));
    CHECK(fd[1].item() == doctest::Approx(-4.0).epsilon(1e-9));
}

TEST_CASE("second derivative of w^3 at 2 is 12 via create_graph") {
    const ad::Var w = p(2.0);
    const ad::Var cube = ad::mul(ad::mul(w, w), w);
    const ad::Var dw = ad::grad(cube, std::vector{w}, true)[0];
    CHECK(dw.value().item() == doctest::Approx(12.0));
    CHECK(dw.requires_grad());
    CHECK(ad::grad(dw, std::vector{w})[0].value().item() == doctest::Approx(12.0).epsilon(1e-15));
}

TEST_CASE("gradients without create_graph are detached") {
    const ad::Var w = p(2.0);
    const ad::Var dw = ad::grad(ad::mul(w, w), std::vector{w})[0];
    CHECK_FALSE(dw.requires_grad());
}

TEST_CASE("finite differences: w^2, constants, non-finite coordinates") {
    const auto fd = ad::finite_difference([](std::span<const Array> x) { return x[0].item() * x[0].item(); },
                                          std::vector{Array::scalar(3.0)}, 1e-5);
    CHECK(std::abs(fd[0].item() - 6.0) <= 1e-7);

    const auto zero = ad::finite_difference([](std::span<const Array>) { return 2.5; },
                                            std::vector{Array(2, 3, 0.1), Array(1, 4, -0.2)});
    for (const auto& a : zero)
        for (double v : a.data()) CHECK(v == 0.0);

    const auto bad = [](std::span<const Array> x) { return x[1][2] > 0.5 ? std::nan("") : 1.0; };
    try {
        ad::finite_difference(bad, std::vector{Array(1, 2, 0.0), Array(1, 3, 0.5)});
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("parameter 1") != std::string::npos);
        CHECK(msg.find("element 2") != std::string::npos);
    }
}

TEST_CASE("shape mismatches name the op and both shapes") {
    const ad::Var a = ad::Var::constant(Array(2, 3));
    const ad::Var b = ad::Var::constant(Array(2, 4));
    try {
        ad::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x4]") != std::string::npos);
    }
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
    CHECK_THROWS_AS(ad::mul(a, b), ShapeError);
    CHECK_THROWS_AS(ad::add_bias(a, ad::Var::constant(Array(1, 2))), ShapeError);
    CHECK_THROWS_AS(ad::mse(a, b), ShapeError);
    CHECK_THROWS_AS(ad::softmax_cross_entropy(a, {0}), ShapeError);
    CHECK_THROWS_AS(ad::softmax_cross_entropy(a, {0, 3}), Error);
}

TEST_CASE("non-scalar loss is rejected") {
    const ad::Var w = ad::Var::param(Array(2, 2, 1.0));
    CHECK_THROWS_AS(ad::grad(w, std::vector{w}), Error);
}

TEST_CASE("parameters outside the graph get exact zero arrays") {
    const ad::Var w = p(1.5);
    const ad::Var unused = ad::Var::param(Array(3, 2, 4.0));
    const auto g = ad::grad(ad::mul(w, w), std::vector{w, unused});
    REQUIRE(g[1].value().same_shape(unused.value()));
    for (double v : g[1].value().data()) CHECK(v == 0.0);
}

TEST_CASE("no-grad guard stops recording on this thread only") {
    const ad::Var w = p(1.0);
    {
        ad::NoGradGuard guard;
        CHECK_FALSE(ad::grad_enabled());
        CHECK_FALSE(ad::mul(w, w).requires_grad());
        bool other = false;
        std::thread([&] { other = ad::grad_enabled(); }).join();
        CHECK(other);
    }
    CHECK(ad::grad_enabled());
    CHECK(ad::mul(w, w).requires_grad());
}

TEST_CASE("gradients are bit-identical across repeated evaluation") {
    hml::Engine eng(11);
    for (const auto& name : test::op_names()) {
        const auto probe = make_probe(name, eng);
        const auto v1 = test::params_of(probe.op.inputs);
        const auto v2 = test::params_of(probe.op.inputs);
        const auto g1 = ad::gradient_values(probe.loss(v1), v1);
        const auto g2 = ad::gradient_values(probe.loss(v2), v2);
        for (std::size_t i = 0; i < g1.size(); ++i) CHECK(bitwise_equal(g1[i], g2[i]));
    }
}

TEST_CASE("every op matches central differences over 100 random instances") {
    for (const auto& name : test::op_names()) {
        hml::Engine eng(derive_seed(1, "op-fd-" + name));
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) worst = std::max(worst, test::first_order_error(make_probe(name, eng)));
        INFO(name << " worst relative error " << worst);
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("second derivatives of every op match central differences") {
    for (const auto& name : test::op_names()) {
        hml::Engine eng(derive_seed(2, "op-fd2-" + name));
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto probe = make_probe(name, eng);
            worst = std::max(worst, test::second_order_error(probe, eng));
        }
        INFO(name << " worst relative error " << worst);
        CHECK(worst < 1e-6);
    }
}
