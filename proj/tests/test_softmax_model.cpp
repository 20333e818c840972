#include "aifcmab/softmax_model.hpp"

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace aifcmab;

namespace {

SoftmaxParams random_params(int F, int C, RngStream& rng, double scale = 1.0) {
    MatrixXd w(F, C);
    VectorXd b(F);
    for (int f = 0; f < F; ++f) {
        for (int c = 0; c < C; ++c)
            w(f, c) = scale * rng.normal();
        b[f] = scale * rng.normal();
    }
    return SoftmaxParams(std::move(w), std::move(b));
}

ContextVector random_context(int C, RngStream& rng) {
    VectorXd x(C);
    for (int c = 0; c < C; ++c)
        x[c] = rng.normal();
    return ContextVector(std::move(x));
}

}  // namespace

TEST_CASE("all-zero parameters give the uniform distribution") {
    for (int F : {2, 5, 14}) {
        const SoftmaxParams theta = SoftmaxParams::zeros(F, 3);
        const ContextVector x(VectorXd::Constant(3, 0.7));
        const VectorXd p = softmax_likelihood(theta, x);
        for (int f = 0; f < F; ++f)
            CHECK(p[f] == Catch::Approx(1.0 / F).margin(1e-15));
    }
}

TEST_CASE("two-class hand case: w=[1],[0], b=0, x=ln 3 gives [0.75, 0.25]") {
    MatrixXd w(2, 1);
    w << 1.0, 0.0;
    const SoftmaxParams theta(w, VectorXd::Zero(2));
    const ContextVector x(VectorXd::Constant(1, std::log(3.0)));
    const VectorXd p = softmax_likelihood(theta, x);
    CHECK(p[0] == Catch::Approx(0.75).margin(1e-12));
    CHECK(p[1] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("a -20 bias drives that label's probability below 1e-8") {
    MatrixXd w = MatrixXd::Zero(3, 2);
    VectorXd b(3);
    b << 0.0, -20.0, 0.0;
    const SoftmaxParams theta(w, b);
    const ContextVector x(VectorXd::Zero(2));
    CHECK(softmax_likelihood(theta, x)[1] < 1e-8);
}

TEST_CASE("extreme logits do not overflow") {
    MatrixXd w = MatrixXd::Zero(2, 1);
    VectorXd b(2);
    b << 700.0, -700.0;
    const SoftmaxParams theta(w, b);
    const ContextVector x(VectorXd::Zero(1));
    const VectorXd p = softmax_likelihood(theta, x);
    REQUIRE(all_finite(p));
    CHECK(p.sum() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("softmax output is a distribution and shift-invariant (property)") {
    RngStream rng(1234);
    for (int trial = 0; trial < 1000; ++trial) {
        const int F = 2 + rng.uniform_int(4);
        const int C = 1 + rng.uniform_int(4);
        const SoftmaxParams theta = random_params(F, C, rng, 2.0);
        const ContextVector x = random_context(C, rng);
        const VectorXd p = softmax_likelihood(theta, x);
        REQUIRE(p.sum() == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(p.minCoeff() > 0.0);
        REQUIRE(p.maxCoeff() < 1.0);

        const double shift = 3.0 * rng.normal();
        const SoftmaxParams shifted(theta.weights(),
                                    theta.biases() + VectorXd::Constant(F, shift));
        REQUIRE((softmax_likelihood(shifted, x) - p).lpNorm<Eigen::Infinity>() < 1e-12);
    }
}

TEST_CASE("flatten/unflatten round-trips exactly") {
    RngStream rng(77);
    const SoftmaxParams theta = random_params(4, 3, rng);
    const VectorXd flat = theta.flatten();
    REQUIRE(flat.size() == theta.flat_dim());
    const SoftmaxParams back = SoftmaxParams::unflatten(flat, 4, 3);
    CHECK(back.weights() == theta.weights());
    CHECK(back.biases() == theta.biases());
    // layout: class-major, weights before bias within a class
    CHECK(flat[0] == theta.weights()(0, 0));
    CHECK(flat[3] == theta.biases()[0]);
    CHECK(flat[4] == theta.weights()(1, 0));
}

TEST_CASE("gradient: symmetric two-class case at x=0") {
    const SoftmaxParams theta = SoftmaxParams::zeros(2, 1);
    const ContextVector x(VectorXd::Zero(1));
    const VectorXd g = log_likelihood_gradient(theta, x, OutcomeLabel(1));
    // blocks are [w_1, b_1, w_2, b_2]; x = 0 kills the weight entries
    CHECK(g[0] == 0.0);
    CHECK(g[1] == Catch::Approx(0.5).margin(1e-15));
    CHECK(g[2] == 0.0);
    CHECK(g[3] == Catch::Approx(-0.5).margin(1e-15));
}

TEST_CASE("gradient vanishes at a saturated likelihood") {
    MatrixXd w = MatrixXd::Zero(2, 1);
    VectorXd b(2);
    b << 50.0, -50.0;
    const SoftmaxParams theta(w, b);
    const ContextVector x(VectorXd::Zero(1));
    const VectorXd g = log_likelihood_gradient(theta, x, OutcomeLabel(1));
    CHECK(g.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("gradient matches central finite differences") {
    RngStream rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const int F = 3, C = 2;
        const SoftmaxParams theta = random_params(F, C, rng);
        const ContextVector x = random_context(C, rng);
        const OutcomeLabel o(1 + rng.uniform_int(F));
        const VectorXd g = log_likelihood_gradient(theta, x, o);
        const VectorXd g_fd = oracles::central_diff_gradient(
            [&](const VectorXd& flat) { return oracles::log_lik_at(flat, F, C, x, o); },
            theta.flatten(), 1e-5);
        REQUIRE((g - g_fd).lpNorm<Eigen::Infinity>() < 1e-6);
    }
}

TEST_CASE("hessian matches finite differences of the gradient") {
    RngStream rng(2025);
    for (int trial = 0; trial < 20; ++trial) {
        const int F = 3, C = 2;
        const SoftmaxParams theta = random_params(F, C, rng);
        const ContextVector x = random_context(C, rng);
        const OutcomeLabel o(1 + rng.uniform_int(F));
        const MatrixXd h = log_likelihood_hessian(theta, x);
        const MatrixXd h_fd = oracles::central_diff_jacobian(
            [&](const VectorXd& flat) {
                return log_likelihood_gradient(
                    SoftmaxParams::unflatten(flat, F, C), x, o);
            },
            theta.flatten(), 1e-5);
        REQUIRE((h - h_fd).lpNorm<Eigen::Infinity>() < 1e-5);
    }
}

TEST_CASE("hessian is symmetric, o-independent and negative semidefinite") {
    RngStream rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const int F = 2 + rng.uniform_int(4);
        const int C = 1 + rng.uniform_int(4);
        const SoftmaxParams theta = random_params(F, C, rng, 1.5);
        const ContextVector x = random_context(C, rng);
        const MatrixXd h = log_likelihood_hessian(theta, x);
        REQUIRE((h - h.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
        REQUIRE(es.eigenvalues().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("hessian tends to zero as the likelihood saturates") {
    MatrixXd w = MatrixXd::Zero(3, 1);
    VectorXd b(3);
    b << 60.0, 0.0, 0.0;
    const SoftmaxParams theta(w, b);
    const ContextVector x(VectorXd::Constant(1, 0.5));
    CHECK(log_likelihood_hessian(theta, x).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("dimension mismatches are reported with both dimensions") {
    const SoftmaxParams theta = SoftmaxParams::zeros(2, 3);
    const ContextVector x(VectorXd::Zero(2));
    REQUIRE_THROWS_WITH(softmax_likelihood(theta, x),
                        Catch::Matchers::ContainsSubstring("C=3") &&
                            Catch::Matchers::ContainsSubstring("2"));
    REQUIRE_THROWS_AS(log_likelihood_gradient(theta, x, OutcomeLabel(1)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(log_likelihood_hessian(theta, x), std::invalid_argument);
}
