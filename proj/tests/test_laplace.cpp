#include "aifcmab/laplace.hpp"

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace aifcmab;

namespace {

GaussianBelief random_belief(int d, RngStream& rng, double spread = 1.0) {
    VectorXd mean(d);
    for (int i = 0; i < d; ++i)
        mean[i] = rng.normal();
    MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            m(i, j) = rng.normal();
    MatrixXd cov = spread * (m * m.transpose()) + 0.05 * MatrixXd::Identity(d, d);
    return GaussianBelief(std::move(mean), std::move(cov));
}

ContextVector random_context(int C, RngStream& rng) {
    VectorXd x(C);
    for (int c = 0; c < C; ++c)
        x[c] = rng.normal();
    return ContextVector(std::move(x));
}

}  // namespace

TEST_CASE("find_map: prior-dominant limit pins the mode at the mean") {
    RngStream rng(301);
    const int F = 3, C = 2, d = (C + 1) * F;
    VectorXd mean(d);
    for (int i = 0; i < d; ++i)
        mean[i] = rng.normal();
    const GaussianBelief belief(mean, 1e-8 * MatrixXd::Identity(d, d));
    const ContextVector x = random_context(C, rng);
    const LaplaceResult res = find_map(belief, x, OutcomeLabel(2));
    REQUIRE(res.converged);
    CHECK((res.theta_map.flatten() - mean).lpNorm<Eigen::Infinity>() < 1e-4);
}

TEST_CASE("find_map: stationarity holds at the returned mode") {
    RngStream rng(302);
    for (int trial = 0; trial < 20; ++trial) {
        const int F = 2 + rng.uniform_int(3);
        const int C = 1 + rng.uniform_int(2);
        const GaussianBelief belief = random_belief((C + 1) * F, rng);
        const ContextVector x = random_context(C, rng);
        const OutcomeLabel o(1 + rng.uniform_int(F));
        const LaplaceResult res = find_map(belief, x, o);
        REQUIRE(res.converged);
        REQUIRE(res.iterations <= NewtonOptions{}.max_iter);
        const VectorXd grad = oracles::joint_log_density_gradient(
            res.theta_map.flatten(), belief.mean(), belief.covariance(), F, {x}, {o});
        REQUIRE(grad.lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("find_map: agrees with a small-step gradient-ascent oracle") {
    RngStream rng(303);
    const int F = 2, C = 1, d = 4;
    const GaussianBelief belief(VectorXd::Zero(d), MatrixXd::Identity(d, d));
    const ContextVector x(VectorXd::Constant(1, 0.8));
    const OutcomeLabel o(1);
    const LaplaceResult res = find_map(belief, x, o);
    REQUIRE(res.converged);
    const VectorXd oracle = oracles::gradient_ascent_map(belief.mean(), belief.covariance(),
                                                         F, {x}, {o}, 100000, 1e-3);
    CHECK((res.theta_map.flatten() - oracle).lpNorm<Eigen::Infinity>() < 1e-4);
    (void)rng;
}

TEST_CASE("find_map: precision is symmetric positive definite at convergence") {
    RngStream rng(304);
    for (int trial = 0; trial < 10; ++trial) {
        const int F = 2 + rng.uniform_int(2), C = 1 + rng.uniform_int(2);
        const GaussianBelief belief = random_belief((C + 1) * F, rng);
        const ContextVector x = random_context(C, rng);
        const LaplaceResult res = find_map(belief, x, OutcomeLabel(1));
        REQUIRE(res.converged);
        REQUIRE((res.precision - res.precision.transpose()).lpNorm<Eigen::Infinity>() < 1e-9);
        Eigen::LLT<MatrixXd> llt(res.precision);
        REQUIRE(llt.info() == Eigen::Success);
    }
}

TEST_CASE("find_map: non-convergence is reported, not thrown") {
    RngStream rng(305);
    const GaussianBelief belief = random_belief(4, rng);
    const ContextVector x(VectorXd::Constant(1, 1.0));
    NewtonOptions opts;
    opts.max_iter = 0;
    const LaplaceResult res = find_map(belief, x, OutcomeLabel(1), opts);
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 0);
    REQUIRE_THROWS_AS(laplace_log_normalizer(res, belief, x, OutcomeLabel(1)),
                      std::invalid_argument);
}

TEST_CASE("log normalizer: point-mass limit reduces to the plain likelihood") {
    RngStream rng(306);
    const int F = 3, C = 1, d = 6;
    VectorXd mean(d);
    for (int i = 0; i < d; ++i)
        mean[i] = 0.5 * rng.normal();
    const GaussianBelief belief(mean, 1e-8 * MatrixXd::Identity(d, d));
    const ContextVector x(VectorXd::Constant(1, 0.4));
    for (int f = 1; f <= F; ++f) {
        const OutcomeLabel o(f);
        const LaplaceResult res = find_map(belief, x, o);
        REQUIRE(res.converged);
        const double expected = std::log(
            softmax_likelihood(SoftmaxParams::unflatten(mean, F, C), x)[o.array_index()]);
        CHECK(laplace_log_normalizer(res, belief, x, o) ==
              Catch::Approx(expected).margin(1e-3));
    }
}

TEST_CASE("log normalizer: matches Monte Carlo integration with unit prior covariance") {
    const int F = 2, C = 1, d = 4;
    VectorXd mean(d);
    mean << 0.3, -0.2, -0.5, 0.4;
    const GaussianBelief belief(mean, MatrixXd::Identity(d, d));
    const ContextVector x(VectorXd::Constant(1, 0.9));
    RngStream mc_rng(307);
    const VectorXd mc =
        oracles::mc_predicted_observation(belief.mean(), belief.covariance(), F, x, 1000000,
                                          mc_rng);
    for (int f = 1; f <= F; ++f) {
        const LaplaceResult res = find_map(belief, x, OutcomeLabel(f));
        REQUIRE(res.converged);
        const double lz = laplace_log_normalizer(res, belief, x, OutcomeLabel(f));
        CHECK(std::exp(lz) == Catch::Approx(mc[f - 1]).margin(2e-2));
        // the Cholesky route and the fitted value must agree tightly
        CHECK(lz == Catch::Approx(res.log_evidence).margin(1e-8));
    }
}

TEST_CASE("log normalizer: per-outcome masses nearly partition unity") {
    const int F = 3, C = 1, d = 6;
    VectorXd mean(d);
    mean << 0.2, 0.1, -0.3, 0.0, 0.4, -0.2;
    const GaussianBelief belief(mean, 0.5 * MatrixXd::Identity(d, d));
    const ContextVector x(VectorXd::Constant(1, -0.7));
    double total = 0.0;
    for (int f = 1; f <= F; ++f) {
        const LaplaceResult res = find_map(belief, x, OutcomeLabel(f));
        REQUIRE(res.converged);
        total += std::exp(laplace_log_normalizer(res, belief, x, OutcomeLabel(f)));
    }
    CHECK(total == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("predicted_observation: point-mass limit, exact normalization, MC agreement") {
    const int F = 2, C = 1, d = 4;
    VectorXd mean(d);
    mean << 0.6, -0.1, -0.4, 0.3;

    SECTION("near point mass equals the softmax at the mean") {
        const GaussianBelief belief(mean, 1e-8 * MatrixXd::Identity(d, d));
        const ContextVector x(VectorXd::Constant(1, 1.2));
        const PredictedObservation pred = predicted_observation(belief, x);
        const VectorXd direct =
            softmax_likelihood(SoftmaxParams::unflatten(mean, F, C), x);
        REQUIRE((pred.probs - direct).lpNorm<Eigen::Infinity>() < 1e-3);
        REQUIRE(pred.probs.sum() == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("unit covariance matches the MC oracle per entry") {
        const GaussianBelief belief(mean, MatrixXd::Identity(d, d));
        const ContextVector x(VectorXd::Constant(1, 0.5));
        const PredictedObservation pred = predicted_observation(belief, x);
        RngStream mc_rng(308);
        const VectorXd mc = oracles::mc_predicted_observation(
            belief.mean(), belief.covariance(), F, x, 1000000, mc_rng);
        REQUIRE(pred.per_outcome.size() == F);
        for (int f = 0; f < F; ++f)
            CHECK(pred.probs[f] == Catch::Approx(mc[f]).margin(0.02));
    }

    SECTION("non-convergence propagates with the outcome index") {
        const GaussianBelief belief(mean, MatrixXd::Identity(d, d));
        const ContextVector x(VectorXd::Constant(1, 0.5));
        NewtonOptions opts;
        opts.max_iter = 0;
        REQUIRE_THROWS_WITH(predicted_observation(belief, x, opts),
                            Catch::Matchers::ContainsSubstring("outcome 1"));
    }
}

TEST_CASE("predicted_observation converges monotonically to the point-mass limit") {
    const int F = 3, C = 2, d = 9;
    RngStream rng(309);
    VectorXd mean(d);
    for (int i = 0; i < d; ++i)
        mean[i] = rng.normal();
    const ContextVector x = random_context(C, rng);
    const VectorXd direct = softmax_likelihood(SoftmaxParams::unflatten(mean, F, C), x);
    double prev_err = std::numeric_limits<double>::infinity();
    for (double scale : {1.0, 1e-2, 1e-4, 1e-6}) {
        const GaussianBelief belief(mean, scale * MatrixXd::Identity(d, d));
        const double err =
            (predicted_observation(belief, x).probs - direct).lpNorm<Eigen::Infinity>();
        REQUIRE(err < prev_err);
        prev_err = err;
    }
}

TEST_CASE("posterior update: information never decreases") {
    RngStream rng(310);
    for (int trial = 0; trial < 10; ++trial) {
        const int F = 2 + rng.uniform_int(2), C = 1 + rng.uniform_int(2);
        const int d = (C + 1) * F;
        const GaussianBelief prior = random_belief(d, rng);
        const ContextVector x = random_context(C, rng);
        const OutcomeLabel o(1 + rng.uniform_int(F));
        const GaussianBelief post = laplace_posterior_update(prior, x, o);

        Eigen::SelfAdjointEigenSolver<MatrixXd> es(prior.covariance() - post.covariance());
        REQUIRE(es.eigenvalues().minCoeff() >= -1e-10);  // Loewner order
        REQUIRE(post.log_det_cov() <=
                prior.log_det_cov() + std::log1p(1e-10));  // determinant contract
    }
}

TEST_CASE("posterior update: saturated case barely moves the mean") {
    const int F = 2, C = 1, d = 4;
    VectorXd mean(d);
    mean << 0.0, 4.0, 0.0, -4.0;  // label 1 has probability ~ 1 at x=0
    const GaussianBelief prior(mean, 1e-8 * MatrixXd::Identity(d, d));
    const ContextVector x(VectorXd::Zero(1));
    const GaussianBelief post = laplace_posterior_update(prior, x, OutcomeLabel(1));
    CHECK((post.mean() - mean).lpNorm<Eigen::Infinity>() < 1e-3);
}

TEST_CASE("posterior update: two sequential updates track the joint two-observation MAP") {
    const int F = 2, C = 1, d = 4;
    const GaussianBelief prior(VectorXd::Zero(d), MatrixXd::Identity(d, d));
    const ContextVector x1(VectorXd::Constant(1, 0.7));
    const ContextVector x2(VectorXd::Constant(1, -0.4));
    const OutcomeLabel o1(1), o2(2);

    const GaussianBelief step1 = laplace_posterior_update(prior, x1, o1);
    const GaussianBelief step2 = laplace_posterior_update(step1, x2, o2);

    const VectorXd joint = oracles::gradient_ascent_map(
        prior.mean(), prior.covariance(), F, {x1, x2}, {o1, o2}, 200000, 1e-3);
    CHECK((step2.mean() - joint).lpNorm<Eigen::Infinity>() < 0.05);
}

TEST_CASE("gaussian_kl: hand-derived values") {
    const GaussianBelief std1(VectorXd::Zero(1), MatrixXd::Identity(1, 1));
    CHECK(gaussian_kl(std1, std1) == Catch::Approx(0.0).margin(1e-12));

    const GaussianBelief shifted(VectorXd::Constant(1, 1.0), MatrixXd::Identity(1, 1));
    CHECK(gaussian_kl(shifted, std1) == Catch::Approx(0.5).margin(1e-10));

    const GaussianBelief wide(VectorXd::Zero(1), 2.0 * MatrixXd::Identity(1, 1));
    CHECK(gaussian_kl(wide, std1) ==
          Catch::Approx(0.5 * (2.0 - 1.0 - std::log(2.0))).margin(1e-10));
}

TEST_CASE("gaussian_kl: non-negative on random PSD pairs (property)") {
    RngStream rng(311);
    for (int trial = 0; trial < 1000; ++trial) {
        const int d = 1 + rng.uniform_int(6);
        const GaussianBelief a = random_belief(d, rng, 0.5 + rng.uniform());
        const GaussianBelief b = random_belief(d, rng, 0.5 + rng.uniform());
        REQUIRE(gaussian_kl(a, b) >= -1e-10);
    }
}

TEST_CASE("gaussian_kl: dimension mismatch is rejected") {
    const GaussianBelief a(VectorXd::Zero(2), MatrixXd::Identity(2, 2));
    const GaussianBelief b(VectorXd::Zero(3), MatrixXd::Identity(3, 3));
    REQUIRE_THROWS_AS(gaussian_kl(a, b), std::invalid_argument);
}

TEST_CASE("posterior update feeds gaussian_kl consistently with the internal fit") {
    RngStream rng(312);
    const int F = 3, C = 2, d = 9;
    const GaussianBelief prior = random_belief(d, rng);
    const ContextVector x = random_context(C, rng);
    const OutcomeLabel o(2);

    detail::LaplaceContext ctx(prior, x);
    const detail::OutcomeFit fit = detail::fit_outcome(ctx, o.array_index(), {});
    REQUIRE(fit.converged);
    const GaussianBelief post = laplace_posterior_update(prior, x, o);
    CHECK(fit.kl_to_prior == Catch::Approx(gaussian_kl(post, prior)).margin(1e-8));
}
