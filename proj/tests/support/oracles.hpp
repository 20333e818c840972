#pragma once

// Test-only oracles, kept independent of the library code paths they check:
// derivatives by central finite differences of the primal likelihood,
// integrals by plain Monte Carlo with a locally-written Gaussian sampler,
// modes by small-step gradient ascent with locally-written gradients.

#include "aifcmab/softmax_model.hpp"

#include <Eigen/Cholesky>

#include <functional>
#include <vector>

namespace oracles {

using aifcmab::ContextVector;
using aifcmab::GaussianBelief;
using aifcmab::MatrixXd;
using aifcmab::OutcomeLabel;
using aifcmab::RngStream;
using aifcmab::SoftmaxParams;
using aifcmab::VectorXd;

inline double log_lik_at(const VectorXd& flat, int F, int C, const ContextVector& x,
                         OutcomeLabel o) {
    const SoftmaxParams theta = SoftmaxParams::unflatten(flat, F, C);
    return aifcmab::log_softmax_likelihood(theta, x)[o.array_index()];
}

inline VectorXd central_diff_gradient(const std::function<double(const VectorXd&)>& f,
                                      const VectorXd& at, double h) {
    VectorXd g(at.size());
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        VectorXd hi = at, lo = at;
        hi[i] += h;
        lo[i] -= h;
        g[i] = (f(hi) - f(lo)) / (2.0 * h);
    }
    return g;
}

inline MatrixXd central_diff_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                                      const VectorXd& at, double h) {
    const VectorXd f0 = f(at);
    MatrixXd j(f0.size(), at.size());
    for (Eigen::Index i = 0; i < at.size(); ++i) {
        VectorXd hi = at, lo = at;
        hi[i] += h;
        lo[i] -= h;
        j.col(i) = (f(hi) - f(lo)) / (2.0 * h);
    }
    return j;
}

// Local multivariate-normal sampler (own Cholesky, own draw order).
class GaussianSampler {
public:
    GaussianSampler(const VectorXd& mean, const MatrixXd& cov) : mean_(mean) {
        Eigen::LLT<MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("oracle GaussianSampler: covariance not PD");
        chol_ = llt.matrixL();
    }
    VectorXd draw(RngStream& rng) const {
        VectorXd z(mean_.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
            z[i] = rng.normal();
        return mean_ + chol_ * z;
    }

private:
    VectorXd mean_;
    MatrixXd chol_;
};

// Monte Carlo estimate of q(o | a) = E_{theta ~ belief}[ p(o | theta; x) ],
// all outcomes at once.
inline VectorXd mc_predicted_observation(const VectorXd& mean, const MatrixXd& cov, int F,
                                         const ContextVector& x, long n_samples,
                                         RngStream& rng) {
    GaussianSampler sampler(mean, cov);
    VectorXd acc = VectorXd::Zero(F);
    for (long i = 0; i < n_samples; ++i) {
        const SoftmaxParams theta = SoftmaxParams::unflatten(sampler.draw(rng), F, x.dim());
        acc += aifcmab::softmax_likelihood(theta, x);
    }
    return acc / static_cast<double>(n_samples);
}

// Gradient of log N(theta; mean, cov) + sum_i log p(o_i | theta; x_i),
// written out locally (class-f block of the likelihood term is
// (1{f=o} - p_f) z).
inline VectorXd joint_log_density_gradient(const VectorXd& flat, const VectorXd& mean,
                                           const MatrixXd& cov, int F,
                                           const std::vector<ContextVector>& xs,
                                           const std::vector<OutcomeLabel>& os) {
    Eigen::LLT<MatrixXd> llt(cov);
    VectorXd g = -llt.solve(flat - mean);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const int C = xs[i].dim();
        const SoftmaxParams theta = SoftmaxParams::unflatten(flat, F, C);
        const VectorXd p = aifcmab::softmax_likelihood(theta, xs[i]);
        VectorXd z(C + 1);
        z.head(C) = xs[i].values;
        z[C] = 1.0;
        for (int f = 0; f < F; ++f) {
            const double coeff = (f == os[i].array_index() ? 1.0 : 0.0) - p[f];
            g.segment(f * (C + 1), C + 1) += coeff * z;
        }
    }
    return g;
}

// Small-step gradient ascent to the joint mode.
inline VectorXd gradient_ascent_map(const VectorXd& mean, const MatrixXd& cov, int F,
                                    const std::vector<ContextVector>& xs,
                                    const std::vector<OutcomeLabel>& os, long steps,
                                    double step_size) {
    VectorXd theta = mean;
    for (long i = 0; i < steps; ++i)
        theta += step_size * joint_log_density_gradient(theta, mean, cov, F, xs, os);
    return theta;
}

// One-sided p-value of the paired t-test for H1: mean(diff) < 0.
// Regularized incomplete beta via Lentz's continued fraction.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0)
        return 0.0;
    if (x >= 1.0)
        return 1.0;
    const double ln_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    const double front = std::exp(a * std::log(x) + b * std::log(1.0 - x) - ln_beta);
    const bool swap = x > (a + 1.0) / (a + b + 2.0);
    if (swap)
        return 1.0 - incomplete_beta(b, a, 1.0 - x);
    double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < 1e-300)
        d = 1e-300;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 400; ++m) {
        const double m2 = 2.0 * m;
        double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if (std::abs(d) < 1e-300)
            d = 1e-300;
        c = 1.0 + num / c;
        if (std::abs(c) < 1e-300)
            c = 1e-300;
        d = 1.0 / d;
        h *= d * c;
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if (std::abs(d) < 1e-300)
            d = 1e-300;
        c = 1.0 + num / c;
        if (std::abs(c) < 1e-300)
            c = 1e-300;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-12)
            break;
    }
    return front * h / a;
}

inline double student_t_cdf(double t, double dof) {
    const double x = dof / (dof + t * t);
    const double tail = 0.5 * incomplete_beta(dof / 2.0, 0.5, x);
    return t >= 0.0 ? 1.0 - tail : tail;
}

// p-value for H1: E[diff] < 0 given paired differences.
inline double paired_t_pvalue_less(const std::vector<double>& diffs) {
    const long n = static_cast<long>(diffs.size());
    if (n < 2)
        return 1.0;
    double mean = 0.0;
    for (double v : diffs)
        mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : diffs)
        ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1));
    if (sd == 0.0)
        return mean < 0.0 ? 0.0 : 1.0;
    const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
    return student_t_cdf(t, static_cast<double>(n - 1));
}

}  // namespace oracles
