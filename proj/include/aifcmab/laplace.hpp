#pragma once

#include "aifcmab/softmax_model.hpp"

#include <Eigen/LU>

#include <cassert>
#include <vector>

namespace aifcmab {

struct NewtonOptions {
    int max_iter = 100;
    double grad_tol = 1e-8;        // inf-norm of the parameter-space gradient at the mode
    int max_halvings = 30;         // damped line search: step halvings per iteration
    double levenberg_init = 1e-6;  // diagonal boost when a step fails to increase the objective
    double levenberg_factor = 10.0;
    int levenberg_retries = 12;
};

// Laplace fit of the joint g(theta) = q(theta | a) * p(o | theta; x) around
// its mode. precision is A = Sigma^{-1} - H_lik(theta_map); log_evidence is
// the log of the Gaussian-integral normalization constant, i.e. the
// (unnormalized) predicted probability of the fitted outcome.
struct LaplaceResult {
    SoftmaxParams theta_map;
    MatrixXd precision;
    double log_evidence = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

// Shared per-(belief, context) quantities for the Newton solves. The
// likelihood Hessian is -(diag(p) - p p^T) (x) z z^T, a rank-(F-1) form, so
// after whitening with the prior Cholesky factor (u = L^{-1}(theta - mean))
// every Newton system is I + V S V^T with V = L^T U, U = I_F (x) z. Solves
// and determinants then reduce to F x F problems (matrix inversion and
// determinant lemmas); iterates are identical to the dense Newton recursion
// in exact arithmetic.
struct LaplaceContext {
    const GaussianBelief* belief;
    int F;   // classes
    int c1;  // C + 1
    VectorXd z;            // [x; 1]
    MatrixXd V;            // d x F, V = L^T U
    MatrixXd G;            // F x F, G = V^T V = U^T Sigma U
    VectorXd base_logits;  // logits at theta = mean

    LaplaceContext(const GaussianBelief& b, const ContextVector& x) : belief(&b) {
        z = augmented_context(x);
        c1 = static_cast<int>(z.size());
        require(b.dim() % c1 == 0,
                cat("laplace: belief dimension ", b.dim(), " is not a multiple of C+1=", c1));
        F = b.dim() / c1;
        require(F >= 1, "laplace: belief dimension too small for the given context");

        const int d = b.dim();
        const auto& L = b.cov_llt().matrixLLT();  // lower triangle holds L
        V.resize(d, F);
        for (int f = 0; f < F; ++f) {
            // column f of L^T U = L^T(:, block_f) * z; use rows of L.
            V.col(f).setZero();
            for (int j = 0; j < c1; ++j) {
                const int r = f * c1 + j;
                // L^T(:, r) = L(r, :)^T, nonzero only in the first r+1 entries.
                V.col(f).head(r + 1) += z[j] * L.row(r).head(r + 1).transpose();
            }
        }
        G.noalias() = V.transpose() * V;
        G = ((G + G.transpose()) * 0.5).eval();

        base_logits.resize(F);
        for (int f = 0; f < F; ++f)
            base_logits[f] = b.mean().segment(f * c1, c1).dot(z);
    }

    int dim() const { return belief->dim(); }

    VectorXd logits_at(const VectorXd& u) const { return base_logits + V.transpose() * u; }

    SoftmaxParams theta_at(const VectorXd& u) const {
        VectorXd theta = belief->mean();
        theta.noalias() +=
            belief->cov_llt().matrixLLT().triangularView<Eigen::Lower>() * u;
        return SoftmaxParams::unflatten(theta, F, c1 - 1);
    }
};

// One fitted outcome, in whitened coordinates; everything downstream
// (evidence, KL, posterior covariance) is derivable cheaply from these.
struct OutcomeFit {
    VectorXd u_map;        // whitened mode
    VectorXd p_map;        // softmax probabilities at the mode
    double log_lik_map;    // log p(o | theta_map)
    double logdet_ratio;   // log |I_F + S G| = log|A| + log|Sigma|
    double log_evidence;   // log of the Laplace mass of this outcome
    double kl_to_prior;    // KL( N(theta_map, A^{-1}) || prior belief )
    MatrixXd w_sym;        // symmetrized (I + S G)^{-1} S, for posterior covariance
    bool converged = false;
    int iterations = 0;
};

inline MatrixXd shannon_outer(const VectorXd& p) {  // S = diag(p) - p p^T
    MatrixXd s = -(p * p.transpose());
    s.diagonal() += p;
    return s;
}

// log|M| for M = I + S G (eigenvalues >= 1, so det > 0).
inline double logdet_via_lu(const MatrixXd& m) {
    Eigen::PartialPivLU<MatrixXd> lu(m);
    double logdet = 0.0;
    double sign = lu.permutationP().determinant();  // +1/-1
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double piv = lu.matrixLU()(i, i);
        sign *= (piv < 0.0 ? -1.0 : 1.0);
        logdet += std::log(std::abs(piv));
    }
    require(sign > 0.0, "laplace: non-positive determinant in Newton system");
    return logdet;
}

inline OutcomeFit fit_outcome(const LaplaceContext& ctx, int o_idx0, const NewtonOptions& opts) {
    const int F = ctx.F;
    require(o_idx0 >= 0 && o_idx0 < F, cat("laplace: outcome index ", o_idx0 + 1,
                                           " out of range [1, ", F, "]"));
    const auto& L = ctx.belief->cov_llt().matrixLLT();

    OutcomeFit fit;
    VectorXd u = VectorXd::Zero(ctx.dim());
    VectorXd logits = ctx.base_logits;
    VectorXd p = stable_softmax(logits);
    double log_p_o = logits[o_idx0] - log_sum_exp(logits);
    double objective = -0.5 * u.squaredNorm() + log_p_o;

    auto grad_u = [&](const VectorXd& uu, const VectorXd& pp) {
        VectorXd coeff = -pp;
        coeff[o_idx0] += 1.0;
        return (-uu + ctx.V * coeff).eval();
    };
    auto theta_grad_inf_norm = [&](const VectorXd& gu) {
        // parameter-space gradient is L^{-T} grad_u
        return L.triangularView<Eigen::Lower>().transpose().solve(gu).lpNorm<Eigen::Infinity>();
    };

    VectorXd g = grad_u(u, p);
    bool converged = theta_grad_inf_norm(g) < opts.grad_tol;
    int iterations = 0;

    while (!converged && iterations < opts.max_iter) {
        const MatrixXd S = shannon_outer(p);
        double lambda = 0.0;
        bool stepped = false;
        for (int retry = 0; retry <= opts.levenberg_retries && !stepped; ++retry) {
            const double c = 1.0 + lambda;
            // (cI + V S V^T)^{-1} g = (1/c) [ g - V (cI + S G)^{-1} S V^T g ]
            MatrixXd M(F, F);
            M.noalias() = S * ctx.G;
            M.diagonal().array() += c;
            Eigen::PartialPivLU<MatrixXd> lu(M);
            const VectorXd svtg = S * (ctx.V.transpose() * g);
            VectorXd delta = (g - ctx.V * lu.solve(svtg)) / c;
            if (!all_finite(delta) || g.dot(delta) <= 0.0) {
                lambda = (lambda == 0.0) ? opts.levenberg_init : lambda * opts.levenberg_factor;
                continue;
            }
            // damped line search: halve until the objective stops decreasing
            // (non-strict accept; near the mode the true increase drops below
            // double-precision noise while the gradient still contracts)
            double alpha = 1.0;
            for (int h = 0; h <= opts.max_halvings; ++h) {
                const VectorXd u_try = u + alpha * delta;
                const VectorXd logits_try = ctx.logits_at(u_try);
                const double log_p_try = logits_try[o_idx0] - log_sum_exp(logits_try);
                const double obj_try = -0.5 * u_try.squaredNorm() + log_p_try;
                if (obj_try >= objective) {
                    assert(obj_try >= objective);  // monotone ascent across accepted steps
                    u = u_try;
                    logits = logits_try;
                    p = stable_softmax(logits);
                    log_p_o = log_p_try;
                    objective = obj_try;
                    stepped = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!stepped)
                lambda = (lambda == 0.0) ? opts.levenberg_init : lambda * opts.levenberg_factor;
        }
        if (!stepped)
            break;  // no ascent direction made progress; report below
        ++iterations;
        g = grad_u(u, p);
        converged = theta_grad_inf_norm(g) < opts.grad_tol;
    }

    fit.u_map = u;
    fit.p_map = p;
    fit.log_lik_map = log_p_o;
    fit.converged = converged;
    fit.iterations = iterations;

    const MatrixXd S = shannon_outer(p);
    MatrixXd M = MatrixXd::Identity(F, F);
    M.noalias() += S * ctx.G;
    fit.logdet_ratio = logdet_via_lu(M);
    MatrixXd W = M.partialPivLu().solve(S);
    fit.w_sym = ((W + W.transpose()) * 0.5).eval();
    // Determinant lemma: log|A| = logdet_ratio - log|Sigma|. The Gaussian
    // normalizers of the prior and of the Laplace integral then cancel to:
    fit.log_evidence = log_p_o - 0.5 * u.squaredNorm() - 0.5 * fit.logdet_ratio;
    // Whitened closed-form Gaussian KL(posterior || prior):
    //   tr(Sigma_1^{-1} Sigma_0) = d - tr(W G), quad = ||u||^2,
    //   log(|Sigma_1|/|Sigma_0|) = logdet_ratio.
    fit.kl_to_prior =
        0.5 * (u.squaredNorm() - fit.w_sym.cwiseProduct(ctx.G).sum() + fit.logdet_ratio);
    return fit;
}

// A = Sigma^{-1} + (diag(p) - p p^T) (x) z z^T, dense.
inline MatrixXd materialize_precision(const LaplaceContext& ctx, const VectorXd& p_map) {
    const MatrixXd S = shannon_outer(p_map);
    MatrixXd A = ctx.belief->precision();
    const MatrixXd zzT = ctx.z * ctx.z.transpose();
    for (int f = 0; f < ctx.F; ++f)
        for (int g = 0; g < ctx.F; ++g)
            A.block(f * ctx.c1, g * ctx.c1, ctx.c1, ctx.c1) += S(f, g) * zzT;
    return A;
}

inline LaplaceResult package_result(const LaplaceContext& ctx, const OutcomeFit& fit) {
    return LaplaceResult{ctx.theta_at(fit.u_map), materialize_precision(ctx, fit.p_map),
                         fit.log_evidence, fit.converged, fit.iterations};
}

// One Laplace fit per outcome plus the log-sum-exp renormalization; shared
// by predicted_observation and the expected-free-energy assembly.
struct PredictedCore {
    VectorXd probs;
    std::vector<OutcomeFit> fits;
};

inline PredictedCore predicted_core(const LaplaceContext& ctx, const NewtonOptions& opts) {
    PredictedCore core;
    VectorXd log_masses(ctx.F);
    core.fits.reserve(ctx.F);
    for (int f = 0; f < ctx.F; ++f) {
        core.fits.push_back(fit_outcome(ctx, f, opts));
        const OutcomeFit& fit = core.fits.back();
        if (!fit.converged)
            throw std::runtime_error(cat(
                "predicted_observation: Newton did not converge for outcome ", f + 1, " of ",
                ctx.F, " after ", fit.iterations, " iterations"));
        log_masses[f] = fit.log_evidence;
    }
    core.probs = stable_softmax(log_masses);
    return core;
}

}  // namespace detail

// Newton-method mode search for g(theta) = q(theta | a) p(o | theta; x).
// Non-convergence is reported through the converged flag, not an exception.
inline LaplaceResult find_map(const GaussianBelief& belief, const ContextVector& x,
                              OutcomeLabel o, const NewtonOptions& opts = {}) {
    detail::LaplaceContext ctx(belief, x);
    require(o.index <= ctx.F,
            detail::cat("find_map: label ", o.index, " exceeds F=", ctx.F));
    return detail::package_result(ctx, detail::fit_outcome(ctx, o.array_index(), opts));
}

// log g(theta_map) + (d/2) log 2pi - (1/2) log|A|, with log|A| from a
// Cholesky factorization of the stored precision. g includes the full
// normalized Gaussian prior density, so the value approximates
// log integral q(theta|a) p(o|theta) dtheta = log q(o|a) directly.
inline double laplace_log_normalizer(const LaplaceResult& result, const GaussianBelief& belief,
                                     const ContextVector& x, OutcomeLabel o) {
    require(result.converged, "laplace_log_normalizer: result did not converge");
    const int d = belief.dim();
    Eigen::LLT<MatrixXd> llt(result.precision);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error(detail::cat(
            "laplace_log_normalizer: precision Cholesky failed for outcome ", o.index));
    double log_det_a = 0.0;
    for (int i = 0; i < d; ++i)
        log_det_a += 2.0 * std::log(llt.matrixLLT()(i, i));
    const double log_g = belief.log_density(result.theta_map.flatten()) +
                         log_softmax_likelihood(result.theta_map, x)[o.array_index()];
    return log_g + 0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det_a;
}

struct PredictedObservation {
    VectorXd probs;                          // renormalized q(o | a), sums to 1 exactly
    std::vector<LaplaceResult> per_outcome;  // Laplace posterior per outcome, for reuse
};

// Predicted observation distribution: one Laplace fit per outcome, then a
// log-sum-exp renormalization across outcomes.
inline PredictedObservation predicted_observation(const GaussianBelief& belief,
                                                  const ContextVector& x,
                                                  const NewtonOptions& opts = {}) {
    detail::LaplaceContext ctx(belief, x);
    detail::PredictedCore core = detail::predicted_core(ctx, opts);
    PredictedObservation out;
    out.probs = std::move(core.probs);
    out.per_outcome.reserve(ctx.F);
    for (const auto& fit : core.fits)
        out.per_outcome.push_back(detail::package_result(ctx, fit));
    return out;
}

// Measurement update: Gaussian with mean theta_map and covariance A^{-1}
// (symmetrized). Serves as the next instance's prior for that option.
inline GaussianBelief laplace_posterior_update(const GaussianBelief& belief,
                                               const ContextVector& x, OutcomeLabel o,
                                               const NewtonOptions& opts = {}) {
    detail::LaplaceContext ctx(belief, x);
    require(o.index <= ctx.F,
            detail::cat("laplace_posterior_update: label ", o.index, " exceeds F=", ctx.F));
    detail::OutcomeFit fit = detail::fit_outcome(ctx, o.array_index(), opts);
    if (!fit.converged)
        throw std::runtime_error(detail::cat(
            "laplace_posterior_update: Newton did not converge for outcome ", o.index,
            " after ", fit.iterations, " iterations"));
    // A^{-1} = Sigma - (Sigma U) W (Sigma U)^T by the Woodbury identity.
    const int d = belief.dim();
    MatrixXd sigma_u(d, ctx.F);
    for (int f = 0; f < ctx.F; ++f)
        sigma_u.col(f).noalias() = belief.covariance().middleCols(f * ctx.c1, ctx.c1) * ctx.z;
    MatrixXd post_cov = belief.covariance();
    post_cov.noalias() -= sigma_u * fit.w_sym * sigma_u.transpose();
    return GaussianBelief(ctx.theta_at(fit.u_map).flatten(), std::move(post_cov));
}

// Closed-form KL( q_post || q_prior ) between Gaussians of equal dimension:
//   1/2 [ tr(S1^{-1} S0) + (m1-m0)^T S1^{-1} (m1-m0) - d + log(|S1|/|S0|) ].
// All determinants via the beliefs' cached Cholesky factors.
inline double gaussian_kl(const GaussianBelief& q_post, const GaussianBelief& q_prior) {
    require(q_post.dim() == q_prior.dim(),
            detail::cat("gaussian_kl: dimension mismatch ", q_post.dim(), " vs ",
                        q_prior.dim()));
    const int d = q_post.dim();
    const auto& l1 = q_prior.cov_llt().matrixLLT();
    const MatrixXd l0 =
        q_post.cov_llt().matrixLLT().triangularView<Eigen::Lower>().toDenseMatrix();
    const MatrixXd m = l1.triangularView<Eigen::Lower>().solve(l0);
    const double trace_term = m.squaredNorm();
    const VectorXd w =
        l1.triangularView<Eigen::Lower>().solve(q_post.mean() - q_prior.mean());
    return 0.5 * (trace_term + w.squaredNorm() - d + q_prior.log_det_cov() -
                  q_post.log_det_cov());
}

}  // namespace aifcmab
