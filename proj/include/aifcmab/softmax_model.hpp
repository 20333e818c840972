#pragma once

#include "aifcmab/types.hpp"

namespace aifcmab {

namespace detail {

inline void check_dims(const SoftmaxParams& theta, const ContextVector& x, const char* op) {
    require(theta.context_dim() == x.dim(),
            cat(op, ": params expect context dimension C=", theta.context_dim(),
                ", got context of length ", x.dim()));
}

// z = [x; 1], the per-class regressor.
inline VectorXd augmented_context(const ContextVector& x) {
    VectorXd z(x.dim() + 1);
    z.head(x.dim()) = x.values;
    z[x.dim()] = 1.0;
    return z;
}

inline VectorXd logits(const SoftmaxParams& theta, const ContextVector& x) {
    return theta.weights() * x.values + theta.biases();
}

}  // namespace detail

// p(o = f | theta; x) for every f, via max-subtracted log-sum-exp.
inline VectorXd softmax_likelihood(const SoftmaxParams& theta, const ContextVector& x) {
    detail::check_dims(theta, x, "softmax_likelihood");
    return stable_softmax(detail::logits(theta, x));
}

inline VectorXd log_softmax_likelihood(const SoftmaxParams& theta, const ContextVector& x) {
    detail::check_dims(theta, x, "log_softmax_likelihood");
    const VectorXd l = detail::logits(theta, x);
    return l.array() - log_sum_exp(l);
}

// Gradient of log p(o | theta; x) w.r.t. the flattened theta.
// Class-f block equals (1{f=o} - p_f) * [x; 1].
inline VectorXd log_likelihood_gradient(const SoftmaxParams& theta, const ContextVector& x,
                                        OutcomeLabel o) {
    detail::check_dims(theta, x, "log_likelihood_gradient");
    require(o.index <= theta.n_classes(),
            detail::cat("log_likelihood_gradient: label ", o.index, " exceeds F=",
                        theta.n_classes()));
    const VectorXd p = softmax_likelihood(theta, x);
    const VectorXd z = detail::augmented_context(x);
    const int c1 = theta.context_dim() + 1;
    VectorXd grad(theta.flat_dim());
    for (int f = 0; f < theta.n_classes(); ++f) {
        const double coeff = (f == o.array_index() ? 1.0 : 0.0) - p[f];
        grad.segment(f * c1, c1) = coeff * z;
    }
    return grad;
}

// Hessian of log p(o | theta; x); independent of o.
// Block (f,g) equals -(diag(p) - p p^T)_{fg} * z z^T; negative semidefinite
// and exactly symmetric as constructed.
inline MatrixXd log_likelihood_hessian(const SoftmaxParams& theta, const ContextVector& x) {
    detail::check_dims(theta, x, "log_likelihood_hessian");
    const VectorXd p = softmax_likelihood(theta, x);
    const VectorXd z = detail::augmented_context(x);
    const int c1 = theta.context_dim() + 1;
    const int F = theta.n_classes();
    const MatrixXd zzT = z * z.transpose();
    MatrixXd hess(theta.flat_dim(), theta.flat_dim());
    for (int f = 0; f < F; ++f) {
        for (int g = f; g < F; ++g) {
            const double s_fg = (f == g ? p[f] : 0.0) - p[f] * p[g];
            hess.block(f * c1, g * c1, c1, c1) = -s_fg * zzT;
            if (g != f)
                hess.block(g * c1, f * c1, c1, c1) = hess.block(f * c1, g * c1, c1, c1);
        }
    }
    return hess;
}

}  // namespace aifcmab
