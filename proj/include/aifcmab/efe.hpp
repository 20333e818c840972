#pragma once

#include "aifcmab/laplace.hpp"

#include <limits>
#include <string>
#include <vector>

namespace aifcmab {

struct EfeOutcomeTerm {
    OutcomeLabel outcome;
    double predicted_prob;  // q(o | a)
    double extrinsic;       // q(o|a) log( q(o|a) / p_pr(o) )
    double epistemic;       // q(o|a) KL( q(theta|o,a) || q(theta|a) ), >= 0
};

struct EfeBreakdown {
    std::vector<EfeOutcomeTerm> per_outcome;
    double total = 0.0;  // sum_o (extrinsic - epistemic); lower is better
};

// Expected free energy of one option: a predicted-observation pass (one
// Laplace fit per outcome) feeding the extrinsic KL-to-preference term and
// the epistemic expected-information-gain term.
inline EfeBreakdown expected_free_energy(const GaussianBelief& belief, const ContextVector& x,
                                         const PriorPreference& pref,
                                         const NewtonOptions& opts = {}) {
    detail::LaplaceContext ctx(belief, x);
    require(pref.n_labels() == ctx.F,
            detail::cat("expected_free_energy: preference has ", pref.n_labels(),
                        " labels, model has F=", ctx.F));
    const detail::PredictedCore core = detail::predicted_core(ctx, opts);
    EfeBreakdown out;
    out.per_outcome.reserve(ctx.F);
    double total = 0.0;
    for (int f = 0; f < ctx.F; ++f) {
        const double q = core.probs[f];
        const double extrinsic = q * std::log(q / pref.probs()[f]);
        // Same closed-form Gaussian KL as gaussian_kl(posterior_f, belief),
        // evaluated in whitened coordinates.
        const double epistemic = q * core.fits[f].kl_to_prior;
        out.per_outcome.push_back(EfeOutcomeTerm{OutcomeLabel(f + 1), q, extrinsic, epistemic});
        total += extrinsic - epistemic;
    }
    out.total = total;
    return out;
}

// Softmax policy over negative precision-weighted EFE values.
struct PolicyDistribution {
    VectorXd probs;  // positive, sums to 1 up to rounding
    double gamma;
};

inline PolicyDistribution policy_from_efe(const VectorXd& efe_values, double gamma) {
    require(gamma > 0.0, detail::cat("policy_from_efe: gamma must be positive, got ", gamma));
    require(efe_values.size() >= 1, "policy_from_efe: empty EFE vector");
    for (Eigen::Index k = 0; k < efe_values.size(); ++k)
        if (!std::isfinite(efe_values[k]))
            throw std::invalid_argument(
                detail::cat("policy_from_efe: non-finite EFE for option ", k));
    return PolicyDistribution{stable_softmax(-gamma * efe_values), gamma};
}

// Inverse-CDF categorical draw over the fixed option ordering.
inline int select_option(const PolicyDistribution& policy, RngStream& rng) {
    return rng.categorical(policy.probs);
}

struct AifStepResult {
    int selected = 0;
    std::vector<EfeBreakdown> per_option;  // failed options carry total = +inf
    std::vector<int> failed_options;
    std::vector<std::string> failure_messages;
};

// One decision instance: EFE for every option, precision-weighted softmax
// policy, categorical sample. An option whose inference fails is assigned
// +inf EFE (zero selection probability this step) and reported back.
inline AifStepResult aif_step(const BeliefList& beliefs,
                              const std::vector<ContextVector>& contexts,
                              const PriorPreference& pref, double gamma, RngStream& rng,
                              const NewtonOptions& opts = {}) {
    const int K = static_cast<int>(beliefs.size());
    require(K >= 1, "aif_step: need at least one option");
    require(contexts.size() == beliefs.size(),
            detail::cat("aif_step: ", beliefs.size(), " beliefs vs ", contexts.size(),
                        " contexts"));
    require(gamma > 0.0, "aif_step: gamma must be positive");

    AifStepResult out;
    out.per_option.reserve(K);
    VectorXd efe(K);
    for (int k = 0; k < K; ++k) {
        try {
            out.per_option.push_back(expected_free_energy(*beliefs[k], contexts[k], pref, opts));
            efe[k] = out.per_option.back().total;
        } catch (const std::exception& e) {
            out.per_option.push_back(
                EfeBreakdown{{}, std::numeric_limits<double>::infinity()});
            efe[k] = std::numeric_limits<double>::infinity();
            out.failed_options.push_back(k);
            out.failure_messages.push_back(detail::cat("option ", k, ": ", e.what()));
        }
    }

    const int n_failed = static_cast<int>(out.failed_options.size());
    if (n_failed == K)
        throw std::runtime_error(
            detail::cat("aif_step: EFE computation failed for all ", K, " options; first: ",
                        out.failure_messages.front()));

    VectorXd probs;
    if (n_failed == 0) {
        probs = policy_from_efe(efe, gamma).probs;
    } else {
        // Softmax over the surviving options; failed ones get zero mass.
        VectorXd live(K - n_failed);
        int j = 0;
        for (int k = 0; k < K; ++k)
            if (std::isfinite(efe[k]))
                live[j++] = efe[k];
        const VectorXd live_probs = stable_softmax(-gamma * live);
        probs = VectorXd::Zero(K);
        j = 0;
        for (int k = 0; k < K; ++k)
            if (std::isfinite(efe[k]))
                probs[k] = live_probs[j++];
    }
    out.selected = rng.categorical(probs);
    return out;
}

}  // namespace aifcmab
