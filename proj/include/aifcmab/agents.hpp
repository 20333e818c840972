#pragma once

#include "aifcmab/environment.hpp"

namespace aifcmab {

// Count table plus (for Bayesian agents) per-option beliefs. States are
// values: record_outcome returns a new state and leaves the old one intact.
// Beliefs are shared immutably, so copies are cheap.
struct AgentState {
    BeliefList beliefs;                // empty for count-only agents
    Eigen::MatrixXi outcome_counts;    // K x F
    Eigen::VectorXi selection_counts;  // N_t(k)
    long t = 0;
    long inference_failures = 0;

    AgentState(int n_options, int n_labels)
        : outcome_counts(Eigen::MatrixXi::Zero(n_options, n_labels)),
          selection_counts(Eigen::VectorXi::Zero(n_options)) {
        require(n_options >= 1 && n_labels >= 1, "AgentState: K and F must be >= 1");
    }

    int n_options() const { return static_cast<int>(selection_counts.size()); }
    int n_labels() const { return static_cast<int>(outcome_counts.cols()); }

    // Empirical f_p-rate, recomputed from the full outcome table at
    // selection time: a preference switch instantly redefines every
    // option's rate without losing history. Unselected options rate 0.
    double empirical_rate(int k, OutcomeLabel f_p) const {
        const int n = selection_counts[k];
        return n > 0 ? static_cast<double>(outcome_counts(k, f_p.array_index())) / n : 0.0;
    }
};

enum class AgentAlgo {
    Oracle,
    EpsilonGreedy,
    RewardSoftmax,
    Ucb,
    ThompsonSampling,
    ActiveInference,
};

// Tagged selection method with its single hyperparameter.
class AgentKind {
public:
    static AgentKind oracle() { return AgentKind(AgentAlgo::Oracle, 0.0); }
    static AgentKind epsilon_greedy(double epsilon) {
        require(epsilon > 0.0 && epsilon < 1.0,
                detail::cat("epsilon_greedy: epsilon must lie in (0,1), got ", epsilon));
        return AgentKind(AgentAlgo::EpsilonGreedy, epsilon);
    }
    static AgentKind reward_softmax(double tau) {
        require(tau > 0.0, detail::cat("reward_softmax: tau must be positive, got ", tau));
        return AgentKind(AgentAlgo::RewardSoftmax, tau);
    }
    static AgentKind ucb(double c) {
        require(c > 0.0, detail::cat("ucb: exploration parameter must be positive, got ", c));
        return AgentKind(AgentAlgo::Ucb, c);
    }
    static AgentKind thompson() { return AgentKind(AgentAlgo::ThompsonSampling, 0.0); }
    static AgentKind active_inference(double gamma) {
        require(gamma > 0.0, detail::cat("active_inference: gamma must be positive, got ", gamma));
        return AgentKind(AgentAlgo::ActiveInference, gamma);
    }

    AgentAlgo algo() const { return algo_; }
    double param() const { return param_; }
    bool needs_beliefs() const {
        return algo_ == AgentAlgo::ThompsonSampling || algo_ == AgentAlgo::ActiveInference;
    }
    std::string name() const {
        switch (algo_) {
            case AgentAlgo::Oracle: return "oracle";
            case AgentAlgo::EpsilonGreedy: return "epsilon_greedy";
            case AgentAlgo::RewardSoftmax: return "softmax";
            case AgentAlgo::Ucb: return "ucb";
            case AgentAlgo::ThompsonSampling: return "thompson";
            case AgentAlgo::ActiveInference: return "aif";
        }
        return "unknown";
    }

private:
    AgentKind(AgentAlgo algo, double param) : algo_(algo), param_(param) {}
    AgentAlgo algo_;
    double param_;
};

// With probability epsilon a uniform random option, otherwise the best
// empirical f_p-rate. Ties break to the lowest index.
inline int epsilon_greedy_select(const AgentState& state, OutcomeLabel f_p, double epsilon,
                                 RngStream& rng) {
    require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon_greedy_select: epsilon outside [0,1]");
    if (rng.uniform() < epsilon)
        return rng.uniform_int(state.n_options());
    int best = 0;
    double best_rate = -1.0;
    for (int k = 0; k < state.n_options(); ++k) {
        const double r = state.empirical_rate(k, f_p);
        if (r > best_rate) {
            best_rate = r;
            best = k;
        }
    }
    return best;
}

// Samples from probs proportional to exp(rate_k / tau); max-subtracted.
// Uses only the average reward, no context and no preference distribution.
inline int reward_softmax_select(const AgentState& state, OutcomeLabel f_p, double tau,
                                 RngStream& rng) {
    require(tau > 0.0, "reward_softmax_select: tau must be positive");
    VectorXd scaled(state.n_options());
    for (int k = 0; k < state.n_options(); ++k)
        scaled[k] = state.empirical_rate(k, f_p) / tau;
    return rng.categorical(stable_softmax(scaled));
}

// Never-selected options first (by index), then argmax of
// rate_k + c sqrt(ln t / N_t(k)). Deterministic.
inline int ucb_select(const AgentState& state, OutcomeLabel f_p, double c) {
    require(c > 0.0, "ucb_select: exploration parameter must be positive");
    for (int k = 0; k < state.n_options(); ++k)
        if (state.selection_counts[k] == 0)
            return k;
    const double log_t = std::log(static_cast<double>(state.t));
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < state.n_options(); ++k) {
        const double score = state.empirical_rate(k, f_p) +
                             c * std::sqrt(log_t / state.selection_counts[k]);
        if (score > best_score) {
            best_score = score;
            best = k;
        }
    }
    return best;
}

// One posterior draw per option; argmax of the drawn f_p-likelihood at
// each option's current context. Ties break to the lowest index.
inline int thompson_select(const AgentState& state, const std::vector<ContextVector>& contexts,
                           OutcomeLabel f_p, RngStream& rng) {
    require(state.beliefs.size() == static_cast<std::size_t>(state.n_options()),
            "thompson_select: agent state has no beliefs");
    require(contexts.size() == state.beliefs.size(),
            detail::cat("thompson_select: ", contexts.size(), " contexts vs ",
                        state.beliefs.size(), " beliefs"));
    int best = 0;
    double best_p = -1.0;
    for (int k = 0; k < state.n_options(); ++k) {
        const VectorXd draw = state.beliefs[k]->sample(rng);
        const SoftmaxParams theta =
            SoftmaxParams::unflatten(draw, state.n_labels(), contexts[k].dim());
        const double p = softmax_likelihood(theta, contexts[k])[f_p.array_index()];
        if (p > best_p) {
            best_p = p;
            best = k;
        }
    }
    return best;
}

// Best-fit optimal selection using the ground-truth parameters at the
// realized per-instance contexts (simulation only).
inline int oracle_select(const Environment& env, const std::vector<ContextVector>& contexts,
                         OutcomeLabel f_p) {
    require(contexts.size() == static_cast<std::size_t>(env.n_options()),
            detail::cat("oracle_select: ", contexts.size(), " contexts for ", env.n_options(),
                        " options"));
    require(f_p.index <= env.n_labels(), "oracle_select: preferred label out of range");
    int best = 0;
    double best_p = -1.0;
    for (int k = 0; k < env.n_options(); ++k) {
        const double p =
            softmax_likelihood(env.true_params(k), contexts[k])[f_p.array_index()];
        if (p > best_p) {
            best_p = p;
            best = k;
        }
    }
    return best;
}

// Measurement update: bump the count table; optionally run the Laplace
// belief update for the probed option. If the belief update fails the
// previous belief is kept, counts still advance and the event is counted.
inline AgentState record_outcome(const AgentState& state, int k, OutcomeLabel o,
                                 const ContextVector& x, bool update_belief,
                                 const NewtonOptions& opts = {}) {
    require(k >= 0 && k < state.n_options(),
            detail::cat("record_outcome: option ", k, " out of range [0, ", state.n_options(),
                        ")"));
    require(o.index <= state.n_labels(),
            detail::cat("record_outcome: label ", o.index, " exceeds F=", state.n_labels()));
    AgentState next = state;
    next.selection_counts[k] += 1;
    next.outcome_counts(k, o.array_index()) += 1;
    next.t += 1;
    if (update_belief) {
        require(state.beliefs.size() == static_cast<std::size_t>(state.n_options()),
                "record_outcome: update_belief requested but state has no beliefs");
        try {
            next.beliefs[k] = std::make_shared<const GaussianBelief>(
                laplace_posterior_update(*state.beliefs[k], x, o, opts));
        } catch (const std::exception&) {
            next.inference_failures += 1;  // belief kept, counts already updated
        }
    }
    return next;
}

}  // namespace aifcmab
