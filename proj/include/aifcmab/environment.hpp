#pragma once

#include "aifcmab/efe.hpp"

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace aifcmab {

struct EnvironmentSpec {
    int K = 1;
    int F = 2;
    int C = 1;
    int pool_size = 50000;     // a 200 x 250 pixel site
    double param_scale = 1.5;  // std-dev of the ground-truth parameter entries
    std::uint64_t seed = 0;
};

// Ground-truth bandit environment: K options, hidden softmax parameters per
// option, a finite context pool per option (sampled with replacement), and
// the pool-averaged label probabilities psi used for regret scoring.
class Environment {
public:
    Environment(std::vector<SoftmaxParams> true_params,
                std::vector<std::vector<ContextVector>> context_pools, std::uint64_t seed)
        : params_(std::move(true_params)), pools_(std::move(context_pools)), seed_(seed) {
        require(!params_.empty(), "Environment: need at least one option");
        require(pools_.size() == params_.size(),
                detail::cat("Environment: ", params_.size(), " parameter blocks vs ",
                            pools_.size(), " context pools"));
        const int F = params_[0].n_classes();
        const int C = params_[0].context_dim();
        for (std::size_t k = 0; k < params_.size(); ++k) {
            require(params_[k].n_classes() == F && params_[k].context_dim() == C,
                    detail::cat("Environment: option ", k, " has inconsistent dimensions"));
            require(!pools_[k].empty(), detail::cat("Environment: option ", k, " pool empty"));
            for (const auto& x : pools_[k])
                require(x.dim() == C, detail::cat("Environment: option ", k,
                                                  " pool context dimension ", x.dim(),
                                                  " != C=", C));
        }
        psi_.resize(static_cast<Eigen::Index>(params_.size()), F);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            VectorXd acc = VectorXd::Zero(F);
            for (const auto& x : pools_[k])
                acc += softmax_likelihood(params_[k], x);
            psi_.row(static_cast<Eigen::Index>(k)) =
                (acc / static_cast<double>(pools_[k].size())).transpose();
        }
    }

    int n_options() const { return static_cast<int>(params_.size()); }
    int n_labels() const { return params_[0].n_classes(); }
    int context_dim() const { return params_[0].context_dim(); }
    std::uint64_t seed() const { return seed_; }

    const SoftmaxParams& true_params(int k) const { return params_.at(k); }
    const std::vector<ContextVector>& context_pool(int k) const { return pools_.at(k); }
    const MatrixXd& psi_table() const { return psi_; }

    double psi(int k, OutcomeLabel f) const { return psi_(k, f.array_index()); }
    double psi_star(OutcomeLabel f) const { return psi_.col(f.array_index()).maxCoeff(); }
    int best_option(OutcomeLabel f) const {
        Eigen::Index k = 0;
        psi_.col(f.array_index()).maxCoeff(&k);
        return static_cast<int>(k);
    }

private:
    std::vector<SoftmaxParams> params_;
    std::vector<std::vector<ContextVector>> pools_;
    MatrixXd psi_;
    std::uint64_t seed_;
};

namespace detail {
// Key tags for the environment's deterministic draws.
inline constexpr std::uint64_t kEnvParamsTag = 0xE1;
inline constexpr std::uint64_t kEnvPoolTag = 0xE2;
}  // namespace detail

// Synthetic ground truth: parameter entries i.i.d. normal(0, param_scale^2),
// per-option context pools from an option-specific normal with randomized
// mean and unit covariance. Fully deterministic given the seed.
inline Environment generate_environment(const EnvironmentSpec& spec) {
    require(spec.K >= 1 && spec.F >= 1 && spec.C >= 1 && spec.pool_size >= 1,
            detail::cat("generate_environment: K, F, C, pool_size must all be >= 1 (got K=",
                        spec.K, " F=", spec.F, " C=", spec.C, " pool_size=", spec.pool_size,
                        ")"));
    require(spec.param_scale >= 0.0, "generate_environment: param_scale must be >= 0");

    std::vector<SoftmaxParams> params;
    params.reserve(spec.K);
    for (int k = 0; k < spec.K; ++k) {
        RngStream rng = keyed_stream(spec.seed, {detail::kEnvParamsTag, std::uint64_t(k)});
        MatrixXd w(spec.F, spec.C);
        VectorXd b(spec.F);
        for (int f = 0; f < spec.F; ++f) {
            for (int c = 0; c < spec.C; ++c)
                w(f, c) = spec.param_scale * rng.normal();
            b[f] = spec.param_scale * rng.normal();
        }
        params.emplace_back(std::move(w), std::move(b));
    }

    std::vector<std::vector<ContextVector>> pools;
    pools.reserve(spec.K);
    for (int k = 0; k < spec.K; ++k) {
        RngStream rng = keyed_stream(spec.seed, {detail::kEnvPoolTag, std::uint64_t(k)});
        VectorXd mean(spec.C);
        for (int c = 0; c < spec.C; ++c)
            mean[c] = rng.normal();
        std::vector<ContextVector> pool;
        pool.reserve(spec.pool_size);
        for (int i = 0; i < spec.pool_size; ++i) {
            VectorXd x(spec.C);
            for (int c = 0; c < spec.C; ++c)
                x[c] = mean[c] + rng.normal();
            pool.emplace_back(std::move(x));
        }
        pools.push_back(std::move(pool));
    }
    return Environment(std::move(params), std::move(pools), spec.seed);
}

// Uniform draw from option k's context pool.
inline ContextVector sample_context(const Environment& env, int k, RngStream& rng) {
    require(k >= 0 && k < env.n_options(),
            detail::cat("sample_context: option ", k, " out of range [0, ", env.n_options(),
                        ")"));
    const auto& pool = env.context_pool(k);
    return pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
}

// Categorical draw from the ground-truth likelihood at context x.
inline OutcomeLabel sample_outcome(const Environment& env, int k, const ContextVector& x,
                                   RngStream& rng) {
    require(k >= 0 && k < env.n_options(),
            detail::cat("sample_outcome: option ", k, " out of range [0, ", env.n_options(),
                        ")"));
    return OutcomeLabel(rng.categorical(softmax_likelihood(env.true_params(k), x)) + 1);
}

// Unit reward iff the preferred label was observed.
inline int reward(OutcomeLabel o, OutcomeLabel f_p) { return o == f_p ? 1 : 0; }

// psi*(f_p) - psi_k(f_p); summing over instances reproduces the closed
// cumulative-regret form T psi* - sum_k N_T(k) psi_k in the stationary case
// and generalizes it per-segment under a preference schedule.
inline double instantaneous_regret(const Environment& env, int k, OutcomeLabel f_p) {
    require(k >= 0 && k < env.n_options(),
            detail::cat("instantaneous_regret: option ", k, " out of range"));
    require(f_p.index <= env.n_labels(),
            detail::cat("instantaneous_regret: label ", f_p.index, " exceeds F=",
                        env.n_labels()));
    return env.psi_star(f_p) - env.psi(k, f_p);
}

struct PreferenceSegment {
    long start;  // first instance index covered by this segment
    PriorPreference preference;
    OutcomeLabel preferred;
};

// Ordered segments covering [0, horizon) without gaps or overlaps.
class PreferenceSchedule {
public:
    PreferenceSchedule(std::vector<PreferenceSegment> segments, long horizon)
        : segments_(std::move(segments)), horizon_(horizon) {
        require(horizon_ >= 1, "PreferenceSchedule: horizon must be >= 1");
        require(!segments_.empty(), "PreferenceSchedule: need at least one segment");
        require(segments_.front().start == 0, "PreferenceSchedule: first segment must start at 0");
        for (std::size_t i = 1; i < segments_.size(); ++i)
            require(segments_[i].start > segments_[i - 1].start,
                    "PreferenceSchedule: segment starts must be strictly increasing");
        require(segments_.back().start < horizon_,
                "PreferenceSchedule: last segment starts beyond the horizon");
    }

    static PreferenceSchedule stationary(PriorPreference pref, OutcomeLabel f_p, long horizon) {
        std::vector<PreferenceSegment> segs;
        segs.push_back(PreferenceSegment{0, std::move(pref), f_p});
        return PreferenceSchedule(std::move(segs), horizon);
    }

    // Preferred label cycles through `labels`, switching every `period`
    // instances; each segment's preference puts `mass` on its label.
    static PreferenceSchedule periodic(const std::vector<OutcomeLabel>& labels, long period,
                                       int n_labels, double mass, long horizon) {
        require(!labels.empty(), "PreferenceSchedule::periodic: empty label cycle");
        require(period >= 1, "PreferenceSchedule::periodic: period must be >= 1");
        std::vector<PreferenceSegment> segs;
        std::size_t i = 0;
        for (long start = 0; start < horizon; start += period, ++i) {
            const OutcomeLabel f_p = labels[i % labels.size()];
            segs.push_back(
                PreferenceSegment{start, PriorPreference::concentrated(n_labels, f_p, mass), f_p});
        }
        return PreferenceSchedule(std::move(segs), horizon);
    }

    const PreferenceSegment& active(long t) const {
        require(t >= 0 && t < horizon_,
                detail::cat("PreferenceSchedule: instance ", t, " outside horizon [0, ",
                            horizon_, ")"));
        std::size_t lo = 0;
        for (std::size_t i = 1; i < segments_.size() && segments_[i].start <= t; ++i)
            lo = i;
        return segments_[lo];
    }

    long horizon() const { return horizon_; }
    const std::vector<PreferenceSegment>& segments() const { return segments_; }

private:
    std::vector<PreferenceSegment> segments_;
    long horizon_;
};

// Returns the covering segment's (preference, preferred label).
inline std::pair<PriorPreference, OutcomeLabel> active_preference(
    const PreferenceSchedule& schedule, long t) {
    const PreferenceSegment& seg = schedule.active(t);
    return {seg.preference, seg.preferred};
}

// Per-instance record of one simulated decision.
struct TrialRecord {
    long t;
    int option;
    ContextVector context;  // the selected option's context
    OutcomeLabel outcome;
    int reward;
    double inst_regret;
    std::optional<EfeBreakdown> efe;  // present for active-inference agents
    bool inference_failure = false;
};

struct TrialLog {
    std::string agent_name;
    std::uint64_t seed = 0;
    std::vector<TrialRecord> records;
    bool aborted = false;  // more than half the instances failed

    VectorXd regret_trajectory() const {
        VectorXd traj(records.size());
        double cum = 0.0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            cum += records[i].inst_regret;
            traj[static_cast<Eigen::Index>(i)] = cum;
        }
        return traj;
    }
    double final_regret() const {
        double cum = 0.0;
        for (const auto& r : records)
            cum += r.inst_regret;
        return cum;
    }
};

// ---------------------------------------------------------------------------
// Environment serialization: versioned, line-oriented text; every float is
// written with 17 significant digits so files round-trip doubles exactly.

inline void save_environment(const Environment& env, std::ostream& os) {
    os << "aifcmab-env 1\n";
    os << "dims " << env.n_options() << " " << env.n_labels() << " " << env.context_dim()
       << "\n";
    os << "seed " << env.seed() << "\n";
    for (int k = 0; k < env.n_options(); ++k) {
        os << "option " << k << "\n";
        const VectorXd flat = env.true_params(k).flatten();
        os << "params";
        for (Eigen::Index i = 0; i < flat.size(); ++i)
            os << " " << fmt17(flat[i]);
        os << "\n";
        const auto& pool = env.context_pool(k);
        os << "pool " << pool.size() << "\n";
        for (const auto& x : pool) {
            for (int c = 0; c < env.context_dim(); ++c)
                os << (c ? " " : "") << fmt17(x.values[c]);
            os << "\n";
        }
    }
    os << "end\n";
}

inline void save_environment(const Environment& env, const std::string& path) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("save_environment: cannot open " + path);
    save_environment(env, os);
    if (!os)
        throw std::runtime_error("save_environment: write failed for " + path);
}

namespace detail {

inline std::string next_env_line(std::istream& is, long& line_no) {
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty())
            return line;
    }
    throw std::runtime_error(
        cat("load_environment: unexpected end of file after line ", line_no));
}

}  // namespace detail

inline Environment load_environment(std::istream& is) {
    long line_no = 0;
    auto fail = [&](const std::string& what) -> std::runtime_error {
        return std::runtime_error(
            detail::cat("load_environment: ", what, " (line ", line_no, ")"));
    };

    std::string line = detail::next_env_line(is, line_no);
    if (line != "aifcmab-env 1")
        throw fail("unrecognized header '" + line + "'");

    int K = 0, F = 0, C = 0;
    std::uint64_t seed = 0;
    {
        std::istringstream ls(detail::next_env_line(is, line_no));
        std::string tag;
        if (!(ls >> tag >> K >> F >> C) || tag != "dims")
            throw fail("expected 'dims K F C'");
        std::istringstream ss(detail::next_env_line(is, line_no));
        if (!(ss >> tag >> seed) || tag != "seed")
            throw fail("expected 'seed <value>'");
    }
    if (K < 1 || F < 1 || C < 1)
        throw fail("invalid dimensions");

    std::vector<SoftmaxParams> params;
    std::vector<std::vector<ContextVector>> pools;
    for (int k = 0; k < K; ++k) {
        std::istringstream ls(detail::next_env_line(is, line_no));
        std::string tag;
        int idx = -1;
        if (!(ls >> tag >> idx) || tag != "option" || idx != k)
            throw fail(detail::cat("expected 'option ", k, "'"));

        std::istringstream ps(detail::next_env_line(is, line_no));
        if (!(ps >> tag) || tag != "params")
            throw fail("expected 'params ...'");
        VectorXd flat((C + 1) * F);
        for (Eigen::Index i = 0; i < flat.size(); ++i)
            if (!(ps >> flat[i]))
                throw fail(detail::cat("expected ", flat.size(), " parameter values"));
        params.push_back(SoftmaxParams::unflatten(flat, F, C));

        std::istringstream qs(detail::next_env_line(is, line_no));
        long pool_n = 0;
        if (!(qs >> tag >> pool_n) || tag != "pool" || pool_n < 1)
            throw fail("expected 'pool <count>'");
        std::vector<ContextVector> pool;
        pool.reserve(static_cast<std::size_t>(pool_n));
        for (long i = 0; i < pool_n; ++i) {
            std::istringstream xs(detail::next_env_line(is, line_no));
            VectorXd x(C);
            for (int c = 0; c < C; ++c)
                if (!(xs >> x[c]))
                    throw fail(detail::cat("expected ", C, " context values"));
            pool.emplace_back(std::move(x));
        }
        pools.push_back(std::move(pool));
    }
    if (detail::next_env_line(is, line_no) != "end")
        throw fail("expected 'end'");
    return Environment(std::move(params), std::move(pools), seed);
}

inline Environment load_environment(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("load_environment: cannot open " + path);
    return load_environment(is);
}

}  // namespace aifcmab
