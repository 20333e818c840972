#pragma once

#include "aifcmab/agents.hpp"
#include "aifcmab/dataset.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <thread>
#include <vector>

namespace aifcmab {

struct BeliefInit {
    double mean_fill = 0.5;
    double cov_scale = 5.0;
};

// Declarative schedule; materialized once the environment's F is known.
struct ScheduleSpec {
    enum class Type { Stationary, Periodic };
    Type type = Type::Stationary;
    int f_p = 1;  // one-based preferred label (stationary case)
    double preferred_mass = 0.8;
    long period = 20;
    std::vector<int> labels = {1, 2, 3, 4, 5};  // one-based cycle (periodic case)

    PreferenceSchedule build(int n_labels, long horizon) const {
        if (type == Type::Stationary) {
            if (f_p < 1 || f_p > n_labels)
                throw ConfigError(detail::cat("schedule.f_p=", f_p, " outside [1, ", n_labels,
                                              "]"));
            return PreferenceSchedule::stationary(
                PriorPreference::concentrated(n_labels, OutcomeLabel(f_p), preferred_mass),
                OutcomeLabel(f_p), horizon);
        }
        if (labels.empty())
            throw ConfigError("schedule.labels must not be empty for a periodic schedule");
        std::vector<OutcomeLabel> cycle;
        for (int l : labels) {
            if (l < 1 || l > n_labels)
                throw ConfigError(detail::cat("schedule.labels entry ", l, " outside [1, ",
                                              n_labels, "]"));
            cycle.emplace_back(l);
        }
        return PreferenceSchedule::periodic(cycle, period, n_labels, preferred_mass, horizon);
    }
};

struct ExperimentConfig {
    // Exactly one environment source: a saved environment file, a synthetic
    // generation spec, or a labeled table routed through the training pipeline.
    std::string env_path;
    std::optional<EnvironmentSpec> env_spec;
    std::string train_table;
    int train_components = 8;
    SplitSpec train_split;
    TrainOptions train_opts;
    PoolPolicy pool_policy;

    std::vector<AgentKind> roster;
    long horizon = 100;
    int runs = 100;
    std::uint64_t master_seed = 0;
    BeliefInit belief;
    ScheduleSpec schedule;
    std::string output_dir = "out";
    int threads = 0;  // 0 = hardware concurrency
    NewtonOptions newton;

    int env_sources() const {
        return (env_path.empty() ? 0 : 1) + (env_spec ? 1 : 0) + (train_table.empty() ? 0 : 1);
    }

    void validate() const {
        if (horizon < 1)
            throw ConfigError("run.horizon must be >= 1");
        if (runs < 1)
            throw ConfigError("run.runs must be >= 1");
        if (roster.empty())
            throw ConfigError("agent roster must not be empty");
        if (belief.cov_scale <= 0.0)
            throw ConfigError("belief.cov_scale must be positive");
        if (schedule.preferred_mass <= 0.0 || schedule.preferred_mass >= 1.0)
            throw ConfigError("schedule.preferred_mass must lie in (0,1)");
        if (schedule.period < 1)
            throw ConfigError("schedule.period must be >= 1");
        if (env_sources() != 1)
            throw ConfigError(
                "exactly one of env.path, env.{K,F,C,...}, env.train_table must be given");
    }
};

struct SegmentInfo {
    long start = 0;
    long end = 0;       // exclusive
    int f_p = 1;        // one-based
    int best_option = 0;
};

struct ExperimentResult {
    std::vector<std::string> agent_names;
    std::vector<std::vector<TrialLog>> logs;  // [agent][run]
    long horizon = 0;
    int runs = 0;
    std::uint64_t master_seed = 0;
    std::vector<SegmentInfo> segments;
    std::vector<std::pair<std::string, std::string>> config_echo;  // sorted key = value
};

namespace detail {

inline constexpr std::uint64_t kContextTag = 0xC1;
inline constexpr std::uint64_t kOutcomeTag = 0xC2;
inline constexpr std::uint64_t kAgentTag = 0xC3;

// Context draw shared by every agent at (run, t, option): two agents probing
// the same option at the same instance see the same pixel (common random
// numbers). Outcome draws are keyed the same way so choice divergence cannot
// desynchronize later randomness.
inline ContextVector crn_context(const Environment& env, std::uint64_t master, int run, long t,
                                 int k) {
    RngStream rng = keyed_stream(
        master, {kContextTag, std::uint64_t(run), std::uint64_t(t), std::uint64_t(k)});
    return sample_context(env, k, rng);
}

inline OutcomeLabel crn_outcome(const Environment& env, std::uint64_t master, int run, long t,
                                int k, const ContextVector& x) {
    RngStream rng = keyed_stream(master, {kOutcomeTag, std::uint64_t(run), std::uint64_t(t),
                                          std::uint64_t(k), 0});
    return sample_outcome(env, k, x, rng);
}

inline TrialLog simulate_one_run(const Environment& env, const PreferenceSchedule& schedule,
                                 const AgentKind& kind, int agent_index, int run,
                                 const ExperimentConfig& cfg) {
    const int K = env.n_options();
    const int F = env.n_labels();
    const int d = (env.context_dim() + 1) * F;
    const std::uint64_t agent_seed = derive_key(
        cfg.master_seed, {kAgentTag, std::uint64_t(run), std::uint64_t(agent_index)});
    RngStream agent_rng(agent_seed);

    AgentState state(K, F);
    if (kind.needs_beliefs()) {
        const GaussianBelief init = GaussianBelief::isotropic(
            VectorXd::Constant(d, cfg.belief.mean_fill), cfg.belief.cov_scale);
        state.beliefs.assign(K, std::make_shared<const GaussianBelief>(init));
    }

    TrialLog log;
    log.agent_name = kind.name();
    log.seed = agent_seed;
    log.records.reserve(cfg.horizon);
    long failed_instances = 0;

    for (long t = 0; t < cfg.horizon; ++t) {
        const PreferenceSegment& seg = schedule.active(t);
        std::vector<ContextVector> contexts;
        contexts.reserve(K);
        for (int k = 0; k < K; ++k)
            contexts.push_back(crn_context(env, cfg.master_seed, run, t, k));

        int selected = 0;
        std::optional<EfeBreakdown> efe;
        bool instance_failed = false;
        switch (kind.algo()) {
            case AgentAlgo::Oracle:
                selected = oracle_select(env, contexts, seg.preferred);
                break;
            case AgentAlgo::EpsilonGreedy:
                selected = epsilon_greedy_select(state, seg.preferred, kind.param(), agent_rng);
                break;
            case AgentAlgo::RewardSoftmax:
                selected = reward_softmax_select(state, seg.preferred, kind.param(), agent_rng);
                break;
            case AgentAlgo::Ucb:
                selected = ucb_select(state, seg.preferred, kind.param());
                break;
            case AgentAlgo::ThompsonSampling:
                selected = thompson_select(state, contexts, seg.preferred, agent_rng);
                break;
            case AgentAlgo::ActiveInference: {
                try {
                    AifStepResult step = aif_step(state.beliefs, contexts, seg.preference,
                                                  kind.param(), agent_rng, cfg.newton);
                    selected = step.selected;
                    efe = std::move(step.per_option[step.selected]);
                    instance_failed = !step.failed_options.empty();
                } catch (const std::exception&) {
                    // every option failed; probe uniformly so the mission continues
                    selected = agent_rng.uniform_int(K);
                    instance_failed = true;
                }
                break;
            }
        }

        const OutcomeLabel o = crn_outcome(env, cfg.master_seed, run, t, selected,
                                           contexts[selected]);
        const long failures_before = state.inference_failures;
        state = record_outcome(state, selected, o, contexts[selected], kind.needs_beliefs(),
                               cfg.newton);
        instance_failed = instance_failed || (state.inference_failures > failures_before);
        if (instance_failed)
            ++failed_instances;

        log.records.push_back(TrialRecord{t, selected, contexts[selected], o,
                                          reward(o, seg.preferred),
                                          instantaneous_regret(env, selected, seg.preferred),
                                          std::move(efe), instance_failed});
        if (failed_instances * 2 > cfg.horizon) {
            log.aborted = true;
            break;
        }
    }
    return log;
}

}  // namespace detail

// Resolves the configured environment source.
inline Environment resolve_environment(const ExperimentConfig& cfg) {
    if (!cfg.env_path.empty())
        return load_environment(cfg.env_path);
    if (cfg.env_spec)
        return generate_environment(*cfg.env_spec);
    const LabeledContextTable table = ingest_table(cfg.train_table);
    const PcaModel pca = pca_fit(table, std::min(cfg.train_components, table.raw_dim()));
    const auto data = transform_table(table, pca);
    const TrainedModel model = train_softmax(data, table.n_labels(), cfg.train_split,
                                             cfg.train_opts);
    return build_environment_from_training(model.params, data, cfg.pool_policy);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Environment& env);

// Runs every (agent, run) task over a shared environment under common
// random numbers. Task order, thread count and completion order do not
// affect the result: every stream is keyed, and merging is by index.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const Environment env = resolve_environment(cfg);
    return run_experiment(cfg, env);
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Environment& env) {
    cfg.validate();
    const PreferenceSchedule schedule = cfg.schedule.build(env.n_labels(), cfg.horizon);

    ExperimentResult result;
    result.horizon = cfg.horizon;
    result.runs = cfg.runs;
    result.master_seed = cfg.master_seed;
    for (const auto& kind : cfg.roster)
        result.agent_names.push_back(kind.name());
    for (std::size_t i = 0; i < schedule.segments().size(); ++i) {
        const auto& seg = schedule.segments()[i];
        const long end = i + 1 < schedule.segments().size() ? schedule.segments()[i + 1].start
                                                            : schedule.horizon();
        result.segments.push_back(SegmentInfo{seg.start, end, seg.preferred.index,
                                              env.best_option(seg.preferred)});
    }

    const int n_agents = static_cast<int>(cfg.roster.size());
    result.logs.assign(n_agents, std::vector<TrialLog>(cfg.runs));

    const long n_tasks = static_cast<long>(n_agents) * cfg.runs;
    unsigned n_threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                         : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(n_tasks));

    std::atomic<long> next{0};
    std::vector<std::exception_ptr> errors(n_threads);
    auto worker = [&](unsigned wid) {
        try {
            for (;;) {
                const long i = next.fetch_add(1);
                if (i >= n_tasks)
                    return;
                const int a = static_cast<int>(i / cfg.runs);
                const int r = static_cast<int>(i % cfg.runs);
                result.logs[a][r] =
                    detail::simulate_one_run(env, schedule, cfg.roster[a], a, r, cfg);
            }
        } catch (...) {
            errors[wid] = std::current_exception();
        }
    };
    if (n_threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < n_threads; ++w)
            pool.emplace_back(worker, w);
        for (auto& th : pool)
            th.join();
    }
    for (const auto& err : errors)
        if (err)
            std::rethrow_exception(err);
    return result;
}

struct AgentSummary {
    std::string name;
    VectorXd mean_traj;  // cumulative regret mean over runs, per t
    VectorXd std_traj;   // 1-sigma bounds, per t
    std::vector<double> final_regrets;
    double final_mean = 0.0;
    double final_std = 0.0;
    std::vector<int> above_runs;  // final regret above the overall average
    std::vector<int> below_runs;
    VectorXd above_mean_traj;  // empty when the group is empty
    VectorXd below_mean_traj;
    std::vector<double> best_option_freq;  // per schedule segment
    long inference_failures = 0;
    int aborted_runs = 0;
};

struct Summary {
    std::vector<AgentSummary> agents;
    long horizon = 0;
    int runs = 0;
};

inline Summary summarize(const ExperimentResult& result) {
    require(!result.logs.empty(), "summarize: empty result");
    Summary out;
    out.horizon = result.horizon;
    out.runs = result.runs;

    for (std::size_t a = 0; a < result.logs.size(); ++a) {
        const auto& runs = result.logs[a];
        AgentSummary s;
        s.name = result.agent_names[a];
        const long T = result.horizon;
        MatrixXd traj(static_cast<Eigen::Index>(runs.size()), T);
        for (std::size_t r = 0; r < runs.size(); ++r) {
            if (runs[r].aborted) {
                ++s.aborted_runs;
                traj.row(static_cast<Eigen::Index>(r)).setConstant(
                    std::numeric_limits<double>::quiet_NaN());
                continue;
            }
            require(static_cast<long>(runs[r].records.size()) == T,
                    detail::cat("summarize: run ", r, " of agent ", s.name, " has ",
                                runs[r].records.size(), " records, expected ", T));
            traj.row(static_cast<Eigen::Index>(r)) = runs[r].regret_trajectory().transpose();
            s.inference_failures +=
                std::count_if(runs[r].records.begin(), runs[r].records.end(),
                              [](const TrialRecord& rec) { return rec.inference_failure; });
        }
        require(s.aborted_runs < static_cast<int>(runs.size()),
                detail::cat("summarize: every run of agent ", s.name, " aborted"));

        std::vector<int> live;
        for (std::size_t r = 0; r < runs.size(); ++r)
            if (!runs[r].aborted)
                live.push_back(static_cast<int>(r));

        s.mean_traj = VectorXd::Zero(T);
        s.std_traj = VectorXd::Zero(T);
        for (long t = 0; t < T; ++t) {
            double m = 0.0;
            for (int r : live)
                m += traj(r, t);
            m /= static_cast<double>(live.size());
            double var = 0.0;
            for (int r : live)
                var += (traj(r, t) - m) * (traj(r, t) - m);
            s.mean_traj[t] = m;
            s.std_traj[t] = std::sqrt(var / static_cast<double>(live.size()));
        }
        for (int r : live)
            s.final_regrets.push_back(traj(r, T - 1));
        s.final_mean = s.mean_traj[T - 1];
        s.final_std = s.std_traj[T - 1];

        // above/below split on the overall average of final-step regret
        for (std::size_t i = 0; i < live.size(); ++i)
            (s.final_regrets[i] > s.final_mean ? s.above_runs : s.below_runs)
                .push_back(live[i]);
        auto group_mean = [&](const std::vector<int>& group) {
            VectorXd m = VectorXd::Zero(T);
            if (group.empty())
                return m;
            for (int r : group)
                m += traj.row(r).transpose();
            return VectorXd(m / static_cast<double>(group.size()));
        };
        s.above_mean_traj = group_mean(s.above_runs);
        s.below_mean_traj = group_mean(s.below_runs);

        // frequency of selecting the segment-best option, per segment
        for (const auto& seg : result.segments) {
            long hits = 0, total = 0;
            for (int r : live)
                for (long t = seg.start; t < std::min(seg.end, T); ++t) {
                    ++total;
                    if (result.logs[a][r].records[t].option == seg.best_option)
                        ++hits;
                }
            s.best_option_freq.push_back(total > 0 ? static_cast<double>(hits) / total : 0.0);
        }
        out.agents.push_back(std::move(s));
    }
    return out;
}

namespace detail {

inline void write_file_checked(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("emit_outputs: cannot open " + path.string());
    os << content;
    if (!os)
        throw std::runtime_error("emit_outputs: write failed for " + path.string());
}

}  // namespace detail

// Writes the result tables: (a) per-agent regret trajectories, (b) a summary
// document, (c) per-run transition logs, (d) a manifest with the config
// echo, seeds and per-file content hashes. All floats at 17 significant
// digits. Only the manifest's timestamp line varies between identical runs.
inline void emit_outputs(const ExperimentResult& result, const Summary& summary,
                         const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::pair<std::string, std::string>> files;  // name -> content

    {
        std::ostringstream os;
        os << "t";
        for (const auto& a : summary.agents)
            os << "," << a.name << "_mean," << a.name << "_std";
        os << "\n";
        for (long t = 0; t < summary.horizon; ++t) {
            os << t;
            for (const auto& a : summary.agents)
                os << "," << fmt17(a.mean_traj[t]) << "," << fmt17(a.std_traj[t]);
            os << "\n";
        }
        files.emplace_back("regret_trajectory.csv", os.str());
    }
    {
        std::ostringstream os;
        os << "agent,run,final_regret\n";
        for (std::size_t a = 0; a < result.logs.size(); ++a)
            for (std::size_t r = 0; r < result.logs[a].size(); ++r)
                if (!result.logs[a][r].aborted)
                    os << result.agent_names[a] << "," << r << ","
                       << fmt17(result.logs[a][r].final_regret()) << "\n";
        files.emplace_back("final_regret.csv", os.str());
    }
    {
        std::ostringstream os;
        const int C = result.logs.empty() || result.logs[0].empty() ||
                              result.logs[0][0].records.empty()
                          ? 0
                          : result.logs[0][0].records[0].context.dim();
        os << "agent,run,t,option,outcome,reward,inst_regret,efe_total,failure";
        for (int c = 1; c <= C; ++c)
            os << ",ctx_" << c;
        os << "\n";
        for (std::size_t a = 0; a < result.logs.size(); ++a)
            for (std::size_t r = 0; r < result.logs[a].size(); ++r)
                for (const auto& rec : result.logs[a][r].records) {
                    os << result.agent_names[a] << "," << r << "," << rec.t << ","
                       << rec.option << "," << rec.outcome.index << "," << rec.reward << ","
                       << fmt17(rec.inst_regret) << ","
                       << (rec.efe ? fmt17(rec.efe->total) : std::string("")) << ","
                       << (rec.inference_failure ? 1 : 0);
                    for (int c = 0; c < C; ++c)
                        os << "," << fmt17(rec.context.values[c]);
                    os << "\n";
                }
        files.emplace_back("transitions.csv", os.str());
    }
    {
        std::ostringstream os;
        os << "runs " << summary.runs << "\nhorizon " << summary.horizon << "\n\n";
        for (const auto& a : summary.agents) {
            os << "agent " << a.name << "\n";
            os << "  final_regret_mean " << fmt17(a.final_mean) << "\n";
            os << "  final_regret_std " << fmt17(a.final_std) << "\n";
            os << "  above_average_runs " << a.above_runs.size() << "\n";
            os << "  below_average_runs " << a.below_runs.size() << "\n";
            if (!a.above_runs.empty())
                os << "  above_group_final_mean "
                   << fmt17(a.above_mean_traj[summary.horizon - 1]) << "\n";
            if (!a.below_runs.empty())
                os << "  below_group_final_mean "
                   << fmt17(a.below_mean_traj[summary.horizon - 1]) << "\n";
            os << "  inference_failures " << a.inference_failures << "\n";
            os << "  aborted_runs " << a.aborted_runs << "\n";
            os << "  best_option_selection_freq";
            for (double f : a.best_option_freq)
                os << " " << fmt17(f);
            os << "\n\n";
        }
        files.emplace_back("summary.txt", os.str());
    }

    std::ostringstream manifest;
    manifest << "aifcmab-result 1\n";
    manifest << "master_seed " << result.master_seed << "\n";
    for (const auto& [key, value] : result.config_echo)
        manifest << "config " << key << " = " << value << "\n";
    for (const auto& [name, content] : files) {
        Fnv1a64 h;
        h.update(content);
        manifest << "hash " << name << " " << h.hex() << "\n";
    }
    manifest << "generated_at " << std::time(nullptr) << "\n";
    files.emplace_back("manifest.txt", manifest.str());

    for (const auto& [name, content] : files)
        detail::write_file_checked(std::filesystem::path(dir) / name, content);
}

// Re-ingests a regret_trajectory.csv emitted by emit_outputs.
struct TrajectoryTable {
    std::vector<std::string> agent_names;
    MatrixXd means;  // T x agents
    MatrixXd stds;   // T x agents
};

inline TrajectoryTable read_trajectory_table(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw ConfigError("read_trajectory_table: cannot open " + path);
    std::string line;
    if (!std::getline(is, line))
        throw ConfigError("read_trajectory_table: empty file " + path);
    const auto header = detail::split_fields(line, ',');
    if (header.size() < 3 || (header.size() - 1) % 2 != 0 || header[0] != "t")
        throw ConfigError("read_trajectory_table: unexpected header in " + path);
    TrajectoryTable table;
    for (std::size_t i = 1; i < header.size(); i += 2) {
        std::string name = header[i];
        const std::string suffix = "_mean";
        if (name.size() <= suffix.size() ||
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
            throw ConfigError("read_trajectory_table: unexpected column " + name);
        table.agent_names.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::vector<std::vector<double>> means, stds;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        const auto fields = detail::split_fields(line, ',');
        if (fields.size() != header.size())
            throw ConfigError("read_trajectory_table: ragged row in " + path);
        std::vector<double> m, s;
        for (std::size_t i = 1; i < fields.size(); i += 2) {
            double mv = 0.0, sv = 0.0;
            if (!detail::parse_double(fields[i], mv) || !detail::parse_double(fields[i + 1], sv))
                throw ConfigError("read_trajectory_table: non-numeric cell in " + path);
            m.push_back(mv);
            s.push_back(sv);
        }
        means.push_back(std::move(m));
        stds.push_back(std::move(s));
    }
    const Eigen::Index T = static_cast<Eigen::Index>(means.size());
    const Eigen::Index A = static_cast<Eigen::Index>(table.agent_names.size());
    table.means.resize(T, A);
    table.stds.resize(T, A);
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index a = 0; a < A; ++a) {
            table.means(t, a) = means[t][a];
            table.stds(t, a) = stds[t][a];
        }
    return table;
}

}  // namespace aifcmab
