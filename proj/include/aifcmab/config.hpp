#pragma once

#include "aifcmab/harness.hpp"

#include <algorithm>
#include <set>

namespace aifcmab {

// Hyperparameters by agent name; defaults follow the simulation setup the
// engine ships with (epsilon 0.3, tau 0.1, c 0.8, gamma 30).
struct AgentParams {
    double epsilon = 0.3;
    double tau = 0.1;
    double c = 0.8;
    double gamma = 30.0;
};

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(value);
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos)
            out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

inline std::vector<AgentKind> build_roster(const std::vector<std::string>& names,
                                           const AgentParams& params) {
    std::vector<AgentKind> roster;
    for (const auto& name : names) {
        try {
            if (name == "oracle")
                roster.push_back(AgentKind::oracle());
            else if (name == "epsilon_greedy")
                roster.push_back(AgentKind::epsilon_greedy(params.epsilon));
            else if (name == "softmax")
                roster.push_back(AgentKind::reward_softmax(params.tau));
            else if (name == "ucb")
                roster.push_back(AgentKind::ucb(params.c));
            else if (name == "thompson")
                roster.push_back(AgentKind::thompson());
            else if (name == "aif")
                roster.push_back(AgentKind::active_inference(params.gamma));
            else
                throw ConfigError("unknown agent '" + name + "'");
        } catch (const std::invalid_argument& e) {
            throw ConfigError(detail::cat("agent ", name, ": ", e.what()));
        }
    }
    return roster;
}

inline std::vector<std::string> default_agent_names() {
    return {"oracle", "epsilon_greedy", "softmax", "ucb", "thompson", "aif"};
}

namespace detail {

struct ParsedConfig {
    std::map<std::string, std::string> values;
    std::vector<std::string> order;
};

inline ParsedConfig parse_key_values(std::istream& is) {
    ParsedConfig out;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos)
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(detail::cat("config line ", line_no, ": expected 'key = value'"));
        auto trim = [](std::string s) {
            const auto sb = s.find_first_not_of(" \t\r");
            if (sb == std::string::npos)
                return std::string();
            const auto se = s.find_last_not_of(" \t\r");
            return s.substr(sb, se - sb + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(detail::cat("config line ", line_no, ": empty key"));
        if (out.values.count(key))
            throw ConfigError(detail::cat("config line ", line_no, ": duplicate key '", key,
                                          "'"));
        out.values[key] = value;
        out.order.push_back(key);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream ss(value);
    T v{};
    if (!(ss >> v) || !(ss >> std::ws).eof())
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    return v;
}

}  // namespace detail

// Flat key-value configuration with dotted sections; unknown keys are errors.
inline ExperimentConfig parse_config(std::istream& is) {
    const detail::ParsedConfig parsed = detail::parse_key_values(is);
    static const std::set<std::string> known = {
        "env.path", "env.K", "env.F", "env.C", "env.pool_size", "env.param_scale", "env.seed",
        "env.train_table", "train.components", "train.frac", "train.seed",
        "train.learning_rate", "train.epochs", "train.batch", "train.max_pool", "run.horizon",
        "run.runs", "run.seed", "run.output_dir", "run.threads", "belief.mean",
        "belief.cov_scale", "newton.max_iter", "newton.grad_tol", "agents",
        "agent.epsilon_greedy.epsilon", "agent.softmax.tau", "agent.ucb.c", "agent.aif.gamma",
        "schedule.type", "schedule.f_p", "schedule.preferred_mass", "schedule.period",
        "schedule.labels"};
    for (const auto& key : parsed.order)
        if (!known.count(key))
            throw ConfigError("unknown config key '" + key + "'");

    ExperimentConfig cfg;
    AgentParams params;
    std::vector<std::string> agent_names = default_agent_names();
    EnvironmentSpec spec;
    bool spec_given = false;

    auto get = [&](const char* key) -> const std::string* {
        const auto it = parsed.values.find(key);
        return it == parsed.values.end() ? nullptr : &it->second;
    };
    if (const auto* v = get("env.path"))
        cfg.env_path = *v;
    if (const auto* v = get("env.K")) {
        spec.K = detail::parse_number<int>("env.K", *v);
        spec_given = true;
    }
    if (const auto* v = get("env.F")) {
        spec.F = detail::parse_number<int>("env.F", *v);
        spec_given = true;
    }
    if (const auto* v = get("env.C")) {
        spec.C = detail::parse_number<int>("env.C", *v);
        spec_given = true;
    }
    if (const auto* v = get("env.pool_size")) {
        spec.pool_size = detail::parse_number<int>("env.pool_size", *v);
        spec_given = true;
    }
    if (const auto* v = get("env.param_scale")) {
        spec.param_scale = detail::parse_number<double>("env.param_scale", *v);
        spec_given = true;
    }
    if (const auto* v = get("env.seed")) {
        spec.seed = detail::parse_number<std::uint64_t>("env.seed", *v);
        spec_given = true;
    }
    if (spec_given)
        cfg.env_spec = spec;
    if (const auto* v = get("env.train_table"))
        cfg.train_table = *v;
    if (const auto* v = get("train.components"))
        cfg.train_components = detail::parse_number<int>("train.components", *v);
    if (const auto* v = get("train.frac"))
        cfg.train_split.train_frac = detail::parse_number<double>("train.frac", *v);
    if (const auto* v = get("train.seed"))
        cfg.train_split.seed = detail::parse_number<std::uint64_t>("train.seed", *v);
    if (const auto* v = get("train.learning_rate"))
        cfg.train_opts.learning_rate = detail::parse_number<double>("train.learning_rate", *v);
    if (const auto* v = get("train.epochs"))
        cfg.train_opts.epochs = detail::parse_number<int>("train.epochs", *v);
    if (const auto* v = get("train.batch"))
        cfg.train_opts.batch = detail::parse_number<int>("train.batch", *v);
    if (const auto* v = get("train.max_pool"))
        cfg.pool_policy.max_per_option = detail::parse_number<long>("train.max_pool", *v);
    if (const auto* v = get("run.horizon"))
        cfg.horizon = detail::parse_number<long>("run.horizon", *v);
    if (const auto* v = get("run.runs"))
        cfg.runs = detail::parse_number<int>("run.runs", *v);
    if (const auto* v = get("run.seed"))
        cfg.master_seed = detail::parse_number<std::uint64_t>("run.seed", *v);
    if (const auto* v = get("run.output_dir"))
        cfg.output_dir = *v;
    if (const auto* v = get("run.threads"))
        cfg.threads = detail::parse_number<int>("run.threads", *v);
    if (const auto* v = get("belief.mean"))
        cfg.belief.mean_fill = detail::parse_number<double>("belief.mean", *v);
    if (const auto* v = get("belief.cov_scale"))
        cfg.belief.cov_scale = detail::parse_number<double>("belief.cov_scale", *v);
    if (const auto* v = get("newton.max_iter"))
        cfg.newton.max_iter = detail::parse_number<int>("newton.max_iter", *v);
    if (const auto* v = get("newton.grad_tol"))
        cfg.newton.grad_tol = detail::parse_number<double>("newton.grad_tol", *v);
    if (const auto* v = get("agent.epsilon_greedy.epsilon"))
        params.epsilon = detail::parse_number<double>("agent.epsilon_greedy.epsilon", *v);
    if (const auto* v = get("agent.softmax.tau"))
        params.tau = detail::parse_number<double>("agent.softmax.tau", *v);
    if (const auto* v = get("agent.ucb.c"))
        params.c = detail::parse_number<double>("agent.ucb.c", *v);
    if (const auto* v = get("agent.aif.gamma"))
        params.gamma = detail::parse_number<double>("agent.aif.gamma", *v);
    if (const auto* v = get("agents")) {
        agent_names = split_list(*v);
        if (agent_names.empty())
            throw ConfigError("config key 'agents': empty roster");
    }
    if (const auto* v = get("schedule.type")) {
        if (*v == "stationary")
            cfg.schedule.type = ScheduleSpec::Type::Stationary;
        else if (*v == "periodic")
            cfg.schedule.type = ScheduleSpec::Type::Periodic;
        else
            throw ConfigError("schedule.type must be 'stationary' or 'periodic', got '" + *v +
                              "'");
    }
    if (const auto* v = get("schedule.f_p"))
        cfg.schedule.f_p = detail::parse_number<int>("schedule.f_p", *v);
    if (const auto* v = get("schedule.preferred_mass"))
        cfg.schedule.preferred_mass = detail::parse_number<double>("schedule.preferred_mass", *v);
    if (const auto* v = get("schedule.period"))
        cfg.schedule.period = detail::parse_number<long>("schedule.period", *v);
    if (const auto* v = get("schedule.labels")) {
        cfg.schedule.labels.clear();
        for (const auto& item : split_list(*v))
            cfg.schedule.labels.push_back(detail::parse_number<int>("schedule.labels", item));
        if (cfg.schedule.labels.empty())
            throw ConfigError("schedule.labels: empty list");
    }

    cfg.roster = build_roster(agent_names, params);
    return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config file " + path);
    return parse_config(is);
}

// Canonical echo of every effective setting, sorted by key; recorded in the
// output manifest so results are traceable to their configuration.
inline std::vector<std::pair<std::string, std::string>> config_echo(
    const ExperimentConfig& cfg, const AgentParams* params = nullptr) {
    std::vector<std::pair<std::string, std::string>> echo;
    auto add = [&](const std::string& k, const std::string& v) { echo.emplace_back(k, v); };
    if (!cfg.env_path.empty())
        add("env.path", cfg.env_path);
    if (cfg.env_spec) {
        add("env.K", std::to_string(cfg.env_spec->K));
        add("env.F", std::to_string(cfg.env_spec->F));
        add("env.C", std::to_string(cfg.env_spec->C));
        add("env.pool_size", std::to_string(cfg.env_spec->pool_size));
        add("env.param_scale", fmt17(cfg.env_spec->param_scale));
        add("env.seed", std::to_string(cfg.env_spec->seed));
    }
    if (!cfg.train_table.empty()) {
        add("env.train_table", cfg.train_table);
        add("train.components", std::to_string(cfg.train_components));
        add("train.frac", fmt17(cfg.train_split.train_frac));
        add("train.seed", std::to_string(cfg.train_split.seed));
        add("train.learning_rate", fmt17(cfg.train_opts.learning_rate));
        add("train.epochs", std::to_string(cfg.train_opts.epochs));
        add("train.batch", std::to_string(cfg.train_opts.batch));
        add("train.max_pool", std::to_string(cfg.pool_policy.max_per_option));
    }
    add("run.horizon", std::to_string(cfg.horizon));
    add("run.runs", std::to_string(cfg.runs));
    add("run.seed", std::to_string(cfg.master_seed));
    add("run.output_dir", cfg.output_dir);
    add("belief.mean", fmt17(cfg.belief.mean_fill));
    add("belief.cov_scale", fmt17(cfg.belief.cov_scale));
    add("newton.max_iter", std::to_string(cfg.newton.max_iter));
    add("newton.grad_tol", fmt17(cfg.newton.grad_tol));
    {
        std::string names;
        for (const auto& kind : cfg.roster)
            names += (names.empty() ? "" : ",") + kind.name();
        add("agents", names);
        for (const auto& kind : cfg.roster)
            switch (kind.algo()) {
                case AgentAlgo::EpsilonGreedy:
                    add("agent.epsilon_greedy.epsilon", fmt17(kind.param()));
                    break;
                case AgentAlgo::RewardSoftmax:
                    add("agent.softmax.tau", fmt17(kind.param()));
                    break;
                case AgentAlgo::Ucb:
                    add("agent.ucb.c", fmt17(kind.param()));
                    break;
                case AgentAlgo::ActiveInference:
                    add("agent.aif.gamma", fmt17(kind.param()));
                    break;
                default:
                    break;
            }
    }
    (void)params;
    add("schedule.type",
        cfg.schedule.type == ScheduleSpec::Type::Stationary ? "stationary" : "periodic");
    if (cfg.schedule.type == ScheduleSpec::Type::Stationary) {
        add("schedule.f_p", std::to_string(cfg.schedule.f_p));
    } else {
        std::string labels;
        for (int l : cfg.schedule.labels)
            labels += (labels.empty() ? "" : ",") + std::to_string(l);
        add("schedule.labels", labels);
        add("schedule.period", std::to_string(cfg.schedule.period));
    }
    add("schedule.preferred_mass", fmt17(cfg.schedule.preferred_mass));
    std::sort(echo.begin(), echo.end());
    return echo;
}

}  // namespace aifcmab
