// Run configuration: INI-style config files, --override handling, defaults
// for every tunable, and canonical serialization for run manifests.
#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rachforge/common.hpp"
#include "rachforge/estimators.hpp"
#include "rachforge/orchestrator.hpp"
#include "rachforge/rach.hpp"
#include "rachforge/traffic.hpp"

namespace rachforge {

// Flat "section.key" -> value store with consumption tracking, so typos in
// config files or overrides surface as errors instead of silently applying
// defaults.
class KvStore {
public:
    void set(const std::string& key, const std::string& value) { map_[key] = value; }
    bool contains(const std::string& key) const { return map_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        used_.insert(key);
        return it->second;
    }
    double get_double(const std::string& key, double fallback) {
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        used_.insert(key);
        return parse_double(key, it->second);
    }
    std::int64_t get_i64(const std::string& key, std::int64_t fallback) {
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        used_.insert(key);
        return parse_i64(key, it->second);
    }
    int get_int(const std::string& key, int fallback) {
        return static_cast<int>(get_i64(key, fallback));
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        used_.insert(key);
        try {
            return std::stoull(it->second);
        } catch (const std::exception&) {
            throw ConfigError("config: bad unsigned integer for " + key + ": '" +
                              it->second + "'");
        }
    }
    bool get_bool(const std::string& key, bool fallback) {
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        used_.insert(key);
        const std::string& v = it->second;
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
    }
    std::vector<double> get_double_list(const std::string& key,
                                        std::vector<double> fallback) {
        auto it = map_.find(key);
        if (it == map_.end()) return fallback;
        used_.insert(key);
        std::vector<double> out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!trim(item).empty()) out.push_back(parse_double(key, trim(item)));
        return out;
    }
    std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) {
        std::vector<double> d = get_double_list(key, {});
        if (d.empty() && !contains(key)) return fallback;
        std::vector<int> out;
        out.reserve(d.size());
        for (double x : d) out.push_back(static_cast<int>(x));
        return out;
    }

    // Every provided key must have been consumed by the builder.
    void reject_unknown() const {
        for (const auto& [key, value] : map_)
            if (used_.count(key) == 0)
                throw ConfigError("config: unknown key '" + key + "'");
    }

    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

private:
    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double x = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config: bad number for " + key + ": '" + v + "'");
        }
    }
    static std::int64_t parse_i64(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const long long x = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
        }
    }

    std::map<std::string, std::string> map_;
    std::set<std::string> used_;
};

// `[section]` headers plus `key = value` lines; '#' and ';' start comments.
inline KvStore parse_ini(const std::string& text) {
    KvStore store;
    std::stringstream ss(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t cut = line.find_first_of("#;");
        if (cut != std::string::npos) line.erase(cut);
        line = KvStore::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config: malformed section header at line " +
                                  std::to_string(lineno));
            section = KvStore::trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("config: empty section name at line " +
                                  std::to_string(lineno));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: expected key=value at line " +
                              std::to_string(lineno));
        const std::string key = KvStore::trim(line.substr(0, eq));
        const std::string value = KvStore::trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config: empty key at line " + std::to_string(lineno));
        store.set(section.empty() ? key : section + "." + key, value);
    }
    return store;
}

inline KvStore load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_ini(ss.str());
}

// `--override section.key=value`, applied on top of the file.
inline void apply_override(KvStore& store, const std::string& text) {
    const std::size_t eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like section.key=value: '" + text + "'");
    const std::string key = KvStore::trim(text.substr(0, eq));
    if (key.find('.') == std::string::npos)
        throw ConfigError("override key needs a section prefix: '" + text + "'");
    store.set(key, KvStore::trim(text.substr(eq + 1)));
}

struct SweepSpec {
    std::vector<double> mu_values;
    std::vector<int> n_values;
};

struct RunConfig {
    Scenario scenario = Scenario::baseline;
    int episodes = 20;  // simulate / evaluate episode count
    int trails = 1;
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
    std::string cache_dir;  // likelihood-table cache; empty disables caching

    RachConfig rach{};
    EnergyModel energy{};
    FixedFactors fixed{};
    EstimatorKind est_kind = EstimatorKind::mle;
    int n_max = 600;
    double mu = -1.0;  // in [0,1] overrides x_d / x_e via the 1:mu:1-mu rule
    RewardWeights reward{};
    TrainConfig train{};
    SweepSpec sweep{};

    void validate() const {
        if (episodes < 1) throw ConfigError("cli: episodes must be >= 1");
        if (trails < 1) throw ConfigError("cli: trails must be >= 1");
        rach.validate();
        energy.validate();
        if (fixed.acb <= 0 || fixed.acb > 1 || fixed.bo < 0 || fixed.bo > 8 ||
            fixed.tdepth < 1 || fixed.tdepth > 3 || fixed.tdegree < 2 ||
            fixed.tdegree > 6)
            throw ConfigError("schemes: fixed factors out of range");
        if (n_max < 1) throw ConfigError("estimators: n_max must be >= 1");
        if (mu > 1.0) throw ConfigError("orchestrator: mu outside [0,1]");
        reward.validate();
        train.validate();
        train.agent.validate();
        if (is_learning(scenario) && trainer_spec_for(scenario).decoupled)
            train.predictor.validate();
    }

    bool needs_likelihood_table() const {
        if (scenario == Scenario::mle && est_kind == EstimatorKind::mle) return true;
        if (!is_learning(scenario)) return false;
        const TrainerSpec t = trainer_spec_for(scenario);
        return t.decoupled && !t.genie_labels && est_kind == EstimatorKind::mle;
    }

    SimSetup to_setup(const LikelihoodTable* table) const {
        SimSetup s;
        s.rach = rach;
        s.energy = energy;
        s.reward = reward;
        s.fixed = fixed;
        s.est_kind = est_kind;
        s.n_max = n_max;
        s.table = table;
        return s;
    }
};

inline RunConfig build_run_config(KvStore& kv) {
    RunConfig c;
    c.scenario = parse_scenario(kv.get_string("cli.scenario", "baseline"));
    c.episodes = kv.get_int("cli.episodes", c.episodes);
    c.trails = kv.get_int("cli.trails", c.trails);
    c.seed = kv.get_u64("cli.seed", c.seed);
    c.out_dir = kv.get_string("cli.out", c.out_dir);
    c.cache_dir = kv.get_string("cli.cache_dir", c.cache_dir);

    TrafficProfile& tp = c.rach.traffic;
    tp.alpha = kv.get_double("traffic.alpha", tp.alpha);
    tp.beta = kv.get_double("traffic.beta", tp.beta);
    tp.total_frames = kv.get_int("traffic.frames", tp.total_frames);
    tp.device_count = kv.get_int("traffic.devices", tp.device_count);

    c.rach.preambles = kv.get_int("rach.preambles", c.rach.preambles);
    c.rach.max_attempts = kv.get_int("rach.max_attempts", c.rach.max_attempts);
    c.rach.frame_seconds = kv.get_double("rach.frame_seconds", c.rach.frame_seconds);
    c.rach.episode_cap = kv.get_int("rach.episode_cap", c.rach.episode_cap);
    c.energy.t_sy = kv.get_double("rach.t_sy", c.energy.t_sy);
    c.energy.p_sy = kv.get_double("rach.p_sy", c.energy.p_sy);
    c.energy.t_msg1 = kv.get_double("rach.t_msg1", c.energy.t_msg1);
    c.energy.p_msg1 = kv.get_double("rach.p_msg1", c.energy.p_msg1);
    c.energy.t_msg2 = kv.get_double("rach.t_msg2", c.energy.t_msg2);
    c.energy.p_msg2 = kv.get_double("rach.p_msg2", c.energy.p_msg2);
    c.energy.t_msg3 = kv.get_double("rach.t_msg3", c.energy.t_msg3);
    c.energy.p_msg3 = kv.get_double("rach.p_msg3", c.energy.p_msg3);
    c.energy.t_msg4 = kv.get_double("rach.t_msg4", c.energy.t_msg4);
    c.energy.p_msg4 = kv.get_double("rach.p_msg4", c.energy.p_msg4);

    c.fixed.acb = kv.get_double("schemes.fixed_acb", c.fixed.acb);
    c.fixed.bo = kv.get_int("schemes.fixed_bo", c.fixed.bo);
    c.fixed.tdepth = kv.get_int("schemes.fixed_tdepth", c.fixed.tdepth);
    c.fixed.tdegree = kv.get_int("schemes.fixed_tdegree", c.fixed.tdegree);

    const std::string kind = kv.get_string("estimators.kind", "mle");
    if (kind == "mle")
        c.est_kind = EstimatorKind::mle;
    else if (kind == "mom")
        c.est_kind = EstimatorKind::mom;
    else
        throw ConfigError("estimators.kind must be mle or mom, got '" + kind + "'");
    c.n_max = kv.get_int("estimators.n_max", c.n_max);

    AgentConfig& a = c.train.agent;
    c.train.discount_acb = kv.get_double("agents.discount_acb", c.train.discount_acb);
    c.train.discount_other = kv.get_double("agents.discount", c.train.discount_other);
    a.lr = kv.get_double("agents.lr", a.lr);
    const std::string opt = kv.get_string("agents.optimizer", "adam");
    if (opt == "adam")
        a.sgd = false;
    else if (opt == "sgd")
        a.sgd = true;
    else
        throw ConfigError("agents.optimizer must be adam or sgd, got '" + opt + "'");
    a.minibatch = kv.get_int("agents.minibatch", a.minibatch);
    a.replay_capacity = kv.get_int("agents.replay", a.replay_capacity);
    a.warmup = kv.get_int("agents.warmup", a.warmup);
    a.eps_start = kv.get_double("agents.eps_start", a.eps_start);
    a.eps_floor = kv.get_double("agents.eps_floor", a.eps_floor);
    a.noise_start = kv.get_double("agents.noise_start", a.noise_start);
    a.noise_floor = kv.get_double("agents.noise_floor", a.noise_floor);
    a.soft_update = kv.get_double("agents.soft_update", a.soft_update);
    {
        const int g1 = kv.get_int("agents.gru1", 128);
        const int g2 = kv.get_int("agents.gru2", 128);
        a.net.gru = g2 > 0 ? std::vector<int>{g1, g2} : std::vector<int>{g1};
        a.net.dense = kv.get_int("agents.dense", a.net.dense);
    }

    PredictorConfig& p = c.train.predictor;
    p.lr = kv.get_double("predictor.lr", p.lr);
    const std::string popt = kv.get_string("predictor.optimizer", "adam");
    if (popt == "adam")
        p.sgd = false;
    else if (popt == "sgd")
        p.sgd = true;
    else
        throw ConfigError("predictor.optimizer must be adam or sgd, got '" + popt + "'");
    p.buffer_capacity = kv.get_int("predictor.buffer", p.buffer_capacity);
    p.minibatch = kv.get_int("predictor.minibatch", p.minibatch);
    {
        const int g1 = kv.get_int("predictor.gru1", 128);
        const int g2 = kv.get_int("predictor.gru2", 128);
        p.net.gru = g2 > 0 ? std::vector<int>{g1, g2} : std::vector<int>{g1};
        p.net.dense = kv.get_int("predictor.dense", p.net.dense);
    }
    p.n_max = c.n_max;

    RewardWeights& w = c.reward;
    c.mu = kv.get_double("orchestrator.mu", c.mu);
    w.x_s = kv.get_double("orchestrator.x_s", w.x_s);
    w.x_d = kv.get_double("orchestrator.x_d", w.x_d);
    w.x_e = kv.get_double("orchestrator.x_e", w.x_e);
    if (c.mu >= 0.0) {
        if (c.mu > 1.0) throw ConfigError("orchestrator.mu outside [0,1]");
        w = RewardWeights::from_mu(c.mu);
    }
    w.c_d = kv.get_double("orchestrator.c_d", w.c_d);
    w.c_e = kv.get_double("orchestrator.c_e", w.c_e);
    w.zero_success_sub =
        kv.get_double("orchestrator.zero_success_sub", w.zero_success_sub);
    c.train.t_o = kv.get_int("orchestrator.t_o", c.train.t_o);
    c.train.belief_raw = kv.get_bool("orchestrator.belief_raw", c.train.belief_raw);
    c.train.budget_frames = kv.get_i64("orchestrator.budget_frames", c.train.budget_frames);
    c.train.eval_every = kv.get_i64("orchestrator.eval_every", c.train.eval_every);
    c.train.eval_episodes = kv.get_int("orchestrator.eval_episodes", c.train.eval_episodes);
    c.train.decay_fraction = kv.get_double("orchestrator.decay_fraction", c.train.decay_fraction);

    c.sweep.mu_values = kv.get_double_list("sweep.mu_values", {});
    c.sweep.n_values = kv.get_int_list("sweep.n_values", {});

    kv.reject_unknown();
    c.validate();
    return c;
}

inline std::string format_double(double x) {
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

// Canonical INI text of the fully-resolved config; re-parsing it yields the
// same RunConfig, which is what the run manifest relies on.
inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[cli]\n";
    os << "scenario = " << scenario_name(c.scenario) << "\n";
    os << "episodes = " << c.episodes << "\n";
    os << "trails = " << c.trails << "\n";
    os << "seed = " << c.seed << "\n";
    os << "out = " << c.out_dir << "\n";
    if (!c.cache_dir.empty()) os << "cache_dir = " << c.cache_dir << "\n";

    const TrafficProfile& tp = c.rach.traffic;
    os << "\n[traffic]\n";
    os << "alpha = " << format_double(tp.alpha) << "\n";
    os << "beta = " << format_double(tp.beta) << "\n";
    os << "frames = " << tp.total_frames << "\n";
    os << "devices = " << tp.device_count << "\n";

    os << "\n[rach]\n";
    os << "preambles = " << c.rach.preambles << "\n";
    os << "max_attempts = " << c.rach.max_attempts << "\n";
    os << "frame_seconds = " << format_double(c.rach.frame_seconds) << "\n";
    os << "episode_cap = " << c.rach.episode_cap << "\n";
    os << "t_sy = " << format_double(c.energy.t_sy) << "\n";
    os << "p_sy = " << format_double(c.energy.p_sy) << "\n";
    os << "t_msg1 = " << format_double(c.energy.t_msg1) << "\n";
    os << "p_msg1 = " << format_double(c.energy.p_msg1) << "\n";
    os << "t_msg2 = " << format_double(c.energy.t_msg2) << "\n";
    os << "p_msg2 = " << format_double(c.energy.p_msg2) << "\n";
    os << "t_msg3 = " << format_double(c.energy.t_msg3) << "\n";
    os << "p_msg3 = " << format_double(c.energy.p_msg3) << "\n";
    os << "t_msg4 = " << format_double(c.energy.t_msg4) << "\n";
    os << "p_msg4 = " << format_double(c.energy.p_msg4) << "\n";

    os << "\n[schemes]\n";
    os << "fixed_acb = " << format_double(c.fixed.acb) << "\n";
    os << "fixed_bo = " << c.fixed.bo << "\n";
    os << "fixed_tdepth = " << c.fixed.tdepth << "\n";
    os << "fixed_tdegree = " << c.fixed.tdegree << "\n";

    os << "\n[estimators]\n";
    os << "kind = " << (c.est_kind == EstimatorKind::mle ? "mle" : "mom") << "\n";
    os << "n_max = " << c.n_max << "\n";

    const AgentConfig& a = c.train.agent;
    os << "\n[agents]\n";
    os << "discount_acb = " << format_double(c.train.discount_acb) << "\n";
    os << "discount = " << format_double(c.train.discount_other) << "\n";
    os << "lr = " << format_double(a.lr) << "\n";
    os << "optimizer = " << (a.sgd ? "sgd" : "adam") << "\n";
    os << "minibatch = " << a.minibatch << "\n";
    os << "replay = " << a.replay_capacity << "\n";
    os << "warmup = " << a.warmup << "\n";
    os << "eps_start = " << format_double(a.eps_start) << "\n";
    os << "eps_floor = " << format_double(a.eps_floor) << "\n";
    os << "noise_start = " << format_double(a.noise_start) << "\n";
    os << "noise_floor = " << format_double(a.noise_floor) << "\n";
    os << "soft_update = " << format_double(a.soft_update) << "\n";
    os << "gru1 = " << a.net.gru[0] << "\n";
    os << "gru2 = " << (a.net.gru.size() > 1 ? a.net.gru[1] : 0) << "\n";
    os << "dense = " << a.net.dense << "\n";

    const PredictorConfig& p = c.train.predictor;
    os << "\n[predictor]\n";
    os << "lr = " << format_double(p.lr) << "\n";
    os << "optimizer = " << (p.sgd ? "sgd" : "adam") << "\n";
    os << "buffer = " << p.buffer_capacity << "\n";
    os << "minibatch = " << p.minibatch << "\n";
    os << "gru1 = " << p.net.gru[0] << "\n";
    os << "gru2 = " << (p.net.gru.size() > 1 ? p.net.gru[1] : 0) << "\n";
    os << "dense = " << p.net.dense << "\n";

    const RewardWeights& w = c.reward;
    os << "\n[orchestrator]\n";
    if (c.mu >= 0.0) os << "mu = " << format_double(c.mu) << "\n";
    os << "x_s = " << format_double(w.x_s) << "\n";
    os << "x_d = " << format_double(w.x_d) << "\n";
    os << "x_e = " << format_double(w.x_e) << "\n";
    os << "c_d = " << format_double(w.c_d) << "\n";
    os << "c_e = " << format_double(w.c_e) << "\n";
    os << "zero_success_sub = " << format_double(w.zero_success_sub) << "\n";
    os << "t_o = " << c.train.t_o << "\n";
    os << "belief_raw = " << (c.train.belief_raw ? "true" : "false") << "\n";
    os << "budget_frames = " << c.train.budget_frames << "\n";
    os << "eval_every = " << c.train.eval_every << "\n";
    os << "eval_episodes = " << c.train.eval_episodes << "\n";
    os << "decay_fraction = " << format_double(c.train.decay_fraction) << "\n";

    if (!c.sweep.mu_values.empty() || !c.sweep.n_values.empty()) {
        os << "\n[sweep]\n";
        if (!c.sweep.mu_values.empty()) {
            os << "mu_values = ";
            for (std::size_t i = 0; i < c.sweep.mu_values.size(); ++i)
                os << (i ? "," : "") << format_double(c.sweep.mu_values[i]);
            os << "\n";
        }
        if (!c.sweep.n_values.empty()) {
            os << "n_values = ";
            for (std::size_t i = 0; i < c.sweep.n_values.size(); ++i)
                os << (i ? "," : "") << c.sweep.n_values[i];
            os << "\n";
        }
    }
    return os.str();
}

}  // namespace rachforge
