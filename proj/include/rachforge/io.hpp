// Run artifacts: ledger / curve / sweep CSVs, summary JSON, the run
// manifest, and checkpoint bundles (network weights, optimizer moments,
// replay memories, predictor buffer, RNG states).
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rachforge/config.hpp"
#include "rachforge/neural.hpp"
#include "rachforge/orchestrator.hpp"
#include "rachforge/rach.hpp"

namespace rachforge {

namespace fs = std::filesystem;

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- CSV ----

inline std::string ledger_csv(const EpisodeLedger& led) {
    std::ostringstream os;
    os.precision(17);
    os << "frame,V_s,V_c,V_i,V_e,V_d,backlog_true,acb,bo,tdepth,tdegree,reward\n";
    for (std::size_t i = 0; i < led.frames.size(); ++i) {
        const FrameObservation& o = led.frames[i];
        os << o.frame << ',' << o.v_s << ',' << o.v_c << ',' << o.v_i << ','
           << o.v_e << ',' << o.v_d << ',' << led.backlog_true[i] << ','
           << o.action.acb_factor << ',' << o.action.backoff_exponent << ','
           << o.action.tree_depth << ',' << o.action.tree_degree << ','
           << led.reward[i] << '\n';
    }
    return os.str();
}

inline void write_ledger_csv(const std::string& path, const EpisodeLedger& led) {
    write_text_file(path, ledger_csv(led));
}

inline void write_curve_csv(const std::string& path,
                            const std::vector<CurvePoint>& curve) {
    std::ostringstream os;
    os.precision(17);
    os << "frames_trained,mean_V_s,mean_reward,mean_delay,mean_energy\n";
    for (const CurvePoint& p : curve)
        os << p.frames_trained << ',' << p.mean_vs << ',' << p.mean_reward << ','
           << p.mean_delay << ',' << p.mean_energy << '\n';
    write_text_file(path, os.str());
}

struct SweepRow {
    std::string scheme;
    std::string cell_label;  // "mu" or "devices"
    double cell = 0.0;
    double mean_vs = 0.0;
    double mean_delay = 0.0;
    double mean_energy = 0.0;
    double mean_reward = 0.0;
};

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "cell_label,cell,scheme,mean_V_s,mean_delay,mean_energy,mean_reward\n";
    for (const SweepRow& r : rows)
        os << r.cell_label << ',' << r.cell << ',' << r.scheme << ',' << r.mean_vs
           << ',' << r.mean_delay << ',' << r.mean_energy << ',' << r.mean_reward
           << '\n';
    write_text_file(path, os.str());
}

// ---- JSON summaries ----

inline nlohmann::json summary_to_json(const EpisodeSummary& s) {
    return {{"seed", s.seed},
            {"frames", s.frames},
            {"succeeded", s.succeeded},
            {"dropped", s.dropped},
            {"mean_V_s", s.mean_vs},
            {"peak_mean_V_s", s.peak_mean_vs},
            {"mean_delay", s.mean_delay},
            {"mean_energy", s.mean_energy},
            {"mean_reward", s.mean_reward},
            {"truncated", s.truncated}};
}

inline nlohmann::json aggregate_summaries(const std::vector<EpisodeSummary>& eps) {
    double vs = 0, pk = 0, d = 0, e = 0, r = 0;
    int dropped = 0, succeeded = 0;
    for (const EpisodeSummary& s : eps) {
        vs += s.mean_vs;
        pk += s.peak_mean_vs;
        d += s.mean_delay;
        e += s.mean_energy;
        r += s.mean_reward;
        dropped += s.dropped;
        succeeded += s.succeeded;
    }
    const double n = eps.empty() ? 1.0 : static_cast<double>(eps.size());
    return {{"episodes", eps.size()},
            {"mean_V_s", vs / n},
            {"peak_mean_V_s", pk / n},
            {"mean_delay", d / n},
            {"mean_energy", e / n},
            {"mean_reward", r / n},
            {"succeeded", succeeded},
            {"dropped", dropped}};
}

inline void write_summary_json(const std::string& path,
                               const std::vector<EpisodeSummary>& eps) {
    nlohmann::json j;
    j["aggregate"] = aggregate_summaries(eps);
    j["episodes"] = nlohmann::json::array();
    for (const EpisodeSummary& s : eps) j["episodes"].push_back(summary_to_json(s));
    write_text_file(path, j.dump(2) + "\n");
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
    return {{"episodes", r.episodes},      {"mean_V_s", r.mean_vs},
            {"peak_mean_V_s", r.peak_mean_vs}, {"mean_reward", r.mean_reward},
            {"mean_delay", r.mean_delay},  {"mean_energy", r.mean_energy}};
}

// ---- manifest ----

// Everything needed to reproduce the run: resolved config, seed, version.
inline void write_manifest(const std::string& dir, const RunConfig& cfg,
                           const std::string& command) {
    nlohmann::json j;
    j["version"] = kVersion;
    j["command"] = command;
    j["scenario"] = scenario_name(cfg.scenario);
    j["seed"] = cfg.seed;
    j["trails"] = cfg.trails;
    j["config"] = serialize_config(cfg);
    write_text_file(dir + "/manifest.json", j.dump(2) + "\n");
}

// ---- binary helpers ----

namespace bin {

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw IoError("checkpoint: truncated stream");
    return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw IoError("checkpoint: truncated string");
    return s;
}

inline void put_vector(std::ostream& os, const Eigen::VectorXd& v) {
    put<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(sizeof(double) * v.size()));
}
inline Eigen::VectorXd get_vector(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double) * n));
    if (!is) throw IoError("checkpoint: truncated vector");
    return v;
}

inline void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(sizeof(double) * m.size()));
}
inline Eigen::MatrixXd get_matrix(std::istream& is) {
    const auto r = get<std::uint64_t>(is);
    const auto c = get<std::uint64_t>(is);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!is) throw IoError("checkpoint: truncated matrix");
    return m;
}

}  // namespace bin

// ---- network blobs ----

inline constexpr char kNetMagic[9] = "RACHFNET";
inline constexpr std::uint32_t kNetVersion = 1;

inline void save_net_blob(std::ostream& os, const GruNet& net, Optimizer* opt) {
    os.write(kNetMagic, 8);
    bin::put(os, kNetVersion);
    const NetSpec& s = net.spec();
    bin::put<std::int32_t>(os, s.input);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.gru.size()));
    for (int g : s.gru) bin::put<std::int32_t>(os, g);
    bin::put<std::int32_t>(os, s.dense);
    bin::put<std::int32_t>(os, s.output);
    bin::put_vector(os, net.params());
    bin::put<std::uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        bin::put<std::uint8_t>(os, opt->sgd() ? 1 : 0);
        bin::put<double>(os, opt->lr());
        bin::put<std::int64_t>(os, opt->t());
        bin::put_vector(os, opt->m());
        bin::put_vector(os, opt->v());
    }
}

inline void load_net_blob(std::istream& is, GruNet& net, Optimizer* opt) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kNetMagic, 8))
        throw IoError("checkpoint: bad network magic");
    if (bin::get<std::uint32_t>(is) != kNetVersion)
        throw IoError("checkpoint: unsupported network format version");
    NetSpec s;
    s.input = bin::get<std::int32_t>(is);
    s.gru.resize(bin::get<std::uint32_t>(is));
    for (int& g : s.gru) g = bin::get<std::int32_t>(is);
    s.dense = bin::get<std::int32_t>(is);
    s.output = bin::get<std::int32_t>(is);
    if (!(s == net.spec()))
        throw ConfigError("checkpoint: network shape does not match the config");
    Eigen::VectorXd w = bin::get_vector(is);
    if (w.size() != net.params().size())
        throw ConfigError("checkpoint: parameter count mismatch");
    net.params() = w;
    const bool has_opt = bin::get<std::uint8_t>(is) != 0;
    if (has_opt != (opt != nullptr))
        throw ConfigError("checkpoint: optimizer presence mismatch");
    if (opt) {
        const bool sgd = bin::get<std::uint8_t>(is) != 0;
        const double lr = bin::get<double>(is);
        if (sgd != opt->sgd() || lr != opt->lr())
            throw ConfigError("checkpoint: optimizer settings do not match the config");
        opt->t() = bin::get<std::int64_t>(is);
        Eigen::VectorXd m = bin::get_vector(is);
        Eigen::VectorXd v = bin::get_vector(is);
        if (m.size() != opt->m().size() || v.size() != opt->v().size())
            throw ConfigError("checkpoint: optimizer moment size mismatch");
        opt->m() = m;
        opt->v() = v;
    }
}

// ---- checkpoint bundle ----

inline constexpr char kCkpMagic[9] = "RACHFCKP";
inline constexpr std::uint32_t kCkpVersion = 1;

// Fields that must agree between a checkpoint and the config used to open
// it; anything else (budget, output paths, episode counts) may differ.
inline nlohmann::json compat_signature(const RunConfig& c) {
    nlohmann::json j;
    j["scenario"] = scenario_name(c.scenario);
    j["t_o"] = c.train.t_o;
    j["belief_raw"] = c.train.belief_raw;
    j["n_max"] = c.n_max;
    j["agent_gru"] = c.train.agent.net.gru;
    j["agent_dense"] = c.train.agent.net.dense;
    j["predictor_gru"] = c.train.predictor.net.gru;
    j["predictor_dense"] = c.train.predictor.net.dense;
    j["optimizer"] = c.train.agent.sgd ? "sgd" : "adam";
    return j;
}

namespace detail {

struct NamedNet {
    std::string name;
    GruNet* net = nullptr;
    Optimizer* opt = nullptr;  // null for target networks
};

inline std::vector<NamedNet> checkpoint_nets(Trainer& tr) {
    std::vector<NamedNet> nets;
    if (auto& a = tr.acb_ddpg()) {
        nets.push_back({"acb_ddpg.actor", &a->actor(), &a->actor_optimizer()});
        nets.push_back({"acb_ddpg.critic", &a->critic(), &a->critic_optimizer()});
        nets.push_back({"acb_ddpg.actor_target", &a->actor_target(), nullptr});
        nets.push_back({"acb_ddpg.critic_target", &a->critic_target(), nullptr});
    }
    if (auto& a = tr.acb_dqn()) {
        nets.push_back({"acb_dqn.primary", &a->primary(), &a->optimizer()});
        nets.push_back({"acb_dqn.target", &a->target(), nullptr});
    }
    if (auto& a = tr.acb_pg())
        nets.push_back({"acb_pg.policy", &a->policy(), &a->optimizer()});
    if (auto& a = tr.acb_ac()) {
        nets.push_back({"acb_ac.actor", &a->actor(), &a->actor_optimizer()});
        nets.push_back({"acb_ac.critic", &a->critic(), &a->critic_optimizer()});
    }
    if (auto& a = tr.bo_dqn()) {
        nets.push_back({"bo_dqn.primary", &a->primary(), &a->optimizer()});
        nets.push_back({"bo_dqn.target", &a->target(), nullptr});
    }
    if (auto& a = tr.dq_dqn()) {
        nets.push_back({"dq_dqn.primary", &a->primary(), &a->optimizer()});
        nets.push_back({"dq_dqn.target", &a->target(), nullptr});
    }
    if (auto& p = tr.predictor())
        nets.push_back({"predictor", &p->net(), &p->optimizer()});
    return nets;
}

inline std::vector<std::pair<std::string, ReplayMemory*>> checkpoint_replays(Trainer& tr) {
    std::vector<std::pair<std::string, ReplayMemory*>> out;
    if (auto& a = tr.acb_ddpg()) out.emplace_back("acb_ddpg", &a->replay());
    if (auto& a = tr.acb_dqn()) out.emplace_back("acb_dqn", &a->replay());
    if (auto& a = tr.bo_dqn()) out.emplace_back("bo_dqn", &a->replay());
    if (auto& a = tr.dq_dqn()) out.emplace_back("dq_dqn", &a->replay());
    return out;
}

inline void put_transition(std::ostream& os, const Transition& t) {
    bin::put_matrix(os, t.s);
    bin::put_matrix(os, t.s_next);
    bin::put<std::int32_t>(os, t.action_index);
    bin::put<double>(os, t.action_value);
    bin::put<double>(os, t.reward);
    bin::put<std::uint8_t>(os, t.terminal ? 1 : 0);
}

inline Transition get_transition(std::istream& is) {
    Transition t;
    t.s = bin::get_matrix(is);
    t.s_next = bin::get_matrix(is);
    t.action_index = bin::get<std::int32_t>(is);
    t.action_value = bin::get<double>(is);
    t.reward = bin::get<double>(is);
    t.terminal = bin::get<std::uint8_t>(is) != 0;
    return t;
}

}  // namespace detail

// Writes meta.json (signature + progress + RNG states), config.ini, and
// state.bin (nets, optimizers, replays, predictor buffer) into `dir`.
// Meant to run at episode boundaries, where no trajectory is in flight.
inline void save_checkpoint(const std::string& dir, Trainer& tr, const RunConfig& cfg) {
    ensure_dir(dir);

    nlohmann::json meta;
    meta["format"] = kCkpVersion;
    meta["signature"] = compat_signature(cfg);
    meta["seed"] = tr.seed();
    meta["frames"] = tr.frames_done();
    meta["episodes"] = tr.episodes_done();
    {
        std::ostringstream ex, rp;
        ex << tr.explore_rng();
        rp << tr.replay_rng();
        meta["rng_explore"] = ex.str();
        meta["rng_replay"] = rp.str();
    }
    write_text_file(dir + "/meta.json", meta.dump(2) + "\n");
    write_text_file(dir + "/config.ini", serialize_config(cfg));

    std::ofstream os(dir + "/state.bin", std::ios::binary);
    if (!os) throw IoError("cannot open " + dir + "/state.bin for writing");
    os.write(kCkpMagic, 8);
    bin::put(os, kCkpVersion);

    const auto nets = detail::checkpoint_nets(tr);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(nets.size()));
    for (const auto& n : nets) {
        bin::put_string(os, n.name);
        save_net_blob(os, *n.net, n.opt);
    }

    const auto replays = detail::checkpoint_replays(tr);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(replays.size()));
    for (const auto& [name, mem] : replays) {
        bin::put_string(os, name);
        bin::put<std::int64_t>(os, mem->inserted());
        bin::put<std::uint64_t>(os, mem->size());
        for (std::size_t i = 0; i < mem->size(); ++i)
            detail::put_transition(os, mem->at(i));
    }

    if (auto& p = tr.predictor()) {
        bin::put<std::uint8_t>(os, 1);
        bin::put<std::int64_t>(os, p->labels_seen());
        bin::put<std::uint64_t>(os, p->buffer().size());
        for (const LabeledWindow& lw : p->buffer()) {
            bin::put_matrix(os, lw.window);
            bin::put<std::int32_t>(os, lw.label);
        }
    } else {
        bin::put<std::uint8_t>(os, 0);
    }
    if (!os) throw IoError("write failed for " + dir + "/state.bin");
}

// Restores a bundle into a freshly constructed Trainer whose config matches
// the checkpoint's compatibility signature.
inline void load_checkpoint(const std::string& dir, Trainer& tr, const RunConfig& cfg) {
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text_file(dir + "/meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: cannot parse " + dir + "/meta.json: " + e.what());
    }
    if (meta.value("format", 0) != static_cast<int>(kCkpVersion))
        throw IoError("checkpoint: unsupported bundle format");
    if (meta["signature"] != compat_signature(cfg))
        throw ConfigError("checkpoint: signature does not match the config");

    std::ifstream is(dir + "/state.bin", std::ios::binary);
    if (!is) throw IoError("cannot open " + dir + "/state.bin");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCkpMagic, 8))
        throw IoError("checkpoint: bad bundle magic");
    if (bin::get<std::uint32_t>(is) != kCkpVersion)
        throw IoError("checkpoint: unsupported bundle version");

    const auto nets = detail::checkpoint_nets(tr);
    const auto net_count = bin::get<std::uint32_t>(is);
    if (net_count != nets.size())
        throw ConfigError("checkpoint: network roster does not match the scenario");
    for (const auto& n : nets) {
        const std::string name = bin::get_string(is);
        if (name != n.name)
            throw ConfigError("checkpoint: expected network '" + n.name + "', found '" +
                              name + "'");
        load_net_blob(is, *n.net, n.opt);
    }

    const auto replays = detail::checkpoint_replays(tr);
    const auto replay_count = bin::get<std::uint32_t>(is);
    if (replay_count != replays.size())
        throw ConfigError("checkpoint: replay roster does not match the scenario");
    for (const auto& [name, mem] : replays) {
        const std::string found = bin::get_string(is);
        if (found != name)
            throw ConfigError("checkpoint: expected replay '" + name + "', found '" +
                              found + "'");
        const auto inserted = bin::get<std::int64_t>(is);
        const auto n = bin::get<std::uint64_t>(is);
        std::vector<Transition> buf;
        buf.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i)
            buf.push_back(detail::get_transition(is));
        mem->restore(std::move(buf), inserted);
    }

    const bool has_predictor = bin::get<std::uint8_t>(is) != 0;
    if (has_predictor != tr.predictor().has_value())
        throw ConfigError("checkpoint: predictor presence mismatch");
    if (has_predictor) {
        const auto stored = bin::get<std::int64_t>(is);
        const auto n = bin::get<std::uint64_t>(is);
        std::vector<LabeledWindow> buf;
        buf.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            LabeledWindow lw;
            lw.window = bin::get_matrix(is);
            lw.label = bin::get<std::int32_t>(is);
            buf.push_back(std::move(lw));
        }
        tr.predictor()->restore_buffer(std::move(buf), stored);
    }

    {
        std::istringstream ex(meta["rng_explore"].get<std::string>());
        ex >> tr.explore_rng();
        std::istringstream rp(meta["rng_replay"].get<std::string>());
        rp >> tr.replay_rng();
        if (ex.fail() || rp.fail()) throw IoError("checkpoint: bad RNG state");
    }
    tr.set_progress(meta["frames"].get<std::int64_t>(),
                    meta["episodes"].get<std::int64_t>());
}

}  // namespace rachforge
