// Command-line front end: simulate | train | evaluate | sweep over a single
// INI run config, with per-flag overrides and deterministic trail fan-out.
#pragma once

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rachforge/config.hpp"
#include "rachforge/estimators.hpp"
#include "rachforge/io.hpp"
#include "rachforge/orchestrator.hpp"

namespace rachforge {

struct CliOptions {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<int> trails;
    std::optional<std::string> out;
};

// File < --override < explicit flags; everything funnels through the store
// so unknown-key detection still covers the whole surface.
inline RunConfig resolve_config(const CliOptions& o) {
    KvStore kv;
    if (!o.config_path.empty()) kv = load_config_file(o.config_path);
    for (const std::string& ov : o.overrides) apply_override(kv, ov);
    if (o.seed) kv.set("cli.seed", std::to_string(*o.seed));
    if (o.trails) kv.set("cli.trails", std::to_string(*o.trails));
    if (o.out) kv.set("cli.out", *o.out);
    return build_run_config(kv);
}

inline std::optional<LikelihoodTable> maybe_table(const RunConfig& cfg) {
    if (!cfg.needs_likelihood_table()) return std::nullopt;
    return cached_likelihood_table(cfg.rach.preambles, cfg.n_max, cfg.cache_dir);
}

namespace detail {

struct ClassicalRun {
    std::vector<EpisodeSummary> episodes;
    std::vector<EpisodeLedger> ledgers;
};

inline ClassicalRun run_classical(const RunConfig& cfg, const SimSetup& setup) {
    ClassicalRun out;
    out.episodes.resize(static_cast<std::size_t>(cfg.episodes));
    out.ledgers.resize(static_cast<std::size_t>(cfg.episodes));
    parallel_trails(cfg.episodes, [&](int i) {
        RachEnv env(setup.rach, setup.energy);
        auto ctl = classical_controller(cfg.scenario, setup);
        const std::uint64_t seed =
            derive_seed(cfg.seed, stream::kEnv, static_cast<std::uint64_t>(i));
        out.episodes[static_cast<std::size_t>(i)] =
            run_classical_episode(env, seed, ctl, setup.reward);
        out.ledgers[static_cast<std::size_t>(i)] = env.ledger();
    });
    return out;
}

inline std::string trail_dir(const RunConfig& cfg, int trail) {
    return cfg.out_dir + "/trail" + std::to_string(trail);
}

}  // namespace detail

inline void cmd_simulate(const RunConfig& cfg) {
    if (is_learning(cfg.scenario))
        throw ConfigError("simulate runs classical scenarios only; use train for '" +
                          std::string(scenario_name(cfg.scenario)) + "'");
    ensure_dir(cfg.out_dir);
    write_manifest(cfg.out_dir, cfg, "simulate");
    const std::optional<LikelihoodTable> table = maybe_table(cfg);
    const SimSetup setup = cfg.to_setup(table ? &*table : nullptr);
    const detail::ClassicalRun run = detail::run_classical(cfg, setup);
    for (int i = 0; i < cfg.episodes; ++i)
        write_ledger_csv(cfg.out_dir + "/ledger_ep" + std::to_string(i) + ".csv",
                         run.ledgers[static_cast<std::size_t>(i)]);
    write_summary_json(cfg.out_dir + "/summary.json", run.episodes);
}

inline void cmd_train(const RunConfig& cfg) {
    if (!is_learning(cfg.scenario))
        throw ConfigError("train needs a learning scenario; got '" +
                          std::string(scenario_name(cfg.scenario)) + "'");
    ensure_dir(cfg.out_dir);
    write_manifest(cfg.out_dir, cfg, "train");
    const std::optional<LikelihoodTable> table = maybe_table(cfg);
    const TrainerSpec tspec = trainer_spec_for(cfg.scenario);
    parallel_trails(cfg.trails, [&](int t) {
        const std::string tdir = detail::trail_dir(cfg, t);
        ensure_dir(tdir);
        Trainer tr(cfg.to_setup(table ? &*table : nullptr), cfg.train, tspec,
                   cfg.seed + static_cast<std::uint64_t>(t));
        const TrainOutcome out = tr.train();
        write_curve_csv(tdir + "/curve.csv", out.curve);
        save_checkpoint(tdir + "/checkpoint", tr, cfg);
        nlohmann::json j;
        j["trail"] = t;
        j["frames_trained"] = out.frames_trained;
        j["final_eval"] = eval_to_json(out.final_eval);
        j["episode_losses"] = out.episode_losses;
        write_text_file(tdir + "/train.json", j.dump(2) + "\n");
    });
}

inline void cmd_evaluate(const RunConfig& cfg) {
    ensure_dir(cfg.out_dir);
    write_manifest(cfg.out_dir, cfg, "evaluate");
    if (!is_learning(cfg.scenario)) {
        // Same seeds and code path as simulate, so the summaries match it.
        const std::optional<LikelihoodTable> table = maybe_table(cfg);
        const SimSetup setup = cfg.to_setup(table ? &*table : nullptr);
        const detail::ClassicalRun run = detail::run_classical(cfg, setup);
        write_summary_json(cfg.out_dir + "/summary.json", run.episodes);
        return;
    }
    const std::optional<LikelihoodTable> table = maybe_table(cfg);
    const TrainerSpec tspec = trainer_spec_for(cfg.scenario);
    std::vector<EvalResult> evals(static_cast<std::size_t>(cfg.trails));
    parallel_trails(cfg.trails, [&](int t) {
        Trainer tr(cfg.to_setup(table ? &*table : nullptr), cfg.train, tspec,
                   cfg.seed + static_cast<std::uint64_t>(t));
        load_checkpoint(detail::trail_dir(cfg, t) + "/checkpoint", tr, cfg);
        evals[static_cast<std::size_t>(t)] = tr.evaluate(cfg.episodes);
    });
    nlohmann::json j;
    j["trails"] = nlohmann::json::array();
    EvalResult mean;
    mean.episodes = cfg.episodes;
    for (const EvalResult& e : evals) {
        j["trails"].push_back(eval_to_json(e));
        mean.mean_vs += e.mean_vs / cfg.trails;
        mean.peak_mean_vs += e.peak_mean_vs / cfg.trails;
        mean.mean_reward += e.mean_reward / cfg.trails;
        mean.mean_delay += e.mean_delay / cfg.trails;
        mean.mean_energy += e.mean_energy / cfg.trails;
    }
    j["mean"] = eval_to_json(mean);
    write_text_file(cfg.out_dir + "/eval.json", j.dump(2) + "\n");
}

inline void cmd_sweep(const RunConfig& cfg) {
    if (cfg.sweep.mu_values.empty() && cfg.sweep.n_values.empty())
        throw ConfigError("sweep needs sweep.mu_values and/or sweep.n_values");
    ensure_dir(cfg.out_dir);
    write_manifest(cfg.out_dir, cfg, "sweep");
    const std::optional<LikelihoodTable> table = maybe_table(cfg);
    const LikelihoodTable* tbl = table ? &*table : nullptr;

    auto run_cell = [&](const RunConfig& cell, const std::string& label,
                        double value) -> SweepRow {
        SweepRow row;
        row.scheme = scenario_name(cell.scenario);
        row.cell_label = label;
        row.cell = value;
        if (!is_learning(cell.scenario)) {
            const SimSetup setup = cell.to_setup(tbl);
            const detail::ClassicalRun run = detail::run_classical(cell, setup);
            for (const EpisodeSummary& s : run.episodes) {
                row.mean_vs += s.mean_vs / run.episodes.size();
                row.mean_delay += s.mean_delay / run.episodes.size();
                row.mean_energy += s.mean_energy / run.episodes.size();
                row.mean_reward += s.mean_reward / run.episodes.size();
            }
            return row;
        }
        const TrainerSpec tspec = trainer_spec_for(cell.scenario);
        std::vector<EvalResult> evals(static_cast<std::size_t>(cell.trails));
        parallel_trails(cell.trails, [&](int t) {
            Trainer tr(cell.to_setup(tbl), cell.train, tspec,
                       cell.seed + static_cast<std::uint64_t>(t));
            evals[static_cast<std::size_t>(t)] = tr.train().final_eval;
        });
        for (const EvalResult& e : evals) {
            row.mean_vs += e.mean_vs / cell.trails;
            row.mean_delay += e.mean_delay / cell.trails;
            row.mean_energy += e.mean_energy / cell.trails;
            row.mean_reward += e.mean_reward / cell.trails;
        }
        return row;
    };

    std::vector<SweepRow> rows;
    for (double mu : cfg.sweep.mu_values) {
        RunConfig cell = cfg;
        cell.mu = mu;
        cell.reward = RewardWeights::from_mu(mu);
        cell.reward.c_d = cfg.reward.c_d;
        cell.reward.c_e = cfg.reward.c_e;
        cell.reward.zero_success_sub = cfg.reward.zero_success_sub;
        rows.push_back(run_cell(cell, "mu", mu));
    }
    for (int n : cfg.sweep.n_values) {
        RunConfig cell = cfg;
        cell.rach.traffic.device_count = n;
        rows.push_back(run_cell(cell, "devices", static_cast<double>(n)));
    }
    write_sweep_csv(cfg.out_dir + "/sweep.csv", rows);
}

inline int run_main(int argc, char** argv) {
    CLI::App app{"rachforge: massive-IoT random access simulation and training"};
    app.require_subcommand(1);
    CliOptions o;
    auto add_common = [&o](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "run configuration file (INI)");
        sub->add_option("--seed", o.seed, "base seed (overrides config)");
        sub->add_option("--trails", o.trails, "independent trails (overrides config)");
        sub->add_option("--out", o.out, "output directory (overrides config)");
        sub->add_option("--override", o.overrides,
                        "config override, section.key=value (repeatable)");
    };
    CLI::App* sim = app.add_subcommand("simulate", "run a classical scenario");
    CLI::App* trn = app.add_subcommand("train", "train a learning scenario");
    CLI::App* evl = app.add_subcommand("evaluate", "greedy evaluation");
    CLI::App* swp = app.add_subcommand("sweep", "grid over mu and/or device counts");
    for (CLI::App* sub : {sim, trn, evl, swp}) add_common(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = resolve_config(o);
        if (sim->parsed())
            cmd_simulate(cfg);
        else if (trn->parsed())
            cmd_train(cfg);
        else if (evl->parsed())
            cmd_evaluate(cfg);
        else
            cmd_sweep(cfg);
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
}

}  // namespace rachforge
