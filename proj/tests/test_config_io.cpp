#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rachforge/config.hpp"
#include "rachforge/io.hpp"

using namespace rachforge;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("rachforge_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

RunConfig tiny_run_config(Scenario sc) {
    RunConfig c;
    c.scenario = sc;
    c.seed = 21;
    c.rach.preambles = 6;
    c.rach.traffic.total_frames = 4;
    c.rach.traffic.device_count = 20;
    c.n_max = 80;
    c.train.budget_frames = 120;
    c.train.eval_every = 60;
    c.train.eval_episodes = 2;
    c.train.t_o = 3;
    c.train.agent.net.gru = {6};
    c.train.agent.net.dense = 6;
    c.train.agent.minibatch = 8;
    c.train.agent.replay_capacity = 256;
    c.train.agent.warmup = 16;
    c.train.predictor.net.gru = {6};
    c.train.predictor.net.dense = 6;
    c.train.predictor.minibatch = 8;
    c.train.predictor.buffer_capacity = 256;
    c.train.predictor.n_max = c.n_max;
    return c;
}

}  // namespace

TEST_CASE("ini parsing handles sections, comments and whitespace", "[config]") {
    KvStore kv = parse_ini(
        "# leading comment\n"
        "top = 1\n"
        "[traffic]\n"
        "  devices =  400   ; trailing comment\n"
        "alpha=3.0\n"
        "\n"
        "[cli]\n"
        "scenario = genie # inline\n");
    CHECK(kv.get_int("top", 0) == 1);
    CHECK(kv.get_int("traffic.devices", 0) == 400);
    CHECK(kv.get_double("traffic.alpha", 0.0) == 3.0);
    CHECK(kv.get_string("cli.scenario", "") == "genie");
    CHECK(kv.get_int("absent", 77) == 77);
}

TEST_CASE("ini parse errors carry line numbers", "[config]") {
    try {
        parse_ini("a = 1\n[broken\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        parse_ini("[ok]\nno equals sign here\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_ini("= value\n"), ConfigError);
    CHECK_THROWS_AS(parse_ini("[]\n"), ConfigError);
}

TEST_CASE("typed getters validate their values", "[config]") {
    KvStore kv = parse_ini(
        "[x]\n"
        "num = 12.5\n"
        "word = banana\n"
        "flag = yes\n"
        "offish = off\n"
        "list = 1, 2.5 ,3\n");
    CHECK(kv.get_double("x.num", 0.0) == 12.5);
    CHECK(kv.get_bool("x.flag", false));
    CHECK_FALSE(kv.get_bool("x.offish", true));
    CHECK_THROWS_AS(kv.get_double("x.word", 0.0), ConfigError);
    CHECK_THROWS_AS(kv.get_int("x.word", 0), ConfigError);
    CHECK_THROWS_AS(kv.get_bool("x.word", false), ConfigError);
    const auto xs = kv.get_double_list("x.list", {});
    REQUIRE(xs.size() == 3);
    CHECK(xs[1] == 2.5);
    CHECK(kv.get_int_list("x.missing", {9}).at(0) == 9);
}

TEST_CASE("unused keys are rejected", "[config]") {
    KvStore kv = parse_ini("[traffic]\ndevices = 10\nmisspelled = 1\n");
    kv.get_int("traffic.devices", 0);
    CHECK_THROWS_AS(kv.reject_unknown(), ConfigError);

    KvStore clean = parse_ini("[traffic]\ndevices = 10\n");
    clean.get_int("traffic.devices", 0);
    CHECK_NOTHROW(clean.reject_unknown());
}

TEST_CASE("overrides need a section-qualified key", "[config]") {
    KvStore kv = parse_ini("[traffic]\ndevices = 10\n");
    apply_override(kv, "traffic.devices=99");
    CHECK(kv.get_int("traffic.devices", 0) == 99);
    CHECK_THROWS_AS(apply_override(kv, "devices=99"), ConfigError);
    CHECK_THROWS_AS(apply_override(kv, "=5"), ConfigError);
    CHECK_THROWS_AS(apply_override(kv, "traffic.devices"), ConfigError);
}

TEST_CASE("run config defaults survive an empty store", "[config]") {
    KvStore kv;
    const RunConfig c = build_run_config(kv);
    CHECK(c.scenario == Scenario::baseline);
    CHECK(c.rach.preambles == 54);
    CHECK(c.rach.traffic.device_count == 400);
    CHECK(c.rach.traffic.total_frames == 20);
    CHECK(c.n_max == 600);
    CHECK(c.train.agent.net.gru == std::vector<int>{128, 128});
    CHECK(c.train.t_o == 20);
    CHECK(c.mu < 0.0);
    CHECK(c.reward.x_s == 1.0);
    CHECK(c.reward.x_d == 0.0);
}

TEST_CASE("run config wires sections through", "[config]") {
    KvStore kv = parse_ini(
        "[cli]\n"
        "scenario = acb-dqn\n"
        "seed = 77\n"
        "trails = 3\n"
        "[traffic]\n"
        "devices = 120\n"
        "frames = 10\n"
        "[estimators]\n"
        "kind = mom\n"
        "n_max = 300\n"
        "[agents]\n"
        "gru1 = 16\n"
        "gru2 = 0\n"
        "dense = 12\n"
        "optimizer = sgd\n"
        "[orchestrator]\n"
        "mu = 0.25\n"
        "c_d = 8\n"
        "budget_frames = 5000\n"
        "[sweep]\n"
        "mu_values = 0,0.5,1\n"
        "n_values = 100,200\n");
    const RunConfig c = build_run_config(kv);
    CHECK(c.scenario == Scenario::acb_dqn);
    CHECK(c.seed == 77);
    CHECK(c.trails == 3);
    CHECK(c.rach.traffic.device_count == 120);
    CHECK(c.est_kind == EstimatorKind::mom);
    CHECK(c.n_max == 300);
    CHECK(c.train.predictor.n_max == 300);
    CHECK(c.train.agent.net.gru == std::vector<int>{16});
    CHECK(c.train.agent.net.dense == 12);
    CHECK(c.train.agent.sgd);
    // mu drives the weight split, then explicit constants still apply.
    CHECK(c.mu == 0.25);
    CHECK(c.reward.x_s == 1.0);
    CHECK(c.reward.x_d == 0.25);
    CHECK(c.reward.x_e == 0.75);
    CHECK(c.reward.c_d == 8.0);
    CHECK(c.train.budget_frames == 5000);
    CHECK(c.sweep.mu_values == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(c.sweep.n_values == std::vector<int>{100, 200});
}

TEST_CASE("run config rejects bad values", "[config]") {
    {
        KvStore kv = parse_ini("[cli]\nscenario = nonesuch\n");
        CHECK_THROWS_AS(build_run_config(kv), ConfigError);
    }
    {
        KvStore kv = parse_ini("[cli]\nepisodes = 0\n");
        CHECK_THROWS_AS(build_run_config(kv), ConfigError);
    }
    {
        KvStore kv = parse_ini("[schemes]\nfixed_acb = 1.5\n");
        CHECK_THROWS_AS(build_run_config(kv), ConfigError);
    }
    {
        KvStore kv = parse_ini("[orchestrator]\nmu = 1.5\n");
        CHECK_THROWS_AS(build_run_config(kv), ConfigError);
    }
    {
        KvStore kv = parse_ini("[traffic]\ndevicess = 10\n");
        CHECK_THROWS_AS(build_run_config(kv), ConfigError);
    }
    {
        KvStore kv = parse_ini("[agents]\noptimizer = rmsprop\n");
        CHECK_THROWS_AS(build_run_config(kv), ConfigError);
    }
}

TEST_CASE("serialized configs are a fixed point", "[config]") {
    KvStore kv = parse_ini(
        "[cli]\nscenario = hybrid-decoupled\nseed = 5\n"
        "[estimators]\nkind = mom\n"
        "[traffic]\ndevices = 55\n"
        "[orchestrator]\nmu = 0.5\nbelief_raw = true\n"
        "[sweep]\nn_values = 50,100\n");
    const RunConfig c = build_run_config(kv);
    const std::string text = serialize_config(c);

    KvStore kv2 = parse_ini(text);
    const RunConfig c2 = build_run_config(kv2);
    CHECK(serialize_config(c2) == text);
    CHECK(c2.scenario == c.scenario);
    CHECK(c2.seed == c.seed);
    CHECK(c2.rach.traffic.device_count == 55);
    CHECK(c2.est_kind == EstimatorKind::mom);
    CHECK(c2.mu == 0.5);
    CHECK(c2.train.belief_raw);
    CHECK(c2.sweep.n_values == std::vector<int>{50, 100});
}

TEST_CASE("format_double round trips exactly", "[config]") {
    for (double x : {0.1, 1.0 / 3.0, 0.64, 1e-9, 123456.789}) {
        CHECK(std::stod(format_double(x)) == x);
    }
}

TEST_CASE("text files and directories round trip", "[config]") {
    TempDir dir("textio");
    const std::string nested = dir.str() + "/a/b/c";
    ensure_dir(nested);
    CHECK(fs::exists(nested));
    write_text_file(nested + "/f.txt", "hello\nworld\n");
    CHECK(read_text_file(nested + "/f.txt") == "hello\nworld\n");
    CHECK_THROWS_AS(read_text_file(dir.str() + "/nope.txt"), IoError);
    CHECK_THROWS_AS(write_text_file(dir.str() + "/no/such/dir/f.txt", "x"), IoError);
}

TEST_CASE("ledger CSV emits the fixed column set", "[config]") {
    EpisodeLedger led;
    led.frames.resize(1);
    led.frames[0].frame = 1;
    led.frames[0].v_s = 2;
    led.frames[0].v_c = 3;
    led.frames[0].v_i = 49;
    led.frames[0].v_e = 0.5;
    led.frames[0].v_d = 1.5;
    led.frames[0].action = {0.25, 4, 2, 3};
    led.backlog_true = {17};
    led.reward = {0.75};

    const std::string csv = ledger_csv(led);
    std::istringstream lines(csv);
    std::string header, row;
    std::getline(lines, header);
    std::getline(lines, row);
    CHECK(header == "frame,V_s,V_c,V_i,V_e,V_d,backlog_true,acb,bo,tdepth,tdegree,reward");
    CHECK(row == "1,2,3,49,0.5,1.5,17,0.25,4,2,3,0.75");
}

TEST_CASE("curve and sweep CSVs carry their headers", "[config]") {
    TempDir dir("csv");
    write_curve_csv(dir.str() + "/curve.csv", {{100, 1.5, 0.25, 3.0, 0.125}});
    const std::string curve = read_text_file(dir.str() + "/curve.csv");
    CHECK(curve.rfind("frames_trained,mean_V_s,mean_reward,mean_delay,mean_energy\n", 0) ==
          0);
    CHECK(curve.find("100,1.5,0.25,3,0.125") != std::string::npos);

    SweepRow row{"genie", "mu", 0.5, 20.0, 4.0, 0.3, 1.1};
    write_sweep_csv(dir.str() + "/sweep.csv", {row});
    std::istringstream sweep(read_text_file(dir.str() + "/sweep.csv"));
    std::string line;
    std::getline(sweep, line);
    CHECK(line == "cell_label,cell,scheme,mean_V_s,mean_delay,mean_energy,mean_reward");
    std::getline(sweep, line);
    CHECK(line.rfind("mu,0.5,genie,20,4,", 0) == 0);
    // The doubles are written with enough digits to round trip exactly.
    const auto tail_at = line.find("genie,20,4,") + std::string("genie,20,4,").size();
    std::istringstream tail_vals(line.substr(tail_at));
    std::string cell;
    std::getline(tail_vals, cell, ',');
    CHECK(std::stod(cell) == 0.3);
    std::getline(tail_vals, cell, ',');
    CHECK(std::stod(cell) == 1.1);
}

TEST_CASE("summary JSON aggregates and parses back", "[config]") {
    TempDir dir("summary");
    EpisodeSummary a;
    a.seed = 1;
    a.frames = 10;
    a.mean_vs = 2.0;
    a.succeeded = 18;
    a.dropped = 2;
    EpisodeSummary b = a;
    b.seed = 2;
    b.mean_vs = 4.0;

    write_summary_json(dir.str() + "/summary.json", {a, b});
    const auto j = nlohmann::json::parse(read_text_file(dir.str() + "/summary.json"));
    CHECK(j["aggregate"]["episodes"] == 2);
    CHECK(j["aggregate"]["mean_V_s"] == 3.0);
    CHECK(j["aggregate"]["succeeded"] == 36);
    REQUIRE(j["episodes"].size() == 2);
    CHECK(j["episodes"][1]["seed"] == 2);
    CHECK(j["episodes"][0]["mean_V_s"] == 2.0);
}

TEST_CASE("manifests embed a re-parseable config", "[config]") {
    TempDir dir("manifest");
    RunConfig c = tiny_run_config(Scenario::genie);
    write_manifest(dir.str(), c, "simulate");
    const auto j = nlohmann::json::parse(read_text_file(dir.str() + "/manifest.json"));
    CHECK(j["version"] == kVersion);
    CHECK(j["command"] == "simulate");
    CHECK(j["scenario"] == "genie");
    CHECK(j["seed"] == 21);
    KvStore kv = parse_ini(j["config"].get<std::string>());
    const RunConfig back = build_run_config(kv);
    CHECK(serialize_config(back) == serialize_config(c));
}

TEST_CASE("binary helpers round trip", "[config]") {
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    bin::put<std::int64_t>(ss, -42);
    bin::put_string(ss, "rach");
    Eigen::VectorXd v(3);
    v << 1.0, -2.5, 3.25;
    bin::put_vector(ss, v);
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    bin::put_matrix(ss, m);

    CHECK(bin::get<std::int64_t>(ss) == -42);
    CHECK(bin::get_string(ss) == "rach");
    CHECK(bin::get_vector(ss) == v);
    CHECK(bin::get_matrix(ss) == m);
    CHECK_THROWS_AS(bin::get<double>(ss), IoError);  // past the end
}

TEST_CASE("net blobs restore weights and optimizer state", "[config]") {
    NetSpec spec;
    spec.input = 3;
    spec.gru = {5};
    spec.dense = 4;
    spec.output = 2;
    GruNet net(spec);
    Rng init = make_rng(3, stream::kInit);
    net.init(init);
    Optimizer opt(net.param_count(), 1e-3, false);
    {
        Eigen::VectorXd g = Eigen::VectorXd::Constant(net.param_count(), 0.1);
        opt.step(net.params(), g);
        opt.step(net.params(), g);
    }

    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    save_net_blob(ss, net, &opt);

    GruNet other(spec);
    Optimizer opt2(other.param_count(), 1e-3, false);
    load_net_blob(ss, other, &opt2);
    CHECK(other.params() == net.params());
    CHECK(opt2.t() == 2);
    CHECK(opt2.m() == opt.m());
    CHECK(opt2.v() == opt.v());
}

TEST_CASE("net blobs refuse mismatched shapes and settings", "[config]") {
    NetSpec spec;
    spec.input = 3;
    spec.gru = {5};
    spec.dense = 4;
    spec.output = 2;
    GruNet net(spec);
    Rng init = make_rng(5, stream::kInit);
    net.init(init);
    Optimizer opt(net.param_count(), 1e-3, false);

    auto fresh_blob = [&]() {
        std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
        save_net_blob(ss, net, &opt);
        return ss;
    };

    {
        auto ss = fresh_blob();
        NetSpec wide = spec;
        wide.dense = 8;
        GruNet other(wide);
        Optimizer o2(other.param_count(), 1e-3, false);
        CHECK_THROWS_AS(load_net_blob(ss, other, &o2), ConfigError);
    }
    {
        auto ss = fresh_blob();
        GruNet other(spec);
        CHECK_THROWS_AS(load_net_blob(ss, other, nullptr), ConfigError);
    }
    {
        auto ss = fresh_blob();
        GruNet other(spec);
        Optimizer o2(other.param_count(), 5e-4, false);  // different lr
        CHECK_THROWS_AS(load_net_blob(ss, other, &o2), ConfigError);
    }
    {
        std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
        ss << "NOTANETX";
        GruNet other(spec);
        CHECK_THROWS_AS(load_net_blob(ss, other, nullptr), IoError);
    }
    {
        auto ss = fresh_blob();
        const std::string whole = ss.str();
        std::stringstream cut(whole.substr(0, whole.size() / 2),
                              std::ios::in | std::ios::binary);
        GruNet other(spec);
        Optimizer o2(other.param_count(), 1e-3, false);
        CHECK_THROWS_AS(load_net_blob(cut, other, &o2), IoError);
    }
}

TEST_CASE("resuming a checkpoint reproduces the uninterrupted run", "[config][long]") {
    TempDir dir("resume");
    RunConfig half = tiny_run_config(Scenario::decoupled_genie);
    half.train.budget_frames = 120;
    half.train.decay_fraction = 0.4;  // decay horizon 48 frames
    RunConfig full = half;
    full.train.budget_frames = 240;
    full.train.decay_fraction = 0.2;  // same 48-frame horizon

    const SimSetup setup = half.to_setup(nullptr);
    const TrainerSpec spec = trainer_spec_for(half.scenario);

    // Train to 120 frames and checkpoint.
    Trainer first(setup, half.train, spec, half.seed);
    first.train();
    save_checkpoint(dir.str() + "/ckpt", first, half);
    CHECK(fs::exists(dir.path / "ckpt" / "meta.json"));
    CHECK(fs::exists(dir.path / "ckpt" / "state.bin"));
    CHECK(fs::exists(dir.path / "ckpt" / "config.ini"));

    // Resume from the bundle and continue to 240.
    Trainer resumed(setup, full.train, spec, full.seed);
    load_checkpoint(dir.str() + "/ckpt", resumed, full);
    CHECK(resumed.frames_done() == first.frames_done());
    CHECK(resumed.episodes_done() == first.episodes_done());
    CHECK(resumed.predictor()->labels_seen() == first.predictor()->labels_seen());
    const TrainOutcome tail = resumed.train();

    // Reference: the same 240 frames without the interruption.
    Trainer straight(setup, full.train, spec, full.seed);
    const TrainOutcome whole = straight.train();

    REQUIRE(whole.episode_losses.size() >= tail.episode_losses.size());
    const std::size_t skip = whole.episode_losses.size() - tail.episode_losses.size();
    for (std::size_t i = 0; i < tail.episode_losses.size(); ++i)
        CHECK(tail.episode_losses[i] == whole.episode_losses[skip + i]);
    CHECK(tail.final_eval.mean_vs == whole.final_eval.mean_vs);
    CHECK(tail.final_eval.mean_reward == whole.final_eval.mean_reward);
    CHECK(resumed.frames_done() == straight.frames_done());
}

TEST_CASE("checkpoints refuse configs with a different signature", "[config]") {
    TempDir dir("ckptsig");
    RunConfig cfg = tiny_run_config(Scenario::acb_dqn);
    const SimSetup setup = cfg.to_setup(nullptr);
    const TrainerSpec spec = trainer_spec_for(cfg.scenario);
    Trainer tr(setup, cfg.train, spec, cfg.seed);
    tr.train();
    save_checkpoint(dir.str() + "/ckpt", tr, cfg);

    RunConfig other = cfg;
    other.train.t_o = 5;
    Trainer tr2(setup, other.train, spec, other.seed);
    CHECK_THROWS_AS(load_checkpoint(dir.str() + "/ckpt", tr2, other), ConfigError);

    // A different scenario changes the agent roster and the signature.
    RunConfig mism = cfg;
    mism.scenario = Scenario::bo_dqn;
    Trainer tr3(setup, mism.train, trainer_spec_for(mism.scenario), mism.seed);
    CHECK_THROWS_AS(load_checkpoint(dir.str() + "/ckpt", tr3, mism), ConfigError);

    // Absent bundle directory surfaces as an I/O failure.
    Trainer tr4(setup, cfg.train, spec, cfg.seed);
    CHECK_THROWS_AS(load_checkpoint(dir.str() + "/nowhere", tr4, cfg), IoError);
}
