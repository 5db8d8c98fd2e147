#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "rachforge/io.hpp"

using namespace rachforge;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("rachforge_cli_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

int run_cli(const std::string& args, const std::string& capture = "") {
    std::string cmd = std::string(RACHFORGE_BIN_PATH) + " " + args;
    if (capture.empty())
        cmd += " >/dev/null 2>&1";
    else
        cmd += " >" + capture + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

// Parses a CSV body into rows of strings, header dropped.
std::vector<std::vector<std::string>> csv_rows(const std::string& path,
                                               std::string* header = nullptr) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::getline(in, line);
    if (header) *header = line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

const char* kClassicalIni =
    "[cli]\n"
    "scenario = genie\n"
    "episodes = 3\n"
    "seed = 9\n"
    "[traffic]\n"
    "devices = 12\n"
    "frames = 3\n"
    "[rach]\n"
    "preambles = 5\n";

const char* kTrainIni =
    "[cli]\n"
    "scenario = acb-dqn\n"
    "episodes = 2\n"
    "seed = 11\n"
    "[traffic]\n"
    "devices = 12\n"
    "frames = 3\n"
    "[rach]\n"
    "preambles = 5\n"
    "[estimators]\n"
    "n_max = 48\n"
    "[agents]\n"
    "gru1 = 4\n"
    "gru2 = 0\n"
    "dense = 4\n"
    "minibatch = 4\n"
    "replay = 128\n"
    "warmup = 8\n"
    "[orchestrator]\n"
    "t_o = 3\n"
    "budget_frames = 80\n"
    "eval_every = 40\n"
    "eval_episodes = 2\n";

}  // namespace

TEST_CASE("help text lists the subcommands", "[cli]") {
    TempDir dir("help");
    const std::string log = dir.str() + "/help.txt";
    CHECK(run_cli("--help", log) == 0);
    const std::string text = read_text_file(log);
    for (const char* sub : {"simulate", "train", "evaluate", "sweep"})
        CHECK(text.find(sub) != std::string::npos);
}

TEST_CASE("argument errors exit with the config code", "[cli]") {
    CHECK(run_cli("") == 2);                    // subcommand required
    CHECK(run_cli("frobnicate") == 2);          // unknown subcommand
    CHECK(run_cli("simulate --no-such-flag") == 2);
}

TEST_CASE("missing and malformed configs map to distinct codes", "[cli]") {
    TempDir dir("badcfg");
    CHECK(run_cli("simulate --config " + dir.str() + "/absent.ini") == 3);

    write_file(dir.path / "unknown.ini", "[traffic]\nbogus = 1\n");
    CHECK(run_cli("simulate --config " + dir.str() + "/unknown.ini") == 2);

    write_file(dir.path / "broken.ini", "[traffic\ndevices = 4\n");
    CHECK(run_cli("simulate --config " + dir.str() + "/broken.ini") == 2);
}

TEST_CASE("simulate writes manifest, ledgers and a summary", "[cli]") {
    TempDir dir("simulate");
    write_file(dir.path / "run.ini", kClassicalIni);
    const std::string out = dir.str() + "/out";
    REQUIRE(run_cli("simulate --config " + dir.str() + "/run.ini --out " + out) == 0);

    const json manifest = json::parse(read_text_file(out + "/manifest.json"));
    CHECK(manifest["command"] == "simulate");
    CHECK(manifest["scenario"] == "genie");
    CHECK(manifest["seed"] == 9);

    const json summary = json::parse(read_text_file(out + "/summary.json"));
    REQUIRE(summary["episodes"].size() == 3);
    for (int i = 0; i < 3; ++i) {
        const json& ep = summary["episodes"][i];
        CHECK(ep["succeeded"].get<int>() + ep["dropped"].get<int>() == 12);

        std::string header;
        const auto rows = csv_rows(out + "/ledger_ep" + std::to_string(i) + ".csv",
                                   &header);
        CHECK(header ==
              "frame,V_s,V_c,V_i,V_e,V_d,backlog_true,acb,bo,tdepth,tdegree,reward");
        CHECK(static_cast<int>(rows.size()) == ep["frames"].get<int>());
        int vs_total = 0;
        for (const auto& r : rows) vs_total += std::stoi(r.at(1));
        CHECK(vs_total == ep["succeeded"].get<int>());
    }
}

TEST_CASE("simulate refuses learning scenarios and train classical ones", "[cli]") {
    TempDir dir("refuse");
    write_file(dir.path / "learn.ini", kTrainIni);
    write_file(dir.path / "classic.ini", kClassicalIni);
    CHECK(run_cli("simulate --config " + dir.str() + "/learn.ini --out " + dir.str() +
                  "/a") == 2);
    CHECK(run_cli("train --config " + dir.str() + "/classic.ini --out " + dir.str() +
                  "/b") == 2);
}

TEST_CASE("seed flag overrides the config seed", "[cli]") {
    TempDir dir("seeds");
    write_file(dir.path / "run.ini", kClassicalIni);
    const std::string base = "simulate --config " + dir.str() + "/run.ini --out ";
    REQUIRE(run_cli(base + dir.str() + "/a") == 0);
    REQUIRE(run_cli(base + dir.str() + "/b --seed 9") == 0);
    REQUIRE(run_cli(base + dir.str() + "/c --seed 10") == 0);
    const std::string a = read_text_file(dir.str() + "/a/summary.json");
    CHECK(a == read_text_file(dir.str() + "/b/summary.json"));
    CHECK(a != read_text_file(dir.str() + "/c/summary.json"));
}

TEST_CASE("evaluate matches simulate on classical scenarios", "[cli]") {
    TempDir dir("evalclassic");
    write_file(dir.path / "run.ini", kClassicalIni);
    REQUIRE(run_cli("simulate --config " + dir.str() + "/run.ini --out " + dir.str() +
                    "/sim") == 0);
    REQUIRE(run_cli("evaluate --config " + dir.str() + "/run.ini --out " + dir.str() +
                    "/eva") == 0);
    CHECK(read_text_file(dir.str() + "/sim/summary.json") ==
          read_text_file(dir.str() + "/eva/summary.json"));
}

TEST_CASE("train emits curve, checkpoint and matches later evaluation", "[cli][long]") {
    TempDir dir("train");
    write_file(dir.path / "run.ini", kTrainIni);
    const std::string out = dir.str() + "/out";
    REQUIRE(run_cli("train --config " + dir.str() + "/run.ini --out " + out) == 0);

    std::string header;
    const auto curve = csv_rows(out + "/trail0/curve.csv", &header);
    CHECK(header == "frames_trained,mean_V_s,mean_reward,mean_delay,mean_energy");
    REQUIRE(!curve.empty());
    long prev = 0;
    for (const auto& r : curve) {
        const long f = std::stol(r.at(0));
        CHECK(f > prev);
        CHECK(f % 40 == 0);
        prev = f;
    }

    for (const char* f : {"meta.json", "state.bin", "config.ini"})
        CHECK(fs::exists(fs::path(out) / "trail0" / "checkpoint" / f));

    const json train = json::parse(read_text_file(out + "/trail0/train.json"));
    CHECK(train["frames_trained"].get<long>() >= 80);
    const double trained_vs = train["final_eval"]["mean_V_s"].get<double>();

    // Post-hoc evaluation replays the same greedy episodes from the checkpoint.
    REQUIRE(run_cli("evaluate --config " + dir.str() + "/run.ini --out " + out) == 0);
    const json eval = json::parse(read_text_file(out + "/eval.json"));
    REQUIRE(eval["trails"].size() == 1);
    CHECK(eval["trails"][0]["mean_V_s"].get<double>() == trained_vs);
    CHECK(eval["mean"]["mean_V_s"].get<double>() == trained_vs);

    // A config whose shape disagrees with the checkpoint is refused.
    CHECK(run_cli("evaluate --config " + dir.str() + "/run.ini --out " + out +
                  " --override orchestrator.t_o=5") == 2);
}

TEST_CASE("sweep writes one row per cell", "[cli]") {
    TempDir dir("sweep");
    write_file(dir.path / "run.ini",
               std::string(kClassicalIni) + "[sweep]\nn_values = 6,12\n");
    const std::string out = dir.str() + "/out";
    REQUIRE(run_cli("sweep --config " + dir.str() + "/run.ini --out " + out) == 0);

    std::string header;
    const auto rows = csv_rows(out + "/sweep.csv", &header);
    CHECK(header == "cell_label,cell,scheme,mean_V_s,mean_delay,mean_energy,mean_reward");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].at(0) == "devices");
    CHECK(rows[0].at(1) == "6");
    CHECK(rows[1].at(1) == "12");
    CHECK(rows[0].at(2) == "genie");
    for (const auto& r : rows)
        for (std::size_t c = 3; c < r.size(); ++c)
            CHECK(std::isfinite(std::stod(r.at(c))));

    write_file(dir.path / "nosweep.ini", kClassicalIni);
    CHECK(run_cli("sweep --config " + dir.str() + "/nosweep.ini --out " + dir.str() +
                  "/none") == 2);
}
