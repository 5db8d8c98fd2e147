// Classical backlog estimation and ACB control: MLE over a one-device-at-a-
// time Markov chain, idle-count method of moments, and the genie-aided bound.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rachforge/common.hpp"
#include "rachforge/rach.hpp"

namespace rachforge {

// P{(V_s, V_c) | N = n} for every n in 0..N_max, with devices assumed to
// pick uniformly and independently among F preambles. Rows are dense over
// the (F+1) x (F+1) grid of (V_s, V_c); unreachable cells hold 0.
struct LikelihoodTable {
    int f = 0;
    int n_max = 0;
    std::vector<std::vector<double>> rows;  // rows[n][v_s * (f+1) + v_c]

    int index(int v_s, int v_c) const { return v_s * (f + 1) + v_c; }
    double prob(int n, int v_s, int v_c) const {
        return rows[static_cast<std::size_t>(n)][static_cast<std::size_t>(index(v_s, v_c))];
    }
};

// Builds the table by running the chain one device at a time: a new device
// lands on an idle preamble w.p. (F-s-c)/F, on a singleton w.p. s/F (turning
// it into a collision), or on an already-collided preamble w.p. c/F.
inline LikelihoodTable build_likelihood_table(int f, int n_max) {
    if (f < 1) throw std::domain_error("build_likelihood_table: F must be >= 1");
    if (n_max < 0) throw std::domain_error("build_likelihood_table: N_max must be >= 0");
    LikelihoodTable t;
    t.f = f;
    t.n_max = n_max;
    const std::size_t cells = static_cast<std::size_t>((f + 1) * (f + 1));
    t.rows.assign(static_cast<std::size_t>(n_max) + 1, std::vector<double>(cells, 0.0));
    t.rows[0][static_cast<std::size_t>(t.index(0, 0))] = 1.0;
    for (int n = 0; n < n_max; ++n) {
        const auto& cur = t.rows[static_cast<std::size_t>(n)];
        auto& next = t.rows[static_cast<std::size_t>(n) + 1];
        for (int s = 0; s <= f; ++s) {
            for (int c = 0; s + c <= f; ++c) {
                const double p = cur[static_cast<std::size_t>(t.index(s, c))];
                if (p == 0.0) continue;
                const double idle = static_cast<double>(f - s - c) / f;
                if (idle > 0.0)
                    next[static_cast<std::size_t>(t.index(s + 1, c))] += p * idle;
                if (s > 0)
                    next[static_cast<std::size_t>(t.index(s - 1, c + 1))] +=
                        p * (static_cast<double>(s) / f);
                if (c > 0)
                    next[static_cast<std::size_t>(t.index(s, c))] +=
                        p * (static_cast<double>(c) / f);
            }
        }
    }
    return t;
}

// argmax_n P{U | N = n}; ties break toward the smaller n.
inline int mle_estimate(int v_s, int v_c, int v_i, const LikelihoodTable& t) {
    if (v_s < 0 || v_c < 0 || v_i < 0 || v_s + v_c + v_i != t.f)
        throw std::domain_error("mle_estimate: V_s + V_c + V_i must equal F");
    int best_n = 0;
    double best_p = t.prob(0, v_s, v_c);
    for (int n = 1; n <= t.n_max; ++n) {
        const double p = t.prob(n, v_s, v_c);
        if (p > best_p) {
            best_p = p;
            best_n = n;
        }
    }
    return best_n;
}

// Idle-count inversion: E[V_i] = F (1 - 1/F)^n, so n = ln(V_i/F) / ln(1-1/F).
inline double mom_estimate(int v_i, int f, int n_max) {
    if (f < 2) throw std::domain_error("mom_estimate: F must be >= 2");
    if (v_i < 0 || v_i > f) throw std::domain_error("mom_estimate: V_i outside [0,F]");
    if (v_i == 0) return static_cast<double>(n_max);
    const double n = std::log(static_cast<double>(v_i) / f) / std::log(1.0 - 1.0 / f);
    return std::clamp(n, 0.0, static_cast<double>(n_max));
}

// beta_ACB = min(1, F / N_hat); an empty backlog gets the open gate.
inline double acb_from_backlog(double n_hat, int f) {
    if (n_hat < 0.0) throw std::domain_error("acb_from_backlog: N_hat must be >= 0");
    if (n_hat <= static_cast<double>(f)) return 1.0;
    return static_cast<double>(f) / n_hat;
}

// Idealized controller fed the true backlog; BO and DQ stay disabled.
inline ActionSet genie_controller(int true_backlog, int f) {
    ActionSet a;
    a.acb_factor = acb_from_backlog(static_cast<double>(true_backlog), f);
    a.backoff_exponent = 0;
    a.tree_depth = 1;
    a.tree_degree = 2;
    return a;
}

enum class EstimatorKind { mle, mom };

// Backlog behind an observed frame: the estimators count the frame's
// transmitters, which the ACB gate already thinned by the factor broadcast
// with that frame; dividing it back out recovers the eligible backlog,
// carried to the next frame under slowly varying load.
inline double estimate_backlog(const FrameObservation& obs, EstimatorKind kind,
                               const LikelihoodTable* table, int f, int n_max) {
    double transmitters;
    if (kind == EstimatorKind::mle) {
        if (table == nullptr)
            throw std::invalid_argument("estimate_backlog: MLE needs a table");
        transmitters = static_cast<double>(mle_estimate(obs.v_s, obs.v_c, obs.v_i, *table));
    } else {
        transmitters = mom_estimate(obs.v_i, f, n_max);
    }
    return std::min(static_cast<double>(n_max), transmitters / obs.action.acb_factor);
}

// One-frame-late ACB control from estimated backlog: the factor for frame t
// comes from frame t-1's receptions.
class EstimatorController {
public:
    EstimatorController(EstimatorKind kind, const LikelihoodTable* table, int f, int n_max)
        : kind_(kind), table_(table), f_(f), n_max_(n_max) {
        if (kind_ == EstimatorKind::mle && table_ == nullptr)
            throw std::invalid_argument("EstimatorController: MLE needs a table");
    }

    ActionSet next(const FrameObservation* prev) {
        ActionSet a;
        a.backoff_exponent = 0;
        a.tree_depth = 1;
        a.tree_degree = 2;
        if (prev != nullptr) {
            last_estimate_ = estimate_backlog(*prev, kind_, table_, f_, n_max_);
            a.acb_factor = acb_from_backlog(last_estimate_, f_);
        }
        return a;
    }

    double last_estimate() const { return last_estimate_; }

private:
    EstimatorKind kind_;
    const LikelihoodTable* table_;
    int f_;
    int n_max_;
    double last_estimate_ = 0.0;
};

// -------- table file cache --------
//
// Binary layout: magic "RACHFLIK", u32 version, u32 F, u32 N_max, then the
// (N_max+1) * (F+1)^2 row-major doubles, little-endian.

inline constexpr char kLikMagic[8] = {'R', 'A', 'C', 'H', 'F', 'L', 'I', 'K'};
inline constexpr std::uint32_t kLikVersion = 1;

inline void save_likelihood_table(const LikelihoodTable& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write likelihood cache: " + path);
    out.write(kLikMagic, sizeof(kLikMagic));
    const std::uint32_t meta[3] = {kLikVersion, static_cast<std::uint32_t>(t.f),
                                   static_cast<std::uint32_t>(t.n_max)};
    out.write(reinterpret_cast<const char*>(meta), sizeof(meta));
    for (const auto& row : t.rows)
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!out) throw IoError("short write on likelihood cache: " + path);
}

// Returns false (leaving `t` untouched) when the file is absent or was built
// for different parameters; corrupt files raise IoError.
inline bool load_likelihood_table(LikelihoodTable& t, int f, int n_max,
                                  const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[8];
    std::uint32_t meta[3];
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(meta), sizeof(meta));
    if (!in || std::char_traits<char>::compare(magic, kLikMagic, 8) != 0)
        throw IoError("not a likelihood cache: " + path);
    if (meta[0] != kLikVersion) throw IoError("likelihood cache version mismatch: " + path);
    if (meta[1] != static_cast<std::uint32_t>(f) ||
        meta[2] != static_cast<std::uint32_t>(n_max))
        return false;  // stale key; caller rebuilds
    LikelihoodTable fresh;
    fresh.f = f;
    fresh.n_max = n_max;
    const std::size_t cells = static_cast<std::size_t>((f + 1) * (f + 1));
    fresh.rows.assign(static_cast<std::size_t>(n_max) + 1, std::vector<double>(cells));
    for (auto& row : fresh.rows)
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(cells * sizeof(double)));
    if (!in) throw IoError("truncated likelihood cache: " + path);
    t = std::move(fresh);
    return true;
}

// Cache-through build: load when the keyed file matches, else build and save.
inline LikelihoodTable cached_likelihood_table(int f, int n_max, const std::string& cache_dir) {
    LikelihoodTable t;
    if (cache_dir.empty()) return build_likelihood_table(f, n_max);
    const std::string path = cache_dir + "/liktab_F" + std::to_string(f) + "_N" +
                             std::to_string(n_max) + ".bin";
    if (load_likelihood_table(t, f, n_max, path)) return t;
    t = build_likelihood_table(f, n_max);
    save_likelihood_table(t, path);
    return t;
}

}  // namespace rachforge
