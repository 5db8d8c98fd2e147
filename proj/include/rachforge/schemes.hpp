// Pure mechanics of the three access-control schemes: the ACB gate, BO
// interval sampling, and DQ preamble-group / tree-position arithmetic.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "rachforge/common.hpp"

namespace rachforge {

// Pass iff q <= beta_ACB with q uniform on [0,1).
inline bool acb_gate(double beta_acb, Rng& rng) {
    if (!(beta_acb > 0.0) || beta_acb > 1.0)
        throw std::domain_error("acb_gate: beta_ACB must be in (0,1]");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return u(rng) <= beta_acb;
}

struct BackoffWindow {
    int lo;
    int hi;
};

// Back-off window [ceil(2^(beta-1)), 2^beta] in frames. The ceil keeps the
// lower bound an integer frame count at beta = 0, where it collapses to {1}.
inline BackoffWindow backoff_window(int beta_bo) {
    if (beta_bo < 0 || beta_bo > 8)
        throw std::domain_error("backoff_window: beta_BO must be in [0,8]");
    const int hi = 1 << beta_bo;
    const int lo = beta_bo == 0 ? 1 : 1 << (beta_bo - 1);
    return {lo, hi};
}

inline int backoff_interval(int beta_bo, Rng& rng) {
    const BackoffWindow w = backoff_window(beta_bo);
    std::uniform_int_distribution<int> d(w.lo, w.hi);
    return d(rng);
}

// Half-open range of 0-based preamble indices.
struct PreambleRange {
    int begin;
    int end;
};

// Contiguous equal-as-possible partition of the F preambles into `degree`
// branches; when F is not divisible the earlier branches take the remainder.
inline std::vector<PreambleRange> preamble_groups(int f, int degree) {
    if (degree < 2 || degree > f)
        throw std::domain_error("preamble_groups: need 2 <= degree <= F");
    std::vector<PreambleRange> out;
    out.reserve(static_cast<std::size_t>(degree));
    const int base = f / degree;
    const int extra = f % degree;
    int at = 0;
    for (int g = 0; g < degree; ++g) {
        const int size = base + (g < extra ? 1 : 0);
        out.push_back({at, at + size});
        at += size;
    }
    return out;
}

// 1-based branch index of a preamble under the same partition.
inline int preamble_branch(int f, int degree, int preamble) {
    if (preamble < 0 || preamble >= f)
        throw std::domain_error("preamble_branch: preamble outside [0,F)");
    const int base = f / degree;
    const int extra = f % degree;
    const int wide = extra * (base + 1);  // preambles covered by the larger groups
    if (preamble < wide) return preamble / (base + 1) + 1;
    return extra + (preamble - wide) / base + 1;
}

// Position mu_j^i of a device inside CRQ i, from its branch history
// alpha_j^1..alpha_j^{i-1}:
//   mu = alpha^{i-1} + sum_{k=1}^{i-2} degree^{i-1-k} * (alpha^k - 1)
// Positions are 1-based and range over {1..degree^{i-1}}.
inline std::int64_t dq_position(const std::vector<int>& history, int degree) {
    if (history.empty()) throw std::domain_error("dq_position: empty history");
    if (degree < 2) throw std::domain_error("dq_position: degree must be >= 2");
    for (int a : history)
        if (a < 1 || a > degree)
            throw std::domain_error("dq_position: branch outside [1,degree]");
    std::int64_t mu = history.back();
    std::int64_t w = degree;
    for (auto it = history.rbegin() + 1; it != history.rend(); ++it) {
        mu += w * (*it - 1);
        w *= degree;
    }
    return mu;
}

// Absolute frame of the position-mu slot in CRQ i when the root collision
// happened at collision_frame. CRQ i occupies degree^{i-1} consecutive
// frames immediately after CRQ i-1, and CRQ 2 starts the frame after the
// collision, so the slot lands at
//   collision_frame + sum_{k=1}^{i-2} degree^k + mu.
inline std::int64_t dq_schedule_frame(std::int64_t collision_frame, int crq_index,
                                      std::int64_t mu, int degree) {
    if (crq_index < 2)
        throw std::domain_error("dq_schedule_frame: CRQ index starts at 2");
    if (degree < 2) throw std::domain_error("dq_schedule_frame: degree must be >= 2");
    std::int64_t crq_len = 1;
    for (int k = 1; k <= crq_index - 1; ++k) crq_len *= degree;
    if (mu < 1 || mu > crq_len)
        throw std::domain_error("dq_schedule_frame: position outside CRQ");
    std::int64_t offset = 0;
    std::int64_t w = degree;
    for (int k = 1; k <= crq_index - 2; ++k) {
        offset += w;
        w *= degree;
    }
    return collision_frame + offset + mu;
}

}  // namespace rachforge
