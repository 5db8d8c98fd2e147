// Frame-stepped RACH environment: device lifecycle through barring, preamble
// contention, DQ tree resolution, back-off and drop, with per-frame KPI and
// per-device delay/energy accounting.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "rachforge/common.hpp"
#include "rachforge/schemes.hpp"
#include "rachforge/traffic.hpp"

namespace rachforge {

// Control factors broadcast by the BS each frame.
struct ActionSet {
    double acb_factor = 1.0;   // beta_ACB in (0,1]
    int backoff_exponent = 0;  // beta_BO in [0,8]
    int tree_depth = 1;        // beta_Tdepth in [1,3]; 1 disables DQ
    int tree_degree = 2;       // beta_Tdegree in [2,6]

    void validate() const {
        if (!(acb_factor > 0.0) || acb_factor > 1.0)
            throw std::domain_error("ActionSet: acb_factor outside (0,1]");
        if (backoff_exponent < 0 || backoff_exponent > 8)
            throw std::domain_error("ActionSet: backoff_exponent outside [0,8]");
        if (tree_depth < 1 || tree_depth > 3)
            throw std::domain_error("ActionSet: tree_depth outside [1,3]");
        if (tree_degree < 2 || tree_degree > 6)
            throw std::domain_error("ActionSet: tree_degree outside [2,6]");
    }
};

struct EnergyModel {
    double t_sy = 0.65;  // seconds listening to one broadcast
    double p_sy = 0.09;  // watts
    double t_msg1 = 0.084, p_msg1 = 0.545;
    double t_msg2 = 0.345, p_msg2 = 0.09;
    double t_msg3 = 0.08, p_msg3 = 0.545;
    double t_msg4 = 0.345, p_msg4 = 0.09;

    void validate() const {
        const double v[] = {t_sy, p_sy, t_msg1, p_msg1, t_msg2,
                            p_msg2, t_msg3, p_msg3, t_msg4, p_msg4};
        for (double x : v)
            if (!(x > 0.0)) throw std::domain_error("EnergyModel: all constants must be > 0");
    }

    double per_attempt() const {
        return t_msg1 * p_msg1 + t_msg2 * p_msg2 + t_msg3 * p_msg3 + t_msg4 * p_msg4;
    }
};

// E = n_sy * T_sy * P_sy + n_RACH * (sum of the four message energies).
inline double device_energy(int n_sy, int n_rach, const EnergyModel& m) {
    if (n_sy < 0 || n_rach < 0)
        throw std::domain_error("device_energy: counts must be >= 0");
    return n_sy * m.t_sy * m.p_sy + n_rach * m.per_attempt();
}

// Frames consumed from packet arrival to the terminal frame, inclusive.
inline int device_delay(std::int64_t arrival_frame, std::int64_t terminal_frame) {
    if (terminal_frame < arrival_frame)
        throw std::domain_error("device_delay: terminal before arrival");
    return static_cast<int>(terminal_frame - arrival_frame + 1);
}

// BS-observable receptions of one frame plus the action broadcast with it.
// V_e and V_d average only over devices that succeeded this frame; both are
// 0 when V_s = 0 (no reports to average).
struct FrameObservation {
    std::int64_t frame = 0;
    int v_s = 0;
    int v_c = 0;
    int v_i = 0;
    double v_e = 0.0;  // joules
    double v_d = 0.0;  // frames
    ActionSet action;
};

enum class Phase { inactive, awaiting_acb, dq_scheduled, backoff, succeeded, dropped };

struct DeviceState {
    int id = 0;
    Phase phase = Phase::inactive;
    std::int64_t arrival_frame = 0;
    int attempts = 0;       // n_RACH; every attempt spends the full 4-message exchange
    int listen_frames = 0;  // n_sy
    // DQ cascade bookkeeping. depth/degree are snapshotted when the cascade
    // starts: the device computed its whole retransmission schedule from the
    // factors it heard at the root collision.
    std::vector<int> dq_group_history;  // alpha^1..alpha^{i-1}
    int dq_depth = 1;                   // CRQ index i of the next scheduled slot
    int dq_depth_limit = 1;
    int dq_degree = 2;
    std::int64_t dq_anchor = 0;
    std::int64_t scheduled_frame = 0;  // next transmission (DQ) or expiry (BO)
    std::int64_t terminal_frame = 0;   // set on success/drop
};

struct DeviceRecord {
    int id = 0;
    bool succeeded = false;
    int delay = 0;        // frames
    double energy = 0.0;  // joules
    int attempts = 0;      // n_RACH
    int listen_frames = 0; // n_sy
    std::int64_t arrival_frame = 0;
    std::int64_t terminal_frame = 0;
};

struct EpisodeLedger {
    std::vector<FrameObservation> frames;
    std::vector<int> backlog_true;  // ground truth N^t, parallel to frames
    std::vector<double> reward;     // filled by the training/eval loop; 0 otherwise
    std::vector<DeviceRecord> devices;
    bool truncated = false;  // hard cap hit with devices still pending
};

struct RachConfig {
    int preambles = 54;      // F
    int max_attempts = 10;   // gamma_max
    double frame_seconds = 0.64;
    int episode_cap = 0;     // hard frame cap; 0 means 4 * traffic.total_frames
    TrafficProfile traffic{};

    int cap_frames() const {
        return episode_cap > 0 ? episode_cap : 4 * traffic.total_frames;
    }
    void validate() const {
        if (preambles < 1) throw ConfigError("rach_core: preambles must be >= 1");
        if (max_attempts < 1) throw ConfigError("rach_core: max_attempts must be >= 1");
        if (!(frame_seconds > 0)) throw ConfigError("rach_core: frame_seconds must be > 0");
        if (episode_cap < 0) throw ConfigError("rach_core: episode_cap must be >= 0");
        traffic.validate();
        if (cap_frames() < traffic.total_frames)
            throw ConfigError("rach_core: episode cap shorter than the arrival burst");
    }
};

class RachEnv {
public:
    explicit RachEnv(RachConfig cfg, EnergyModel energy = {})
        : cfg_(std::move(cfg)), energy_(energy) {
        cfg_.validate();
        energy_.validate();
    }

    // Starts a fresh episode: new activation schedule, all counters cleared.
    // The whole episode is a pure function of (config, seed, action sequence).
    void reset(std::uint64_t seed) {
        rng_ = make_rng(seed, stream::kEnv);
        schedule_ = sample_activations(cfg_.traffic, rng_);
        devices_.assign(static_cast<std::size_t>(cfg_.traffic.device_count), DeviceState{});
        for (std::size_t j = 0; j < devices_.size(); ++j) {
            devices_[j].id = static_cast<int>(j);
            devices_[j].arrival_frame = schedule_.activation_frame[j];
        }
        ledger_ = EpisodeLedger{};
        ledger_.devices.resize(devices_.size());
        frame_ = 0;
        pending_ = static_cast<int>(devices_.size());
    }

    bool done() const { return pending_ == 0 || frame_ >= cfg_.cap_frames(); }
    std::int64_t frame() const { return frame_; }          // last stepped frame
    std::int64_t next_frame() const { return frame_ + 1; }

    // Ground-truth backlog N^t for the frame about to be stepped: devices
    // attempting or eligible to attempt RACH at that frame.
    int true_backlog() const { return true_backlog_at(frame_ + 1); }

    FrameObservation step(const ActionSet& action) {
        if (done()) throw std::logic_error("RachEnv::step: episode already ended");
        action.validate();
        const std::int64_t t = ++frame_;
        ledger_.backlog_true.push_back(true_backlog_at(t));

        for (DeviceState& d : devices_)
            if (d.phase == Phase::inactive && d.arrival_frame == t)
                d.phase = Phase::awaiting_acb;

        // Collect this frame's transmissions. Devices are visited in index
        // order so the draw sequence is reproducible.
        struct Tx {
            int dev;
            int preamble;
            int next_branch;  // branch to append on collision; 0 for fresh attempts
        };
        std::vector<Tx> txs;
        for (DeviceState& d : devices_) {
            if (d.phase == Phase::awaiting_acb ||
                (d.phase == Phase::backoff && d.scheduled_frame == t)) {
                if (d.phase == Phase::backoff) d.phase = Phase::awaiting_acb;
                d.listen_frames += 1;
                if (acb_gate(action.acb_factor, rng_)) {
                    std::uniform_int_distribution<int> pick(0, cfg_.preambles - 1);
                    d.attempts += 1;
                    txs.push_back({d.id, pick(rng_), 0});
                }
            } else if (d.phase == Phase::dq_scheduled && d.scheduled_frame == t) {
                d.listen_frames += 1;
                std::uniform_int_distribution<int> pick_branch(1, d.dq_degree);
                const int b = pick_branch(rng_);
                const auto groups = preamble_groups(cfg_.preambles, d.dq_degree);
                const PreambleRange r = groups[static_cast<std::size_t>(b - 1)];
                std::uniform_int_distribution<int> pick(r.begin, r.end - 1);
                d.attempts += 1;
                txs.push_back({d.id, pick(rng_), b});
            }
        }

        // Resolve contention per preamble.
        std::vector<int> count(static_cast<std::size_t>(cfg_.preambles), 0);
        for (const Tx& tx : txs) count[static_cast<std::size_t>(tx.preamble)] += 1;

        FrameObservation obs;
        obs.frame = t;
        obs.action = action;
        for (int c : count) {
            if (c == 1) obs.v_s += 1;
            else if (c >= 2) obs.v_c += 1;
        }
        obs.v_i = cfg_.preambles - obs.v_s - obs.v_c;

        double e_sum = 0.0, d_sum = 0.0;
        for (const Tx& tx : txs) {
            DeviceState& d = devices_[static_cast<std::size_t>(tx.dev)];
            if (count[static_cast<std::size_t>(tx.preamble)] == 1) {
                finish(d, t, true);
                e_sum += ledger_.devices[static_cast<std::size_t>(d.id)].energy;
                d_sum += ledger_.devices[static_cast<std::size_t>(d.id)].delay;
                continue;
            }
            if (d.attempts >= cfg_.max_attempts) {
                finish(d, t, false);
                continue;
            }
            if (tx.next_branch > 0) {
                // A DQ retransmission collided: the branch just used extends
                // the history and decides the position one level deeper.
                d.dq_group_history.push_back(tx.next_branch);
                const int next_crq = static_cast<int>(d.dq_group_history.size()) + 1;
                if (next_crq <= d.dq_depth_limit) {
                    schedule_dq(d, next_crq);
                } else {
                    to_backoff(d, t, action.backoff_exponent);
                }
            } else if (action.tree_depth >= 2) {
                // Fresh collision roots a new cascade; the preamble's branch
                // under the current partition is alpha^1.
                d.dq_anchor = t;
                d.dq_depth_limit = action.tree_depth;
                d.dq_degree = action.tree_degree;
                d.dq_group_history = {
                    preamble_branch(cfg_.preambles, action.tree_degree, tx.preamble)};
                schedule_dq(d, 2);
            } else {
                to_backoff(d, t, action.backoff_exponent);
            }
        }
        if (obs.v_s > 0) {
            obs.v_e = e_sum / obs.v_s;
            obs.v_d = d_sum / obs.v_s;
        }

        ledger_.frames.push_back(obs);
        ledger_.reward.push_back(0.0);

        // Hard cap: whatever is still pending is dropped where it stands.
        if (pending_ > 0 && frame_ >= cfg_.cap_frames()) {
            ledger_.truncated = true;
            for (DeviceState& d : devices_)
                if (d.phase != Phase::succeeded && d.phase != Phase::dropped) {
                    if (d.phase == Phase::inactive) d.phase = Phase::awaiting_acb;
                    finish(d, frame_, false);
                }
        }
        return obs;
    }

    void set_reward(double r) {
        if (ledger_.reward.empty())
            throw std::logic_error("RachEnv::set_reward: no stepped frame");
        ledger_.reward.back() = r;
    }

    const EpisodeLedger& ledger() const { return ledger_; }
    const std::vector<DeviceState>& devices() const { return devices_; }
    const ArrivalSchedule& arrivals() const { return schedule_; }
    const RachConfig& config() const { return cfg_; }
    const EnergyModel& energy_model() const { return energy_; }
    int pending_devices() const { return pending_; }

private:
    int true_backlog_at(std::int64_t t) const {
        int n = 0;
        for (const DeviceState& d : devices_) {
            switch (d.phase) {
                case Phase::inactive: n += d.arrival_frame <= t; break;
                case Phase::awaiting_acb: n += 1; break;
                case Phase::backoff:
                case Phase::dq_scheduled: n += d.scheduled_frame == t; break;
                default: break;
            }
        }
        return n;
    }

    void schedule_dq(DeviceState& d, int crq_index) {
        const std::int64_t mu = dq_position(d.dq_group_history, d.dq_degree);
        d.scheduled_frame = dq_schedule_frame(d.dq_anchor, crq_index, mu, d.dq_degree);
        d.dq_depth = crq_index;
        d.phase = Phase::dq_scheduled;
    }

    void to_backoff(DeviceState& d, std::int64_t t, int beta_bo) {
        d.scheduled_frame = t + backoff_interval(beta_bo, rng_);
        d.phase = Phase::backoff;
        d.dq_group_history.clear();
        d.dq_depth = 1;
    }

    void finish(DeviceState& d, std::int64_t t, bool success) {
        d.phase = success ? Phase::succeeded : Phase::dropped;
        d.terminal_frame = t;
        DeviceRecord& rec = ledger_.devices[static_cast<std::size_t>(d.id)];
        rec.id = d.id;
        rec.succeeded = success;
        rec.delay = device_delay(d.arrival_frame, t);
        rec.energy = device_energy(d.listen_frames, d.attempts, energy_);
        rec.attempts = d.attempts;
        rec.listen_frames = d.listen_frames;
        rec.arrival_frame = d.arrival_frame;
        rec.terminal_frame = t;
        pending_ -= 1;
    }

    RachConfig cfg_;
    EnergyModel energy_;
    Rng rng_{0};
    ArrivalSchedule schedule_;
    std::vector<DeviceState> devices_;
    EpisodeLedger ledger_;
    std::int64_t frame_ = 0;
    int pending_ = 0;
};

}  // namespace rachforge
