// Reward shaping, state/belief-state assembly, classical scenario
// controllers, and the unified trainer covering single-agent, cooperative
// multi-agent, and decoupled (predictor + agents) regimes.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rachforge/agents.hpp"
#include "rachforge/common.hpp"
#include "rachforge/estimators.hpp"
#include "rachforge/predictor.hpp"
#include "rachforge/rach.hpp"

namespace rachforge {

// ---- reward ----

struct RewardWeights {
    double x_s = 1.0, x_d = 0.0, x_e = 0.0;
    double c_d = 10.0;  // frames
    double c_e = 0.5;   // joules
    // Frames with no success report no V_d/V_e; their delay/energy
    // sub-rewards take this neutral value instead of the (misleading) 1.
    double zero_success_sub = 0.5;

    static RewardWeights from_mu(double mu) {
        RewardWeights w;
        w.x_s = 1.0;
        w.x_d = mu;
        w.x_e = 1.0 - mu;
        return w;
    }

    void validate() const {
        if (x_s < 0 || x_d < 0 || x_e < 0)
            throw ConfigError("reward: weights must be >= 0");
        if (!(c_d > 0) || !(c_e > 0))
            throw ConfigError("reward: tanh constants must be > 0");
        if (zero_success_sub < 0 || zero_success_sub > 1)
            throw ConfigError("reward: sentinel outside [0,1]");
    }
};

// Revised hyperbolic tangent map: 1 at V=0, decaying toward 0.
inline double sub_reward_inverse(double v, double c) {
    if (v < 0 || !(c > 0)) throw std::domain_error("sub_reward_inverse: need V >= 0, c > 0");
    return 1.0 - std::tanh(v / c);
}

inline double hybrid_reward(int v_s, double v_d, double v_e, int f,
                            const RewardWeights& w) {
    const double r_s = static_cast<double>(v_s) / f;
    const double r_d =
        v_s > 0 ? sub_reward_inverse(v_d, w.c_d) : w.zero_success_sub;
    const double r_e =
        v_s > 0 ? sub_reward_inverse(v_e, w.c_e) : w.zero_success_sub;
    return w.x_s * r_s + w.x_d * r_d + w.x_e * r_e;
}

// ---- observation and belief windows ----

// Per-frame encoding fed to the networks: the five receptions then the four
// broadcast factors, all squashed into [0,1].
struct ObsEncoder {
    int f = 54;
    static constexpr int kDims = 9;

    Eigen::VectorXd encode(const FrameObservation& o) const {
        Eigen::VectorXd v(kDims);
        v[0] = static_cast<double>(o.v_s) / f;
        v[1] = static_cast<double>(o.v_c) / f;
        v[2] = static_cast<double>(o.v_i) / f;
        v[3] = std::tanh(o.v_d / 10.0);
        v[4] = std::tanh(o.v_e / 2.5);
        v[5] = o.action.acb_factor;
        v[6] = o.action.backoff_exponent / 8.0;
        v[7] = (o.action.tree_depth - 1) / 2.0;
        v[8] = (o.action.tree_degree - 2) / 4.0;
        return v;
    }
};

// Sliding window of the last T_o encoded observations, zero-padded while the
// episode is younger than the window.
class ObsWindow {
public:
    ObsWindow(int t_o, ObsEncoder enc) : enc_(enc), buf_(ObsEncoder::kDims, t_o) {
        if (t_o < 1) throw ConfigError("ObsWindow: T_o must be >= 1");
        buf_.setZero();
    }
    void reset() { buf_.setZero(); }
    void push(const FrameObservation& o) {
        const Eigen::Index w = buf_.cols();
        buf_.leftCols(w - 1) = buf_.rightCols(w - 1).eval();
        buf_.col(w - 1) = enc_.encode(o);
    }
    const Eigen::MatrixXd& state() const { return buf_; }

private:
    ObsEncoder enc_;
    Eigen::MatrixXd buf_;
};

// ---- joint actions and belief state ----

struct JointAction {
    double acb = 1.0;
    int bo = 0;
    int tdepth = 1;
    int tdegree = 2;

    ActionSet to_action_set() const { return {acb, bo, tdepth, tdegree}; }
    static JointAction from_action_set(const ActionSet& a) {
        return {a.acb_factor, a.backoff_exponent, a.tree_depth, a.tree_degree};
    }
};

// Interleaved [A^{t-T_o}, N-hat^{t-T_o+1}, ..., A^{t-1}, N-hat^t]: T_o pairs,
// 2*T_o entries in total.
struct BeliefState {
    std::vector<JointAction> actions;
    std::vector<double> backlog;

    static constexpr int kDims = 5;
    std::size_t entries() const { return actions.size() + backlog.size(); }

    Eigen::MatrixXd encode(int n_max) const {
        Eigen::MatrixXd m(kDims, static_cast<Eigen::Index>(actions.size()));
        for (std::size_t i = 0; i < actions.size(); ++i) {
            const JointAction& a = actions[i];
            const Eigen::Index c = static_cast<Eigen::Index>(i);
            m(0, c) = a.acb;
            m(1, c) = a.bo / 8.0;
            m(2, c) = (a.tdepth - 1) / 2.0;
            m(3, c) = (a.tdegree - 2) / 4.0;
            m(4, c) = backlog[i] / n_max;
        }
        return m;
    }
};

class BeliefWindow {
public:
    explicit BeliefWindow(int t_o) : t_o_(t_o) {
        if (t_o < 1) throw ConfigError("BeliefWindow: T_o must be >= 1");
        reset();
    }
    void reset() {
        // {0, 0, 1, 2} encodes to an all-zero column, so a fresh window is
        // genuine zero padding.
        state_.actions.assign(static_cast<std::size_t>(t_o_), JointAction{0.0, 0, 1, 2});
        state_.backlog.assign(static_cast<std::size_t>(t_o_), 0.0);
    }
    void push(const JointAction& action, double n_hat) {
        state_.actions.erase(state_.actions.begin());
        state_.backlog.erase(state_.backlog.begin());
        state_.actions.push_back(action);
        state_.backlog.push_back(n_hat);
    }
    const BeliefState& state() const { return state_; }

private:
    int t_o_;
    BeliefState state_;
};

// ---- scenarios ----

enum class Scenario {
    baseline,
    fixed,
    genie,
    mle,
    acb_ddpg,
    acb_dqn,
    acb_pg,
    acb_ac,
    bo_dqn,
    dq_dqn,
    hybrid_conventional,
    hybrid_decoupled,
    decoupled_genie,
};

inline const char* scenario_name(Scenario s) {
    switch (s) {
        case Scenario::baseline: return "baseline";
        case Scenario::fixed: return "fixed";
        case Scenario::genie: return "genie";
        case Scenario::mle: return "mle";
        case Scenario::acb_ddpg: return "acb-ddpg";
        case Scenario::acb_dqn: return "acb-dqn";
        case Scenario::acb_pg: return "acb-pg";
        case Scenario::acb_ac: return "acb-ac";
        case Scenario::bo_dqn: return "bo-dqn";
        case Scenario::dq_dqn: return "dq-dqn";
        case Scenario::hybrid_conventional: return "hybrid-conventional";
        case Scenario::hybrid_decoupled: return "hybrid-decoupled";
        case Scenario::decoupled_genie: return "decoupled-genie";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& name) {
    for (Scenario s :
         {Scenario::baseline, Scenario::fixed, Scenario::genie, Scenario::mle,
          Scenario::acb_ddpg, Scenario::acb_dqn, Scenario::acb_pg, Scenario::acb_ac,
          Scenario::bo_dqn, Scenario::dq_dqn, Scenario::hybrid_conventional,
          Scenario::hybrid_decoupled, Scenario::decoupled_genie})
        if (name == scenario_name(s)) return s;
    throw ConfigError("unknown scenario: " + name);
}

inline bool is_learning(Scenario s) {
    switch (s) {
        case Scenario::baseline:
        case Scenario::fixed:
        case Scenario::genie:
        case Scenario::mle: return false;
        default: return true;
    }
}

// Which agent (if any) drives each control factor, and the training regime.
struct TrainerSpec {
    enum class AcbCtl { frozen_open, ddpg, dqn, pg, ac };
    enum class BoCtl { frozen_zero, dqn };
    enum class DqCtl { frozen_off, dqn };
    AcbCtl acb = AcbCtl::frozen_open;
    BoCtl bo = BoCtl::frozen_zero;
    DqCtl dq = DqCtl::frozen_off;
    bool decoupled = false;
    bool genie_labels = false;
};

inline TrainerSpec trainer_spec_for(Scenario s) {
    using A = TrainerSpec::AcbCtl;
    using B = TrainerSpec::BoCtl;
    using D = TrainerSpec::DqCtl;
    TrainerSpec t;
    switch (s) {
        case Scenario::acb_ddpg: t.acb = A::ddpg; break;
        case Scenario::acb_dqn: t.acb = A::dqn; break;
        case Scenario::acb_pg: t.acb = A::pg; break;
        case Scenario::acb_ac: t.acb = A::ac; break;
        case Scenario::bo_dqn: t.bo = B::dqn; break;
        case Scenario::dq_dqn: t.dq = D::dqn; break;
        case Scenario::hybrid_conventional:
            t.acb = A::ddpg;
            t.bo = B::dqn;
            t.dq = D::dqn;
            break;
        case Scenario::hybrid_decoupled:
        case Scenario::decoupled_genie:
            t.acb = A::ddpg;
            t.bo = B::dqn;
            t.dq = D::dqn;
            t.decoupled = true;
            t.genie_labels = s == Scenario::decoupled_genie;
            break;
        default:
            throw ConfigError(std::string("scenario '") + scenario_name(s) +
                              "' is not a learning scenario");
    }
    return t;
}

// ---- simulation setup and summaries ----

struct FixedFactors {
    double acb = 0.5;
    int bo = 2;
    int tdepth = 2;
    int tdegree = 2;
};

struct SimSetup {
    RachConfig rach{};
    EnergyModel energy{};
    RewardWeights reward{};
    FixedFactors fixed{};
    EstimatorKind est_kind = EstimatorKind::mle;
    int n_max = 600;
    const LikelihoodTable* table = nullptr;  // needed for MLE control / labels
};

struct EpisodeSummary {
    std::uint64_t seed = 0;
    int frames = 0;
    int succeeded = 0;
    int dropped = 0;
    double mean_vs = 0.0;       // successes per frame over the episode
    double peak_mean_vs = 0.0;  // over frames with true backlog >= F
    double mean_delay = 0.0;    // all devices, dropped included
    double mean_energy = 0.0;   // all devices, dropped included
    double mean_reward = 0.0;
    bool truncated = false;
};

inline EpisodeSummary summarize(const EpisodeLedger& led, std::uint64_t seed, int f) {
    EpisodeSummary s;
    s.seed = seed;
    s.frames = static_cast<int>(led.frames.size());
    s.truncated = led.truncated;
    double vs_sum = 0.0, peak_sum = 0.0, reward_sum = 0.0;
    int peak_frames = 0;
    for (std::size_t i = 0; i < led.frames.size(); ++i) {
        vs_sum += led.frames[i].v_s;
        reward_sum += led.reward[i];
        if (led.backlog_true[i] >= f) {
            peak_sum += led.frames[i].v_s;
            peak_frames += 1;
        }
    }
    if (s.frames > 0) {
        s.mean_vs = vs_sum / s.frames;
        s.mean_reward = reward_sum / s.frames;
    }
    if (peak_frames > 0) s.peak_mean_vs = peak_sum / peak_frames;
    double d_sum = 0.0, e_sum = 0.0;
    for (const DeviceRecord& d : led.devices) {
        s.succeeded += d.succeeded;
        d_sum += d.delay;
        e_sum += d.energy;
    }
    s.dropped = static_cast<int>(led.devices.size()) - s.succeeded;
    if (!led.devices.empty()) {
        s.mean_delay = d_sum / static_cast<double>(led.devices.size());
        s.mean_energy = e_sum / static_cast<double>(led.devices.size());
    }
    return s;
}

// Stateful per-episode controller for the non-learning scenarios.
inline std::function<ActionSet(const RachEnv&, const FrameObservation*)>
classical_controller(Scenario sc, const SimSetup& setup) {
    switch (sc) {
        case Scenario::baseline:
            return [](const RachEnv&, const FrameObservation*) {
                return ActionSet{1.0, 0, 1, 2};
            };
        case Scenario::fixed: {
            const FixedFactors fx = setup.fixed;
            return [fx](const RachEnv&, const FrameObservation*) {
                return ActionSet{fx.acb, fx.bo, fx.tdepth, fx.tdegree};
            };
        }
        case Scenario::genie:
            return [](const RachEnv& env, const FrameObservation*) {
                return genie_controller(env.true_backlog(), env.config().preambles);
            };
        case Scenario::mle: {
            auto ctl = std::make_shared<EstimatorController>(
                setup.est_kind, setup.table, setup.rach.preambles, setup.n_max);
            return [ctl](const RachEnv&, const FrameObservation* prev) {
                return ctl->next(prev);
            };
        }
        default:
            throw ConfigError(std::string("scenario '") + scenario_name(sc) +
                              "' is not a classical scenario");
    }
}

template <typename ControllerFn>
EpisodeSummary run_classical_episode(RachEnv& env, std::uint64_t seed,
                                     ControllerFn&& ctl, const RewardWeights& w) {
    env.reset(seed);
    FrameObservation last;
    const FrameObservation* prev = nullptr;
    while (!env.done()) {
        const ActionSet a = ctl(env, prev);
        last = env.step(a);
        env.set_reward(
            hybrid_reward(last.v_s, last.v_d, last.v_e, env.config().preambles, w));
        prev = &last;
    }
    return summarize(env.ledger(), seed, env.config().preambles);
}

// ---- training ----

struct TrainConfig {
    std::int64_t budget_frames = 20000;
    std::int64_t eval_every = 2000;  // frames between curve snapshots
    int eval_episodes = 20;
    int t_o = 20;                // observation window length (Memory T)
    bool belief_raw = false;     // append raw receptions to the belief state
    double decay_fraction = 0.2; // share of the budget for eps/noise decay
    double discount_acb = 0.1;
    double discount_other = 0.9;
    AgentConfig agent{};             // shared hyperparameters; net I/O resized per role
    PredictorConfig predictor{};     // decoupled regimes only

    void validate() const {
        if (budget_frames < 1) throw ConfigError("train: budget_frames must be >= 1");
        if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
        if (eval_episodes < 1) throw ConfigError("train: eval_episodes must be >= 1");
        if (t_o < 1) throw ConfigError("train: t_o must be >= 1");
        if (!(decay_fraction > 0) || decay_fraction > 1)
            throw ConfigError("train: decay_fraction outside (0,1]");
    }
};

struct CurvePoint {
    std::int64_t frames_trained = 0;
    double mean_vs = 0.0;
    double mean_reward = 0.0;
    double mean_delay = 0.0;
    double mean_energy = 0.0;
};

struct EvalResult {
    int episodes = 0;
    double mean_vs = 0.0;
    double peak_mean_vs = 0.0;
    double mean_reward = 0.0;
    double mean_delay = 0.0;
    double mean_energy = 0.0;
};

struct TrainOutcome {
    std::vector<CurvePoint> curve;
    std::vector<double> episode_losses;  // mean update loss per episode
    EvalResult final_eval;
    std::int64_t frames_trained = 0;
};

class Trainer {
public:
    Trainer(SimSetup setup, TrainConfig tc, TrainerSpec spec, std::uint64_t seed)
        : setup_(std::move(setup)),
          tc_(std::move(tc)),
          spec_(spec),
          seed_(seed),
          env_(setup_.rach, setup_.energy),
          enc_{setup_.rach.preambles},
          obs_window_(tc_.t_o, enc_),
          belief_window_(tc_.t_o),
          explore_(make_rng(seed, stream::kExplore)),
          replay_(make_rng(seed, stream::kReplay)) {
        tc_.validate();
        setup_.reward.validate();
        if (spec_.decoupled && !spec_.genie_labels &&
            setup_.est_kind == EstimatorKind::mle && setup_.table == nullptr)
            throw ConfigError("decoupled training with MLE labels needs a likelihood table");

        Rng init = make_rng(seed, stream::kInit);
        const int sdims = state_dims();

        auto agent_cfg = [&](int out, double discount) {
            AgentConfig c = tc_.agent;
            c.discount = discount;
            c.net.input = sdims;
            c.net.output = out;
            c.decay_frames = std::max<std::int64_t>(
                1, static_cast<std::int64_t>(tc_.decay_fraction * tc_.budget_frames));
            return c;
        };

        using A = TrainerSpec::AcbCtl;
        switch (spec_.acb) {
            case A::frozen_open: break;
            case A::ddpg:
                acb_ddpg_.emplace(agent_cfg(1, tc_.discount_acb), init);
                break;
            case A::dqn:
                acb_dqn_.emplace(agent_cfg(kAcbGridSize, tc_.discount_acb), init);
                break;
            case A::pg:
                acb_pg_.emplace(agent_cfg(kAcbGridSize, tc_.discount_acb), init);
                break;
            case A::ac:
                acb_ac_.emplace(agent_cfg(kAcbGridSize, tc_.discount_acb), init);
                break;
        }
        if (spec_.bo == TrainerSpec::BoCtl::dqn)
            bo_dqn_.emplace(agent_cfg(kBoActions, tc_.discount_other), init);
        if (spec_.dq == TrainerSpec::DqCtl::dqn)
            dq_dqn_.emplace(agent_cfg(kDqActions, tc_.discount_other), init);
        if (spec_.decoupled) {
            PredictorConfig pc = tc_.predictor;
            pc.n_max = setup_.n_max;
            pc.net.input = ObsEncoder::kDims;
            predictor_.emplace(pc, init);
        }
    }

    int state_dims() const {
        if (!spec_.decoupled) return ObsEncoder::kDims;
        return BeliefState::kDims + (tc_.belief_raw ? 5 : 0);
    }

    // Runs (the rest of) the training budget, snapshotting the greedy-policy
    // evaluation curve every eval_every frames.
    TrainOutcome train() {
        TrainOutcome out;
        while (frames_ < tc_.budget_frames) {
            run_training_episode(out);
            episode_ += 1;
        }
        out.final_eval = evaluate(tc_.eval_episodes);
        out.frames_trained = frames_;
        return out;
    }

    EvalResult evaluate(int episodes) {
        EvalResult r;
        r.episodes = episodes;
        for (int i = 0; i < episodes; ++i) {
            const EpisodeSummary s =
                eval_episode(derive_seed(seed_, stream::kEval, static_cast<std::uint64_t>(i)));
            r.mean_vs += s.mean_vs;
            r.peak_mean_vs += s.peak_mean_vs;
            r.mean_reward += s.mean_reward;
            r.mean_delay += s.mean_delay;
            r.mean_energy += s.mean_energy;
        }
        if (episodes > 0) {
            r.mean_vs /= episodes;
            r.peak_mean_vs /= episodes;
            r.mean_reward /= episodes;
            r.mean_delay /= episodes;
            r.mean_energy /= episodes;
        }
        return r;
    }

    // One greedy episode on a fresh environment; no exploration, no updates.
    EpisodeSummary eval_episode(std::uint64_t env_seed, EpisodeLedger* out = nullptr) {
        RachEnv env(setup_.rach, setup_.energy);
        env.reset(env_seed);
        ObsWindow w(tc_.t_o, enc_);
        BeliefWindow b(tc_.t_o);
        JointAction prev_joint{};
        while (!env.done()) {
            Eigen::MatrixXd state;
            if (spec_.decoupled) {
                const int n_hat = predictor_->predict(w.state());
                b.push(prev_joint, static_cast<double>(n_hat));
                state = belief_state(w, b);
            } else {
                state = w.state();
            }
            const Decision d = decide(state, true, nullptr);
            const FrameObservation obs = env.step(d.joint.to_action_set());
            env.set_reward(hybrid_reward(obs.v_s, obs.v_d, obs.v_e,
                                         setup_.rach.preambles, setup_.reward));
            w.push(obs);
            prev_joint = d.joint;
        }
        if (out) *out = env.ledger();
        return summarize(env.ledger(), env_seed, setup_.rach.preambles);
    }

    // checkpoint / inspection surface
    std::int64_t frames_done() const { return frames_; }
    std::int64_t episodes_done() const { return episode_; }
    void set_progress(std::int64_t frames, std::int64_t episodes) {
        frames_ = frames;
        episode_ = episodes;
    }
    Rng& explore_rng() { return explore_; }
    Rng& replay_rng() { return replay_; }
    std::optional<DdpgAgent>& acb_ddpg() { return acb_ddpg_; }
    std::optional<DqnAgent>& acb_dqn() { return acb_dqn_; }
    std::optional<PgAgent>& acb_pg() { return acb_pg_; }
    std::optional<AcAgent>& acb_ac() { return acb_ac_; }
    std::optional<DqnAgent>& bo_dqn() { return bo_dqn_; }
    std::optional<DqnAgent>& dq_dqn() { return dq_dqn_; }
    std::optional<TrafficPredictor>& predictor() { return predictor_; }
    const TrainerSpec& spec() const { return spec_; }
    const TrainConfig& train_config() const { return tc_; }
    const SimSetup& setup() const { return setup_; }
    std::uint64_t seed() const { return seed_; }

    // Belief columns carry the decoded joint action and predicted backlog;
    // with belief_raw the five raw-reception rows of the observation window
    // ride along underneath.
    Eigen::MatrixXd belief_state(const ObsWindow& w, const BeliefWindow& b) const {
        Eigen::MatrixXd m = b.state().encode(setup_.n_max);
        if (!tc_.belief_raw) return m;
        Eigen::MatrixXd full(m.rows() + 5, m.cols());
        full.topRows(m.rows()) = m;
        full.bottomRows(5) = w.state().topRows(5);
        return full;
    }

private:
    struct Decision {
        JointAction joint{};
        int acb_idx = -1;
        int bo_idx = -1;
        int dq_idx = -1;
        double acb_value = 1.0;
    };

    Decision decide(const Eigen::MatrixXd& state, bool greedy, Rng* rng) {
        Decision d;
        using A = TrainerSpec::AcbCtl;
        switch (spec_.acb) {
            case A::frozen_open:
                d.joint.acb = 1.0;
                break;
            case A::ddpg:
                d.acb_value = greedy ? acb_ddpg_->act_greedy(state)
                                     : acb_ddpg_->act(state, frames_, *rng);
                d.joint.acb = d.acb_value;
                break;
            case A::dqn:
                d.acb_idx = greedy ? acb_dqn_->act_greedy(state)
                                   : acb_dqn_->act(state, frames_, *rng);
                d.joint.acb = acb_grid_value(d.acb_idx);
                break;
            case A::pg:
                d.acb_idx = greedy ? acb_pg_->act_greedy(state) : acb_pg_->act(state, *rng);
                d.joint.acb = acb_grid_value(d.acb_idx);
                break;
            case A::ac:
                d.acb_idx = greedy ? acb_ac_->act_greedy(state) : acb_ac_->act(state, *rng);
                d.joint.acb = acb_grid_value(d.acb_idx);
                break;
        }
        if (spec_.bo == TrainerSpec::BoCtl::dqn) {
            d.bo_idx = greedy ? bo_dqn_->act_greedy(state)
                              : bo_dqn_->act(state, frames_, *rng);
            d.joint.bo = d.bo_idx;
        }
        if (spec_.dq == TrainerSpec::DqCtl::dqn) {
            d.dq_idx = greedy ? dq_dqn_->act_greedy(state)
                              : dq_dqn_->act(state, frames_, *rng);
            const auto [depth, degree] = dq_action_pair(d.dq_idx);
            d.joint.tdepth = depth;
            d.joint.tdegree = degree;
        }
        return d;
    }

    void run_training_episode(TrainOutcome& out) {
        env_.reset(derive_seed(seed_, stream::kEnv, static_cast<std::uint64_t>(episode_)));
        obs_window_.reset();
        belief_window_.reset();
        JointAction prev_joint{};
        std::optional<PendingTransition> pending;
        std::optional<LabeledWindow> pending_label;
        double loss_sum = 0.0;
        int loss_count = 0;

        while (!env_.done()) {
            Eigen::MatrixXd state;
            Eigen::MatrixXd pred_input;
            if (spec_.decoupled) {
                pred_input = obs_window_.state();
                const int n_hat = predictor_->predict(pred_input);
                belief_window_.push(prev_joint, static_cast<double>(n_hat));
                state = belief_state(obs_window_, belief_window_);
            } else {
                state = obs_window_.state();
            }

            // Flush the previous frame's transition now that its successor
            // state exists (belief states only materialize one frame later).
            if (pending) {
                store_transition(*pending, state);
                pending.reset();
            }

            const Decision d = decide(state, false, &explore_);
            const int backlog_now = env_.true_backlog();
            const FrameObservation obs = env_.step(d.joint.to_action_set());
            const double r = hybrid_reward(obs.v_s, obs.v_d, obs.v_e,
                                           setup_.rach.preambles, setup_.reward);
            env_.set_reward(r);
            obs_window_.push(obs);
            const bool terminal = env_.done();

            if (spec_.acb == TrainerSpec::AcbCtl::pg)
                acb_pg_->record(state, d.acb_idx, r);
            else if (spec_.acb == TrainerSpec::AcbCtl::ac)
                acb_ac_->record(state, d.acb_idx, r);

            if (spec_.decoupled) {
                pending = PendingTransition{std::move(state), d, r, terminal};
                if (terminal) {
                    store_transition(*pending, pending->state);
                    pending.reset();
                }
                // Estimator (or genie) labels arrive with a one-frame delay.
                if (pending_label) {
                    predictor_->add_label(std::move(pending_label->window),
                                          pending_label->label);
                    pending_label.reset();
                }
                const int label =
                    spec_.genie_labels
                        ? std::min(backlog_now, setup_.n_max)
                        : static_cast<int>(std::llround(
                              estimate_backlog(obs, setup_.est_kind, setup_.table,
                                               setup_.rach.preambles, setup_.n_max)));
                pending_label = LabeledWindow{std::move(pred_input), label};
                if (predictor_->ready()) {
                    const double pl = predictor_->update(replay_);
                    loss_sum += pl;
                    loss_count += 1;
                }
            } else {
                PendingTransition tr{std::move(state), d, r, terminal};
                store_transition(tr, obs_window_.state());
            }

            step_agent_updates(loss_sum, loss_count);

            frames_ += 1;
            prev_joint = d.joint;
            if (frames_ % tc_.eval_every == 0) {
                const EvalResult ev = evaluate(tc_.eval_episodes);
                out.curve.push_back(
                    {frames_, ev.mean_vs, ev.mean_reward, ev.mean_delay, ev.mean_energy});
            }
        }

        if (spec_.acb == TrainerSpec::AcbCtl::pg) {
            loss_sum += acb_pg_->end_episode();
            loss_count += 1;
        } else if (spec_.acb == TrainerSpec::AcbCtl::ac) {
            const auto [la, lc] = acb_ac_->end_episode();
            loss_sum += la + lc;
            loss_count += 1;
        }
        out.episode_losses.push_back(loss_count > 0 ? loss_sum / loss_count : 0.0);
    }

    struct PendingTransition {
        Eigen::MatrixXd state;
        Decision decision;
        double reward = 0.0;
        bool terminal = false;
    };

    void store_transition(const PendingTransition& p, const Eigen::MatrixXd& next_state) {
        auto make = [&](int action_index, double action_value) {
            Transition t;
            t.s = p.state;
            t.s_next = next_state;
            t.action_index = action_index;
            t.action_value = action_value;
            t.reward = p.reward;
            t.terminal = p.terminal;
            return t;
        };
        if (acb_ddpg_) acb_ddpg_->store(make(-1, p.decision.acb_value));
        if (acb_dqn_) acb_dqn_->store(make(p.decision.acb_idx, 0.0));
        if (bo_dqn_) bo_dqn_->store(make(p.decision.bo_idx, 0.0));
        if (dq_dqn_) dq_dqn_->store(make(p.decision.dq_idx, 0.0));
    }

    void step_agent_updates(double& loss_sum, int& loss_count) {
        if (acb_ddpg_ && acb_ddpg_->ready()) {
            const auto [lc, la] = acb_ddpg_->update(replay_);
            loss_sum += lc + la;
            loss_count += 1;
        }
        if (acb_dqn_ && acb_dqn_->ready()) {
            loss_sum += acb_dqn_->update(replay_);
            loss_count += 1;
        }
        if (bo_dqn_ && bo_dqn_->ready()) {
            loss_sum += bo_dqn_->update(replay_);
            loss_count += 1;
        }
        if (dq_dqn_ && dq_dqn_->ready()) {
            loss_sum += dq_dqn_->update(replay_);
            loss_count += 1;
        }
    }

    SimSetup setup_;
    TrainConfig tc_;
    TrainerSpec spec_;
    std::uint64_t seed_;
    RachEnv env_;
    ObsEncoder enc_;
    ObsWindow obs_window_;
    BeliefWindow belief_window_;
    Rng explore_, replay_;
    std::int64_t frames_ = 0;
    std::int64_t episode_ = 0;

    std::optional<DdpgAgent> acb_ddpg_;
    std::optional<DqnAgent> acb_dqn_;
    std::optional<PgAgent> acb_pg_;
    std::optional<AcAgent> acb_ac_;
    std::optional<DqnAgent> bo_dqn_;
    std::optional<DqnAgent> dq_dqn_;
    std::optional<TrafficPredictor> predictor_;
};

// ---- curve analysis ----

// Plateau level: mean of the last `tail` snapshots' mean_reward.
inline double curve_plateau(const std::vector<CurvePoint>& curve, int tail) {
    if (curve.empty()) throw std::domain_error("curve_plateau: empty curve");
    const int n = static_cast<int>(curve.size());
    const int k = std::min(tail, n);
    double s = 0.0;
    for (int i = n - k; i < n; ++i) s += curve[static_cast<std::size_t>(i)].mean_reward;
    return s / k;
}

// First frames_trained whose snapshot reward reaches fraction * plateau;
// -1 when the curve never gets there.
inline std::int64_t frames_to_fraction(const std::vector<CurvePoint>& curve,
                                       double fraction, int tail) {
    const double target = fraction * curve_plateau(curve, tail);
    for (const CurvePoint& p : curve)
        if (p.mean_reward >= target) return p.frames_trained;
    return -1;
}

// ---- trail fan-out ----

inline int worker_count(int jobs) {
    int cap = 0;
    if (const char* env = std::getenv("RACHFORGE_THREADS")) cap = std::atoi(env);
    if (cap < 1) cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap < 1) cap = 1;
    return std::max(1, std::min(cap, jobs));
}

// Runs fn(0..jobs-1), fanning out across worker threads (bounded by
// RACHFORGE_THREADS); the first exception is rethrown after all workers join.
template <typename Fn>
void parallel_trails(int jobs, Fn&& fn) {
    const int workers = worker_count(jobs);
    if (workers <= 1) {
        for (int i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i; (i = next.fetch_add(1)) < jobs;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace rachforge
