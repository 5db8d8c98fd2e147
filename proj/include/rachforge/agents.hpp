// The four DRL algorithms (PG-Reinforce, Actor-Critic, DQN with a target
// network, DDPG) plus replay memory, exploration schedules and the discrete
// action-space descriptors shared by the trainers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rachforge/common.hpp"
#include "rachforge/neural.hpp"

namespace rachforge {

// ---- action space descriptors ----

inline constexpr int kAcbGridSize = 20;  // {0.05, 0.10, ..., 1.00}
inline constexpr int kBoActions = 9;     // exponent 0..8
inline constexpr int kDqActions = 15;    // depth {1,2,3} x degree {2..6}

inline double acb_grid_value(int idx) {
    if (idx < 0 || idx >= kAcbGridSize)
        throw std::domain_error("acb_grid_value: index outside grid");
    return 0.05 * (idx + 1);
}

inline std::pair<int, int> dq_action_pair(int idx) {
    if (idx < 0 || idx >= kDqActions)
        throw std::domain_error("dq_action_pair: index outside grid");
    return {idx / 5 + 1, idx % 5 + 2};  // (tree_depth, tree_degree)
}

// ---- shared agent configuration ----

struct AgentConfig {
    double discount = 0.9;  // 0.1 for the ACB scheme, 0.9 for BO/DQ
    double lr = 1e-4;
    bool sgd = false;  // plain SGD instead of Adam
    int minibatch = 32;
    int replay_capacity = 10000;
    int warmup = 500;  // stored transitions before the first update
    double eps_start = 1.0, eps_floor = 0.01;
    double noise_start = 0.2, noise_floor = 0.02;
    double soft_update = 0.2;
    std::int64_t decay_frames = 1;  // linear decay horizon for eps / noise
    NetSpec net;                    // output width = action count (or 1)

    void validate() const {
        if (!(discount >= 0.0) || discount >= 1.0)
            throw ConfigError("agents: discount must be in [0,1)");
        if (!(lr > 0.0)) throw ConfigError("agents: lr must be > 0");
        if (minibatch < 1) throw ConfigError("agents: minibatch must be >= 1");
        if (replay_capacity < minibatch)
            throw ConfigError("agents: replay capacity below minibatch");
        if (warmup < 0) throw ConfigError("agents: warmup must be >= 0");
        if (!(eps_floor >= 0.0) || eps_floor > eps_start || eps_start > 1.0)
            throw ConfigError("agents: need 0 <= eps_floor <= eps_start <= 1");
        if (!(soft_update > 0.0) || soft_update > 1.0)
            throw ConfigError("agents: soft_update must be in (0,1]");
        if (decay_frames < 1) throw ConfigError("agents: decay_frames must be >= 1");
        net.validate();
    }
};

inline double linear_decay(double start, double floor_value, std::int64_t t,
                           std::int64_t horizon) {
    if (horizon <= 0 || t >= horizon) return floor_value;
    if (t < 0) return start;
    return start + (floor_value - start) * (static_cast<double>(t) / horizon);
}

// ---- replay ----

struct Transition {
    Eigen::MatrixXd s;       // (state dims) x T_o, columns oldest..newest
    Eigen::MatrixXd s_next;
    int action_index = -1;   // discrete agents
    double action_value = 0; // continuous agents
    double reward = 0.0;
    bool terminal = false;
};

class ReplayMemory {
public:
    explicit ReplayMemory(int capacity) : cap_(capacity) {
        if (capacity < 1) throw ConfigError("ReplayMemory: capacity must be >= 1");
        buf_.reserve(static_cast<std::size_t>(capacity));
    }

    void push(Transition t) {
        if (static_cast<int>(buf_.size()) < cap_) {
            buf_.push_back(std::move(t));
        } else {
            buf_[static_cast<std::size_t>(count_ % cap_)] = std::move(t);
        }
        count_ += 1;
    }

    std::size_t size() const { return buf_.size(); }
    std::int64_t inserted() const { return count_; }
    const Transition& at(std::size_t i) const { return buf_[i]; }
    const std::vector<Transition>& raw() const { return buf_; }
    void restore(std::vector<Transition> buf, std::int64_t count) {
        buf_ = std::move(buf);
        count_ = count;
    }

    // Uniform with replacement.
    std::vector<const Transition*> sample(int k, Rng& rng) const {
        if (buf_.empty()) throw std::logic_error("ReplayMemory::sample: empty");
        std::uniform_int_distribution<std::size_t> pick(0, buf_.size() - 1);
        std::vector<const Transition*> out;
        out.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) out.push_back(&buf_[pick(rng)]);
        return out;
    }

private:
    std::vector<Transition> buf_;
    int cap_;
    std::int64_t count_ = 0;
};

// ---- batch assembly ----

// Splits a (d x T_o) window into the per-step column vectors forward() wants.
inline std::vector<Eigen::MatrixXd> to_sequence(const Eigen::MatrixXd& window) {
    std::vector<Eigen::MatrixXd> xs;
    xs.reserve(static_cast<std::size_t>(window.cols()));
    for (Eigen::Index t = 0; t < window.cols(); ++t) xs.push_back(window.col(t));
    return xs;
}

inline std::vector<Eigen::MatrixXd> gather_states(
    const std::vector<const Transition*>& batch, bool next_state) {
    const Eigen::MatrixXd& first = next_state ? batch[0]->s_next : batch[0]->s;
    const Eigen::Index d = first.rows(), T = first.cols();
    std::vector<Eigen::MatrixXd> xs(static_cast<std::size_t>(T),
                                    Eigen::MatrixXd(d, static_cast<Eigen::Index>(batch.size())));
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const Eigen::MatrixXd& w = next_state ? batch[j]->s_next : batch[j]->s;
        for (Eigen::Index t = 0; t < T; ++t)
            xs[static_cast<std::size_t>(t)].col(static_cast<Eigen::Index>(j)) = w.col(t);
    }
    return xs;
}

// First index achieving the column maximum (deterministic tie-break).
inline int argmax_col(const Eigen::MatrixXd& m, Eigen::Index col) {
    int best = 0;
    double bv = m(0, col);
    for (Eigen::Index i = 1; i < m.rows(); ++i)
        if (m(i, col) > bv) {
            bv = m(i, col);
            best = static_cast<int>(i);
        }
    return best;
}

// ---- DQN ----

class DqnAgent {
public:
    DqnAgent(AgentConfig cfg, Rng& init_rng)
        : cfg_(std::move(cfg)),
          primary_(cfg_.net),
          target_(cfg_.net),
          replay_(cfg_.replay_capacity),
          opt_(0, cfg_.lr, cfg_.sgd) {
        cfg_.validate();
        primary_.init(init_rng);
        target_ = primary_;
        opt_ = Optimizer(primary_.param_count(), cfg_.lr, cfg_.sgd);
        grad_ = Eigen::VectorXd::Zero(primary_.param_count());
    }

    const AgentConfig& config() const { return cfg_; }
    int n_actions() const { return cfg_.net.output; }
    double epsilon(std::int64_t frame) const {
        return linear_decay(cfg_.eps_start, cfg_.eps_floor, frame, cfg_.decay_frames);
    }

    int act(const Eigen::MatrixXd& state, std::int64_t frame, Rng& rng) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (u(rng) < epsilon(frame)) {
            std::uniform_int_distribution<int> pick(0, n_actions() - 1);
            return pick(rng);
        }
        return act_greedy(state);
    }

    int act_greedy(const Eigen::MatrixXd& state) {
        const Eigen::MatrixXd& q = primary_.forward(to_sequence(state));
        return argmax_col(q, 0);
    }

    void store(Transition t) { replay_.push(std::move(t)); }
    bool ready() const {
        return static_cast<int>(replay_.size()) >=
               std::max(cfg_.warmup, cfg_.minibatch);
    }

    // Squared TD error against the target network:
    //   y = R + gamma * max_a Q(S', a; target), or y = R at terminals.
    // Returns the loss; gradients w.r.t. the primary network go into *grad.
    double td_loss(const std::vector<const Transition*>& batch, Eigen::VectorXd* grad) {
        const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
        Eigen::VectorXd y(b);
        {
            const Eigen::MatrixXd& qn = target_.forward(gather_states(batch, true));
            for (Eigen::Index j = 0; j < b; ++j) {
                const Transition& tr = *batch[static_cast<std::size_t>(j)];
                y[j] = tr.reward;
                if (!tr.terminal) y[j] += cfg_.discount * qn.col(j).maxCoeff();
            }
        }
        const Eigen::MatrixXd& q = primary_.forward(gather_states(batch, false));
        Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(q.rows(), q.cols());
        double loss = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) {
            const int a = batch[static_cast<std::size_t>(j)]->action_index;
            const double diff = q(a, j) - y[j];
            loss += 0.5 * diff * diff;
            seed(a, j) = diff / static_cast<double>(b);
        }
        loss /= static_cast<double>(b);
        if (grad) primary_.backward(seed, *grad);
        return loss;
    }

    double update(Rng& rng) {
        const auto batch = replay_.sample(cfg_.minibatch, rng);
        grad_.setZero();
        const double loss = td_loss(batch, &grad_);
        if (!std::isfinite(loss)) throw NumericError("DqnAgent: non-finite loss");
        opt_.step(primary_.params(), grad_);
        soft_update_target();
        return loss;
    }

    void soft_update_target() {
        target_.params() = cfg_.soft_update * primary_.params() +
                           (1.0 - cfg_.soft_update) * target_.params();
    }

    GruNet& primary() { return primary_; }
    GruNet& target() { return target_; }
    ReplayMemory& replay() { return replay_; }
    Optimizer& optimizer() { return opt_; }

private:
    AgentConfig cfg_;
    GruNet primary_, target_;
    ReplayMemory replay_;
    Optimizer opt_;
    Eigen::VectorXd grad_;
};

// ---- episode trajectories (PG / AC) ----

struct TrajStep {
    Eigen::MatrixXd s;
    int action = 0;
    double reward = 0.0;
};

// G^t = R^{t+1} + gamma * G^{t+1}, with rewards stored alongside the step
// that produced them.
inline std::vector<double> discounted_returns(const std::vector<TrajStep>& traj,
                                              double gamma) {
    std::vector<double> g(traj.size(), 0.0);
    double acc = 0.0;
    for (std::size_t i = traj.size(); i-- > 0;) {
        acc = traj[i].reward + gamma * acc;
        g[i] = acc;
    }
    return g;
}

// ---- PG (Reinforce) ----

class PgAgent {
public:
    PgAgent(AgentConfig cfg, Rng& init_rng)
        : cfg_(std::move(cfg)), policy_(cfg_.net), opt_(0, cfg_.lr, cfg_.sgd) {
        cfg_.validate();
        policy_.init(init_rng);
        opt_ = Optimizer(policy_.param_count(), cfg_.lr, cfg_.sgd);
        grad_ = Eigen::VectorXd::Zero(policy_.param_count());
    }

    int n_actions() const { return cfg_.net.output; }

    int act(const Eigen::MatrixXd& state, Rng& rng) {
        const Eigen::MatrixXd probs = softmax_cols(policy_.forward(to_sequence(state)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double q = u(rng), acc = 0.0;
        for (int a = 0; a < n_actions(); ++a) {
            acc += probs(a, 0);
            if (q <= acc) return a;
        }
        return n_actions() - 1;
    }

    int act_greedy(const Eigen::MatrixXd& state) {
        const Eigen::MatrixXd probs = softmax_cols(policy_.forward(to_sequence(state)));
        return argmax_col(probs, 0);
    }

    void record(Eigen::MatrixXd s, int action, double reward) {
        episode_.push_back({std::move(s), action, reward});
    }

    // L = -(1/T) sum_i gamma^i G^i ln pi(A^i | S^i)
    double pg_loss(const std::vector<TrajStep>& traj, Eigen::VectorXd* grad) {
        const auto g = discounted_returns(traj, cfg_.discount);
        const Eigen::Index T = static_cast<Eigen::Index>(traj.size());
        std::vector<Eigen::MatrixXd> xs;  // batch the whole trajectory
        {
            const Eigen::Index d = traj[0].s.rows(), w = traj[0].s.cols();
            xs.assign(static_cast<std::size_t>(w), Eigen::MatrixXd(d, T));
            for (Eigen::Index i = 0; i < T; ++i)
                for (Eigen::Index t = 0; t < w; ++t)
                    xs[static_cast<std::size_t>(t)].col(i) =
                        traj[static_cast<std::size_t>(i)].s.col(t);
        }
        const Eigen::MatrixXd probs = softmax_cols(policy_.forward(xs));
        double loss = 0.0;
        Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(probs.rows(), probs.cols());
        double disc = 1.0;
        for (Eigen::Index i = 0; i < T; ++i) {
            const int a = traj[static_cast<std::size_t>(i)].action;
            const double w_i = disc * g[static_cast<std::size_t>(i)];
            loss -= w_i * std::log(std::max(probs(a, i), 1e-300));
            seed.col(i) = (w_i / static_cast<double>(T)) * probs.col(i);
            seed(a, i) -= w_i / static_cast<double>(T);
            disc *= cfg_.discount;
        }
        loss /= static_cast<double>(T);
        if (grad) policy_.backward(seed, *grad);
        return loss;
    }

    // Optimizer step over the buffered episode; clears the buffer.
    double end_episode() {
        if (episode_.empty()) return 0.0;
        grad_.setZero();
        const double loss = pg_loss(episode_, &grad_);
        if (!std::isfinite(loss)) throw NumericError("PgAgent: non-finite loss");
        opt_.step(policy_.params(), grad_);
        episode_.clear();
        return loss;
    }

    const std::vector<TrajStep>& episode() const { return episode_; }
    GruNet& policy() { return policy_; }
    Optimizer& optimizer() { return opt_; }
    const AgentConfig& config() const { return cfg_; }

private:
    AgentConfig cfg_;
    GruNet policy_;
    Optimizer opt_;
    Eigen::VectorXd grad_;
    std::vector<TrajStep> episode_;
};

// ---- Actor-Critic ----

class AcAgent {
public:
    AcAgent(AgentConfig cfg, Rng& init_rng)
        : cfg_(std::move(cfg)),
          actor_(cfg_.net),
          critic_(critic_spec(cfg_.net)),
          opt_a_(0, cfg_.lr, cfg_.sgd),
          opt_c_(0, cfg_.lr, cfg_.sgd) {
        cfg_.validate();
        actor_.init(init_rng);
        critic_.init(init_rng);
        opt_a_ = Optimizer(actor_.param_count(), cfg_.lr, cfg_.sgd);
        opt_c_ = Optimizer(critic_.param_count(), cfg_.lr, cfg_.sgd);
        grad_a_ = Eigen::VectorXd::Zero(actor_.param_count());
        grad_c_ = Eigen::VectorXd::Zero(critic_.param_count());
    }

    static NetSpec critic_spec(NetSpec s) {
        s.output = 1;
        return s;
    }

    int n_actions() const { return cfg_.net.output; }

    int act(const Eigen::MatrixXd& state, Rng& rng) {
        const Eigen::MatrixXd probs = softmax_cols(actor_.forward(to_sequence(state)));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double q = u(rng), acc = 0.0;
        for (int a = 0; a < n_actions(); ++a) {
            acc += probs(a, 0);
            if (q <= acc) return a;
        }
        return n_actions() - 1;
    }

    int act_greedy(const Eigen::MatrixXd& state) {
        const Eigen::MatrixXd probs = softmax_cols(actor_.forward(to_sequence(state)));
        return argmax_col(probs, 0);
    }

    void record(Eigen::MatrixXd s, int action, double reward) {
        episode_.push_back({std::move(s), action, reward});
    }

    // Critic: L = (1/T) sum_i gamma^i * 0.5 (v(S^i) - G^i)^2
    double critic_loss(const std::vector<TrajStep>& traj, Eigen::VectorXd* grad) {
        const auto g = discounted_returns(traj, cfg_.discount);
        const Eigen::MatrixXd v = critic_.forward(batch_states(traj));
        const Eigen::Index T = static_cast<Eigen::Index>(traj.size());
        Eigen::MatrixXd seed(1, T);
        double loss = 0.0, disc = 1.0;
        for (Eigen::Index i = 0; i < T; ++i) {
            const double diff = v(0, i) - g[static_cast<std::size_t>(i)];
            loss += disc * 0.5 * diff * diff;
            seed(0, i) = disc * diff / static_cast<double>(T);
            disc *= cfg_.discount;
        }
        loss /= static_cast<double>(T);
        if (grad) critic_.backward(seed, *grad);
        return loss;
    }

    // Actor: L = -(1/T) sum_i gamma^i A^i ln pi(A^i|S^i) with the advantage
    // A^i = G^i - v(S^i) held constant.
    double actor_loss(const std::vector<TrajStep>& traj,
                      const std::vector<double>& advantage, Eigen::VectorXd* grad) {
        const Eigen::Index T = static_cast<Eigen::Index>(traj.size());
        const Eigen::MatrixXd probs = softmax_cols(actor_.forward(batch_states(traj)));
        Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(probs.rows(), probs.cols());
        double loss = 0.0, disc = 1.0;
        for (Eigen::Index i = 0; i < T; ++i) {
            const int a = traj[static_cast<std::size_t>(i)].action;
            const double w_i = disc * advantage[static_cast<std::size_t>(i)];
            loss -= w_i * std::log(std::max(probs(a, i), 1e-300));
            seed.col(i) = (w_i / static_cast<double>(T)) * probs.col(i);
            seed(a, i) -= w_i / static_cast<double>(T);
            disc *= cfg_.discount;
        }
        loss /= static_cast<double>(T);
        if (grad) actor_.backward(seed, *grad);
        return loss;
    }

    // One critic step and one actor step on the buffered episode. The
    // advantage uses the critic values from before its own update.
    std::pair<double, double> end_episode() {
        if (episode_.empty()) return {0.0, 0.0};
        const auto g = discounted_returns(episode_, cfg_.discount);
        std::vector<double> adv(episode_.size());
        {
            const Eigen::MatrixXd v = critic_.forward(batch_states(episode_));
            for (std::size_t i = 0; i < episode_.size(); ++i)
                adv[i] = g[i] - v(0, static_cast<Eigen::Index>(i));
        }
        grad_c_.setZero();
        const double lc = critic_loss(episode_, &grad_c_);
        opt_c_.step(critic_.params(), grad_c_);
        grad_a_.setZero();
        const double la = actor_loss(episode_, adv, &grad_a_);
        opt_a_.step(actor_.params(), grad_a_);
        if (!std::isfinite(lc) || !std::isfinite(la))
            throw NumericError("AcAgent: non-finite loss");
        episode_.clear();
        return {la, lc};
    }

    const std::vector<TrajStep>& episode() const { return episode_; }
    GruNet& actor() { return actor_; }
    GruNet& critic() { return critic_; }
    Optimizer& actor_optimizer() { return opt_a_; }
    Optimizer& critic_optimizer() { return opt_c_; }
    const AgentConfig& config() const { return cfg_; }

private:
    static std::vector<Eigen::MatrixXd> batch_states(const std::vector<TrajStep>& traj) {
        const Eigen::Index T = static_cast<Eigen::Index>(traj.size());
        const Eigen::Index d = traj[0].s.rows(), w = traj[0].s.cols();
        std::vector<Eigen::MatrixXd> xs(static_cast<std::size_t>(w),
                                        Eigen::MatrixXd(d, T));
        for (Eigen::Index i = 0; i < T; ++i)
            for (Eigen::Index t = 0; t < w; ++t)
                xs[static_cast<std::size_t>(t)].col(i) =
                    traj[static_cast<std::size_t>(i)].s.col(t);
        return xs;
    }

    AgentConfig cfg_;
    GruNet actor_, critic_;
    Optimizer opt_a_, opt_c_;
    Eigen::VectorXd grad_a_, grad_c_;
    std::vector<TrajStep> episode_;
};

// ---- DDPG ----

class DdpgAgent {
public:
    // cfg.net describes the actor (output must be 1); the critic reuses the
    // widths with one extra input per step carrying the action.
    DdpgAgent(AgentConfig cfg, Rng& init_rng)
        : cfg_(std::move(cfg)),
          actor_(actor_spec(cfg_.net)),
          critic_(critic_spec(cfg_.net)),
          actor_target_(actor_spec(cfg_.net)),
          critic_target_(critic_spec(cfg_.net)),
          replay_(cfg_.replay_capacity),
          opt_a_(0, cfg_.lr, cfg_.sgd),
          opt_c_(0, cfg_.lr, cfg_.sgd) {
        cfg_.validate();
        actor_.init(init_rng);
        critic_.init(init_rng);
        actor_target_ = actor_;
        critic_target_ = critic_;
        opt_a_ = Optimizer(actor_.param_count(), cfg_.lr, cfg_.sgd);
        opt_c_ = Optimizer(critic_.param_count(), cfg_.lr, cfg_.sgd);
        grad_a_ = Eigen::VectorXd::Zero(actor_.param_count());
        grad_c_ = Eigen::VectorXd::Zero(critic_.param_count());
        scratch_c_ = Eigen::VectorXd::Zero(critic_.param_count());
    }

    static NetSpec actor_spec(NetSpec s) {
        s.output = 1;
        return s;
    }
    static NetSpec critic_spec(NetSpec s) {
        s.input += 1;
        s.output = 1;
        return s;
    }

    double noise_sigma(std::int64_t frame) const {
        return linear_decay(cfg_.noise_start, cfg_.noise_floor, frame, cfg_.decay_frames);
    }

    // Sigmoid policy output plus decaying Gaussian noise, clamped to the
    // admissible ACB range [0.01, 1].
    double act(const Eigen::MatrixXd& state, std::int64_t frame, Rng& rng) {
        const double raw = policy_value(state);
        std::normal_distribution<double> n(0.0, noise_sigma(frame));
        return std::clamp(raw + n(rng), 0.01, 1.0);
    }

    double act_greedy(const Eigen::MatrixXd& state) {
        return std::clamp(policy_value(state), 0.01, 1.0);
    }

    // Raw sigmoid(actor) before clamping; the actor-loss gradient flows
    // through this value.
    double policy_value(const Eigen::MatrixXd& state) {
        const Eigen::MatrixXd& y = actor_.forward(to_sequence(state));
        return 1.0 / (1.0 + std::exp(-y(0, 0)));
    }

    void store(Transition t) { replay_.push(std::move(t)); }
    bool ready() const {
        return static_cast<int>(replay_.size()) >=
               std::max(cfg_.warmup, cfg_.minibatch);
    }

    // Critic TD loss with targets from the target actor/critic pair:
    //   y = R + gamma * v(S', pi(S'; actor_target); critic_target).
    double critic_loss(const std::vector<const Transition*>& batch,
                       Eigen::VectorXd* grad) {
        const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
        Eigen::VectorXd y(b);
        {
            const auto next_xs = gather_states(batch, true);
            const Eigen::MatrixXd& an = actor_target_.forward(next_xs);
            Eigen::RowVectorXd next_actions(b);
            for (Eigen::Index j = 0; j < b; ++j)
                next_actions[j] =
                    std::clamp(1.0 / (1.0 + std::exp(-an(0, j))), 0.01, 1.0);
            const Eigen::MatrixXd& qn =
                critic_target_.forward(with_actions(next_xs, next_actions));
            for (Eigen::Index j = 0; j < b; ++j) {
                const Transition& tr = *batch[static_cast<std::size_t>(j)];
                y[j] = tr.reward + (tr.terminal ? 0.0 : cfg_.discount * qn(0, j));
            }
        }
        auto xs = gather_states(batch, false);
        Eigen::RowVectorXd actions(b);
        for (Eigen::Index j = 0; j < b; ++j)
            actions[j] = batch[static_cast<std::size_t>(j)]->action_value;
        const Eigen::MatrixXd& q = critic_.forward(with_actions(xs, actions));
        Eigen::MatrixXd seed(1, b);
        double loss = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) {
            const double diff = q(0, j) - y[j];
            loss += 0.5 * diff * diff;
            seed(0, j) = diff / static_cast<double>(b);
        }
        loss /= static_cast<double>(b);
        if (grad) critic_.backward(seed, *grad);
        return loss;
    }

    // Actor loss L = -(1/B) sum_j v(S_j, pi(S_j)); the critic is treated as
    // fixed and only supplies d v / d action.
    double actor_loss(const std::vector<const Transition*>& batch,
                      Eigen::VectorXd* grad) {
        const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
        const auto xs = gather_states(batch, false);
        const Eigen::MatrixXd ay = actor_.forward(xs);
        Eigen::RowVectorXd actions(b);
        for (Eigen::Index j = 0; j < b; ++j)
            actions[j] = 1.0 / (1.0 + std::exp(-ay(0, j)));
        const Eigen::MatrixXd& v = critic_.forward(with_actions(xs, actions));
        const double loss = -v.row(0).mean();
        if (grad) {
            Eigen::MatrixXd vseed =
                Eigen::MatrixXd::Constant(1, b, -1.0 / static_cast<double>(b));
            scratch_c_.setZero();
            std::vector<Eigen::MatrixXd> igrads;
            critic_.backward(vseed, scratch_c_, &igrads);
            const Eigen::Index arow = critic_.spec().input - 1;
            Eigen::RowVectorXd dv_da = Eigen::RowVectorXd::Zero(b);
            for (const auto& ig : igrads) dv_da += ig.row(arow);
            Eigen::MatrixXd aseed(1, b);
            for (Eigen::Index j = 0; j < b; ++j)
                aseed(0, j) = dv_da[j] * actions[j] * (1.0 - actions[j]);
            actor_.backward(aseed, *grad);
        }
        return loss;
    }

    std::pair<double, double> update(Rng& rng) {
        const auto batch = replay_.sample(cfg_.minibatch, rng);
        grad_c_.setZero();
        const double lc = critic_loss(batch, &grad_c_);
        opt_c_.step(critic_.params(), grad_c_);
        grad_a_.setZero();
        const double la = actor_loss(batch, &grad_a_);
        opt_a_.step(actor_.params(), grad_a_);
        if (!std::isfinite(lc) || !std::isfinite(la))
            throw NumericError("DdpgAgent: non-finite loss");
        soft_update_targets();
        return {lc, la};
    }

    void soft_update_targets() {
        const double s = cfg_.soft_update;
        actor_target_.params() = s * actor_.params() + (1.0 - s) * actor_target_.params();
        critic_target_.params() =
            s * critic_.params() + (1.0 - s) * critic_target_.params();
    }

    GruNet& actor() { return actor_; }
    GruNet& critic() { return critic_; }
    GruNet& actor_target() { return actor_target_; }
    GruNet& critic_target() { return critic_target_; }
    ReplayMemory& replay() { return replay_; }
    Optimizer& actor_optimizer() { return opt_a_; }
    Optimizer& critic_optimizer() { return opt_c_; }
    const AgentConfig& config() const { return cfg_; }

private:
    // Appends the per-sample action as an extra input row on every timestep.
    static std::vector<Eigen::MatrixXd> with_actions(
        const std::vector<Eigen::MatrixXd>& xs, const Eigen::RowVectorXd& actions) {
        std::vector<Eigen::MatrixXd> out;
        out.reserve(xs.size());
        for (const auto& x : xs) {
            Eigen::MatrixXd m(x.rows() + 1, x.cols());
            m.topRows(x.rows()) = x;
            m.row(x.rows()) = actions;
            out.push_back(std::move(m));
        }
        return out;
    }

    AgentConfig cfg_;
    GruNet actor_, critic_, actor_target_, critic_target_;
    ReplayMemory replay_;
    Optimizer opt_a_, opt_c_;
    Eigen::VectorXd grad_a_, grad_c_, scratch_c_;
};

}  // namespace rachforge
