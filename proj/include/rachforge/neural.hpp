// Minimal numeric kernel: stacked GRU layers, one rectified dense layer, a
// linear head, backpropagation through time, and Adam/SGD updates. 64-bit
// floats and a fixed accumulation order throughout, so identical inputs give
// bitwise-identical outputs and finite-difference checks are meaningful.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rachforge/common.hpp"

namespace rachforge {

inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& x) {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
}

// Column-wise numerically stable softmax.
inline Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const double m = logits.col(c).maxCoeff();
        Eigen::ArrayXd e = (logits.col(c).array() - m).exp();
        out.col(c) = (e / e.sum()).matrix();
    }
    return out;
}

// Mean over columns of -ln p[label]; labels index rows.
inline double cross_entropy_mean(const Eigen::MatrixXd& probs,
                                 const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probs.cols())
        throw std::domain_error("cross_entropy_mean: one label per column required");
    double s = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        const int k = labels[static_cast<std::size_t>(c)];
        if (k < 0 || k >= probs.rows())
            throw std::domain_error("cross_entropy_mean: label out of range");
        s += -std::log(std::max(probs(k, c), 1e-300));
    }
    return s / static_cast<double>(probs.cols());
}

// d(mean cross-entropy)/d(logits) for a softmax head: (p - onehot)/B.
inline Eigen::MatrixXd ce_softmax_seed(const Eigen::MatrixXd& probs,
                                       const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probs.cols())
        throw std::domain_error("ce_softmax_seed: one label per column required");
    Eigen::MatrixXd seed = probs;
    const double inv_b = 1.0 / static_cast<double>(probs.cols());
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        const int k = labels[static_cast<std::size_t>(c)];
        if (k < 0 || k >= probs.rows())
            throw std::domain_error("ce_softmax_seed: label out of range");
        seed(k, c) -= 1.0;
    }
    return seed * inv_b;
}

struct NetSpec {
    int input = 9;
    std::vector<int> gru = {128, 128};
    int dense = 128;  // ReLU layer width; 0 skips the layer
    int output = 1;

    bool operator==(const NetSpec&) const = default;

    void validate() const {
        if (input < 1 || output < 1 || dense < 0)
            throw ConfigError("NetSpec: widths must be positive (dense may be 0)");
        if (gru.empty()) throw ConfigError("NetSpec: at least one GRU layer");
        for (int h : gru)
            if (h < 1) throw ConfigError("NetSpec: GRU widths must be positive");
    }
};

// Many-to-one recurrent network. The recurrent state starts at zero on every
// forward call (stateless contract); only the final step feeds the head.
class GruNet {
public:
    explicit GruNet(NetSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        int in = spec_.input;
        for (std::size_t l = 0; l < spec_.gru.size(); ++l) {
            const int h = spec_.gru[l];
            for (int gate = 0; gate < 3; ++gate) {  // z, r, candidate
                add_slot(h, in, false);
                add_slot(h, h, false);
                add_slot(h, 1, true);
            }
            in = h;
        }
        if (spec_.dense > 0) {
            add_slot(spec_.dense, in, false);
            add_slot(spec_.dense, 1, true);
            in = spec_.dense;
        }
        add_slot(spec_.output, in, false);
        add_slot(spec_.output, 1, true);
        w_ = Eigen::VectorXd::Zero(total_);
    }

    const NetSpec& spec() const { return spec_; }
    Eigen::VectorXd& params() { return w_; }
    const Eigen::VectorXd& params() const { return w_; }
    Eigen::Index param_count() const { return w_.size(); }

    // Uniform +-1/sqrt(fan_in) weights, zero biases.
    void init(Rng& rng) {
        for (const Slot& s : slots_) {
            auto block = w_.segment(s.offset, s.rows * s.cols);
            if (s.bias) {
                block.setZero();
                continue;
            }
            const double bound = 1.0 / std::sqrt(static_cast<double>(s.cols));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index i = 0; i < block.size(); ++i) block[i] = u(rng);
        }
    }

    // xs[t] is (input x batch); returns the head output (output x batch) for
    // the final step and caches every activation for backward().
    const Eigen::MatrixXd& forward(const std::vector<Eigen::MatrixXd>& xs) {
        const int T = static_cast<int>(xs.size());
        if (T == 0) throw std::domain_error("GruNet::forward: empty sequence");
        const Eigen::Index B = xs[0].cols();
        for (const auto& x : xs)
            if (x.rows() != spec_.input || x.cols() != B)
                throw std::domain_error("GruNet::forward: batch shape mismatch");

        xs_ = xs;
        const int L = static_cast<int>(spec_.gru.size());
        z_.assign(static_cast<std::size_t>(L), {});
        r_.assign(static_cast<std::size_t>(L), {});
        hc_.assign(static_cast<std::size_t>(L), {});
        h_.assign(static_cast<std::size_t>(L), {});

        int slot = 0;
        for (int l = 0; l < L; ++l) {
            const int h = spec_.gru[static_cast<std::size_t>(l)];
            const auto Wz = cmat(slot), Uz = cmat(slot + 1);
            const auto bz = cvec(slot + 2);
            const auto Wr = cmat(slot + 3), Ur = cmat(slot + 4);
            const auto br = cvec(slot + 5);
            const auto Wh = cmat(slot + 6), Uh = cmat(slot + 7);
            const auto bh = cvec(slot + 8);
            slot += 9;
            auto& zl = z_[static_cast<std::size_t>(l)];
            auto& rl = r_[static_cast<std::size_t>(l)];
            auto& hcl = hc_[static_cast<std::size_t>(l)];
            auto& hl = h_[static_cast<std::size_t>(l)];
            zl.resize(static_cast<std::size_t>(T));
            rl.resize(static_cast<std::size_t>(T));
            hcl.resize(static_cast<std::size_t>(T));
            hl.resize(static_cast<std::size_t>(T));
            const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(h, B);
            for (int t = 0; t < T; ++t) {
                const Eigen::MatrixXd& x =
                    l == 0 ? xs_[static_cast<std::size_t>(t)]
                           : h_[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(t)];
                const Eigen::MatrixXd& hp =
                    t == 0 ? zero : hl[static_cast<std::size_t>(t - 1)];
                Eigen::MatrixXd z = sigmoid(((Wz * x + Uz * hp).colwise() + bz));
                Eigen::MatrixXd rr = sigmoid(((Wr * x + Ur * hp).colwise() + br));
                Eigen::MatrixXd hc =
                    ((Wh * x + Uh * rr.cwiseProduct(hp)).colwise() + bh).array().tanh();
                hl[static_cast<std::size_t>(t)] =
                    z.cwiseProduct(hp) + (1.0 - z.array()).matrix().cwiseProduct(hc);
                zl[static_cast<std::size_t>(t)] = std::move(z);
                rl[static_cast<std::size_t>(t)] = std::move(rr);
                hcl[static_cast<std::size_t>(t)] = std::move(hc);
            }
        }

        const Eigen::MatrixXd& top = h_.back().back();
        if (spec_.dense > 0) {
            const auto Wd = cmat(slot);
            const auto bd = cvec(slot + 1);
            a_ = ((Wd * top).colwise() + bd).cwiseMax(0.0);
            const auto Wo = cmat(slot + 2);
            const auto bo = cvec(slot + 3);
            y_ = (Wo * a_).colwise() + bo;
        } else {
            const auto Wo = cmat(slot);
            const auto bo = cvec(slot + 1);
            a_ = top;
            y_ = (Wo * a_).colwise() + bo;
        }
        if (!y_.allFinite()) throw NumericError("GruNet::forward: non-finite output");
        return y_;
    }

    const Eigen::MatrixXd& output() const { return y_; }

    // Accumulates d(loss)/d(params) into `grad` for the cached forward pass,
    // seeded with dldy = d(loss)/d(head output). Optionally also returns
    // d(loss)/d(input) per step (used to push critic gradients into actions).
    void backward(const Eigen::MatrixXd& dldy, Eigen::VectorXd& grad,
                  std::vector<Eigen::MatrixXd>* input_grads = nullptr) const {
        if (h_.empty()) throw std::logic_error("GruNet::backward: no cached forward");
        if (grad.size() != w_.size())
            throw std::domain_error("GruNet::backward: gradient buffer size mismatch");
        if (dldy.rows() != y_.rows() || dldy.cols() != y_.cols())
            throw std::domain_error("GruNet::backward: seed shape mismatch");

        const int T = static_cast<int>(xs_.size());
        const Eigen::Index B = y_.cols();
        const int L = static_cast<int>(spec_.gru.size());
        const int head_base = 9 * L;

        Eigen::MatrixXd dh_top;
        {
            const Eigen::MatrixXd& top = h_.back().back();
            if (spec_.dense > 0) {
                const auto Wd = cmat(head_base), Wo = cmat(head_base + 2);
                gmat(grad, head_base + 2) += dldy * a_.transpose();
                gvec(grad, head_base + 3) += dldy.rowwise().sum();
                Eigen::MatrixXd da = Wo.transpose() * dldy;
                Eigen::MatrixXd dpre =
                    da.cwiseProduct((a_.array() > 0.0).cast<double>().matrix());
                gmat(grad, head_base) += dpre * top.transpose();
                gvec(grad, head_base + 1) += dpre.rowwise().sum();
                dh_top = Wd.transpose() * dpre;
            } else {
                const auto Wo = cmat(head_base);
                gmat(grad, head_base) += dldy * a_.transpose();
                gvec(grad, head_base + 1) += dldy.rowwise().sum();
                dh_top = Wo.transpose() * dldy;
            }
        }

        if (input_grads) input_grads->assign(static_cast<std::size_t>(T), {});

        std::vector<Eigen::MatrixXd> carry(static_cast<std::size_t>(L));
        for (int l = 0; l < L; ++l)
            carry[static_cast<std::size_t>(l)] =
                Eigen::MatrixXd::Zero(spec_.gru[static_cast<std::size_t>(l)], B);

        for (int t = T - 1; t >= 0; --t) {
            Eigen::MatrixXd from_above;
            for (int l = L - 1; l >= 0; --l) {
                const int h = spec_.gru[static_cast<std::size_t>(l)];
                const int s0 = 9 * l;
                const auto Wz = cmat(s0), Uz = cmat(s0 + 1);
                const auto Wr = cmat(s0 + 3), Ur = cmat(s0 + 4);
                const auto Wh = cmat(s0 + 6), Uh = cmat(s0 + 7);

                Eigen::MatrixXd dht = carry[static_cast<std::size_t>(l)];
                if (l == L - 1) {
                    if (t == T - 1) dht += dh_top;
                } else {
                    dht += from_above;
                }

                const Eigen::MatrixXd& x =
                    l == 0 ? xs_[static_cast<std::size_t>(t)]
                           : h_[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(t)];
                const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(h, B);
                const Eigen::MatrixXd& hp =
                    t == 0 ? zero
                           : h_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t - 1)];
                const Eigen::MatrixXd& z =
                    z_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];
                const Eigen::MatrixXd& rr =
                    r_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];
                const Eigen::MatrixXd& hc =
                    hc_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];

                Eigen::MatrixXd dhc = dht.cwiseProduct((1.0 - z.array()).matrix());
                Eigen::MatrixXd dh_prev = dht.cwiseProduct(z);
                Eigen::MatrixXd dp_h =
                    dhc.cwiseProduct((1.0 - hc.array().square()).matrix());
                gmat(grad, s0 + 6) += dp_h * x.transpose();
                gmat(grad, s0 + 7) += dp_h * rr.cwiseProduct(hp).transpose();
                gvec(grad, s0 + 8) += dp_h.rowwise().sum();
                Eigen::MatrixXd d_rhp = Uh.transpose() * dp_h;
                dh_prev += d_rhp.cwiseProduct(rr);
                Eigen::MatrixXd dp_r = d_rhp.cwiseProduct(hp).cwiseProduct(
                    (rr.array() * (1.0 - rr.array())).matrix());
                gmat(grad, s0 + 3) += dp_r * x.transpose();
                gmat(grad, s0 + 4) += dp_r * hp.transpose();
                gvec(grad, s0 + 5) += dp_r.rowwise().sum();
                dh_prev += Ur.transpose() * dp_r;
                Eigen::MatrixXd dp_z = dht.cwiseProduct(hp - hc).cwiseProduct(
                    (z.array() * (1.0 - z.array())).matrix());
                gmat(grad, s0) += dp_z * x.transpose();
                gmat(grad, s0 + 1) += dp_z * hp.transpose();
                gvec(grad, s0 + 2) += dp_z.rowwise().sum();
                dh_prev += Uz.transpose() * dp_z;

                carry[static_cast<std::size_t>(l)] = std::move(dh_prev);
                from_above =
                    Wz.transpose() * dp_z + Wr.transpose() * dp_r + Wh.transpose() * dp_h;
            }
            if (input_grads) (*input_grads)[static_cast<std::size_t>(t)] = from_above;
        }
    }

private:
    struct Slot {
        Eigen::Index offset;
        int rows;
        int cols;
        bool bias;
    };

    void add_slot(int rows, int cols, bool bias) {
        slots_.push_back({total_, rows, cols, bias});
        total_ += static_cast<Eigen::Index>(rows) * cols;
    }

    Eigen::Map<const Eigen::MatrixXd> cmat(int i) const {
        const Slot& s = slots_[static_cast<std::size_t>(i)];
        return {w_.data() + s.offset, s.rows, s.cols};
    }
    Eigen::Map<const Eigen::VectorXd> cvec(int i) const {
        const Slot& s = slots_[static_cast<std::size_t>(i)];
        return {w_.data() + s.offset, static_cast<Eigen::Index>(s.rows) * s.cols};
    }
    Eigen::Map<Eigen::MatrixXd> gmat(Eigen::VectorXd& g, int i) const {
        const Slot& s = slots_[static_cast<std::size_t>(i)];
        return {g.data() + s.offset, s.rows, s.cols};
    }
    Eigen::Map<Eigen::VectorXd> gvec(Eigen::VectorXd& g, int i) const {
        const Slot& s = slots_[static_cast<std::size_t>(i)];
        return {g.data() + s.offset, static_cast<Eigen::Index>(s.rows) * s.cols};
    }

    NetSpec spec_;
    std::vector<Slot> slots_;
    Eigen::Index total_ = 0;
    Eigen::VectorXd w_;

    // forward caches
    std::vector<Eigen::MatrixXd> xs_;
    std::vector<std::vector<Eigen::MatrixXd>> z_, r_, hc_, h_;
    Eigen::MatrixXd a_;  // dense activation (or top hidden state when dense=0)
    Eigen::MatrixXd y_;
};

// Adam with the conventional constants, or plain SGD when sgd=true. Moment
// buffers and the step counter are public so checkpoints can capture them.
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(Eigen::Index n, double lr, bool sgd = false)
        : lr_(lr), sgd_(sgd), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

    void step(Eigen::VectorXd& w, const Eigen::VectorXd& g) {
        if (w.size() != g.size())
            throw std::domain_error("Optimizer::step: shape mismatch");
        if (sgd_) {
            w -= lr_ * g;
            return;
        }
        if (m_.size() != w.size())
            throw std::domain_error("Optimizer::step: moment buffers not sized");
        t_ += 1;
        m_ = beta1_ * m_ + (1.0 - beta1_) * g;
        v_ = (beta2_ * v_.array() + (1.0 - beta2_) * g.array().square()).matrix();
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        w.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

    double lr() const { return lr_; }
    bool sgd() const { return sgd_; }
    Eigen::VectorXd& m() { return m_; }
    Eigen::VectorXd& v() { return v_; }
    std::int64_t& t() { return t_; }

private:
    double lr_ = 1e-4;
    bool sgd_ = false;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    Eigen::VectorXd m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace rachforge
