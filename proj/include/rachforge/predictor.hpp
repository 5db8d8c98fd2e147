// Online-supervised GRU traffic predictor: softmax classification of the
// backlog into {0..N_max}, trained on estimator labels that arrive one frame
// late and are buffered in a replay-style ring.
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rachforge/common.hpp"
#include "rachforge/neural.hpp"

namespace rachforge {

struct LabeledWindow {
    Eigen::MatrixXd window;  // (obs dims) x T_o
    int label = 0;           // backlog class in {0..N_max}
};

struct PredictorConfig {
    int n_max = 600;
    int buffer_capacity = 10000;  // mirrors the replay capacity
    int minibatch = 32;           // T_b
    double lr = 1e-4;
    bool sgd = false;
    NetSpec net;  // output is forced to n_max + 1

    void validate() const {
        if (n_max < 1) throw ConfigError("predictor: n_max must be >= 1");
        if (buffer_capacity < minibatch)
            throw ConfigError("predictor: buffer below minibatch");
        if (minibatch < 1) throw ConfigError("predictor: minibatch must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("predictor: lr must be > 0");
    }
};

class TrafficPredictor {
public:
    TrafficPredictor(PredictorConfig cfg, Rng& init_rng)
        : cfg_(std::move(cfg)), net_(sized_spec(cfg_)), opt_(0, cfg_.lr, cfg_.sgd) {
        cfg_.validate();
        net_.init(init_rng);
        opt_ = Optimizer(net_.param_count(), cfg_.lr, cfg_.sgd);
        grad_ = Eigen::VectorXd::Zero(net_.param_count());
        buffer_.reserve(static_cast<std::size_t>(cfg_.buffer_capacity));
    }

    static NetSpec sized_spec(const PredictorConfig& cfg) {
        NetSpec s = cfg.net;
        s.output = cfg.n_max + 1;
        return s;
    }

    int n_classes() const { return cfg_.n_max + 1; }

    // Softmax over {0..N_max}; the point prediction is the argmax with the
    // smallest-index tie-break.
    int predict(const Eigen::MatrixXd& window, Eigen::VectorXd* distribution = nullptr) {
        std::vector<Eigen::MatrixXd> xs;
        xs.reserve(static_cast<std::size_t>(window.cols()));
        for (Eigen::Index t = 0; t < window.cols(); ++t) xs.push_back(window.col(t));
        const Eigen::MatrixXd probs = softmax_cols(net_.forward(xs));
        if (distribution) *distribution = probs.col(0);
        int best = 0;
        double bv = probs(0, 0);
        for (int k = 1; k < n_classes(); ++k)
            if (probs(k, 0) > bv) {
                bv = probs(k, 0);
                best = k;
            }
        return best;
    }

    void add_label(Eigen::MatrixXd window, int label) {
        if (label < 0 || label > cfg_.n_max)
            throw std::domain_error("TrafficPredictor: label outside {0..N_max}");
        LabeledWindow lw{std::move(window), label};
        if (static_cast<int>(buffer_.size()) < cfg_.buffer_capacity) {
            buffer_.push_back(std::move(lw));
        } else {
            buffer_[static_cast<std::size_t>(stored_ % cfg_.buffer_capacity)] = std::move(lw);
        }
        stored_ += 1;
    }

    bool ready() const { return static_cast<int>(buffer_.size()) >= cfg_.minibatch; }

    // Mean cross-entropy over a fixed batch; gradient goes into *grad.
    double ce_loss(const std::vector<const LabeledWindow*>& batch, Eigen::VectorXd* grad) {
        const Eigen::Index b = static_cast<Eigen::Index>(batch.size());
        const Eigen::Index d = batch[0]->window.rows(), T = batch[0]->window.cols();
        std::vector<Eigen::MatrixXd> xs(static_cast<std::size_t>(T), Eigen::MatrixXd(d, b));
        std::vector<int> labels(static_cast<std::size_t>(b));
        for (Eigen::Index j = 0; j < b; ++j) {
            const LabeledWindow& lw = *batch[static_cast<std::size_t>(j)];
            for (Eigen::Index t = 0; t < T; ++t)
                xs[static_cast<std::size_t>(t)].col(j) = lw.window.col(t);
            labels[static_cast<std::size_t>(j)] = lw.label;
        }
        const Eigen::MatrixXd probs = softmax_cols(net_.forward(xs));
        const double loss = cross_entropy_mean(probs, labels);
        if (grad) net_.backward(ce_softmax_seed(probs, labels), *grad);
        return loss;
    }

    // One SGD/Adam step on a uniformly sampled minibatch.
    double update(Rng& rng) {
        if (!ready()) return 0.0;
        std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
        std::vector<const LabeledWindow*> batch;
        batch.reserve(static_cast<std::size_t>(cfg_.minibatch));
        for (int i = 0; i < cfg_.minibatch; ++i) batch.push_back(&buffer_[pick(rng)]);
        grad_.setZero();
        const double loss = ce_loss(batch, &grad_);
        if (!std::isfinite(loss)) throw NumericError("TrafficPredictor: non-finite loss");
        opt_.step(net_.params(), grad_);
        return loss;
    }

    GruNet& net() { return net_; }
    Optimizer& optimizer() { return opt_; }
    const PredictorConfig& config() const { return cfg_; }
    const std::vector<LabeledWindow>& buffer() const { return buffer_; }
    std::int64_t labels_seen() const { return stored_; }
    void restore_buffer(std::vector<LabeledWindow> buf, std::int64_t stored) {
        buffer_ = std::move(buf);
        stored_ = stored;
    }

private:
    PredictorConfig cfg_;
    GruNet net_;
    Optimizer opt_;
    Eigen::VectorXd grad_;
    std::vector<LabeledWindow> buffer_;
    std::int64_t stored_ = 0;
};

}  // namespace rachforge
