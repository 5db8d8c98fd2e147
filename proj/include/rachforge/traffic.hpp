// Bursty traffic activation: time-limited Beta density over the burst
// period, per-frame arrival rates, and per-episode activation sampling.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "rachforge/common.hpp"

namespace rachforge {

struct TrafficProfile {
    double alpha = 3.0;
    double beta = 4.0;
    int total_frames = 20;   // burst period T, in frames
    int device_count = 400;  // N

    void validate() const {
        if (!(alpha > 0.0) || !(beta > 0.0))
            throw ConfigError("traffic: alpha and beta must be > 0");
        if (total_frames < 1) throw ConfigError("traffic: frames must be >= 1");
        if (device_count < 0) throw ConfigError("traffic: devices must be >= 0");
    }
};

struct ArrivalSchedule {
    std::vector<double> per_frame_rate;  // mu^1..mu^T, sums to 1
    std::vector<int> activation_frame;   // one entry per device, in [1, T]
};

// Density of the time-limited Beta profile on [0, T], normalized so it
// integrates to 1 over the burst period.
inline double beta_density(double tau, const TrafficProfile& p) {
    p.validate();
    const double T = static_cast<double>(p.total_frames);
    if (tau < 0.0 || tau > T)
        throw std::domain_error("beta_density: tau outside [0, T]");
    const double b = boost::math::beta(p.alpha, p.beta);
    // Degenerate endpoints: tau^(alpha-1) / (T-tau)^(beta-1) blow up when the
    // exponent is negative; the density is still integrable, report +inf.
    auto powterm = [](double base, double expo) {
        if (base == 0.0 && expo < 0.0) return std::numeric_limits<double>::infinity();
        return std::pow(base, expo);
    };
    return powterm(tau, p.alpha - 1.0) * powterm(T - tau, p.beta - 1.0) /
           (std::pow(T, p.alpha + p.beta - 1.0) * b);
}

// Per-frame arrival probabilities mu^t, t = 1..T, with uniform frame
// boundaries tau_t = t. Computed from the regularized incomplete beta so
// the rates sum to exactly 1 up to rounding.
inline std::vector<double> frame_rates(const TrafficProfile& p) {
    p.validate();
    const double T = static_cast<double>(p.total_frames);
    std::vector<double> mu(static_cast<std::size_t>(p.total_frames));
    double prev = 0.0;
    for (int t = 1; t <= p.total_frames; ++t) {
        const double cdf = (t == p.total_frames)
                               ? 1.0
                               : boost::math::ibeta(p.alpha, p.beta, t / T);
        mu[static_cast<std::size_t>(t - 1)] = cdf - prev;
        prev = cdf;
    }
    return mu;
}

// Draws one activation frame per device, i.i.d. from the mu^t distribution.
// Pure in (profile, rng state): a freshly seeded rng reproduces the schedule.
inline ArrivalSchedule sample_activations(const TrafficProfile& p, Rng& rng) {
    ArrivalSchedule sched;
    sched.per_frame_rate = frame_rates(p);
    sched.activation_frame.reserve(static_cast<std::size_t>(p.device_count));
    std::discrete_distribution<int> pick(sched.per_frame_rate.begin(),
                                         sched.per_frame_rate.end());
    for (int j = 0; j < p.device_count; ++j)
        sched.activation_frame.push_back(pick(rng) + 1);
    return sched;
}

}  // namespace rachforge
