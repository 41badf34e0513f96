#include "slvid/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace slv {

LrSchedule LrSchedule::warmup_linear(double peak_lr, std::uint64_t total_steps, double warmup_fraction) {
    if (!(peak_lr >= 0.0) || !(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw std::invalid_argument("lr schedule: bad peak_lr or warmup fraction");
    }
    LrSchedule s;
    s.peak_lr_ = peak_lr;
    s.total_steps_ = total_steps;
    s.warmup_steps_ = static_cast<std::uint64_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps) - 1e-9));
    if (s.total_steps_ <= s.warmup_steps_) {
        throw std::invalid_argument("lr schedule: total_steps (" + std::to_string(total_steps) +
                                    ") must exceed warmup_steps (" + std::to_string(s.warmup_steps_) + ")");
    }
    return s;
}

LrSchedule LrSchedule::constant(double lr) {
    LrSchedule s;
    s.peak_lr_ = lr;
    s.constant_ = true;
    return s;
}

double LrSchedule::lr_at(std::uint64_t step) const {
    if (constant_) {
        return peak_lr_;
    }
    if (step < 1 || step > total_steps_) {
        throw std::out_of_range("lr schedule: step " + std::to_string(step) + " outside [1, " +
                                std::to_string(total_steps_) + "]");
    }
    if (step <= warmup_steps_) {
        return peak_lr_ * static_cast<double>(step) / static_cast<double>(warmup_steps_);
    }
    return peak_lr_ * static_cast<double>(total_steps_ - step) / static_cast<double>(total_steps_ - warmup_steps_);
}

OptimizerState::OptimizerState(AdamWConfig cfg, LrSchedule sched, std::span<const std::size_t> tensor_sizes)
    : config(cfg), schedule(sched) {
    for (std::size_t n : tensor_sizes) {
        first_moment.emplace_back(n, 0.0);
        second_moment.emplace_back(n, 0.0);
    }
}

double adamw_step(std::span<const ParamSlot> params, std::span<const std::span<const double>> grads,
                  OptimizerState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw std::invalid_argument("adamw_step: parameter/gradient/state count mismatch");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].value.size() != grads[k].size() || params[k].value.size() != state.first_moment[k].size()) {
            throw std::invalid_argument("adamw_step: shape mismatch for " + std::string(params[k].name));
        }
        for (double g : grads[k]) {
            if (!std::isfinite(g)) {
                throw std::invalid_argument("adamw_step: non-finite gradient in parameter " +
                                            std::string(params[k].name));
            }
        }
    }

    const AdamWConfig& c = state.config;
    const std::uint64_t t = state.step + 1;
    const double lr = state.schedule.lr_at(t);
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));

    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].trainable) {
            continue;
        }
        auto theta = params[k].value;
        const auto g = grads[k];
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        const double decay = params[k].decay ? 1.0 - lr * c.weight_decay : 1.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] = theta[i] * decay - lr * (m_hat / (std::sqrt(v_hat) + c.eps));
        }
    }
    state.step = t;
    return lr;
}

} // namespace slv
