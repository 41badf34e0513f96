#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace slv {

struct AdamWConfig {
    double peak_lr = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_fraction = 0.10;
};

// Linear warmup to peak_lr over ceil(warmup_fraction * total) steps, then
// linear decay to zero at total_steps. A constant schedule ignores both.
class LrSchedule {
public:
    static LrSchedule warmup_linear(double peak_lr, std::uint64_t total_steps, double warmup_fraction = 0.10);
    static LrSchedule constant(double lr);

    double lr_at(std::uint64_t step) const;

    std::uint64_t total_steps() const noexcept { return total_steps_; }
    std::uint64_t warmup_steps() const noexcept { return warmup_steps_; }
    bool is_constant() const noexcept { return constant_; }

private:
    double peak_lr_ = 0.0;
    std::uint64_t total_steps_ = 0;
    std::uint64_t warmup_steps_ = 0;
    bool constant_ = false;
};

// A named parameter tensor plus whether decoupled weight decay applies.
struct ParamSlot {
    std::string_view name;
    std::span<double> value;
    bool decay = true;
    bool trainable = true;  // false: value and moments are left untouched
};

struct OptimizerState {
    AdamWConfig config;
    LrSchedule schedule = LrSchedule::constant(0.0);
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;

    OptimizerState() = default;
    OptimizerState(AdamWConfig cfg, LrSchedule sched, std::span<const std::size_t> tensor_sizes);
};

// One AdamW update with bias correction:
//   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
// The step counter advances by one and lr = schedule.lr_at(step).
// Returns the learning rate used.
double adamw_step(std::span<const ParamSlot> params, std::span<const std::span<const double>> grads,
                  OptimizerState& state);

} // namespace slv
