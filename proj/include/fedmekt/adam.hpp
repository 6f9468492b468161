#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedmekt/tensor.hpp"

namespace fedmekt {

// Named views into a model's parameter tensors, in canonical order.
using ParamRefs = std::vector<std::pair<std::string, Tensor*>>;

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. First and second moments are keyed by parameter
// name, so the same optimizer instance can keep following a model across
// training phases as long as names and shapes stay stable.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Applies one update in place. grads[i] is d(loss)/d(*params[i].second);
    // a non-finite gradient raises NumericError naming the parameter.
    void step(const ParamRefs& params, const std::vector<Tensor>& grads);

    void reset();
    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    struct Moment {
        Tensor m, v;
    };
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::unordered_map<std::string, Moment> state_;
};

}  // namespace fedmekt
