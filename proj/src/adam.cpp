#include "fedmekt/adam.hpp"

#include <cmath>

namespace fedmekt {

void Adam::step(const ParamRefs& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size())
        throw ShapeError("adam: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " gradients");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].first;
        Tensor& theta = *params[i].second;
        const Tensor& g = grads[i];
        if (!theta.same_shape(g))
            throw ShapeError("adam: gradient shape " + shape_str(g.shape()) +
                             " does not match parameter '" + name + "' " +
                             shape_str(theta.shape()));
        if (!g.all_finite())
            throw NumericError("adam: non-finite gradient for parameter '" + name + "'");

        auto it = state_.find(name);
        if (it == state_.end()) {
            it = state_.emplace(name, Moment{Tensor::zeros(theta.shape()),
                                             Tensor::zeros(theta.shape())}).first;
        } else if (!it->second.m.same_shape(theta)) {
            throw ShapeError("adam: parameter '" + name + "' changed shape from " +
                             shape_str(it->second.m.shape()) + " to " +
                             shape_str(theta.shape()));
        }
        Moment& mo = it->second;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            mo.m[k] = cfg_.beta1 * mo.m[k] + (1.0 - cfg_.beta1) * g[k];
            mo.v[k] = cfg_.beta2 * mo.v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            double mhat = mo.m[k] / bc1;
            double vhat = mo.v[k] / bc2;
            theta[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::reset() {
    t_ = 0;
    state_.clear();
}

}  // namespace fedmekt
