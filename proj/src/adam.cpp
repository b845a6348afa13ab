#include "rgm/adam.hpp"

#include <cmath>

#include "rgm/errors.hpp"

namespace rgm {

void adam_update(double* params, const double* grads, std::size_t n, AdamState& state,
                 double lr, const std::string& block_name) {
    if (state.m.size() != n || state.v.size() != n)
        throw ShapeError("adam_update: state size mismatch for block " + block_name);
    if (lr <= 0.0)
        throw ConfigError("adam_update: lr must be positive");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(grads[i]))
            throw NumericError("adam_update: non-finite gradient in block " + block_name);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

void adam_update(std::vector<double>& params, const std::vector<double>& grads,
                 AdamState& state, double lr, const std::string& block_name) {
    if (params.size() != grads.size())
        throw ShapeError("adam_update: param/grad size mismatch for block " + block_name);
    adam_update(params.data(), grads.data(), params.size(), state, lr, block_name);
}

double lr_schedule(std::uint64_t epoch) {
    return 0.001 * std::pow(0.95, static_cast<double>(epoch));
}

} // namespace rgm
