#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rgm {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam step on one parameter block. Throws NumericError naming
// `block_name` on non-finite gradients.
void adam_update(std::vector<double>& params, const std::vector<double>& grads,
                 AdamState& state, double lr, const std::string& block_name = "params");
void adam_update(double* params, const double* grads, std::size_t n, AdamState& state,
                 double lr, const std::string& block_name = "params");

// lr = 0.001 * 0.95^epoch
double lr_schedule(std::uint64_t epoch);

} // namespace rgm
