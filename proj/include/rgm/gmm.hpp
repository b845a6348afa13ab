#pragma once

#include <cstdint>
#include <vector>

#include "rgm/matrix.hpp"
#include "rgm/rng.hpp"

namespace rgm {

enum class CovType { Diag, Full };

struct GmmModel {
    std::size_t k = 3;
    std::size_t dim = 0;
    std::vector<double> weights;          // k
    Matrix means;                         // k x dim
    std::vector<std::vector<double>> covariances; // per component: dim (diag) or dim*dim (full)
    CovType cov_type = CovType::Diag;
    double ridge = 1e-6;
};

struct EmOptions {
    std::size_t max_iters = 500;
    double tol = 1e-6; // on mean log-likelihood change
    std::uint64_t seed = 0;
    double ridge = 1e-6;
};

double gaussian_logpdf(const std::vector<double>& f, const std::vector<double>& mu,
                       const std::vector<double>& sigma, CovType cov_type);

double gmm_logdensity(const std::vector<double>& f, const GmmModel& model);

struct EmResult {
    GmmModel model;
    std::vector<double> log_lik_trace; // mean log-likelihood per iteration
};

EmResult em_fit(const Matrix& features, std::size_t k, CovType cov_type, const EmOptions& opts);

Matrix gmm_sample(const GmmModel& model, std::size_t n, RngStream& rng);

// Cholesky factor (lower) of a dim x dim row-major SPD matrix; throws NumericError.
std::vector<double> cholesky(const std::vector<double>& a, std::size_t dim);

} // namespace rgm
