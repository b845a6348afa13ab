#include "rgm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "rgm/errors.hpp"

namespace rgm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double logsumexp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

} // namespace

std::vector<double> cholesky(const std::vector<double>& a, std::size_t dim) {
    std::vector<double> l(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * dim + j];
            for (std::size_t p = 0; p < j; ++p)
                s -= l[i * dim + p] * l[j * dim + p];
            if (i == j) {
                if (s <= 0.0)
                    throw NumericError(
                        "cholesky: matrix not positive definite; try a larger ridge");
                l[i * dim + i] = std::sqrt(s);
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    return l;
}

double gaussian_logpdf(const std::vector<double>& f, const std::vector<double>& mu,
                       const std::vector<double>& sigma, CovType cov_type) {
    const std::size_t m = f.size();
    if (mu.size() != m)
        throw ShapeError("gaussian_logpdf: dimension mismatch");
    if (cov_type == CovType::Diag) {
        if (sigma.size() != m)
            throw ShapeError("gaussian_logpdf: diagonal covariance size mismatch");
        double logdet = 0.0, quad = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (sigma[i] <= 0.0)
                throw NumericError(
                    "gaussian_logpdf: non-positive variance; try a larger ridge");
            logdet += std::log(sigma[i]);
            double d = f[i] - mu[i];
            quad += d * d / sigma[i];
        }
        return -0.5 * (static_cast<double>(m) * kLog2Pi + logdet + quad);
    }
    if (sigma.size() != m * m)
        throw ShapeError("gaussian_logpdf: full covariance size mismatch");
    std::vector<double> l = cholesky(sigma, m);
    double logdet = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        logdet += 2.0 * std::log(l[i * m + i]);
    // solve L y = f - mu; quad = y^T y
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = f[i] - mu[i];
        for (std::size_t j = 0; j < i; ++j)
            s -= l[i * m + j] * y[j];
        y[i] = s / l[i * m + i];
    }
    double quad = 0.0;
    for (double v : y) quad += v * v;
    return -0.5 * (static_cast<double>(m) * kLog2Pi + logdet + quad);
}

double gmm_logdensity(const std::vector<double>& f, const GmmModel& model) {
    std::vector<double> terms(model.k);
    for (std::size_t c = 0; c < model.k; ++c) {
        std::vector<double> mu(model.means.row(c), model.means.row(c) + model.dim);
        double lw = model.weights[c] > 0.0 ? std::log(model.weights[c])
                                           : -std::numeric_limits<double>::infinity();
        terms[c] = lw + gaussian_logpdf(f, mu, model.covariances[c], model.cov_type);
    }
    return logsumexp(terms);
}

namespace {

// global (ridged) covariance used for initialization and component re-seeding
std::vector<double> global_cov(const Matrix& x, CovType cov_type, double ridge) {
    const std::size_t n = x.rows, m = x.cols;
    std::vector<double> mean(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            mean[j] += x(i, j);
    for (double& v : mean) v /= static_cast<double>(n);
    if (cov_type == CovType::Diag) {
        std::vector<double> var(m, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double d = x(i, j) - mean[j];
                var[j] += d * d;
            }
        for (double& v : var) v = v / static_cast<double>(n) + ridge;
        return var;
    }
    std::vector<double> cov(m * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < m; ++a) {
            double da = x(i, a) - mean[a];
            for (std::size_t b = 0; b < m; ++b)
                cov[a * m + b] += da * (x(i, b) - mean[b]);
        }
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) {
            cov[a * m + b] /= static_cast<double>(n);
            if (a == b) cov[a * m + b] += ridge;
        }
    return cov;
}

} // namespace

EmResult em_fit(const Matrix& features, std::size_t k, CovType cov_type, const EmOptions& opts) {
    const std::size_t n = features.rows, m = features.cols;
    if (n <= k)
        throw ValidationError("em_fit: need more samples than components");
    if (!features.all_finite())
        throw ValidationError("em_fit: features must be finite");
    if (opts.tol <= 0.0 || opts.max_iters < 1)
        throw ConfigError("em_fit: bad EM options");

    RngStream rng(opts.seed);
    GmmModel model;
    model.k = k;
    model.dim = m;
    model.cov_type = cov_type;
    model.ridge = opts.ridge;
    model.weights.assign(k, 1.0 / static_cast<double>(k));
    model.means = Matrix(k, m);

    // init: K distinct random data points, shared global covariance
    std::vector<std::size_t> picks;
    while (picks.size() < k) {
        std::size_t idx = rng.next_below(n);
        if (std::find(picks.begin(), picks.end(), idx) == picks.end())
            picks.push_back(idx);
    }
    for (std::size_t c = 0; c < k; ++c)
        std::copy(features.row(picks[c]), features.row(picks[c]) + m, model.means.row(c));
    std::vector<double> gcov = global_cov(features, cov_type, opts.ridge);
    model.covariances.assign(k, gcov);

    EmResult result;
    Matrix resp(n, k);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
        // E-step
        double ll = 0.0;
        std::vector<double> terms(k);
        std::vector<double> f(m);
        for (std::size_t i = 0; i < n; ++i) {
            f.assign(features.row(i), features.row(i) + m);
            for (std::size_t c = 0; c < k; ++c) {
                std::vector<double> mu(model.means.row(c), model.means.row(c) + m);
                terms[c] = std::log(model.weights[c]) +
                           gaussian_logpdf(f, mu, model.covariances[c], cov_type);
            }
            double lse = logsumexp(terms);
            ll += lse;
            for (std::size_t c = 0; c < k; ++c)
                resp(i, c) = std::exp(terms[c] - lse);
        }
        ll /= static_cast<double>(n);
        result.log_lik_trace.push_back(ll);

        // M-step
        bool collapsed = false;
        for (std::size_t c = 0; c < k; ++c) {
            double nk = 0.0;
            for (std::size_t i = 0; i < n; ++i) nk += resp(i, c);
            double alpha = nk / static_cast<double>(n);
            if (alpha < 1e-8) {
                std::fprintf(stderr, "em_fit: component %zu collapsed, reinitializing\n", c);
                std::size_t idx = rng.next_below(n);
                std::copy(features.row(idx), features.row(idx) + m, model.means.row(c));
                model.covariances[c] = gcov;
                model.weights[c] = 1.0 / static_cast<double>(k);
                collapsed = true;
                continue;
            }
            model.weights[c] = alpha;
            std::vector<double> mu(m, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    mu[j] += resp(i, c) * features(i, j);
            for (double& v : mu) v /= nk;
            std::copy(mu.begin(), mu.end(), model.means.row(c));
            if (cov_type == CovType::Diag) {
                std::vector<double> var(m, 0.0);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        double d = features(i, j) - mu[j];
                        var[j] += resp(i, c) * d * d;
                    }
                for (double& v : var) v = v / nk + opts.ridge;
                model.covariances[c] = std::move(var);
            } else {
                std::vector<double> cov(m * m, 0.0);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t a = 0; a < m; ++a) {
                        double da = resp(i, c) * (features(i, a) - mu[a]);
                        for (std::size_t b = 0; b < m; ++b)
                            cov[a * m + b] += da * (features(i, b) - mu[b]);
                    }
                for (std::size_t a = 0; a < m; ++a)
                    for (std::size_t b = 0; b < m; ++b) {
                        cov[a * m + b] /= nk;
                        if (a == b) cov[a * m + b] += opts.ridge;
                    }
                model.covariances[c] = std::move(cov);
            }
        }
        // keep the simplex exact after any reinitialization
        double wsum = 0.0;
        for (double w : model.weights) wsum += w;
        for (double& w : model.weights) w /= wsum;

        if (!collapsed && std::abs(ll - prev_ll) < opts.tol)
            break;
        prev_ll = ll;
    }
    result.model = std::move(model);
    return result;
}

Matrix gmm_sample(const GmmModel& model, std::size_t n, RngStream& rng) {
    if (n < 1)
        throw ValidationError("gmm_sample: n must be >= 1");
    const std::size_t m = model.dim;
    // precompute triangular factors for full covariances
    std::vector<std::vector<double>> factors;
    if (model.cov_type == CovType::Full)
        for (std::size_t c = 0; c < model.k; ++c)
            factors.push_back(cholesky(model.covariances[c], m));

    Matrix out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.next_double();
        std::size_t c = 0;
        double acc = 0.0;
        for (; c < model.k; ++c) {
            acc += model.weights[c];
            if (u < acc) break;
        }
        if (c == model.k) c = model.k - 1;
        std::vector<double> z(m);
        for (double& v : z) v = rng.next_gaussian();
        double* row = out.row(i);
        if (model.cov_type == CovType::Diag) {
            for (std::size_t j = 0; j < m; ++j)
                row[j] = model.means(c, j) + std::sqrt(model.covariances[c][j]) * z[j];
        } else {
            const std::vector<double>& l = factors[c];
            for (std::size_t a = 0; a < m; ++a) {
                double s = model.means(c, a);
                for (std::size_t b = 0; b <= a; ++b)
                    s += l[a * m + b] * z[b];
                row[a] = s;
            }
        }
    }
    return out;
}

} // namespace rgm
