#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rgm/errors.hpp"
#include "rgm/gmm.hpp"

using namespace rgm;

namespace {

// three well-separated 2-D clusters, 1000 points each
Matrix three_clusters(std::uint64_t seed) {
    const double mx[3] = {0.0, 10.0, 0.0};
    const double my[3] = {0.0, 0.0, 10.0};
    RngStream rng(seed);
    Matrix x(3000, 2);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 1000; ++i) {
            x(c * 1000 + i, 0) = mx[c] + rng.next_gaussian();
            x(c * 1000 + i, 1) = my[c] + rng.next_gaussian();
        }
    return x;
}

// greedy nearest-mean matching of fitted components to true means
std::vector<std::size_t> match_components(const GmmModel& m, const double truth[3][2]) {
    std::vector<std::size_t> assign(3);
    std::vector<bool> used(3, false);
    for (std::size_t t = 0; t < 3; ++t) {
        double best = 1e300;
        std::size_t best_c = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            if (used[c]) continue;
            double d = std::hypot(m.means(c, 0) - truth[t][0], m.means(c, 1) - truth[t][1]);
            if (d < best) {
                best = d;
                best_c = c;
            }
        }
        used[best_c] = true;
        assign[t] = best_c;
    }
    return assign;
}

} // namespace

TEST_CASE("standard normal logpdf at the origin") {
    double v = gaussian_logpdf({0.0}, {0.0}, {1.0}, CovType::Diag);
    CHECK(v == doctest::Approx(std::log(1.0 / std::sqrt(2 * M_PI))).epsilon(1e-12));
    CHECK(v == doctest::Approx(-0.91894).epsilon(1e-4));
}

TEST_CASE("2-D isotropic logpdf at the mean") {
    std::vector<double> eye = {1, 0, 0, 1};
    double v = gaussian_logpdf({0.3, -0.7}, {0.3, -0.7}, eye, CovType::Full);
    CHECK(v == doctest::Approx(-std::log(2 * M_PI)).epsilon(1e-12));
}

TEST_CASE("full-covariance logpdf matches the closed form evaluated by hand") {
    // Sigma = [[2, 0.5], [0.5, 1]], f = (1,1), mu = 0
    // |Sigma| = 1.75, Sigma^-1 = [[1, -0.5], [-0.5, 2]]/1.75
    // quad = (1 - 0.5 - 0.5 + 2)/1.75 = 2/1.75
    std::vector<double> sigma = {2.0, 0.5, 0.5, 1.0};
    double expected = -std::log(2 * M_PI) - 0.5 * std::log(1.75) - 0.5 * (2.0 / 1.75);
    double v = gaussian_logpdf({1.0, 1.0}, {0.0, 0.0}, sigma, CovType::Full);
    CHECK(v == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("logpdf rejects non positive definite covariance") {
    std::vector<double> bad = {1.0, 2.0, 2.0, 1.0};
    CHECK_THROWS_AS(gaussian_logpdf({0.0, 0.0}, {0.0, 0.0}, bad, CovType::Full), NumericError);
    CHECK_THROWS_AS(gaussian_logpdf({0.0}, {0.0}, {0.0}, CovType::Diag), NumericError);
}

TEST_CASE("single-component mixture equals the component density") {
    GmmModel m;
    m.k = 1;
    m.dim = 1;
    m.weights = {1.0};
    m.means = Matrix(1, 1);
    m.means(0, 0) = 0.5;
    m.covariances = {{2.0}};
    double direct = gaussian_logpdf({1.2}, {0.5}, {2.0}, CovType::Diag);
    CHECK(gmm_logdensity({1.2}, m) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("two identical half-weight components equal one component") {
    GmmModel m;
    m.k = 2;
    m.dim = 1;
    m.weights = {0.5, 0.5};
    m.means = Matrix(2, 1);
    m.means(0, 0) = m.means(1, 0) = -0.3;
    m.covariances = {{1.5}, {1.5}};
    double single = gaussian_logpdf({0.7}, {-0.3}, {1.5}, CovType::Diag);
    CHECK(gmm_logdensity({0.7}, m) == doctest::Approx(single).epsilon(1e-12));
}

TEST_CASE("log-sum-exp equals direct summation where it does not underflow") {
    GmmModel m;
    m.k = 3;
    m.dim = 1;
    m.weights = {0.2, 0.5, 0.3};
    m.means = Matrix(3, 1);
    m.means(0, 0) = -1.0;
    m.means(1, 0) = 0.5;
    m.means(2, 0) = 2.0;
    m.covariances = {{0.5}, {1.0}, {2.0}};
    for (double f : {-2.0, 0.0, 1.5, 3.0}) {
        double direct = 0.0;
        for (std::size_t c = 0; c < 3; ++c)
            direct += m.weights[c] * std::exp(gaussian_logpdf(
                          {f}, {m.means(c, 0)}, m.covariances[c], CovType::Diag));
        CHECK(gmm_logdensity({f}, m) == doctest::Approx(std::log(direct)).epsilon(1e-10));
    }
}

TEST_CASE("1-D K=3 mixture integrates to one by grid quadrature") {
    GmmModel m;
    m.k = 3;
    m.dim = 1;
    m.weights = {0.3, 0.45, 0.25};
    m.means = Matrix(3, 1);
    m.means(0, 0) = -3.0;
    m.means(1, 0) = 1.0;
    m.means(2, 0) = 6.0;
    m.covariances = {{0.8}, {2.0}, {1.3}};
    // +-10 sigma around the extreme components
    const double lo = -3.0 - 10.0 * std::sqrt(0.8), hi = 6.0 + 10.0 * std::sqrt(1.3);
    const std::size_t n = 20000;
    const double dx = (hi - lo) / n;
    double integral = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double x = lo + (i + 0.5) * dx;
        integral += std::exp(gmm_logdensity({x}, m)) * dx;
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("K=1 EM returns sample mean and ridged sample covariance exactly") {
    RngStream rng(3);
    Matrix x(50, 2);
    for (double& v : x.data) v = rng.next_gaussian() * 2.0 + 1.0;
    EmOptions opts;
    opts.seed = 1;
    opts.ridge = 1e-6;
    EmResult res = em_fit(x, 1, CovType::Diag, opts);
    double mean[2] = {0, 0}, var[2] = {0, 0};
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 2; ++j) mean[j] += x(i, j);
    for (double& v : mean) v /= 50.0;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double d = x(i, j) - mean[j];
            var[j] += d * d;
        }
    for (double& v : var) v /= 50.0;
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(res.model.means(0, j) == doctest::Approx(mean[j]).epsilon(1e-12));
        CHECK(res.model.covariances[0][j] == doctest::Approx(var[j] + 1e-6).epsilon(1e-12));
    }
    CHECK(res.model.weights[0] == 1.0);
}

TEST_CASE("EM recovers three well-separated components") {
    Matrix x = three_clusters(7);
    EmOptions opts;
    opts.seed = 2;
    EmResult res = em_fit(x, 3, CovType::Full, opts);
    const double truth[3][2] = {{0, 0}, {10, 0}, {0, 10}};
    // oracle: per-cluster sample means of the generated points
    double oracle[3][2] = {{0, 0}, {0, 0}, {0, 0}};
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < 1000; ++i) {
            oracle[c][0] += x(c * 1000 + i, 0);
            oracle[c][1] += x(c * 1000 + i, 1);
        }
        oracle[c][0] /= 1000.0;
        oracle[c][1] /= 1000.0;
    }
    auto assign = match_components(res.model, truth);
    for (std::size_t t = 0; t < 3; ++t) {
        std::size_t c = assign[t];
        CHECK(std::hypot(res.model.means(c, 0) - oracle[t][0],
                         res.model.means(c, 1) - oracle[t][1]) < 0.1);
        CHECK(res.model.weights[c] == doctest::Approx(1.0 / 3.0).epsilon(0.05));
    }
}

TEST_CASE("diag EM recovers per-coordinate variances on independent data") {
    RngStream rng(5);
    Matrix x(4000, 2);
    for (std::size_t i = 0; i < 4000; ++i) {
        x(i, 0) = 2.0 * rng.next_gaussian();   // var 4
        x(i, 1) = 0.5 * rng.next_gaussian();   // var 0.25
    }
    EmOptions opts;
    opts.seed = 9;
    EmResult res = em_fit(x, 1, CovType::Diag, opts);
    CHECK(res.model.covariances[0][0] == doctest::Approx(4.0).epsilon(0.1));
    CHECK(res.model.covariances[0][1] == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("EM trace is monotone and fitting is bit-deterministic") {
    Matrix x = three_clusters(11);
    EmOptions opts;
    opts.seed = 4;
    EmResult a = em_fit(x, 3, CovType::Diag, opts);
    EmResult b = em_fit(x, 3, CovType::Diag, opts);
    REQUIRE(a.log_lik_trace.size() == b.log_lik_trace.size());
    for (std::size_t i = 0; i < a.log_lik_trace.size(); ++i)
        CHECK(a.log_lik_trace[i] == b.log_lik_trace[i]);
    for (std::size_t i = 1; i < a.log_lik_trace.size(); ++i)
        CHECK(a.log_lik_trace[i] >= a.log_lik_trace[i - 1] - 1e-9);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(a.model.means(c, j) == b.model.means(c, j));
}

TEST_CASE("weights stay on the probability simplex after every fit") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Matrix x = three_clusters(100 + seed);
        EmOptions opts;
        opts.seed = seed;
        EmResult res = em_fit(x, 3, CovType::Diag, opts);
        double sum = 0.0;
        for (double w : res.model.weights) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("em_fit rejects too-few samples") {
    Matrix x(3, 2);
    CHECK_THROWS_AS(em_fit(x, 3, CovType::Diag, EmOptions{}), ValidationError);
}

TEST_CASE("sampling is reproducible for identical streams") {
    GmmModel m;
    m.k = 2;
    m.dim = 3;
    m.weights = {0.4, 0.6};
    m.means = Matrix(2, 3);
    m.means(1, 0) = 5.0;
    m.covariances = {{1.0, 1.0, 1.0}, {2.0, 0.5, 1.0}};
    RngStream r1(33, 2), r2(33, 2);
    Matrix a = gmm_sample(m, 100, r1);
    Matrix b = gmm_sample(m, 100, r2);
    CHECK(bitwise_equal(a, b));
}

TEST_CASE("sampling frequencies and moments match the mixture") {
    GmmModel m;
    m.k = 2;
    m.dim = 1;
    m.weights = {0.3, 0.7};
    m.means = Matrix(2, 1);
    m.means(0, 0) = -10.0;
    m.means(1, 0) = 10.0;
    m.covariances = {{1.0}, {1.0}};
    RngStream rng(8);
    const std::size_t n = 100000;
    Matrix s = gmm_sample(m, n, rng);
    std::size_t low = 0;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (s(i, 0) < 0.0) ++low;
        mean += s(i, 0);
    }
    mean /= static_cast<double>(n);
    CHECK(static_cast<double>(low) / n == doctest::Approx(0.3).epsilon(0.034));
    // mixture mean 0.3*(-10)+0.7*10 = 4; std ~ sqrt(1 + var of means) ~ 9.2
    double mix_std = std::sqrt(1.0 + 0.3 * 100.0 + 0.7 * 100.0 - 16.0);
    CHECK(std::abs(mean - 4.0) < 3.0 * mix_std / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("full-covariance sampling respects correlations") {
    GmmModel m;
    m.k = 1;
    m.dim = 2;
    m.weights = {1.0};
    m.means = Matrix(1, 2);
    m.covariances = {{2.0, 0.9, 0.9, 1.0}};
    m.cov_type = CovType::Full;
    RngStream rng(21);
    Matrix s = gmm_sample(m, 50000, rng);
    double cxx = 0, cxy = 0, cyy = 0;
    for (std::size_t i = 0; i < s.rows; ++i) {
        cxx += s(i, 0) * s(i, 0);
        cxy += s(i, 0) * s(i, 1);
        cyy += s(i, 1) * s(i, 1);
    }
    cxx /= 50000.0;
    cxy /= 50000.0;
    cyy /= 50000.0;
    CHECK(cxx == doctest::Approx(2.0).epsilon(0.05));
    CHECK(cxy == doctest::Approx(0.9).epsilon(0.05));
    CHECK(cyy == doctest::Approx(1.0).epsilon(0.05));
}
