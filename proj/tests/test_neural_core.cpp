#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "rgm/adam.hpp"
#include "rgm/errors.hpp"
#include "rgm/layer.hpp"
#include "rgm/matrix.hpp"
#include "rgm/rng.hpp"

using namespace rgm;

namespace {

Matrix from_rows(std::size_t rows, std::size_t cols, std::initializer_list<double> vals) {
    Matrix m(rows, cols);
    std::size_t i = 0;
    for (double v : vals) m.data[i++] = v;
    return m;
}

DenseLayer simple_layer(std::size_t in, std::size_t out, Activation act, bool bn = false) {
    DenseLayer l;
    l.weights = Matrix(out, in);
    l.bias.assign(out, 0.0);
    l.activation = act;
    l.has_bn = bn;
    if (bn) l.bn = BnState(out);
    return l;
}

} // namespace

TEST_CASE("matmul against hand-computed product") {
    Matrix a = from_rows(2, 3, {1, 2, 3, 4, 5, 6});
    Matrix b = from_rows(3, 2, {7, 8, 9, 10, 11, 12});
    Matrix c = matmul(a, b);
    CHECK(c(0, 0) == doctest::Approx(58));
    CHECK(c(0, 1) == doctest::Approx(64));
    CHECK(c(1, 0) == doctest::Approx(139));
    CHECK(c(1, 1) == doctest::Approx(154));

    Matrix c2 = matmul_bt(a, transpose(b));
    CHECK(bitwise_equal(c, c2));
    Matrix c3 = matmul_at(transpose(a), b);
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(c3.data[i] == doctest::Approx(c.data[i]));
}

TEST_CASE("matmul rejects mismatched shapes") {
    Matrix a(2, 3), b(2, 2);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("dense_forward identity weights pass input through") {
    DenseLayer l = simple_layer(2, 2, Activation::None);
    l.weights(0, 0) = 1.0;
    l.weights(1, 1) = 1.0;
    Matrix x = from_rows(1, 2, {1, 2});
    Matrix y = dense_forward(x, l, Mode::Infer);
    CHECK(y(0, 0) == doctest::Approx(1));
    CHECK(y(0, 1) == doctest::Approx(2));
}

TEST_CASE("dense_forward hand-computed affine") {
    DenseLayer l = simple_layer(2, 2, Activation::None);
    l.weights = from_rows(2, 2, {1, 1, 1, -1});
    l.bias = {0.5, -0.5};
    Matrix x = from_rows(1, 2, {1, 2});
    Matrix y = dense_forward(x, l, Mode::Infer);
    CHECK(y(0, 0) == doctest::Approx(3.5));
    CHECK(y(0, 1) == doctest::Approx(-1.5));
}

TEST_CASE("relu clamps negatives") {
    DenseLayer l = simple_layer(3, 3, Activation::Relu);
    for (std::size_t i = 0; i < 3; ++i) l.weights(i, i) = 1.0;
    Matrix x = from_rows(1, 3, {-1, 0, 2});
    Matrix y = dense_forward(x, l, Mode::Infer);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == 0.0);
    CHECK(y(0, 2) == doctest::Approx(2));
}

TEST_CASE("dense_forward rejects wrong input width") {
    DenseLayer l = simple_layer(3, 2, Activation::None);
    Matrix x(1, 4);
    CHECK_THROWS_AS(dense_forward(x, l, Mode::Infer), ShapeError);
}

TEST_CASE("batchnorm identical rows collapse to beta") {
    BnState bn(2);
    bn.gamma = {2.0, 3.0};
    bn.beta = {0.7, -0.2};
    Matrix x(4, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        x(i, 0) = 5.0;
        x(i, 1) = -1.0;
    }
    Matrix y = batchnorm_forward(x, bn, Mode::Train);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(y(i, 0) == doctest::Approx(0.7));
        CHECK(y(i, 1) == doctest::Approx(-0.2));
    }
}

TEST_CASE("batchnorm symmetric pair maps to +-1") {
    BnState bn(1);
    bn.epsilon = 1e-12;
    Matrix x = from_rows(2, 1, {-1, 1});
    Matrix y = batchnorm_forward(x, bn, Mode::Train);
    CHECK(y(0, 0) == doctest::Approx(-1).epsilon(1e-6));
    CHECK(y(1, 0) == doctest::Approx(1).epsilon(1e-6));
}

TEST_CASE("batchnorm infer uses running statistics") {
    BnState bn(1);
    bn.epsilon = 1e-5;
    Matrix x = from_rows(1, 1, {0.5});
    Matrix y = batchnorm_forward(x, bn, Mode::Infer);
    CHECK(y(0, 0) == doctest::Approx(0.5 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("batchnorm train rejects single-row batch") {
    BnState bn(1);
    Matrix x(1, 1);
    CHECK_THROWS_AS(batchnorm_forward(x, bn, Mode::Train), ConfigError);
}

TEST_CASE("batchnorm train output has mean beta and std |gamma|") {
    BnState bn(3);
    bn.gamma = {1.5, -0.5, 2.0};
    bn.beta = {0.1, 0.2, -0.3};
    RngStream rng(11);
    Matrix x(64, 3);
    for (double& v : x.data) v = rng.next_gaussian() * 3.0 + 1.0;
    Matrix y = batchnorm_forward(x, bn, Mode::Train);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 64; ++i) mean += y(i, j);
        mean /= 64.0;
        double var = 0.0;
        for (std::size_t i = 0; i < 64; ++i) var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= 64.0;
        CHECK(mean == doctest::Approx(bn.beta[j]).epsilon(1e-9));
        CHECK(std::sqrt(var) == doctest::Approx(std::abs(bn.gamma[j])).epsilon(1e-3));
    }
}

TEST_CASE("dropout keep-all and inference are identity") {
    Matrix x(2, 3, 1.25);
    RngStream rng(1);
    Matrix mask;
    Matrix y = dropout_forward(x, 1.0, rng, Mode::Train, &mask);
    CHECK(bitwise_equal(x, y));
    for (double m : mask.data) CHECK(m == 1.0);

    Matrix yi = dropout_forward(x, 0.3, rng, Mode::Infer);
    CHECK(bitwise_equal(x, yi));
}

TEST_CASE("dropout rejects bad keep_prob") {
    Matrix x(1, 1);
    RngStream rng(1);
    CHECK_THROWS_AS(dropout_forward(x, 0.0, rng, Mode::Train), ConfigError);
    CHECK_THROWS_AS(dropout_forward(x, 1.5, rng, Mode::Train), ConfigError);
}

TEST_CASE("inverted dropout preserves expectation over many masks") {
    Matrix x(1, 1, 1.0);
    RngStream rng(42);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        Matrix y = dropout_forward(x, 0.5, rng, Mode::Train);
        sum += y(0, 0);
    }
    CHECK(sum / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("linear layer backward matches calculus") {
    DenseLayer l = simple_layer(3, 2, Activation::None);
    RngStream rng(5);
    for (double& w : l.weights.data) w = rng.next_gaussian();
    Matrix x(4, 3);
    for (double& v : x.data) v = rng.next_gaussian();
    LayerCache cache;
    dense_forward(x, l, Mode::Train, &cache);
    Matrix up(4, 2);
    for (double& v : up.data) v = rng.next_gaussian();
    LayerGrads grads;
    Matrix input_grad = layer_backward(l, cache, up, grads);
    Matrix expect_ig = matmul(up, l.weights);
    Matrix expect_wg = matmul_at(up, x);
    CHECK(bitwise_equal(input_grad, expect_ig));
    CHECK(bitwise_equal(grads.weights, expect_wg));
}

TEST_CASE("dead relu blocks all gradient") {
    DenseLayer l = simple_layer(2, 2, Activation::Relu);
    l.weights = from_rows(2, 2, {1, 0, 0, 1});
    l.bias = {-10.0, -10.0};
    Matrix x(3, 2, 0.5);
    LayerCache cache;
    dense_forward(x, l, Mode::Train, &cache);
    Matrix up(3, 2, 1.0);
    LayerGrads grads;
    Matrix ig = layer_backward(l, cache, up, grads);
    for (double v : ig.data) CHECK(v == 0.0);
    for (double v : grads.weights.data) CHECK(v == 0.0);
}

TEST_CASE("layer backward matches finite differences with BN") {
    const std::size_t in = 5, out = 4, batch = 3;
    RngStream rng(9);
    DenseLayer l = simple_layer(in, out, Activation::Relu, true);
    for (double& w : l.weights.data) w = 0.5 * rng.next_gaussian();
    for (double& b : l.bias) b = 0.1 * rng.next_gaussian();
    for (double& g : l.bn.gamma) g = 1.0 + 0.2 * rng.next_gaussian();
    for (double& b : l.bn.beta) b = 0.1 * rng.next_gaussian();
    Matrix x(batch, in);
    for (double& v : x.data) v = rng.next_gaussian();

    // loss = sum of outputs weighted by fixed coefficients
    Matrix coeff(batch, out);
    for (double& v : coeff.data) v = rng.next_gaussian();
    auto loss_of = [&](DenseLayer layer) {
        Matrix y = dense_forward(x, layer, Mode::Train);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += coeff.data[i] * y.data[i];
        return s;
    };

    LayerCache cache;
    dense_forward(x, l, Mode::Train, &cache);
    LayerGrads grads;
    layer_backward(l, cache, coeff, grads);

    const double h = 1e-5;
    double max_rel = 0.0;
    auto check_block = [&](double* param, const double* analytic, std::size_t n,
                           auto member_of) {
        for (std::size_t i = 0; i < n; ++i) {
            DenseLayer lp = l;
            double* p = member_of(lp) + i;
            *p += h;
            double fp = loss_of(lp);
            *p -= 2 * h;
            double fm = loss_of(lp);
            double numeric = (fp - fm) / (2 * h);
            double rel = std::abs(analytic[i] - numeric) /
                         std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
        (void)param;
    };
    check_block(l.weights.data.data(), grads.weights.data.data(), l.weights.size(),
                [](DenseLayer& d) { return d.weights.data.data(); });
    // bias is skipped: BN's mean subtraction makes its gradient exactly zero,
    // so the finite difference is pure roundoff
    check_block(l.bn.gamma.data(), grads.gamma.data(), l.bn.gamma.size(),
                [](DenseLayer& d) { return d.bn.gamma.data(); });
    check_block(l.bn.beta.data(), grads.beta.data(), l.bn.beta.size(),
                [](DenseLayer& d) { return d.bn.beta.data(); });
    CHECK(max_rel < 1e-4);
}

TEST_CASE("adam zero gradient is a fixed point") {
    std::vector<double> params{1.0, -2.0, 3.0};
    std::vector<double> grads{0.0, 0.0, 0.0};
    AdamState state(3);
    adam_update(params, grads, state, 0.01);
    CHECK(params[0] == 1.0);
    CHECK(params[1] == -2.0);
    CHECK(params[2] == 3.0);
    CHECK(state.t == 1);
}

TEST_CASE("adam first step is close to -lr*sign(g)") {
    std::vector<double> params{0.0};
    std::vector<double> grads{0.35};
    AdamState state(1);
    const double lr = 0.01;
    adam_update(params, grads, state, lr);
    // bias-corrected first step: -lr * g / (|g| + eps)
    double denom = std::abs(grads[0]) + state.epsilon;
    CHECK(params[0] == doctest::Approx(-lr * grads[0] / denom).epsilon(1e-12));
    CHECK(std::abs(params[0]) <= lr * (1 + 1e-6));
}

TEST_CASE("adam blocks update independently") {
    std::vector<double> a{1.0}, b{2.0};
    std::vector<double> ga{0.5}, gb{-0.25};
    AdamState sa(1), sb(1);
    adam_update(a, ga, sa, 0.01);
    adam_update(b, gb, sb, 0.01);

    std::vector<double> both{1.0, 2.0};
    std::vector<double> gboth{0.5, -0.25};
    AdamState sboth(2);
    adam_update(both, gboth, sboth, 0.01);
    CHECK(both[0] == a[0]);
    CHECK(both[1] == b[0]);
}

TEST_CASE("adam rejects non-finite gradients naming the block") {
    std::vector<double> p{0.0};
    std::vector<double> g{std::nan("")};
    AdamState s(1);
    CHECK_THROWS_WITH_AS(adam_update(p, g, s, 0.01, "enc.weights"),
                         doctest::Contains("enc.weights"), NumericError);
}

TEST_CASE("learning rate schedule decays by 0.95 per epoch") {
    CHECK(lr_schedule(0) == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(lr_schedule(1) == doctest::Approx(0.00095).epsilon(1e-12));
    CHECK(lr_schedule(2) == doctest::Approx(0.0009025).epsilon(1e-12));
}

TEST_CASE("rng streams are reproducible and independent of other streams") {
    RngStream a(123, 7);
    RngStream b(123, 7);
    RngStream c(123, 8);
    for (int i = 0; i < 100; ++i) {
        auto va = a.next_u64();
        CHECK(va == b.next_u64());
        c.next_u64();
    }
    RngStream a2(123, 7);
    CHECK(a2.next_u64() == RngStream(123, 7).next_u64());
}

TEST_CASE("forward passes are bit-deterministic") {
    RngStream rng(3);
    DenseLayer l = simple_layer(6, 4, Activation::Sigmoid, true);
    for (double& w : l.weights.data) w = rng.next_gaussian();
    Matrix x(5, 6);
    for (double& v : x.data) v = rng.next_gaussian();
    DenseLayer l2 = l;
    Matrix y1 = dense_forward(x, l, Mode::Train);
    Matrix y2 = dense_forward(x, l2, Mode::Train);
    CHECK(bitwise_equal(y1, y2));
}
