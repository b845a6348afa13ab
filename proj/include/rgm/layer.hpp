#pragma once

#include <optional>
#include <vector>

#include "rgm/matrix.hpp"
#include "rgm/rng.hpp"

namespace rgm {

enum class Activation { None, Relu, Sigmoid, Softmax };
enum class Mode { Train, Infer };

struct BnState {
    std::vector<double> gamma;
    std::vector<double> beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.99;
    double epsilon = 1e-5;

    explicit BnState(std::size_t width = 0)
        : gamma(width, 1.0), beta(width, 0.0),
          running_mean(width, 0.0), running_var(width, 1.0) {}
};

struct DenseLayer {
    Matrix weights; // out x in
    std::vector<double> bias; // out
    Activation activation = Activation::None;
    bool has_bn = false;
    BnState bn;

    std::size_t in_dim() const { return weights.cols; }
    std::size_t out_dim() const { return weights.rows; }
};

struct BnCache {
    Matrix xhat;
    std::vector<double> inv_std; // 1/sqrt(var + eps), per feature
    std::vector<double> mean;
};

struct LayerCache {
    Matrix input;   // x
    Matrix affine;  // x W^T + b
    BnCache bncache;
    Matrix pre_act; // after BN (or == affine)
    Matrix output;  // after activation
};

struct LayerGrads {
    Matrix weights;
    std::vector<double> bias;
    std::vector<double> gamma;
    std::vector<double> beta;
};

// y = activation(bn(x W^T + b)); train mode updates running stats.
Matrix dense_forward(const Matrix& x, DenseLayer& layer, Mode mode, LayerCache* cache = nullptr);

// Standalone BN pass over a feature matrix.
Matrix batchnorm_forward(const Matrix& x, BnState& bn, Mode mode, BnCache* cache = nullptr);

// Inverted dropout: train scales kept units by 1/keep_prob, infer is identity.
Matrix dropout_forward(const Matrix& x, double keep_prob, RngStream& rng, Mode mode,
                       Matrix* mask_out = nullptr);

// Gradients of the composed affine+BN+activation given dL/dy.
Matrix layer_backward(const DenseLayer& layer, const LayerCache& cache,
                      const Matrix& upstream_grad, LayerGrads& grads);

} // namespace rgm
