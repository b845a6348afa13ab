#include "rgm/layer.hpp"

#include <algorithm>
#include <cmath>

#include "rgm/errors.hpp"

namespace rgm {

namespace {

Matrix apply_activation(const Matrix& z, Activation act) {
    Matrix y(z.rows, z.cols);
    switch (act) {
    case Activation::None:
        y = z;
        break;
    case Activation::Relu:
        for (std::size_t i = 0; i < z.size(); ++i)
            y.data[i] = z.data[i] > 0.0 ? z.data[i] : 0.0;
        break;
    case Activation::Sigmoid:
        for (std::size_t i = 0; i < z.size(); ++i)
            y.data[i] = 1.0 / (1.0 + std::exp(-z.data[i]));
        break;
    case Activation::Softmax:
        for (std::size_t i = 0; i < z.rows; ++i) {
            const double* zr = z.row(i);
            double* yr = y.row(i);
            double mx = zr[0];
            for (std::size_t j = 1; j < z.cols; ++j) mx = std::max(mx, zr[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < z.cols; ++j) {
                yr[j] = std::exp(zr[j] - mx);
                sum += yr[j];
            }
            for (std::size_t j = 0; j < z.cols; ++j) yr[j] /= sum;
        }
        break;
    }
    return y;
}

} // namespace

Matrix batchnorm_forward(const Matrix& x, BnState& bn, Mode mode, BnCache* cache) {
    const std::size_t n = x.rows, f = x.cols;
    if (bn.gamma.size() != f)
        throw ShapeError("batchnorm_forward: state width != feature count");
    Matrix y(n, f);
    if (mode == Mode::Train) {
        if (n < 2)
            throw ConfigError("batchnorm_forward: train mode needs batch size >= 2");
        std::vector<double> mean(f, 0.0), var(f, 0.0), inv_std(f);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j)
                mean[j] += x(i, j);
        for (std::size_t j = 0; j < f; ++j) mean[j] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) {
                double d = x(i, j) - mean[j];
                var[j] += d * d;
            }
        for (std::size_t j = 0; j < f; ++j) {
            var[j] /= static_cast<double>(n); // population variance
            inv_std[j] = 1.0 / std::sqrt(var[j] + bn.epsilon);
        }
        Matrix xhat(n, f);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j) {
                xhat(i, j) = (x(i, j) - mean[j]) * inv_std[j];
                y(i, j) = bn.gamma[j] * xhat(i, j) + bn.beta[j];
            }
        for (std::size_t j = 0; j < f; ++j) {
            bn.running_mean[j] = bn.momentum * bn.running_mean[j] + (1.0 - bn.momentum) * mean[j];
            bn.running_var[j] = bn.momentum * bn.running_var[j] + (1.0 - bn.momentum) * var[j];
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv_std);
            cache->mean = std::move(mean);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < f; ++j)
                y(i, j) = bn.gamma[j] * (x(i, j) - bn.running_mean[j]) /
                              std::sqrt(bn.running_var[j] + bn.epsilon) +
                          bn.beta[j];
    }
    return y;
}

Matrix dense_forward(const Matrix& x, DenseLayer& layer, Mode mode, LayerCache* cache) {
    if (x.cols != layer.in_dim())
        throw ShapeError("dense_forward: input width " + std::to_string(x.cols) +
                         " != layer in_dim " + std::to_string(layer.in_dim()));
    Matrix z = matmul_bt(x, layer.weights);
    for (std::size_t i = 0; i < z.rows; ++i) {
        double* zr = z.row(i);
        for (std::size_t j = 0; j < z.cols; ++j)
            zr[j] += layer.bias[j];
    }
    Matrix pre = layer.has_bn
                     ? batchnorm_forward(z, layer.bn, mode, cache ? &cache->bncache : nullptr)
                     : z;
    Matrix y = apply_activation(pre, layer.activation);
    if (!y.all_finite())
        throw NumericError("dense_forward: non-finite output");
    if (cache) {
        cache->input = x;
        cache->affine = std::move(z);
        cache->pre_act = std::move(pre);
        cache->output = y;
    }
    return y;
}

Matrix dropout_forward(const Matrix& x, double keep_prob, RngStream& rng, Mode mode,
                       Matrix* mask_out) {
    if (keep_prob <= 0.0 || keep_prob > 1.0)
        throw ConfigError("dropout_forward: keep_prob must be in (0, 1]");
    if (mode == Mode::Infer) {
        if (mask_out) *mask_out = Matrix(x.rows, x.cols, 1.0);
        return x;
    }
    Matrix mask(x.rows, x.cols);
    Matrix y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask.data[i] = rng.next_double() < keep_prob ? 1.0 : 0.0;
        y.data[i] = x.data[i] * mask.data[i] / keep_prob;
    }
    if (mask_out) *mask_out = std::move(mask);
    return y;
}

Matrix layer_backward(const DenseLayer& layer, const LayerCache& cache,
                      const Matrix& upstream_grad, LayerGrads& grads) {
    if (!upstream_grad.same_shape(cache.output))
        throw ShapeError("layer_backward: upstream grad shape mismatch");
    const std::size_t n = upstream_grad.rows, out = upstream_grad.cols;

    // activation backward
    Matrix g(n, out);
    switch (layer.activation) {
    case Activation::None:
        g = upstream_grad;
        break;
    case Activation::Relu:
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data[i] = cache.pre_act.data[i] > 0.0 ? upstream_grad.data[i] : 0.0;
        break;
    case Activation::Sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = cache.output.data[i];
            g.data[i] = upstream_grad.data[i] * s * (1.0 - s);
        }
        break;
    case Activation::Softmax:
        for (std::size_t i = 0; i < n; ++i) {
            const double* up = upstream_grad.row(i);
            const double* p = cache.output.row(i);
            double dot = 0.0;
            for (std::size_t j = 0; j < out; ++j) dot += up[j] * p[j];
            double* gr = g.row(i);
            for (std::size_t j = 0; j < out; ++j)
                gr[j] = p[j] * (up[j] - dot);
        }
        break;
    }

    // BN backward
    if (layer.has_bn) {
        const BnCache& bc = cache.bncache;
        grads.gamma.assign(out, 0.0);
        grads.beta.assign(out, 0.0);
        std::vector<double> sum_dxhat(out, 0.0), sum_dxhat_xhat(out, 0.0);
        Matrix dxhat(n, out);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out; ++j) {
                grads.gamma[j] += g(i, j) * bc.xhat(i, j);
                grads.beta[j] += g(i, j);
                dxhat(i, j) = g(i, j) * layer.bn.gamma[j];
                sum_dxhat[j] += dxhat(i, j);
                sum_dxhat_xhat[j] += dxhat(i, j) * bc.xhat(i, j);
            }
        Matrix dz(n, out);
        const double dn = static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out; ++j)
                dz(i, j) = bc.inv_std[j] / dn *
                           (dn * dxhat(i, j) - sum_dxhat[j] - bc.xhat(i, j) * sum_dxhat_xhat[j]);
        g = std::move(dz);
    } else {
        grads.gamma.clear();
        grads.beta.clear();
    }

    // affine backward
    grads.weights = matmul_at(g, cache.input); // out x in
    grads.bias.assign(out, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out; ++j)
            grads.bias[j] += g(i, j);
    return matmul(g, layer.weights); // input grad, N x in
}

} // namespace rgm
