#include "rgm/dnnae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "rgm/errors.hpp"

namespace rgm {

namespace {

constexpr double kProbClamp = 1e-12;
const double kLn2 = std::log(2.0);

DenseLayer make_layer(std::size_t in, std::size_t out, Activation act, bool bn,
                      RngStream rng) {
    DenseLayer layer;
    layer.weights = Matrix(out, in);
    double std_dev = act == Activation::Relu ? std::sqrt(2.0 / static_cast<double>(in))
                                             : std::sqrt(1.0 / static_cast<double>(in));
    for (double& w : layer.weights.data)
        w = std_dev * rng.next_gaussian();
    layer.bias.assign(out, 0.0);
    layer.activation = act;
    layer.has_bn = bn;
    if (bn) layer.bn = BnState(out);
    return layer;
}

LayerOpt make_opt(const DenseLayer& layer) {
    LayerOpt o;
    o.w = AdamState(layer.weights.size());
    o.b = AdamState(layer.bias.size());
    if (layer.has_bn) {
        o.gamma = AdamState(layer.bn.gamma.size());
        o.beta = AdamState(layer.bn.beta.size());
    }
    return o;
}

void update_layer(DenseLayer& layer, LayerOpt& opt, const LayerGrads& grads, double lr,
                  const std::string& name) {
    adam_update(layer.weights.data.data(), grads.weights.data.data(), layer.weights.size(),
                opt.w, lr, name + ".weights");
    // the affine bias is redundant with BN's beta and stays fixed at zero
    if (!layer.has_bn)
        adam_update(layer.bias, grads.bias, opt.b, lr, name + ".bias");
    if (layer.has_bn) {
        adam_update(layer.bn.gamma, grads.gamma, opt.gamma, lr, name + ".gamma");
        adam_update(layer.bn.beta, grads.beta, opt.beta, lr, name + ".beta");
    }
}

void apply_grads(DnnaeModel& model, const LayerGradSet& set, double lr) {
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (set.layers[i].weights.size() == 0) continue;
        update_layer(model.layers[i], model.opt[i], set.layers[i], lr,
                     "layer" + std::to_string(i));
    }
    if (set.has_head)
        update_layer(model.head, model.head_opt, set.head, lr, "head");
}

Matrix rows_slice(const Matrix& m, std::size_t begin, std::size_t count) {
    Matrix out(count, m.cols);
    std::copy(m.row(begin), m.row(begin) + count * m.cols, out.data.begin());
    return out;
}

} // namespace

DnnaeModel build_dnnae(const ArchSpec& arch, std::uint64_t seed) {
    if (arch.encoder_widths.empty() || arch.decoder_widths.empty())
        throw ConfigError("build_dnnae: empty width lists");
    for (std::size_t w : arch.encoder_widths)
        if (w < 1) throw ConfigError("build_dnnae: widths must be >= 1");
    if (arch.code_len < 1 || arch.input_side < 1)
        throw ConfigError("build_dnnae: widths must be >= 1");

    const bool bn = arch.regularizer == Regularizer::Bn;
    DnnaeModel model;
    model.arch = arch;
    std::uint64_t stream = 0;
    std::size_t in = arch.input_dim();
    for (std::size_t w : arch.encoder_widths) {
        model.layers.push_back(make_layer(in, w, Activation::Relu, bn, RngStream(seed, stream++)));
        in = w;
    }
    // code layer: ReLU, never batch-normalized
    model.layers.push_back(
        make_layer(in, arch.code_len, Activation::Relu, false, RngStream(seed, stream++)));
    in = arch.code_len;
    for (std::size_t w : arch.decoder_widths) {
        model.layers.push_back(make_layer(in, w, Activation::Relu, bn, RngStream(seed, stream++)));
        in = w;
    }
    // output layer: sigmoid, no BN
    model.layers.push_back(
        make_layer(in, arch.input_dim(), Activation::Sigmoid, false, RngStream(seed, stream++)));
    model.head = make_layer(arch.code_len, arch.n_classes, Activation::Softmax, false,
                            RngStream(seed, stream++));
    for (const DenseLayer& l : model.layers)
        model.opt.push_back(make_opt(l));
    model.head_opt = make_opt(model.head);
    return model;
}

ForwardResult forward(DnnaeModel& model, const Matrix& images, Mode mode, RngStream* rng) {
    if (images.cols != model.arch.input_dim())
        throw ShapeError("forward: expected images of width " +
                         std::to_string(model.arch.input_dim()) + ", got " +
                         std::to_string(images.cols));
    ForwardResult r;
    r.caches.resize(model.layers.size());
    r.dropout_masks.resize(model.layers.size());

    Matrix x = images;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Matrix y = dense_forward(x, model.layers[i], mode, &r.caches[i]);
        if (i == model.code_index())
            r.codes = y;
        if (mode == Mode::Train && model.dropout_applies(i)) {
            if (!rng)
                throw ConfigError("forward: dropout training requires an RNG stream");
            y = dropout_forward(y, model.arch.keep_prob, *rng, mode, &r.dropout_masks[i]);
        }
        x = std::move(y);
    }
    r.recon = std::move(x);
    r.probs = dense_forward(r.codes, model.head, mode, &r.head_cache);
    return r;
}

double loss_mse(const Matrix& input, const Matrix& recon) {
    if (!input.same_shape(recon))
        throw ShapeError("loss_mse: shape mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < input.size(); ++i) {
        double d = input.data[i] - recon.data[i];
        total += d * d;
    }
    return total / static_cast<double>(input.rows);
}

double loss_ce(const Matrix& labels_onehot, const Matrix& probs) {
    if (!labels_onehot.same_shape(probs))
        throw ShapeError("loss_ce: shape mismatch");
    for (std::size_t i = 0; i < labels_onehot.rows; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < labels_onehot.cols; ++j) {
            double y = labels_onehot(i, j);
            if (y != 0.0 && y != 1.0)
                throw ValidationError("loss_ce: labels must be one-hot");
            row_sum += y;
        }
        if (row_sum != 1.0)
            throw ValidationError("loss_ce: each label row must contain exactly one 1");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels_onehot.data[i] == 0.0) continue;
        total -= std::log2(std::max(probs.data[i], kProbClamp));
    }
    return total / static_cast<double>(probs.rows);
}

Matrix onehot(const std::vector<int>& labels, std::size_t n_classes) {
    Matrix y(labels.size(), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
            throw ValidationError("onehot: label out of range");
        y(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return y;
}

namespace {

// Walk gradients from layer `start` (upstream grad w.r.t. its post-activation
// output) down to the first layer, honoring dropout masks between layers.
void backprop_chain(const DnnaeModel& model, const ForwardResult& fwd, std::size_t start,
                    Matrix upstream, LayerGradSet& set) {
    for (std::size_t i = start;; --i) {
        LayerGrads g;
        Matrix input_grad = layer_backward(model.layers[i], fwd.caches[i], upstream, g);
        set.layers[i] = std::move(g);
        if (i == 0) break;
        const Matrix& mask = fwd.dropout_masks[i - 1];
        if (mask.size() > 0) {
            for (std::size_t k = 0; k < input_grad.size(); ++k)
                input_grad.data[k] *= mask.data[k] / model.arch.keep_prob;
        }
        upstream = std::move(input_grad);
    }
}

} // namespace

LayerGradSet backward_mse(const DnnaeModel& model, const ForwardResult& fwd,
                          const Matrix& input) {
    LayerGradSet set;
    set.layers.resize(model.layers.size());
    const double n = static_cast<double>(input.rows);
    Matrix up(input.rows, input.cols);
    for (std::size_t i = 0; i < up.size(); ++i)
        up.data[i] = 2.0 * (fwd.recon.data[i] - input.data[i]) / n;
    backprop_chain(model, fwd, model.output_index(), std::move(up), set);
    return set;
}

LayerGradSet backward_ce(const DnnaeModel& model, const ForwardResult& fwd,
                         const Matrix& labels_onehot) {
    LayerGradSet set;
    set.layers.resize(model.layers.size());
    const double n = static_cast<double>(labels_onehot.rows);
    Matrix dprobs(labels_onehot.rows, labels_onehot.cols);
    for (std::size_t i = 0; i < dprobs.size(); ++i) {
        double p = fwd.probs.data[i];
        // below the clamp the loss is constant in p
        if (labels_onehot.data[i] != 0.0 && p > kProbClamp)
            dprobs.data[i] = -1.0 / (p * kLn2 * n);
    }
    Matrix code_grad = layer_backward(model.head, fwd.head_cache, dprobs, set.head);
    set.has_head = true;
    backprop_chain(model, fwd, model.code_index(), std::move(code_grad), set);
    return set;
}

std::vector<EpochMetrics> train(DnnaeModel& model, const Matrix& train_images,
                                const std::vector<int>& train_labels, const Matrix& val_images,
                                const std::vector<int>& val_labels, const TrainConfig& cfg,
                                const EpochCallback& after_epoch) {
    const std::size_t n = train_images.rows;
    if (n == 0 || val_images.rows == 0)
        throw ValidationError("train: empty dataset");
    if (train_labels.size() != n)
        throw ValidationError("train: label count mismatch");
    if (cfg.batch_size > n)
        throw ConfigError("train: batch_size exceeds dataset size");
    if (model.arch.regularizer == Regularizer::Bn && cfg.batch_size < 2)
        throw ConfigError("train: batch_size must be >= 2 with batch normalization");

    const std::size_t batches = n / cfg.batch_size;
    const Matrix train_onehot_all = onehot(train_labels, model.arch.n_classes);
    std::vector<EpochMetrics> history;
    history.reserve(cfg.epochs);

    for (std::size_t epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch);
        for (std::size_t j = 0; j < batches; ++j) {
            Matrix batch = rows_slice(train_images, j * cfg.batch_size, cfg.batch_size);
            Matrix batch_y =
                rows_slice(train_onehot_all, j * cfg.batch_size, cfg.batch_size);
            const std::uint64_t step = epoch * batches + j;
            if (cfg.loss_mode == LossMode::MsePlusCe) {
                RngStream rng(cfg.seed, step * 2);
                ForwardResult fwd = forward(model, batch, Mode::Train, &rng);
                apply_grads(model, backward_ce(model, fwd, batch_y), lr);
            }
            RngStream rng(cfg.seed, step * 2 + 1);
            ForwardResult fwd = forward(model, batch, Mode::Train, &rng);
            apply_grads(model, backward_mse(model, fwd, batch), lr);
        }
        LossReport tr = evaluate(model, train_images, train_labels);
        LossReport va = evaluate(model, val_images, val_labels);
        history.push_back({epoch, lr, tr.mse, tr.ce, va.mse, va.ce});
        if (after_epoch) after_epoch(model, epoch);
    }
    return history;
}

Matrix encode(DnnaeModel& model, const Matrix& images) {
    if (images.cols != model.arch.input_dim())
        throw ShapeError("encode: wrong image size");
    Matrix x = images;
    for (std::size_t i = 0; i <= model.code_index(); ++i)
        x = dense_forward(x, model.layers[i], Mode::Infer);
    return x;
}

Matrix decode(DnnaeModel& model, const Matrix& codes) {
    if (codes.cols != model.arch.code_len)
        throw ShapeError("decode: code length mismatch");
    Matrix x = codes;
    for (std::size_t i = model.code_index() + 1; i < model.layers.size(); ++i)
        x = dense_forward(x, model.layers[i], Mode::Infer);
    return x;
}

LossReport evaluate(DnnaeModel& model, const Matrix& images, const std::vector<int>& labels) {
    const std::size_t n = images.rows;
    if (n == 0)
        throw ValidationError("evaluate: empty set");
    if (labels.size() != n)
        throw ValidationError("evaluate: label count mismatch");

    LossReport report;
    std::map<int, double> class_sum;
    std::map<int, std::size_t> class_count;
    const std::size_t chunk = 512;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t count = std::min(chunk, n - begin);
        Matrix batch = rows_slice(images, begin, count);
        ForwardResult fwd = forward(model, batch, Mode::Infer);
        for (std::size_t i = 0; i < count; ++i) {
            double sq = 0.0;
            for (std::size_t j = 0; j < batch.cols; ++j) {
                double d = batch(i, j) - fwd.recon(i, j);
                sq += d * d;
            }
            report.mse += sq;
            int cls = labels[begin + i];
            class_sum[cls] += sq;
            class_count[cls] += 1;
            double p = std::max(fwd.probs(i, static_cast<std::size_t>(cls)), kProbClamp);
            report.ce -= std::log2(p);
        }
    }
    report.mse /= static_cast<double>(n);
    report.ce /= static_cast<double>(n);
    report.combined = report.mse + report.ce;
    for (const auto& [cls, sum] : class_sum)
        report.per_class_mse[cls] = sum / static_cast<double>(class_count[cls]);
    return report;
}

std::vector<ParamBlock> param_blocks(DnnaeModel& model) {
    std::vector<ParamBlock> blocks;
    auto add_layer = [&](DenseLayer& l, const std::string& name) {
        blocks.push_back({name + ".weights", l.weights.data.data(), l.weights.size()});
        if (!l.has_bn)
            blocks.push_back({name + ".bias", l.bias.data(), l.bias.size()});
        if (l.has_bn) {
            blocks.push_back({name + ".gamma", l.bn.gamma.data(), l.bn.gamma.size()});
            blocks.push_back({name + ".beta", l.bn.beta.data(), l.bn.beta.size()});
        }
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        add_layer(model.layers[i], "layer" + std::to_string(i));
    add_layer(model.head, "head");
    return blocks;
}

namespace {

double loss_value(DnnaeModel& model, const Matrix& images, const Matrix& labels_onehot,
                  LossSelector sel) {
    RngStream rng(0); // fixed stream keeps dropout masks identical across evaluations
    ForwardResult fwd = forward(model, images, Mode::Train, &rng);
    double l = 0.0;
    if (sel != LossSelector::Ce) l += loss_mse(images, fwd.recon);
    if (sel != LossSelector::Mse) l += loss_ce(labels_onehot, fwd.probs);
    return l;
}

// Collect analytic gradients in the same flat order as param_blocks().
std::vector<std::vector<double>> analytic_grads(DnnaeModel& model, const Matrix& images,
                                                const Matrix& labels_onehot, LossSelector sel) {
    RngStream rng(0);
    ForwardResult fwd = forward(model, images, Mode::Train, &rng);
    LayerGradSet total;
    total.layers.resize(model.layers.size());
    if (sel != LossSelector::Ce)
        total = backward_mse(model, fwd, images);
    if (sel != LossSelector::Mse) {
        LayerGradSet ce = backward_ce(model, fwd, labels_onehot);
        if (sel == LossSelector::Ce) {
            total = std::move(ce);
        } else {
            for (std::size_t i = 0; i < total.layers.size(); ++i) {
                if (ce.layers[i].weights.size() == 0) continue;
                for (std::size_t k = 0; k < total.layers[i].weights.size(); ++k)
                    total.layers[i].weights.data[k] += ce.layers[i].weights.data[k];
                for (std::size_t k = 0; k < total.layers[i].bias.size(); ++k)
                    total.layers[i].bias[k] += ce.layers[i].bias[k];
                for (std::size_t k = 0; k < total.layers[i].gamma.size(); ++k)
                    total.layers[i].gamma[k] += ce.layers[i].gamma[k];
                for (std::size_t k = 0; k < total.layers[i].beta.size(); ++k)
                    total.layers[i].beta[k] += ce.layers[i].beta[k];
            }
            total.head = std::move(ce.head);
            total.has_head = true;
        }
    }

    std::vector<std::vector<double>> flat;
    auto push_layer = [&](const LayerGrads& g, const DenseLayer& l) {
        if (g.weights.size() == 0) {
            // untouched block: gradient identically zero
            flat.push_back(std::vector<double>(l.weights.size(), 0.0));
            if (!l.has_bn)
                flat.push_back(std::vector<double>(l.bias.size(), 0.0));
            if (l.has_bn) {
                flat.push_back(std::vector<double>(l.bn.gamma.size(), 0.0));
                flat.push_back(std::vector<double>(l.bn.beta.size(), 0.0));
            }
            return;
        }
        flat.push_back(g.weights.data);
        if (!l.has_bn)
            flat.push_back(g.bias);
        if (l.has_bn) {
            flat.push_back(g.gamma);
            flat.push_back(g.beta);
        }
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        push_layer(total.layers[i], model.layers[i]);
    if (total.has_head)
        push_layer(total.head, model.head);
    else
        push_layer(LayerGrads{}, model.head);
    return flat;
}

} // namespace

double grad_check(const DnnaeModel& model, const Matrix& images,
                  const std::vector<int>& labels, LossSelector selector) {
    const double h = 1e-5;
    DnnaeModel work = model;
    Matrix y = onehot(labels, model.arch.n_classes);
    std::vector<std::vector<double>> analytic = analytic_grads(work, images, y, selector);
    std::vector<ParamBlock> blocks = param_blocks(work);

    double max_rel = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t k = 0; k < blocks[b].size; ++k) {
            double saved = blocks[b].data[k];
            blocks[b].data[k] = saved + h;
            double lp = loss_value(work, images, y, selector);
            blocks[b].data[k] = saved - h;
            double lm = loss_value(work, images, y, selector);
            blocks[b].data[k] = saved;
            double numeric = (lp - lm) / (2.0 * h);
            double a = analytic[b][k];
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ValidationError("write_metrics_csv: cannot open " + path);
    out << "epoch,lr,train_mse,train_ce,val_mse,val_ce\n";
    char buf[512];
    for (const EpochMetrics& m : metrics) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.lr,
                      m.train_mse, m.train_ce, m.val_mse, m.val_ce);
        out << buf;
    }
}

} // namespace rgm
