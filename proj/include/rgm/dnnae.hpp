#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rgm/adam.hpp"
#include "rgm/layer.hpp"
#include "rgm/matrix.hpp"
#include "rgm/rng.hpp"

namespace rgm {

enum class Regularizer { Bn, Dropout };
enum class LossMode { MseOnly, MsePlusCe };

struct ArchSpec {
    std::size_t input_side = 40;
    std::vector<std::size_t> encoder_widths = {2048, 1024, 1024};
    std::size_t code_len = 256;
    std::vector<std::size_t> decoder_widths = {1024, 1024, 2048};
    Regularizer regularizer = Regularizer::Bn;
    double keep_prob = 0.5;
    std::size_t n_classes = 2;

    std::size_t input_dim() const { return input_side * input_side; }
};

// Adam moments for one dense layer's parameter blocks.
struct LayerOpt {
    AdamState w, b, gamma, beta;
};

struct DnnaeModel {
    ArchSpec arch;
    // encoder hidden layers, code layer, decoder hidden layers, output layer
    std::vector<DenseLayer> layers;
    DenseLayer head; // code_len -> n_classes, softmax
    std::vector<LayerOpt> opt;
    LayerOpt head_opt;

    std::size_t code_index() const { return arch.encoder_widths.size(); }
    std::size_t output_index() const { return layers.size() - 1; }
    // true for hidden layers that get dropout in the dropout variant
    bool dropout_applies(std::size_t layer_idx) const {
        return arch.regularizer == Regularizer::Dropout && layer_idx != code_index() &&
               layer_idx != output_index();
    }
};

struct ForwardResult {
    Matrix recon;  // N x input_dim, sigmoid range
    Matrix codes;  // N x code_len, ReLU range
    Matrix probs;  // N x n_classes, softmax rows
    std::vector<LayerCache> caches;
    std::vector<Matrix> dropout_masks; // per layer, empty when not applied
    LayerCache head_cache;
};

struct LossReport {
    double mse = 0.0;
    double ce = 0.0;
    double combined = 0.0;
    std::map<int, double> per_class_mse;
};

struct TrainConfig {
    std::size_t epochs = 200;      // exclusive end epoch
    std::size_t start_epoch = 0;   // nonzero when resuming from a checkpoint
    std::size_t batch_size = 100;
    std::uint64_t seed = 0;
    LossMode loss_mode = LossMode::MsePlusCe;
    bool determinism = true;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_mse = 0.0;
    double train_ce = 0.0;
    double val_mse = 0.0;
    double val_ce = 0.0;
};

// Addressable view of one parameter block, for checkpointing and grad checks.
struct ParamBlock {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

DnnaeModel build_dnnae(const ArchSpec& arch, std::uint64_t seed);

// Full pass: encoder -> code -> decoder (+ classifier head on the code).
// `rng` drives dropout masks in train mode; ignored otherwise.
ForwardResult forward(DnnaeModel& model, const Matrix& images, Mode mode,
                      RngStream* rng = nullptr);

double loss_mse(const Matrix& input, const Matrix& recon);
// Base-2 cross entropy; probabilities clamped at 1e-12 below.
double loss_ce(const Matrix& labels_onehot, const Matrix& probs);

Matrix onehot(const std::vector<int>& labels, std::size_t n_classes);

struct LayerGradSet {
    std::vector<LayerGrads> layers; // aligned with model.layers; empty grads = untouched
    LayerGrads head;
    bool has_head = false;
};

// Gradients of L_MSE w.r.t. the whole autoencoder (head untouched).
LayerGradSet backward_mse(const DnnaeModel& model, const ForwardResult& fwd,
                          const Matrix& input);
// Gradients of L_CE w.r.t. head + code + encoder (decoder untouched).
LayerGradSet backward_ce(const DnnaeModel& model, const ForwardResult& fwd,
                         const Matrix& labels_onehot);

using EpochCallback = std::function<void(DnnaeModel&, std::size_t epoch)>;

std::vector<EpochMetrics> train(DnnaeModel& model, const Matrix& train_images,
                                const std::vector<int>& train_labels, const Matrix& val_images,
                                const std::vector<int>& val_labels, const TrainConfig& cfg,
                                const EpochCallback& after_epoch = {});

Matrix encode(DnnaeModel& model, const Matrix& images);
Matrix decode(DnnaeModel& model, const Matrix& codes);

LossReport evaluate(DnnaeModel& model, const Matrix& images, const std::vector<int>& labels);

enum class LossSelector { Mse, Ce, Combined };

// Max relative error between analytic gradients and central finite differences
// (h = 1e-5). Intended for small networks only.
double grad_check(const DnnaeModel& model, const Matrix& images,
                  const std::vector<int>& labels, LossSelector selector);

// All trainable blocks (weights, biases, BN scale/shift), layers then head.
std::vector<ParamBlock> param_blocks(DnnaeModel& model);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);

} // namespace rgm
