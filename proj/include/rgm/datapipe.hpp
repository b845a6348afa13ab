#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "rgm/matrix.hpp"
#include "rgm/rng.hpp"

namespace rgm {

enum class GalaxyClass : int { FRI = 0, FRII = 1 };
enum class Split : int { Train = 0, Val = 1, Test = 2 };
enum class FlipMode : int { None = 0, LeftRight = 1, UpDown = 2, Diagonal = 3 };

struct RawImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels; // row-major, >= 0, arbitrary scale

    double& at(std::size_t r, std::size_t c) { return pixels[r * width + c]; }
    double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

struct Sample {
    std::vector<double> image; // 40x40 in [0,1]
    int label = 0;             // 0 = FRI, 1 = FRII
    Split split = Split::Train;
    std::uint32_t origin_id = 0;
    std::uint32_t aug_index = 0; // 0 = unaugmented
};

struct Dataset {
    std::uint32_t height = 40;
    std::uint32_t width = 40;
    std::vector<Sample> samples;
};

struct SynthParams {
    double position_angle = 0.0; // degrees
    double lobe_length = 10.0;   // pixels
    double core_flux = 1.0;
    double lobe_flux = 0.5;
    double hotspot_flux = 1.0;
    double noise_sigma = 0.01;
    double core_sigma = 1.8;
    double lobe_sigma = 1.8;
    double hotspot_sigma = 1.6;
};

// Iterative background estimate; pixels below mean + nsigma*std are zeroed.
RawImage sigma_clip(const RawImage& img, double nsigma = 3.0, std::size_t max_iters = 5);

RawImage center_crop(const RawImage& img, std::size_t size = 40);

RawImage minmax_normalize(const RawImage& img);

RawImage flip_image(const RawImage& img, FlipMode mode);

// Rotation about the image center with bilinear interpolation, zero fill.
RawImage rotate_bilinear(const RawImage& img, double beta_degrees);

// Random flip then random rotation in [0, 360); output clamped to [0,1].
RawImage augment(const RawImage& img, RngStream& rng);

std::vector<Split> stratified_split(const std::vector<int>& labels, std::uint64_t seed);

Dataset build_dataset(const std::vector<RawImage>& raws, const std::vector<int>& labels,
                      const std::map<int, std::size_t>& aug_factors, std::uint64_t seed);

SynthParams draw_synth_params(GalaxyClass cls, RngStream& rng);

// One randomized 40x40 morphology in [0,1].
Sample synth_galaxy(GalaxyClass cls, RngStream& rng);

// n_total synthetic images per class, split by the stratified rule.
Dataset synth_dataset(std::size_t n_per_class, const std::map<int, std::size_t>& aug_factors,
                      std::uint64_t seed);
// explicit per-class split sizes
Dataset synth_dataset_counts(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                             const std::map<int, std::size_t>& aug_factors, std::uint64_t seed);

// flattened images (N x 1600) and labels for one split
void dataset_split(const Dataset& ds, Split split, Matrix& images, std::vector<int>& labels);

} // namespace rgm
