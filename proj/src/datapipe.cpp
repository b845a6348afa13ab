#include "rgm/datapipe.hpp"

#include <algorithm>
#include <cmath>

#include "rgm/errors.hpp"

namespace rgm {

namespace {

constexpr double kPi = 3.14159265358979323846;

void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.next_below(i)]);
}

} // namespace

RawImage sigma_clip(const RawImage& img, double nsigma, std::size_t max_iters) {
    const std::size_t n = img.pixels.size();
    std::vector<char> retained(n, 1);
    double thresh = 0.0;
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        double sum = 0.0, count = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (retained[i]) {
                sum += img.pixels[i];
                count += 1.0;
            }
        if (count == 0.0) break;
        double mean = sum / count;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (retained[i]) {
                double d = img.pixels[i] - mean;
                var += d * d;
            }
        double std_dev = std::sqrt(var / count);
        thresh = mean + nsigma * std_dev;
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            char keep = img.pixels[i] <= thresh ? 1 : 0;
            if (keep != retained[i]) changed = true;
            retained[i] = keep;
        }
        if (!changed) break;
    }
    // guard against accumulation roundoff so a constant image stays untouched
    const double cutoff = thresh - 1e-12 * (1.0 + std::abs(thresh));
    RawImage out = img;
    for (double& v : out.pixels)
        if (v < cutoff) v = 0.0;
    return out;
}

RawImage center_crop(const RawImage& img, std::size_t size) {
    if (img.height < size || img.width < size)
        throw ValidationError("center_crop: image smaller than crop size");
    const std::size_t r0 = (img.height - size) / 2;
    const std::size_t c0 = (img.width - size) / 2;
    RawImage out{size, size, std::vector<double>(size * size)};
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c)
            out.at(r, c) = img.at(r0 + r, c0 + c);
    return out;
}

RawImage minmax_normalize(const RawImage& img) {
    double lo = img.pixels[0], hi = img.pixels[0];
    for (double v : img.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    RawImage out = img;
    if (hi == lo) {
        std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
        return out;
    }
    for (double& v : out.pixels)
        v = (v - lo) / (hi - lo);
    return out;
}

RawImage flip_image(const RawImage& img, FlipMode mode) {
    RawImage out = img;
    switch (mode) {
    case FlipMode::None:
        break;
    case FlipMode::LeftRight:
        for (std::size_t r = 0; r < img.height; ++r)
            for (std::size_t c = 0; c < img.width; ++c)
                out.at(r, c) = img.at(r, img.width - 1 - c);
        break;
    case FlipMode::UpDown:
        for (std::size_t r = 0; r < img.height; ++r)
            for (std::size_t c = 0; c < img.width; ++c)
                out.at(r, c) = img.at(img.height - 1 - r, c);
        break;
    case FlipMode::Diagonal:
        out.height = img.width;
        out.width = img.height;
        for (std::size_t r = 0; r < img.height; ++r)
            for (std::size_t c = 0; c < img.width; ++c)
                out.pixels[c * out.width + r] = img.at(r, c);
        break;
    }
    return out;
}

RawImage rotate_bilinear(const RawImage& img, double beta_degrees) {
    const double beta = beta_degrees * kPi / 180.0;
    const double cb = std::cos(beta), sb = std::sin(beta);
    const double cy = (static_cast<double>(img.height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(img.width) - 1.0) / 2.0;
    RawImage out{img.height, img.width, std::vector<double>(img.pixels.size(), 0.0)};

    auto snap = [](double v) {
        double r = std::round(v);
        return std::abs(v - r) < 1e-9 ? r : v;
    };
    auto sample = [&](double sy, double sx) -> double {
        sy = snap(sy);
        sx = snap(sx);
        double fy = std::floor(sy), fx = std::floor(sx);
        double wy = sy - fy, wx = sx - fx;
        double acc = 0.0;
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                double w = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
                if (w == 0.0) continue;
                long r = static_cast<long>(fy) + dy;
                long c = static_cast<long>(fx) + dx;
                if (r < 0 || c < 0 || r >= static_cast<long>(img.height) ||
                    c >= static_cast<long>(img.width))
                    continue;
                acc += w * img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            }
        return acc;
    };

    for (std::size_t r = 0; r < img.height; ++r)
        for (std::size_t c = 0; c < img.width; ++c) {
            double dy = static_cast<double>(r) - cy;
            double dx = static_cast<double>(c) - cx;
            // inverse mapping: rotate destination coordinates by -beta
            double sy = cy + cb * dy - sb * dx;
            double sx = cx + sb * dy + cb * dx;
            out.at(r, c) = sample(sy, sx);
        }
    return out;
}

RawImage augment(const RawImage& img, RngStream& rng) {
    FlipMode flip = static_cast<FlipMode>(rng.next_below(4));
    double beta = rng.next_double() * 360.0;
    RawImage out = rotate_bilinear(flip_image(img, flip), beta);
    for (double& v : out.pixels)
        v = std::clamp(v, 0.0, 1.0);
    return out;
}

std::vector<Split> stratified_split(const std::vector<int>& labels, std::uint64_t seed) {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(i);

    std::vector<Split> splits(labels.size(), Split::Train);
    for (auto& [cls, idx] : by_class) {
        if (idx.size() < 5)
            throw ValidationError("stratified_split: class " + std::to_string(cls) +
                                  " has fewer than 5 samples");
        RngStream rng(seed, static_cast<std::uint64_t>(cls));
        shuffle_indices(idx, rng);
        const double n = static_cast<double>(idx.size());
        const std::size_t n_test = static_cast<std::size_t>(std::lround(0.2 * n));
        const std::size_t n_val = static_cast<std::size_t>(std::lround(0.16 * n));
        for (std::size_t j = 0; j < idx.size(); ++j) {
            if (j < n_test)
                splits[idx[j]] = Split::Test;
            else if (j < n_test + n_val)
                splits[idx[j]] = Split::Val;
            else
                splits[idx[j]] = Split::Train;
        }
    }
    return splits;
}

namespace {

Dataset build_with_split(const std::vector<RawImage>& raws, const std::vector<int>& labels,
                         const std::vector<Split>& splits,
                         const std::map<int, std::size_t>& aug_factors, std::uint64_t seed) {
    Dataset ds;
    std::vector<Sample> train, val, test;
    for (std::size_t i = 0; i < raws.size(); ++i) {
        RawImage processed = minmax_normalize(center_crop(sigma_clip(raws[i]), 40));
        Sample base;
        base.image = processed.pixels;
        base.label = labels[i];
        base.split = splits[i];
        base.origin_id = static_cast<std::uint32_t>(i);
        base.aug_index = 0;
        if (splits[i] == Split::Test) {
            test.push_back(std::move(base));
            continue;
        }
        auto it = aug_factors.find(labels[i]);
        const std::size_t factor = it == aug_factors.end() ? 1 : std::max<std::size_t>(1, it->second);
        std::vector<Sample>& bucket = splits[i] == Split::Train ? train : val;
        bucket.push_back(base);
        for (std::size_t copy = 1; copy < factor; ++copy) {
            RngStream rng(seed, 0x100000000ull * (i + 1) + copy);
            RawImage aug = augment(processed, rng);
            Sample s = base;
            s.image = aug.pixels;
            s.aug_index = static_cast<std::uint32_t>(copy);
            bucket.push_back(std::move(s));
        }
    }
    // keep batches class-mixed: the training loop consumes records in file order
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream rng_tr(seed, 0xFFFF0000ull);
    shuffle_indices(order, rng_tr);
    for (std::size_t i : order) ds.samples.push_back(std::move(train[i]));

    order.resize(val.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream rng_va(seed, 0xFFFF0001ull);
    shuffle_indices(order, rng_va);
    for (std::size_t i : order) ds.samples.push_back(std::move(val[i]));

    for (Sample& s : test) ds.samples.push_back(std::move(s));
    return ds;
}

} // namespace

Dataset build_dataset(const std::vector<RawImage>& raws, const std::vector<int>& labels,
                      const std::map<int, std::size_t>& aug_factors, std::uint64_t seed) {
    if (raws.size() != labels.size())
        throw ValidationError("build_dataset: image/label count mismatch");
    return build_with_split(raws, labels, stratified_split(labels, seed), aug_factors, seed);
}

SynthParams draw_synth_params(GalaxyClass cls, RngStream& rng) {
    SynthParams p;
    p.position_angle = rng.next_double() * 360.0;
    p.lobe_length = 8.0 + rng.next_double() * 6.0;
    p.noise_sigma = 0.01;
    if (cls == GalaxyClass::FRI) {
        p.core_flux = 1.0;
        p.lobe_flux = 0.4 + rng.next_double() * 0.15;
        p.hotspot_flux = 0.0;
        p.core_sigma = 1.8 + rng.next_double() * 0.4;
        p.lobe_sigma = 1.6 + rng.next_double() * 0.5;
    } else {
        p.core_flux = 0.28 + rng.next_double() * 0.08;
        p.lobe_flux = 0.12;
        p.hotspot_flux = 0.9 + rng.next_double() * 0.1;
        p.core_sigma = 1.5;
        p.hotspot_sigma = 1.4 + rng.next_double() * 0.4;
    }
    return p;
}

Sample synth_galaxy(GalaxyClass cls, RngStream& rng) {
    const std::size_t side = 40;
    SynthParams p = draw_synth_params(cls, rng);
    const double theta = p.position_angle * kPi / 180.0;
    const double ux = std::cos(theta), uy = std::sin(theta);
    const double c0 = (static_cast<double>(side) - 1.0) / 2.0;

    RawImage img{side, side, std::vector<double>(side * side, 0.0)};
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
            double dx = static_cast<double>(c) - c0;
            double dy = static_cast<double>(r) - c0;
            double a = dx * ux + dy * uy;   // along the jet axis
            double b = -dx * uy + dy * ux;  // perpendicular offset
            double d2 = dx * dx + dy * dy;
            double val = p.core_flux * std::exp(-d2 / (2.0 * p.core_sigma * p.core_sigma));
            if (cls == GalaxyClass::FRI) {
                double decay = p.lobe_length / 1.2;
                double cross = std::exp(-b * b / (2.0 * p.lobe_sigma * p.lobe_sigma));
                for (double s : {1.0, -1.0}) {
                    double along = s * a;
                    if (along > 0.0)
                        val += p.lobe_flux * std::exp(-along / decay) * cross;
                }
            } else {
                for (double s : {1.0, -1.0}) {
                    double hx = s * p.lobe_length * ux;
                    double hy = s * p.lobe_length * uy;
                    double hd2 = (dx - hx) * (dx - hx) + (dy - hy) * (dy - hy);
                    double amp = s > 0 ? p.hotspot_flux : p.hotspot_flux * 0.92;
                    val += amp * std::exp(-hd2 / (2.0 * p.hotspot_sigma * p.hotspot_sigma));
                }
                // faint bridge connecting core and hotspots
                if (std::abs(a) < p.lobe_length)
                    val += p.lobe_flux * std::exp(-b * b / (2.0 * 1.2 * 1.2));
            }
            val += p.noise_sigma * rng.next_gaussian();
            img.at(r, c) = std::max(0.0, val);
        }
    RawImage norm = minmax_normalize(img);
    Sample s;
    s.image = norm.pixels;
    s.label = static_cast<int>(cls);
    return s;
}

namespace {

void synth_images(std::size_t n_per_class, std::uint64_t seed, std::vector<RawImage>& raws,
                  std::vector<int>& labels) {
    for (int cls = 0; cls < 2; ++cls)
        for (std::size_t i = 0; i < n_per_class; ++i) {
            RngStream rng(seed, (0xABull << 56) | (static_cast<std::uint64_t>(cls) << 32) | i);
            Sample s = synth_galaxy(static_cast<GalaxyClass>(cls), rng);
            raws.push_back(RawImage{40, 40, std::move(s.image)});
            labels.push_back(cls);
        }
}

} // namespace

Dataset synth_dataset(std::size_t n_per_class, const std::map<int, std::size_t>& aug_factors,
                      std::uint64_t seed) {
    std::vector<RawImage> raws;
    std::vector<int> labels;
    synth_images(n_per_class, seed, raws, labels);
    return build_dataset(raws, labels, aug_factors, seed);
}

Dataset synth_dataset_counts(std::size_t n_train, std::size_t n_val, std::size_t n_test,
                             const std::map<int, std::size_t>& aug_factors, std::uint64_t seed) {
    const std::size_t per_class = n_train + n_val + n_test;
    std::vector<RawImage> raws;
    std::vector<int> labels;
    synth_images(per_class, seed, raws, labels);
    std::vector<Split> splits;
    for (int cls = 0; cls < 2; ++cls)
        for (std::size_t i = 0; i < per_class; ++i)
            splits.push_back(i < n_train ? Split::Train
                                         : (i < n_train + n_val ? Split::Val : Split::Test));
    return build_with_split(raws, labels, splits, aug_factors, seed);
}

void dataset_split(const Dataset& ds, Split split, Matrix& images, std::vector<int>& labels) {
    std::size_t count = 0;
    for (const Sample& s : ds.samples)
        if (s.split == split) ++count;
    images = Matrix(count, static_cast<std::size_t>(ds.height) * ds.width);
    labels.clear();
    labels.reserve(count);
    std::size_t row = 0;
    for (const Sample& s : ds.samples) {
        if (s.split != split) continue;
        std::copy(s.image.begin(), s.image.end(), images.row(row));
        labels.push_back(s.label);
        ++row;
    }
}

} // namespace rgm
