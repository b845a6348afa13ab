#pragma once

#include <string>

#include "rgm/datapipe.hpp"
#include "rgm/dnnae.hpp"
#include "rgm/gmm.hpp"

namespace rgm {

// All files are written atomically (temp file + rename).

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

void save_checkpoint(const std::string& path, const DnnaeModel& model, bool with_adam = true);
DnnaeModel load_checkpoint(const std::string& path);

// Truncate all parameters and optimizer state to float32, the checkpoint
// storage precision. Applying this at save time makes a resumed run match a
// run that kept going after the save.
void truncate_to_storage(DnnaeModel& model);

void save_gmm(const std::string& path, const GmmModel& model);
GmmModel load_gmm(const std::string& path);

// Binary P5, maxval 65535, big-endian samples, round-half-up quantization.
void export_pgm(const std::vector<double>& image, std::size_t height, std::size_t width,
                const std::string& path);
RawImage load_pgm(const std::string& path);

} // namespace rgm
