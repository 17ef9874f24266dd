#pragma once

#include <string>
#include <vector>

#include "attnlens/evaluation.hpp"
#include "attnlens/model.hpp"
#include "attnlens/tensor.hpp"

namespace attnlens {

// Weight container layout:
//   8-byte little-endian header length
//   UTF-8 JSON header: name -> {"shape": [...], "offset": payload byte offset,
//                               "length": element count}
//   payload: contiguous little-endian f32
void save_weights(const std::string& path, const WeightStore& weights);
WeightStore load_weights(const std::string& path); // FormatError on malformed input

// Binary PGM (P5) / PPM (P6), 8-bit, values scaled to [0, 1].
Tensor load_image(const std::string& path); // [H x W x 1] or [H x W x 3]

// [H x W] (or [H x W x 1]) map in [0, 1] quantized round-half-up to 0..255.
void save_pgm(const std::string& path, const Tensor& pixels);

// Raw float rows, 9 significant digits; round-trips f32 exactly.
void save_csv(const std::string& path, const Tensor& matrix);
Tensor load_csv(const std::string& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);
void save_config(const std::string& path, const ModelConfig& cfg);
ModelConfig load_config(const std::string& path);

// Dataset directory: dataset.json plus one PGM per image and mask.
void save_dataset(const std::string& dir, const std::vector<LabeledSample>& samples,
                  unsigned long long seed, Scalar noise);
std::vector<LabeledSample> load_dataset(const std::string& dir);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

} // namespace attnlens
