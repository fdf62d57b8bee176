#pragma once

#include <string>

#include <json.hpp>

#include "tpower/attack.hpp"
#include "tpower/dataset.hpp"
#include "tpower/model.hpp"
#include "tpower/tensor.hpp"

namespace tpower {

// Binary tensor container: magic "TNSR1", one dtype byte (0x01 = f64),
// u8 rank, u32 little-endian dims, then the little-endian f64 payload.
// Round trips are bit-exact for every finite double.
void write_tensor(const std::string& path, const Tensor& t);
Tensor read_tensor(const std::string& path);

// Model container: one JSON header line (layer kinds and shapes, cut names,
// num_classes, format version) followed by raw little-endian f64 parameter
// blocks in declaration order (per layer: weights, then bias).
void write_model(const std::string& path, const Model& m);
Model read_model(const std::string& path);

// Perturbation container: one JSON header line (shape, pattern descriptor,
// attack config, source model id, support block list, format version)
// followed by the little-endian f64 payload of eps.
void write_perturbation(const std::string& path, const Perturbation& p);
Perturbation read_perturbation(const std::string& path);

// Dataset directory: one TensorFile per sample plus manifest.json carrying
// labels, split membership, and the class count.
struct StoredDataset {
  Dataset data;
  int num_classes = 0;
};

void write_dataset(const std::string& dir, const Dataset& data, int num_classes);
StoredDataset read_dataset(const std::string& dir);

// Portable image export: binary PGM (P5) for 1 channel, PPM (P6) for 3.
// Unit maps [0,1] onto 0..255; Signed maps [-1,1] onto 0..255 with zero at
// mid-gray 128 (perturbation rendering).
enum class PixelScale { Unit, Signed };

void write_pnm(const std::string& path, const Tensor& image, PixelScale scale);

// AttackConfig JSON codec. Unknown keys are rejected by name; missing keys
// keep their defaults. Infinite exponents serialize as the string "inf".
nlohmann::json config_to_json(const AttackConfig& cfg);
AttackConfig config_from_json(const nlohmann::json& j);

// Norm exponents in JSON: a number, or the string "inf".
nlohmann::json exponent_to_json(const NormExponent& e);
NormExponent exponent_from_json(const nlohmann::json& j, const char* field);

}  // namespace tpower
