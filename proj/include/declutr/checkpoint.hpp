#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "declutr/encoder.hpp"

namespace declutr {

/// On-disk tensor container: 8-byte magic, format version, a JSON manifest
/// (carrying arbitrary metadata plus the tensor directory name/shape/offset),
/// then raw little-endian float32 payloads in manifest order.
struct TensorContainer {
  nlohmann::json meta;  // everything except the tensor directory
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
};

void write_container(const std::string& path, const TensorContainer& container);
TensorContainer read_container(const std::string& path);

/// Writes params (model tensors only) with config, step counter and vocab
/// fingerprint in the manifest.
void save_checkpoint(const EncoderParams& params, const std::string& vocab_fingerprint,
                     const std::string& path);

struct LoadedCheckpoint {
  EncoderParams params;  // step restored from the manifest
  std::string vocab_fingerprint;
};

/// Loads and validates a checkpoint. When expected_vocab_fingerprint is
/// non-empty it must match the manifest or a DataError is raised.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& expected_vocab_fingerprint = "");

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

}  // namespace declutr
