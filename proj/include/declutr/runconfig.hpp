#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "declutr/encoder.hpp"
#include "declutr/sampler.hpp"
#include "declutr/trainer.hpp"

namespace declutr {

/// Merged configuration surface for the CLI: a named profile provides the
/// base values, an optional JSON config file overrides per-field.
struct RunConfig {
  SamplerConfig sampler;
  EncoderConfig encoder;
  TrainConfig train;
};

/// "paper-defaults" (the published training setup) or "desk-scale"
/// (l_min=8, l_max=64, N=8, d_model=64, faster learning rate; runs on a
/// laptop in seconds).
RunConfig profile_config(const std::string& profile);

/// Applies a partial {"sampler": {...}, "encoder": {...}, "train": {...}}
/// override object; unknown keys are rejected.
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);

/// Loads and applies a JSON config file.
void apply_config_file(RunConfig& cfg, const std::string& path);

nlohmann::json run_config_to_json(const RunConfig& cfg);

}  // namespace declutr
