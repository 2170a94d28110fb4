#include "declutr/runconfig.hpp"

#include <fstream>

#include "declutr/error.hpp"

namespace declutr {

RunConfig profile_config(const std::string& profile) {
  RunConfig cfg;  // struct defaults are the published training values
  if (profile == "paper-defaults") return cfg;
  if (profile == "desk-scale") {
    cfg.sampler.min_span_len = 8;
    cfg.sampler.max_span_len = 64;
    cfg.encoder.max_positions = 64;
    cfg.train.batch_size = 8;
    cfg.train.lr_max = 2e-3;  // a from-scratch 64-d model wants a larger step
    cfg.train.epochs = 10;
    return cfg;
  }
  throw std::invalid_argument("unknown profile '" + profile + "' (expected paper-defaults or desk-scale)");
}

namespace {

template <typename T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* section) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw DataError(std::string("config: unknown key '") + key + "' in section '" + section + "'");
  }
}

void apply_sampler(SamplerConfig& s, const nlohmann::json& j) {
  check_keys(j,
             {"min_span_len", "max_span_len", "anchors_per_doc", "positives_per_anchor", "anchor_alpha",
              "anchor_beta", "positive_alpha", "positive_beta", "mask_rate", "separation_multiplier"},
             "sampler");
  take(j, "min_span_len", s.min_span_len);
  take(j, "max_span_len", s.max_span_len);
  take(j, "anchors_per_doc", s.anchors_per_doc);
  take(j, "positives_per_anchor", s.positives_per_anchor);
  take(j, "anchor_alpha", s.anchor_alpha);
  take(j, "anchor_beta", s.anchor_beta);
  take(j, "positive_alpha", s.positive_alpha);
  take(j, "positive_beta", s.positive_beta);
  take(j, "mask_rate", s.mask_rate);
  take(j, "separation_multiplier", s.separation_multiplier);
}

void apply_encoder(EncoderConfig& e, const nlohmann::json& j) {
  check_keys(j, {"d_model", "layers", "heads", "d_ff", "max_positions", "vocab_size", "dropout"}, "encoder");
  take(j, "d_model", e.d_model);
  take(j, "layers", e.layers);
  take(j, "heads", e.heads);
  take(j, "d_ff", e.d_ff);
  take(j, "max_positions", e.max_positions);
  take(j, "vocab_size", e.vocab_size);
  take(j, "dropout", e.dropout);
}

void apply_train(TrainConfig& t, const nlohmann::json& j) {
  check_keys(j,
             {"batch_size", "epochs", "temperature", "lr_max", "weight_decay", "adam_beta1", "adam_beta2",
              "adam_eps", "cut_frac", "stlr_ratio", "max_grad_norm", "strict_rescale", "seed", "objective",
              "loss_reduction", "total_steps", "deterministic"},
             "train");
  take(j, "batch_size", t.batch_size);
  take(j, "epochs", t.epochs);
  take(j, "temperature", t.temperature);
  take(j, "lr_max", t.lr_max);
  take(j, "weight_decay", t.weight_decay);
  take(j, "adam_beta1", t.adam_beta1);
  take(j, "adam_beta2", t.adam_beta2);
  take(j, "adam_eps", t.adam_eps);
  take(j, "cut_frac", t.cut_frac);
  take(j, "stlr_ratio", t.stlr_ratio);
  take(j, "max_grad_norm", t.max_grad_norm);
  take(j, "strict_rescale", t.strict_rescale);
  take(j, "seed", t.seed);
  take(j, "total_steps", t.total_steps_override);
  take(j, "deterministic", t.deterministic);
  if (j.contains("objective")) t.objective = objective_mode_from_string(j.at("objective").get<std::string>());
  if (j.contains("loss_reduction")) {
    const std::string r = j.at("loss_reduction").get<std::string>();
    if (r == "sum")
      t.loss_reduction = LossReduction::sum;
    else if (r == "mean")
      t.loss_reduction = LossReduction::mean;
    else
      throw DataError("config: loss_reduction must be 'sum' or 'mean'");
  }
}

}  // namespace

void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("config: expected a JSON object");
  check_keys(j, {"sampler", "encoder", "train"}, "<root>");
  if (j.contains("sampler")) apply_sampler(cfg.sampler, j.at("sampler"));
  if (j.contains("encoder")) apply_encoder(cfg.encoder, j.at("encoder"));
  if (j.contains("train")) apply_train(cfg.train, j.at("train"));
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("config file " + path + ": " + e.what());
  }
  apply_config_json(cfg, j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return {
      {"sampler",
       {{"min_span_len", cfg.sampler.min_span_len},
        {"max_span_len", cfg.sampler.max_span_len},
        {"anchors_per_doc", cfg.sampler.anchors_per_doc},
        {"positives_per_anchor", cfg.sampler.positives_per_anchor},
        {"anchor_alpha", cfg.sampler.anchor_alpha},
        {"anchor_beta", cfg.sampler.anchor_beta},
        {"positive_alpha", cfg.sampler.positive_alpha},
        {"positive_beta", cfg.sampler.positive_beta},
        {"mask_rate", cfg.sampler.mask_rate},
        {"separation_multiplier", cfg.sampler.separation_multiplier}}},
      {"encoder",
       {{"d_model", cfg.encoder.d_model},
        {"layers", cfg.encoder.layers},
        {"heads", cfg.encoder.heads},
        {"d_ff", cfg.encoder.d_ff},
        {"max_positions", cfg.encoder.max_positions},
        {"vocab_size", cfg.encoder.vocab_size},
        {"dropout", cfg.encoder.dropout}}},
      {"train",
       {{"batch_size", cfg.train.batch_size},
        {"epochs", cfg.train.epochs},
        {"temperature", cfg.train.temperature},
        {"lr_max", cfg.train.lr_max},
        {"weight_decay", cfg.train.weight_decay},
        {"adam_beta1", cfg.train.adam_beta1},
        {"adam_beta2", cfg.train.adam_beta2},
        {"adam_eps", cfg.train.adam_eps},
        {"cut_frac", cfg.train.cut_frac},
        {"stlr_ratio", cfg.train.stlr_ratio},
        {"max_grad_norm", cfg.train.max_grad_norm},
        {"strict_rescale", cfg.train.strict_rescale},
        {"seed", cfg.train.seed},
        {"objective", objective_mode_name(cfg.train.objective)},
        {"loss_reduction", cfg.train.loss_reduction == LossReduction::mean ? "mean" : "sum"},
        {"total_steps", cfg.train.total_steps_override},
        {"deterministic", cfg.train.deterministic}}}};
}

}  // namespace declutr
