#include "declutr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "declutr/checkpoint.hpp"
#include "declutr/error.hpp"
#include "declutr/objective.hpp"

namespace declutr {

ObjectiveMode objective_mode_from_string(const std::string& s) {
  if (s == "contrastive+mlm") return ObjectiveMode::contrastive_mlm;
  if (s == "contrastive-only") return ObjectiveMode::contrastive_only;
  if (s == "mlm-only") return ObjectiveMode::mlm_only;
  throw std::invalid_argument("unknown objective mode '" + s + "'");
}

const char* objective_mode_name(ObjectiveMode m) {
  switch (m) {
    case ObjectiveMode::contrastive_mlm: return "contrastive+mlm";
    case ObjectiveMode::contrastive_only: return "contrastive-only";
    case ObjectiveMode::mlm_only: return "mlm-only";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (!(temperature > 0)) throw std::invalid_argument("train: temperature must be > 0");
  if (!(lr_max > 0)) throw std::invalid_argument("train: lr_max must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(cut_frac > 0) || !(cut_frac < 1)) throw std::invalid_argument("train: cut_frac must be in (0, 1)");
  if (stlr_ratio < 1) throw std::invalid_argument("train: stlr_ratio must be >= 1");
  if (!(max_grad_norm > 0)) throw std::invalid_argument("train: max_grad_norm must be > 0");
}

double stlr_learning_rate(int64_t t, int64_t total_steps, double cut_frac, double lr_max, double ratio) {
  if (total_steps < 1) throw std::invalid_argument("stlr: total_steps must be >= 1");
  if (t < 0 || t > total_steps) throw std::invalid_argument("stlr: t out of [0, total_steps]");
  const int64_t cut = std::max<int64_t>(1, static_cast<int64_t>(std::floor(static_cast<double>(total_steps) * cut_frac)));
  double p;
  if (t < cut) {
    p = static_cast<double>(t) / static_cast<double>(cut);
  } else {
    p = 1.0 - static_cast<double>(t - cut) / (static_cast<double>(cut) * (1.0 / cut_frac - 1.0));
    p = std::max(0.0, p);
  }
  return lr_max * (1.0 + p * (ratio - 1.0)) / ratio;
}

double rescale_gradients(std::vector<Param*>& params, double max_norm, bool strict) {
  double sq_sum = 0.0;
  for (const Param* p : params) {
    if (!p->g.allFinite()) throw NumericError("non-finite gradient in tensor '" + p->name + "'");
    sq_sum += p->g.squaredNorm();
  }
  const double norm = std::sqrt(sq_sum);
  if (norm == 0.0) return 0.0;
  if (strict || norm > max_norm) {
    const double scale = max_norm / norm;
    for (Param* p : params) p->g *= scale;
    return max_norm;
  }
  return norm;
}

AdamState AdamState::for_params(const std::vector<Param*>& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Param* p : params) {
    s.m.push_back(Eigen::MatrixXd::Zero(p->w.rows(), p->w.cols()));
    s.v.push_back(Eigen::MatrixXd::Zero(p->w.rows(), p->w.cols()));
  }
  return s;
}

void AdamState::quantize_to_f32() {
  for (auto& t : m) t = t.cast<float>().cast<double>();
  for (auto& t : v) t = t.cast<float>().cast<double>();
}

void adamw_step(std::vector<Param*>& params, AdamState& state, double lr, double weight_decay,
                double beta1, double beta2, double eps) {
  if (state.m.size() != params.size()) throw std::invalid_argument("adamw: state/params mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.g.rows() != state.m[i].rows() || p.g.cols() != state.m[i].cols())
      throw std::invalid_argument("adamw: shape mismatch for tensor '" + p.name + "'");
    if (weight_decay != 0.0 && p.decay) p.w -= (lr * weight_decay) * p.w;
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * p.g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * p.g.cwiseProduct(p.g);
    const Eigen::MatrixXd m_hat = state.m[i] / bc1;
    const Eigen::MatrixXd v_hat = state.v[i] / bc2;
    p.w -= lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().matrix() + Eigen::MatrixXd::Constant(p.w.rows(), p.w.cols(), eps));
  }
}

namespace {

struct ContrastivePass {
  double loss = 0.0;
  bool degenerate = false;
};

// Contrastive branch: encode anchors + positives, pool, build the 2AN set,
// evaluate the loss and (optionally) push gradients back through the encoder.
ContrastivePass run_contrastive(EncoderParams& params, const ContrastiveBatch& batch,
                                double temperature, LossReduction reduction, bool with_grads,
                                Rng* dropout_rng) {
  const int an = batch.an();
  const int pp = batch.positives_per_anchor;
  const Eigen::Index d = params.config.d_model;

  ForwardCache cache;
  auto embs = encode_tokens(params, batch.padded_spans.ids, batch.padded_spans.mask,
                            with_grads ? &cache : nullptr, dropout_rng);

  Eigen::MatrixXd pooled(static_cast<Eigen::Index>(embs.size()), d);
  for (size_t rI = 0; rI < embs.size(); ++rI)
    pooled.row(static_cast<Eigen::Index>(rI)) =
        mean_pool(embs[rI], batch.padded_spans.mask.row(static_cast<Eigen::Index>(rI))).transpose();

  EmbeddingSet set;
  set.temperature = temperature;
  set.vectors.resize(2 * an, d);
  for (int i = 1; i <= an; ++i) {
    set.vectors.row(i - 1) = pooled.row(i - 1);
    Eigen::RowVectorXd mean_pos = Eigen::RowVectorXd::Zero(d);
    for (int p = 1; p <= pp; ++p) mean_pos += pooled.row(an + (p - 1) * an + (i - 1));
    set.vectors.row(an + i - 1) = mean_pos / static_cast<double>(pp);
  }

  const double divisor = reduction == LossReduction::mean ? 2.0 * an : 1.0;
  if (!with_grads) {
    return {contrastive_loss(set) / divisor, an == 1};
  }

  ContrastiveResult res = contrastive_loss_with_grad(set);
  if (res.degenerate) return {0.0, true};
  res.loss /= divisor;
  res.grad /= divisor;

  std::vector<Eigen::MatrixXd> d_out(embs.size());
  const Eigen::Index width = batch.padded_spans.ids.cols();
  for (auto& m : d_out) m = Eigen::MatrixXd::Zero(width, d);
  for (int i = 1; i <= an; ++i) {
    mean_pool_backward(res.grad.row(i - 1).transpose(), batch.padded_spans.mask.row(i - 1),
                       d_out[static_cast<size_t>(i - 1)]);
    const Eigen::VectorXd d_mean = res.grad.row(an + i - 1).transpose() / static_cast<double>(pp);
    for (int p = 1; p <= pp; ++p) {
      const int row = an + (p - 1) * an + (i - 1);
      mean_pool_backward(d_mean, batch.padded_spans.mask.row(row), d_out[static_cast<size_t>(row)]);
    }
  }
  encode_backward(params, cache, d_out);
  return {res.loss, false};
}

// MLM branch over the masked anchor copies.
double run_mlm(EncoderParams& params, const ContrastiveBatch& batch, bool with_grads,
               Rng* dropout_rng) {
  ForwardCache cache;
  auto embs = encode_tokens(params, batch.padded_masked_anchors.ids, batch.padded_masked_anchors.mask,
                            with_grads ? &cache : nullptr, dropout_rng);

  int64_t total_positions = 0;
  for (const auto& m : batch.mlm) total_positions += static_cast<int64_t>(m.positions.size());
  Eigen::MatrixXd logits(total_positions, params.config.vocab_size);
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(total_positions));
  Eigen::Index row0 = 0;
  for (size_t a = 0; a < batch.mlm.size(); ++a) {
    const MlmInstance& inst = batch.mlm[a];
    logits.middleRows(row0, static_cast<Eigen::Index>(inst.positions.size())) =
        mlm_logits(params, embs[a], inst.positions);
    labels.insert(labels.end(), inst.labels.begin(), inst.labels.end());
    row0 += static_cast<Eigen::Index>(inst.positions.size());
  }

  if (!with_grads) return mlm_loss(logits, labels);

  MlmLossResult res = mlm_loss_with_grad(logits, labels);
  std::vector<Eigen::MatrixXd> d_out(embs.size());
  row0 = 0;
  for (size_t a = 0; a < batch.mlm.size(); ++a) {
    const MlmInstance& inst = batch.mlm[a];
    d_out[a] = Eigen::MatrixXd::Zero(embs[a].rows(), embs[a].cols());
    mlm_logits_backward(params, embs[a], inst.positions,
                        res.dlogits.middleRows(row0, static_cast<Eigen::Index>(inst.positions.size())),
                        d_out[a]);
    row0 += static_cast<Eigen::Index>(inst.positions.size());
  }
  encode_backward(params, cache, d_out);
  return res.loss;
}

BatchLossResult run_batch(EncoderParams& params, const ContrastiveBatch& batch, double temperature,
                          ObjectiveMode mode, LossReduction reduction, bool with_grads,
                          Rng* dropout_rng) {
  BatchLossResult out;
  if (mode != ObjectiveMode::mlm_only) {
    const ContrastivePass c =
        run_contrastive(params, batch, temperature, reduction, with_grads, dropout_rng);
    out.contrastive = c.loss;
    out.degenerate = c.degenerate;
  }
  if (mode != ObjectiveMode::contrastive_only) out.mlm = run_mlm(params, batch, with_grads, dropout_rng);
  out.combined = combined_loss(out.contrastive, out.mlm);
  return out;
}

}  // namespace

BatchLossResult batch_loss(const EncoderParams& params, const ContrastiveBatch& batch,
                           double temperature, ObjectiveMode mode, LossReduction reduction,
                           Rng* dropout_rng) {
  return run_batch(const_cast<EncoderParams&>(params), batch, temperature, mode, reduction, false,
                   dropout_rng);
}

BatchLossResult batch_loss_and_grads(EncoderParams& params, const ContrastiveBatch& batch,
                                     double temperature, ObjectiveMode mode, LossReduction reduction,
                                     Rng* dropout_rng) {
  return run_batch(params, batch, temperature, mode, reduction, true, dropout_rng);
}

namespace {

std::string metrics_line(const StepMetrics& m) {
  nlohmann::json j = {{"step", m.step},
                      {"lr", m.lr},
                      {"l_contrastive", m.l_contrastive},
                      {"l_mlm", m.l_mlm},
                      {"l", m.l},
                      {"grad_norm", m.grad_norm},
                      {"spans_per_sec", m.spans_per_sec}};
  return j.dump();
}

void save_optimizer_state(const AdamState& state, const std::vector<Param*>& params,
                          const std::string& path) {
  TensorContainer c;
  c.meta = {{"kind", "optimizer"}, {"step", state.t}};
  for (size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back("m." + params[i]->name, state.m[i]);
  for (size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back("v." + params[i]->name, state.v[i]);
  write_container(path, c);
}

AdamState load_optimizer_state(const std::string& path, const std::vector<Param*>& params) {
  TensorContainer c = read_container(path);
  if (c.meta.value("kind", "") != "optimizer") throw DataError("not an optimizer state file: " + path);
  if (c.tensors.size() != 2 * params.size()) throw DataError("optimizer state: tensor count mismatch");
  AdamState s;
  s.t = c.meta.value("step", int64_t{0});
  for (size_t i = 0; i < params.size(); ++i) {
    if (c.tensors[i].first != "m." + params[i]->name) throw DataError("optimizer state: unexpected tensor order");
    s.m.push_back(std::move(c.tensors[i].second));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (c.tensors[params.size() + i].first != "v." + params[i]->name)
      throw DataError("optimizer state: unexpected tensor order");
    s.v.push_back(std::move(c.tensors[params.size() + i].second));
  }
  return s;
}

}  // namespace

TrainResult train(const DocumentStore& store, const Vocab& vocab, const SamplerConfig& sampler_cfg,
                  const EncoderConfig& encoder_cfg_in, const TrainConfig& train_cfg,
                  const std::string& out_dir) {
  sampler_cfg.validate();
  train_cfg.validate();
  if (!store.vocab_fingerprint().empty() && store.vocab_fingerprint() != vocab.fingerprint())
    throw DataError("train: document store was tokenized with a different vocab");

  EncoderConfig encoder_cfg = encoder_cfg_in;
  if (encoder_cfg.vocab_size == 0) encoder_cfg.vocab_size = vocab.size();
  if (encoder_cfg.vocab_size != vocab.size()) throw DataError("train: encoder vocab_size does not match vocab");
  if (encoder_cfg.max_positions < sampler_cfg.max_span_len)
    throw std::invalid_argument("train: encoder max_positions < sampler max_span_len");
  encoder_cfg.validate();

  const int required = sampler_cfg.min_eligible_tokens();
  std::vector<const Document*> eligible;
  for (const Document& d : store.documents())
    if (d.n() >= required) eligible.push_back(&d);
  if (eligible.empty())
    throw DataError("train: no eligible documents (need >= " + std::to_string(required) + " tokens)");

  const int64_t docs = static_cast<int64_t>(eligible.size());
  const int64_t steps_per_epoch = (docs + train_cfg.batch_size - 1) / train_cfg.batch_size;
  const int64_t total_steps = train_cfg.total_steps_override > 0
                                  ? train_cfg.total_steps_override
                                  : static_cast<int64_t>(train_cfg.epochs) * steps_per_epoch;

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.checkpoint_path = out_dir + "/checkpoint.ckpt";
  result.optimizer_path = out_dir + "/optimizer.ckpt";
  result.metrics_path = out_dir + "/metrics.jsonl";

  EncoderParams params;
  AdamState opt;
  int64_t start_step = 0;
  if (!train_cfg.resume_from.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(train_cfg.resume_from + "/checkpoint.ckpt", vocab.fingerprint());
    if (!(loaded.params.config == encoder_cfg)) throw DataError("train: resume checkpoint config mismatch");
    params = std::move(loaded.params);
    auto live = params.all();
    opt = load_optimizer_state(train_cfg.resume_from + "/optimizer.ckpt", live);
    start_step = params.step;
    if (opt.t != start_step) throw DataError("train: optimizer/checkpoint step mismatch");
    if (start_step % steps_per_epoch != 0)
      throw DataError("train: can only resume from an epoch-boundary checkpoint");
  } else {
    params = init_params(encoder_cfg, train_cfg.seed);
    opt = AdamState::for_params(params.all());
  }
  auto live_params = params.all();

  // Guarantees a last-good checkpoint exists even if the first step blows up.
  save_checkpoint(params, vocab.fingerprint(), result.checkpoint_path);
  save_optimizer_state(opt, live_params, result.optimizer_path);
  params.quantize_to_f32();
  opt.quantize_to_f32();

  std::ofstream metrics_out(result.metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics_out) throw DataError("cannot write metrics file: " + result.metrics_path);

  bool warned_degenerate = false;
  int64_t t = start_step;
  for (int64_t epoch = start_step / steps_per_epoch; t < total_steps; ++epoch) {
    std::vector<const Document*> order = eligible;
    Rng shuffle_rng = Rng::stream(train_cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_below(i)]);

    for (int64_t b = 0; b < steps_per_epoch && t < total_steps; ++b, ++t) {
      const auto begin = order.begin() + b * train_cfg.batch_size;
      const auto end = order.begin() + std::min<int64_t>((b + 1) * train_cfg.batch_size, docs);
      std::vector<const Document*> batch_docs(begin, end);

      const auto t0 = std::chrono::steady_clock::now();
      ContrastiveBatch batch = assemble_batch(train_cfg.seed, static_cast<uint64_t>(epoch), batch_docs,
                                              sampler_cfg, vocab);
      params.zero_grads();
      Rng dropout_rng = Rng::stream(train_cfg.seed, "dropout", static_cast<uint64_t>(t));
      Rng* dropout = encoder_cfg.dropout > 0.0 ? &dropout_rng : nullptr;
      BatchLossResult losses;
      try {
        losses = batch_loss_and_grads(params, batch, train_cfg.temperature, train_cfg.objective,
                                      train_cfg.loss_reduction, dropout);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(t) +
                           " (last-good checkpoint retained in " + out_dir + ")");
      }
      if (!std::isfinite(losses.combined))
        throw NumericError("non-finite loss at step " + std::to_string(t) +
                           " (last-good checkpoint retained in " + out_dir + ")");
      if (losses.degenerate && !warned_degenerate) {
        std::fprintf(stderr, "warning: 2AN == 2, contrastive loss is degenerate (0)\n");
        warned_degenerate = true;
      }

      double grad_norm;
      try {
        grad_norm = rescale_gradients(live_params, train_cfg.max_grad_norm, train_cfg.strict_rescale);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(t) +
                           " (last-good checkpoint retained in " + out_dir + ")");
      }
      const double lr = stlr_learning_rate(t, total_steps, train_cfg.cut_frac, train_cfg.lr_max,
                                           train_cfg.stlr_ratio);
      adamw_step(live_params, opt, lr, train_cfg.weight_decay, train_cfg.adam_beta1,
                 train_cfg.adam_beta2, train_cfg.adam_eps);
      params.step = t + 1;

      const auto t1 = std::chrono::steady_clock::now();
      const double dt = std::chrono::duration<double>(t1 - t0).count();
      const double spans = static_cast<double>(batch.an() + batch.pan());

      StepMetrics m;
      m.step = t;
      m.lr = lr;
      m.l_contrastive = losses.contrastive;
      m.l_mlm = losses.mlm;
      m.l = losses.combined;
      m.grad_norm = grad_norm;
      m.spans_per_sec = train_cfg.deterministic || dt <= 0.0 ? 0.0 : spans / dt;
      metrics_out << metrics_line(m) << '\n';
      metrics_out.flush();
      result.metrics.push_back(m);
    }

    save_checkpoint(params, vocab.fingerprint(), result.checkpoint_path);
    save_optimizer_state(opt, live_params, result.optimizer_path);
    params.quantize_to_f32();
    opt.quantize_to_f32();
  }

  result.steps = t - start_step;
  return result;
}

}  // namespace declutr
