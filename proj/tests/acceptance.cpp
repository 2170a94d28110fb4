// Acceptance suite: each criterion prints one PASS/FAIL line; the binary
// exits nonzero if any criterion fails. Tolerances are pinned in code.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "declutr/checkpoint.hpp"
#include "declutr/corpus.hpp"
#include "declutr/evalkit.hpp"
#include "declutr/objective.hpp"
#include "declutr/prng.hpp"
#include "declutr/runconfig.hpp"
#include "declutr/sampler.hpp"
#include "declutr/synthetic.hpp"
#include "declutr/trainer.hpp"
#include "test_support.hpp"

#ifndef DECLUTR_FIXTURE_DIR
#define DECLUTR_FIXTURE_DIR "data/fixtures"
#endif

using namespace declutr;
namespace ts = test_support;

namespace {

struct Criterion {
  std::string name;
  std::function<std::vector<std::string>()> run;  // returns failure messages
};

void expect(std::vector<std::string>& failures, bool ok, const std::string& message) {
  if (!ok) failures.push_back(message);
}

// ---------------------------------------------------------------- criterion 1

std::vector<std::string> aggregation_fidelity() {
  std::vector<std::string> failures;
  const std::string dir = DECLUTR_FIXTURE_DIR;

  const double glove = aggregate_downstream(load_task_reports(dir + "/table2_glove.json"));
  expect(failures, std::abs(glove - 65.47) <= 0.01,
         "GloVe downstream average " + std::to_string(glove) + " != 65.47 +- 0.01");

  const double fasttext = aggregate_downstream(load_task_reports(dir + "/table2_fasttext.json"));
  expect(failures, std::abs(fasttext - 68.56) <= 0.01,
         "fastText downstream average " + std::to_string(fasttext) + " != 68.56 +- 0.01");

  auto probing_avg = [](const std::string& path) {
    std::vector<double> accs;
    for (const auto& r : load_task_reports(path)) accs.push_back(r.score());
    return aggregate_probing(accs);
  };
  const double glove_probing = probing_avg(dir + "/table3_glove_probing.json");
  expect(failures, std::abs(glove_probing - 62.42) <= 0.01,
         "GloVe probing average " + std::to_string(glove_probing) + " != 62.42 +- 0.01");
  const double fasttext_probing = probing_avg(dir + "/table3_fasttext_probing.json");
  expect(failures, std::abs(fasttext_probing - 63.16) <= 0.01,
         "fastText probing average " + std::to_string(fasttext_probing) + " != 63.16 +- 0.01");
  return failures;
}

// ---------------------------------------------------------------- criterion 2

std::vector<std::string> loss_oracle() {
  std::vector<std::string> failures;
  Rng rng(101);
  for (int a : {1, 2}) {
    for (int n : {1, 2, 3}) {
      const int an = a * n;
      for (int trial = 0; trial < 100; ++trial) {
        EmbeddingSet set;
        set.temperature = 5e-2;
        set.vectors.resize(2 * an, 16);
        for (Eigen::Index r = 0; r < set.vectors.rows(); ++r)
          for (Eigen::Index c = 0; c < set.vectors.cols(); ++c) set.vectors(r, c) = rng.normal();
        const double vectorized = contrastive_loss(set);
        const double brute = ts::brute_force_contrastive(set.vectors, set.temperature);
        if (std::abs(vectorized - brute) >= 1e-10) {
          failures.push_back("A=" + std::to_string(a) + " N=" + std::to_string(n) + " trial " +
                             std::to_string(trial) + ": |vectorized - brute| = " +
                             std::to_string(std::abs(vectorized - brute)));
        }
      }
      // All-identical embeddings: exactly 2AN * log(2AN - 1).
      EmbeddingSet same;
      same.temperature = 5e-2;
      same.vectors = Eigen::MatrixXd::Constant(2 * an, 16, 0.7);
      const double expected = an == 1 ? 0.0 : 2.0 * an * std::log(2.0 * an - 1.0);
      if (contrastive_loss(same) != expected)
        failures.push_back("identical-embeddings case not exact at 2AN=" + std::to_string(2 * an));
    }
  }
  return failures;
}

// ---------------------------------------------------------------- criterion 3

std::vector<std::string> gradient_check() {
  std::vector<std::string> failures;

  EncoderConfig ecfg;
  ecfg.d_model = 8;
  ecfg.layers = 2;
  ecfg.heads = 2;
  ecfg.d_ff = 16;
  ecfg.max_positions = 4;
  ecfg.vocab_size = 11;

  SamplerConfig scfg;
  scfg.min_span_len = scfg.max_span_len = 3;  // 3-token spans
  scfg.anchors_per_doc = 1;
  scfg.positives_per_anchor = 1;
  scfg.separation_multiplier = 1.0;

  std::vector<std::string> words;
  for (int i = 0; i < ecfg.vocab_size - Vocab::kNumSpecial; ++i) words.push_back("w" + std::to_string(i));
  const Vocab vocab = Vocab::from_tokens(words);

  Document d1{"g1", {3, 4, 5, 6, 7, 8, 9, 10}};
  Document d2{"g2", {10, 9, 8, 7, 6, 5, 4, 3}};
  std::vector<const Document*> docs = {&d1, &d2};  // A=N... A=1, N=2 -> 2AN=4
  const ContrastiveBatch batch = assemble_batch(202, 0, docs, scfg, vocab);

  EncoderParams params = init_params(ecfg, 303);
  params.zero_grads();
  batch_loss_and_grads(params, batch, 5e-2, ObjectiveMode::contrastive_mlm);

  // Central differences at h=1e-5 on a loss of size ~40 carry an absolute
  // roundoff floor of eps * L / h ~ 4e-10; entries within 1e-8 of the
  // numeric value are matched to the limit of 64-bit differencing, and the
  // relative bound applies to everything larger.
  const double h = 1e-5;
  const double abs_floor = 1e-8;
  double worst = 0.0;
  std::string worst_name;
  for (Param* t : params.all()) {
    for (Eigen::Index r = 0; r < t->w.rows(); ++r) {
      for (Eigen::Index c = 0; c < t->w.cols(); ++c) {
        const double saved = t->w(r, c);
        t->w(r, c) = saved + h;
        const double up = batch_loss(params, batch, 5e-2, ObjectiveMode::contrastive_mlm).combined;
        t->w(r, c) = saved - h;
        const double down = batch_loss(params, batch, 5e-2, ObjectiveMode::contrastive_mlm).combined;
        t->w(r, c) = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = t->g(r, c);
        if (std::abs(analytic - numeric) <= abs_floor) continue;
        const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
        if (rel > worst) {
          worst = rel;
          worst_name = t->name;
        }
      }
    }
  }
  expect(failures, worst < 1e-4,
         "max relative gradient error " + std::to_string(worst) + " (tensor " + worst_name + ") >= 1e-4");
  return failures;
}

// ---------------------------------------------------------------- criterion 4

std::vector<std::string> sampler_distribution() {
  std::vector<std::string> failures;
  const int draws = 100000;

  // Beta variates against their closed-form means, 3 standard errors.
  auto beta_mean_check = [&](double alpha, double beta, const char* label) {
    Rng rng(404);
    double sum = 0;
    for (int i = 0; i < draws; ++i) sum += rng.beta(alpha, beta);
    const double mean = sum / draws;
    const double expected = alpha / (alpha + beta);
    const double var = alpha * beta / ((alpha + beta) * (alpha + beta) * (alpha + beta + 1.0));
    const double se = std::sqrt(var / draws);
    expect(failures, std::abs(mean - expected) < 3.0 * se,
           std::string(label) + " empirical mean " + std::to_string(mean) + " outside 3 SE of " +
               std::to_string(expected));
  };
  beta_mean_check(4.0, 2.0, "Beta(4,2)");
  beta_mean_check(2.0, 4.0, "Beta(2,4)");

  // Spans at the published defaults: bounds, positive relation, separation, views.
  SamplerConfig cfg;  // published defaults
  Document doc;
  doc.id = "acceptance";
  doc.tokens.assign(2048, Vocab::kNumSpecial);
  Rng rng(505);
  std::set<PositiveView> seen;
  int pair_draws = 0;
  bool bounds_ok = true, relation_ok = true, separation_ok = true;
  while (pair_draws < 10000) {
    const auto anchors = sample_anchors(rng, doc, cfg);
    if (std::abs(anchors[0].start - anchors[1].start) < 1024) separation_ok = false;
    for (const auto& anchor : anchors) {
      if (anchor.start < 0 || anchor.end > doc.n() || anchor.len() < 32 || anchor.len() > 512)
        bounds_ok = false;
      for (const auto& p : sample_positives(rng, doc, anchor, cfg)) {
        if (p.start < 0 || p.end > doc.n() || p.len() < 32 || p.len() > 512) bounds_ok = false;
        if (p.end < anchor.start || p.start > anchor.end) relation_ok = false;
        seen.insert(classify_view(anchor, p));
        ++pair_draws;
      }
    }
  }
  expect(failures, bounds_ok, "a sampled span left its length or document bounds");
  expect(failures, relation_ok, "a positive neither overlaps, touches nor sits inside its anchor");
  expect(failures, separation_ok, "anchor starts closer than 2 * l_max = 1024 tokens");
  expect(failures, seen.size() == 3, "not all of overlapping/adjacent/subsumed were observed");
  return failures;
}

// ---------------------------------------------------------------- criterion 5

std::vector<std::string> mlm_masking_statistics() {
  std::vector<std::string> failures;
  std::vector<std::string> words;
  for (int i = 0; i < 60; ++i) words.push_back("w" + std::to_string(i));
  const Vocab vocab = Vocab::from_tokens(words);

  Rng rng(606);
  const int span_len = 250, spans = 4000;  // 1e6 tokens total
  int64_t total = 0, selected = 0, masked = 0, randomized = 0, unchanged = 0;
  for (int s = 0; s < spans; ++s) {
    std::vector<int> span(span_len);
    for (int i = 0; i < span_len; ++i)
      span[i] = Vocab::kNumSpecial + static_cast<int>(rng.uniform_below(50));
    const MlmInstance inst = apply_mlm_masking(rng, span, vocab, 0.15);
    total += span_len;
    selected += static_cast<int64_t>(inst.positions.size());
    for (size_t k = 0; k < inst.positions.size(); ++k) {
      const int out = inst.input_ids[static_cast<size_t>(inst.positions[k])];
      if (out == Vocab::kMask)
        ++masked;
      else if (out == inst.labels[k])
        ++unchanged;
      else
        ++randomized;
    }
  }
  const double frac = static_cast<double>(selected) / static_cast<double>(total);
  expect(failures, std::abs(frac - 0.15) <= 0.003,
         "selected fraction " + std::to_string(frac) + " outside 0.15 +- 0.003");
  const double sel = static_cast<double>(selected);
  expect(failures, std::abs(masked / sel - 0.80) <= 0.01,
         "MASK bucket " + std::to_string(masked / sel) + " outside 0.80 +- 0.01");
  expect(failures, std::abs(randomized / sel - 0.10) <= 0.01,
         "random bucket " + std::to_string(randomized / sel) + " outside 0.10 +- 0.01");
  expect(failures, std::abs(unchanged / sel - 0.10) <= 0.01,
         "unchanged bucket " + std::to_string(unchanged / sel) + " outside 0.10 +- 0.01");
  return failures;
}

// ---------------------------------------------------------------- criterion 6

struct DeskRun {
  RunConfig cfg;
  Vocab vocab;
  DocumentStore store;
  std::string corpus_dir;
};

DeskRun desk_setup() {
  DeskRun r{profile_config("desk-scale"), Vocab::from_tokens({}), {}, ts::fresh_dir("acceptance_desk")};
  SyntheticSpec spec;  // the gen-synthetic corpus of the criterion
  spec.topics = 8;
  spec.docs = 256;
  spec.doc_len = 512;
  spec.seed = 4242;
  write_synthetic_corpus(spec, r.corpus_dir + "/corpus.jsonl");
  r.vocab = build_vocab(r.corpus_dir + "/corpus.jsonl", 1, 50000);
  r.store = ingest_documents(r.corpus_dir + "/corpus.jsonl", r.vocab,
                             r.cfg.sampler.min_eligible_tokens())
                .store;
  r.cfg.train.seed = 7;
  r.cfg.train.deterministic = true;
  r.cfg.train.total_steps_override = 300;
  return r;
}

double heldout_precision(const DeskRun& run, const std::string& checkpoint_path) {
  SyntheticSpec held;  // unseen documents from the same pools
  held.topics = 8;
  held.docs = 256;
  held.doc_len = 64;  // one desk-scale span each
  held.seed = 9999;
  std::vector<std::string> texts;
  std::vector<int> labels;
  for (const auto& d : gen_synthetic_docs(held)) {
    texts.push_back(d.text);
    labels.push_back(d.topic);
  }
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path, run.vocab.fingerprint());
  const EmbedResult emb = embed_texts(ckpt.params, run.vocab, texts, 32);
  return knn_precision_at1(emb.rows, labels);
}

std::vector<std::string> desk_scale_learning() {
  std::vector<std::string> failures;
  DeskRun run = desk_setup();

  const std::string both_dir = run.corpus_dir + "/run_both";
  const TrainResult both = train(run.store, run.vocab, run.cfg.sampler, run.cfg.encoder, run.cfg.train,
                                 both_dir);

  // (a) contrastive loss trend over the 300 steps.
  double first50 = 0, last50 = 0;
  for (int i = 0; i < 50; ++i) {
    first50 += both.metrics[static_cast<size_t>(i)].l_contrastive;
    last50 += both.metrics[both.metrics.size() - 50 + static_cast<size_t>(i)].l_contrastive;
  }
  expect(failures, last50 / 50.0 < first50 / 50.0,
         "mean contrastive loss did not drop: first50=" + std::to_string(first50 / 50.0) +
             " last50=" + std::to_string(last50 / 50.0));

  // (b) retrieval on 256 held-out spans beats 0.5 (chance is 1/8).
  const double p_both = heldout_precision(run, both.checkpoint_path);
  expect(failures, p_both > 0.5, "precision@1 " + std::to_string(p_both) + " <= 0.5");

  // (c) the combined objective is at least as good as MLM alone.
  RunConfig mlm_cfg = run.cfg;
  mlm_cfg.train.objective = ObjectiveMode::mlm_only;
  const TrainResult mlm_run = train(run.store, run.vocab, mlm_cfg.sampler, mlm_cfg.encoder,
                                    mlm_cfg.train, run.corpus_dir + "/run_mlm");
  const double p_mlm = heldout_precision(run, mlm_run.checkpoint_path);
  expect(failures, p_both >= p_mlm,
         "contrastive+mlm retrieval " + std::to_string(p_both) + " < mlm-only " + std::to_string(p_mlm));

  std::printf("    [info] contrastive+mlm p@1 = %.4f, mlm-only p@1 = %.4f, Lc %.3f -> %.3f\n", p_both,
              p_mlm, first50 / 50.0, last50 / 50.0);
  return failures;
}

// ---------------------------------------------------------------- criterion 7

std::vector<std::string> determinism_and_invariance() {
  std::vector<std::string> failures;

  // Byte-identical metrics logs across fixed-seed reruns.
  const std::string dir = ts::fresh_dir("acceptance_det");
  SyntheticSpec spec;
  spec.topics = 4;
  spec.docs = 32;
  spec.doc_len = 300;
  spec.seed = 31;
  write_synthetic_corpus(spec, dir + "/corpus.jsonl");
  RunConfig cfg = profile_config("desk-scale");
  cfg.sampler.max_span_len = 32;
  cfg.encoder.max_positions = 32;
  cfg.encoder.d_model = 16;
  cfg.encoder.heads = 2;
  cfg.encoder.d_ff = 32;
  cfg.train.total_steps_override = 4;
  cfg.train.deterministic = true;
  cfg.train.seed = 13;
  const Vocab vocab = build_vocab(dir + "/corpus.jsonl", 1, 50000);
  const DocumentStore store =
      ingest_documents(dir + "/corpus.jsonl", vocab, cfg.sampler.min_eligible_tokens()).store;
  const TrainResult r1 = train(store, vocab, cfg.sampler, cfg.encoder, cfg.train, dir + "/r1");
  const TrainResult r2 = train(store, vocab, cfg.sampler, cfg.encoder, cfg.train, dir + "/r2");
  expect(failures, ts::read_file(r1.metrics_path) == ts::read_file(r2.metrics_path),
         "fixed-seed reruns produced different metrics logs");

  // embed_texts batch-size and padding invariance at 1e-10.
  const LoadedCheckpoint ckpt = load_checkpoint(r1.checkpoint_path, vocab.fingerprint());
  std::vector<std::string> texts;
  for (const auto& d : gen_synthetic_docs(SyntheticSpec{4, 24, 20, 50, 77})) texts.push_back(d.text);
  const EmbedResult b1 = embed_texts(ckpt.params, vocab, texts, 1);
  const EmbedResult b7 = embed_texts(ckpt.params, vocab, texts, 7);
  const EmbedResult b64 = embed_texts(ckpt.params, vocab, texts, 64);
  expect(failures,
         (b1.rows - b7.rows).cwiseAbs().maxCoeff() < 1e-10 &&
             (b1.rows - b64.rows).cwiseAbs().maxCoeff() < 1e-10,
         "embeddings depend on batch size beyond 1e-10");

  // Padding invariance: a short text next to a long companion (heavy padding)
  // embeds like the same text alone.
  const std::vector<std::string> solo = {texts[0]};
  std::vector<std::string> padded_pair = {texts[0], texts[0] + " " + texts[1] + " " + texts[2]};
  const EmbedResult es = embed_texts(ckpt.params, vocab, solo, 8);
  const EmbedResult ep = embed_texts(ckpt.params, vocab, padded_pair, 8);
  expect(failures, (es.rows.row(0) - ep.rows.row(0)).cwiseAbs().maxCoeff() < 1e-10,
         "trailing padding changed a pooled embedding beyond 1e-10");

  // Checkpoint round trip is bit exact.
  const std::string copy = dir + "/copy.ckpt";
  LoadedCheckpoint reloaded = load_checkpoint(r1.checkpoint_path);
  save_checkpoint(reloaded.params, reloaded.vocab_fingerprint, copy);
  expect(failures, ts::read_file(r1.checkpoint_path) == ts::read_file(copy),
         "checkpoint save -> load -> save changed bytes");

  // The metrics log decomposes exactly on every step.
  for (const auto& m : r1.metrics)
    expect(failures, m.l == m.l_contrastive + m.l_mlm, "logged L != L_contrastive + L_MLM");
  return failures;
}

// ---------------------------------------------------------------- criterion 8

std::vector<std::string> schedule_and_optimizer() {
  std::vector<std::string> failures;

  // STLR peaks exactly at floor(T * cut_frac) with endpoints lr_max / 32.
  for (int64_t total : {300, 1000, 37}) {
    const int64_t cut = std::max<int64_t>(1, static_cast<int64_t>(std::floor(0.1 * static_cast<double>(total))));
    double best = -1;
    int64_t best_t = -1;
    for (int64_t t = 0; t <= total; ++t) {
      const double lr = stlr_learning_rate(t, total, 0.1, 5e-5, 32.0);
      if (lr > best) {
        best = lr;
        best_t = t;
      }
    }
    expect(failures, best_t == cut && best == 5e-5,
           "STLR peak at t=" + std::to_string(best_t) + " (expected " + std::to_string(cut) + ") for T=" +
               std::to_string(total));
    expect(failures,
           stlr_learning_rate(0, total, 0.1, 5e-5, 32.0) == 5e-5 / 32.0 &&
               stlr_learning_rate(total, total, 0.1, 5e-5, 32.0) == 5e-5 / 32.0,
           "STLR endpoints differ from lr_max/32 for T=" + std::to_string(total));
  }

  // Post-rescale norm stays <= 1 + 1e-12 on every logged step of a real run.
  const std::string dir = ts::fresh_dir("acceptance_opt");
  SyntheticSpec spec;
  spec.topics = 4;
  spec.docs = 32;
  spec.doc_len = 300;
  spec.seed = 57;
  write_synthetic_corpus(spec, dir + "/corpus.jsonl");
  RunConfig cfg = profile_config("desk-scale");
  cfg.sampler.max_span_len = 32;
  cfg.encoder.max_positions = 32;
  cfg.encoder.d_model = 16;
  cfg.encoder.heads = 2;
  cfg.encoder.d_ff = 32;
  cfg.train.total_steps_override = 6;
  cfg.train.deterministic = true;
  const Vocab vocab = build_vocab(dir + "/corpus.jsonl", 1, 50000);
  const DocumentStore store =
      ingest_documents(dir + "/corpus.jsonl", vocab, cfg.sampler.min_eligible_tokens()).store;
  const TrainResult r = train(store, vocab, cfg.sampler, cfg.encoder, cfg.train, dir + "/run");
  for (const auto& m : r.metrics)
    expect(failures, m.grad_norm <= 1.0 + 1e-12,
           "post-rescale gradient norm " + std::to_string(m.grad_norm) + " exceeds 1 + 1e-12");

  // Hand-computed single AdamW step to 1e-12.
  Param theta("theta", 1, 1, true);
  theta.w(0, 0) = 1.0;
  theta.g(0, 0) = 1.0;
  std::vector<Param*> params = {&theta};
  AdamState state = AdamState::for_params(params);
  adamw_step(params, state, 0.1, 0.0, 0.9, 0.999, 1e-8);
  const double expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
  expect(failures, std::abs(theta.w(0, 0) - expected) <= 1e-12,
         "AdamW hand-computed step off by " + std::to_string(std::abs(theta.w(0, 0) - expected)));
  return failures;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"aggregation-fidelity", aggregation_fidelity},
      {"loss-oracle", loss_oracle},
      {"gradient-check", gradient_check},
      {"sampler-distribution", sampler_distribution},
      {"mlm-masking-statistics", mlm_masking_statistics},
      {"desk-scale-learning-signal", desk_scale_learning},
      {"determinism-and-invariance", determinism_and_invariance},
      {"schedule-and-optimizer", schedule_and_optimizer},
  };

  int failing = 0;
  for (const auto& criterion : criteria) {
    std::vector<std::string> failures;
    try {
      failures = criterion.run();
    } catch (const std::exception& e) {
      failures.push_back(std::string("exception: ") + e.what());
    }
    if (failures.empty()) {
      std::printf("[PASS] %s\n", criterion.name.c_str());
    } else {
      ++failing;
      std::printf("[FAIL] %s\n", criterion.name.c_str());
      for (const auto& f : failures) std::printf("       - %s\n", f.c_str());
    }
    std::fflush(stdout);
  }
  if (failing) std::printf("%d of %zu criteria failing\n", failing, criteria.size());
  return failing == 0 ? 0 : 1;
}
