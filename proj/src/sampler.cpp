#include "declutr/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "declutr/error.hpp"

namespace declutr {

void SamplerConfig::validate() const {
  if (min_span_len < 1 || min_span_len > max_span_len)
    throw std::invalid_argument("sampler: need 1 <= min_span_len <= max_span_len");
  if (anchors_per_doc < 1) throw std::invalid_argument("sampler: anchors_per_doc must be >= 1");
  if (positives_per_anchor < 1) throw std::invalid_argument("sampler: positives_per_anchor must be >= 1");
  if (!(anchor_alpha > 0) || !(anchor_beta > 0) || !(positive_alpha > 0) || !(positive_beta > 0))
    throw std::invalid_argument("sampler: beta shape parameters must be > 0");
  if (mask_rate < 0.0 || mask_rate > 1.0) throw std::invalid_argument("sampler: mask_rate must be in [0, 1]");
  if (separation_multiplier < 0.0) throw std::invalid_argument("sampler: separation_multiplier must be >= 0");
}

int SamplerConfig::min_eligible_tokens() const {
  const double sep = static_cast<double>(anchors_per_doc) * separation_multiplier * max_span_len;
  return std::max(max_span_len, static_cast<int>(std::ceil(sep)));
}

PositiveView classify_view(const SpanSpec& anchor, const SpanSpec& positive) {
  if (positive.start >= anchor.start && positive.end <= anchor.end) return PositiveView::subsumed;
  const int overlap = std::min(anchor.end, positive.end) - std::max(anchor.start, positive.start);
  return overlap <= 0 ? PositiveView::adjacent : PositiveView::overlapping;
}

const char* view_name(PositiveView v) {
  switch (v) {
    case PositiveView::overlapping: return "overlapping";
    case PositiveView::adjacent: return "adjacent";
    case PositiveView::subsumed: return "subsumed";
  }
  return "?";
}

int span_length_from_fraction(double p, int l_min, int l_max) {
  const double raw = p * (l_max - l_min) + l_min;
  const int len = static_cast<int>(std::floor(raw));
  return std::clamp(len, l_min, l_max);
}

int sample_span_length(Rng& rng, double alpha, double beta, int l_min, int l_max) {
  return span_length_from_fraction(rng.beta(alpha, beta), l_min, l_max);
}

namespace {

constexpr int kAnchorRetryBudget = 64;

SpanSpec make_anchor(const Document& doc, int start, int len, int slot) {
  SpanSpec s;
  s.doc_id = doc.id;
  s.start = start;
  s.end = start + len;
  s.role = SpanRole::anchor;
  s.anchor_index = slot + 1;
  return s;
}

bool starts_separated(std::span<const int> starts, int min_gap) {
  for (size_t a = 0; a < starts.size(); ++a)
    for (size_t b = a + 1; b < starts.size(); ++b)
      if (std::abs(starts[a] - starts[b]) < min_gap) return false;
  return true;
}

}  // namespace

std::vector<SpanSpec> sample_anchors(Rng& rng, const Document& doc, const SamplerConfig& cfg) {
  cfg.validate();
  const int required = cfg.min_eligible_tokens();
  const int n = doc.n();
  if (n < required) throw DocumentRejectedError(doc.id, n, required);

  const int a = cfg.anchors_per_doc;
  const int min_gap = static_cast<int>(std::ceil(cfg.separation_multiplier * cfg.max_span_len));

  std::vector<int> lengths(static_cast<size_t>(a));
  std::vector<int> starts(static_cast<size_t>(a));
  for (int attempt = 0; attempt < kAnchorRetryBudget; ++attempt) {
    for (int k = 0; k < a; ++k) {
      lengths[k] = sample_span_length(rng, cfg.anchor_alpha, cfg.anchor_beta, cfg.min_span_len, cfg.max_span_len);
      starts[k] = static_cast<int>(rng.uniform_int(0, n - lengths[k]));
    }
    if (a == 1 || starts_separated(starts, min_gap)) {
      std::vector<SpanSpec> out;
      out.reserve(static_cast<size_t>(a));
      for (int k = 0; k < a; ++k) out.push_back(make_anchor(doc, starts[k], lengths[k], k));
      return out;
    }
  }

  // Fallback: evenly spaced starts k * floor(n/A). Eligibility guarantees
  // floor(n/A) >= separation * l_max, so these remain valid and separated.
  const int stride = n / a;
  std::vector<SpanSpec> out;
  out.reserve(static_cast<size_t>(a));
  for (int k = 0; k < a; ++k) {
    const int start = std::min(k * stride, n - lengths[k]);
    out.push_back(make_anchor(doc, start, lengths[k], k));
  }
  return out;
}

std::vector<SpanSpec> sample_positives(Rng& rng, const Document& doc, const SpanSpec& anchor,
                                       const SamplerConfig& cfg) {
  const int n = doc.n();
  if (anchor.start < 0 || anchor.end > n || anchor.start >= anchor.end)
    throw std::invalid_argument("sample_positives: anchor out of document bounds");

  std::vector<SpanSpec> out;
  out.reserve(static_cast<size_t>(cfg.positives_per_anchor));
  for (int p = 1; p <= cfg.positives_per_anchor; ++p) {
    const int len = sample_span_length(rng, cfg.positive_alpha, cfg.positive_beta, cfg.min_span_len, cfg.max_span_len);
    const int lo = std::max(0, anchor.start - len);
    const int hi = std::min(anchor.end, n - len);
    // Nonempty under eligibility: lo <= anchor.start <= n - len and lo <= anchor.end.
    if (lo > hi) throw std::logic_error("sample_positives: empty start range (document below eligibility?)");
    const int start = static_cast<int>(rng.uniform_int(lo, hi));

    SpanSpec s;
    s.doc_id = doc.id;
    s.start = start;
    s.end = start + len;
    s.role = SpanRole::positive;
    s.anchor_index = anchor.anchor_index;
    s.positive_index = p;
    out.push_back(std::move(s));
  }
  return out;
}

MlmInstance apply_mlm_masking(Rng& rng, std::span<const int> anchor_tokens, const Vocab& vocab,
                              double mask_rate) {
  if (anchor_tokens.empty()) throw std::invalid_argument("apply_mlm_masking: empty span");
  const int v = vocab.size();
  if (v <= Vocab::kNumSpecial) throw std::invalid_argument("apply_mlm_masking: vocab has no regular tokens");

  MlmInstance inst;
  inst.input_ids.assign(anchor_tokens.begin(), anchor_tokens.end());
  for (size_t pos = 0; pos < anchor_tokens.size(); ++pos) {
    if (rng.bernoulli(mask_rate)) inst.positions.push_back(static_cast<int>(pos));
  }
  if (inst.positions.empty()) {
    inst.positions.push_back(static_cast<int>(rng.uniform_below(anchor_tokens.size())));
  }
  inst.labels.reserve(inst.positions.size());
  for (int pos : inst.positions) {
    inst.labels.push_back(anchor_tokens[static_cast<size_t>(pos)]);
    const double bucket = rng.uniform();
    if (bucket < 0.8) {
      inst.input_ids[static_cast<size_t>(pos)] = Vocab::kMask;
    } else if (bucket < 0.9) {
      inst.input_ids[static_cast<size_t>(pos)] =
          static_cast<int>(rng.uniform_int(Vocab::kNumSpecial, v - 1));
    }  // else: keep the original token
  }
  return inst;
}

PaddedBatch pad_sequences(std::span<const std::vector<int>> seqs, int pad_id, int width) {
  int w = width;
  if (w < 0) {
    w = 1;
    for (const auto& s : seqs) w = std::max(w, static_cast<int>(s.size()));
  }
  PaddedBatch out;
  out.ids = Eigen::MatrixXi::Constant(static_cast<Eigen::Index>(seqs.size()), w, pad_id);
  out.mask = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(seqs.size()), w);
  out.lengths.reserve(seqs.size());
  for (size_t r = 0; r < seqs.size(); ++r) {
    const auto& s = seqs[r];
    if (static_cast<int>(s.size()) > w)
      throw std::invalid_argument("pad_sequences: sequence longer than requested width");
    for (size_t c = 0; c < s.size(); ++c) {
      out.ids(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = s[c];
      out.mask(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = 1.0;
    }
    out.lengths.push_back(static_cast<int>(s.size()));
  }
  return out;
}

ContrastiveBatch assemble_batch(uint64_t seed, uint64_t epoch,
                                std::span<const Document* const> docs,
                                const SamplerConfig& cfg, const Vocab& vocab) {
  cfg.validate();
  if (docs.empty()) throw std::invalid_argument("assemble_batch: no documents");

  ContrastiveBatch batch;
  batch.num_docs = static_cast<int>(docs.size());
  batch.anchors_per_doc = cfg.anchors_per_doc;
  batch.positives_per_anchor = cfg.positives_per_anchor;

  const int an = batch.an();
  batch.anchor_tokens.resize(static_cast<size_t>(an));
  batch.positive_tokens.resize(static_cast<size_t>(batch.pan()));
  batch.mlm.resize(static_cast<size_t>(an));

  std::vector<SpanSpec> positive_spans(static_cast<size_t>(batch.pan()));
  for (int d = 0; d < batch.num_docs; ++d) {
    const Document& doc = *docs[static_cast<size_t>(d)];
    Rng rng = Rng::for_document(seed, doc.id, epoch);
    auto anchors = sample_anchors(rng, doc, cfg);
    for (int slot = 0; slot < cfg.anchors_per_doc; ++slot) {
      SpanSpec& anchor = anchors[static_cast<size_t>(slot)];
      const int i = d * cfg.anchors_per_doc + slot + 1;  // global anchor index
      anchor.anchor_index = i;

      auto tokens = std::vector<int>(doc.tokens.begin() + anchor.start, doc.tokens.begin() + anchor.end);
      batch.mlm[static_cast<size_t>(i - 1)] = apply_mlm_masking(rng, tokens, vocab, cfg.mask_rate);
      batch.anchor_tokens[static_cast<size_t>(i - 1)] = std::move(tokens);

      auto positives = sample_positives(rng, doc, anchor, cfg);
      for (int p = 1; p <= cfg.positives_per_anchor; ++p) {
        const SpanSpec& ps = positives[static_cast<size_t>(p - 1)];
        const size_t idx = static_cast<size_t>((p - 1) * an + (i - 1));
        batch.positive_tokens[idx] =
            std::vector<int>(doc.tokens.begin() + ps.start, doc.tokens.begin() + ps.end);
        positive_spans[idx] = ps;
      }
      batch.spans.push_back(std::move(anchor));
    }
  }
  for (auto& ps : positive_spans) batch.spans.push_back(std::move(ps));

  std::vector<std::vector<int>> all_spans = batch.anchor_tokens;
  all_spans.insert(all_spans.end(), batch.positive_tokens.begin(), batch.positive_tokens.end());
  batch.padded_spans = pad_sequences(all_spans, Vocab::kPad);
  const int width = static_cast<int>(batch.padded_spans.ids.cols());

  std::vector<std::vector<int>> masked;
  masked.reserve(static_cast<size_t>(an));
  for (const auto& m : batch.mlm) masked.push_back(m.input_ids);
  batch.padded_masked_anchors = pad_sequences(masked, Vocab::kPad, width);
  return batch;
}

}  // namespace declutr
