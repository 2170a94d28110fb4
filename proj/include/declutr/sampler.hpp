#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "declutr/corpus.hpp"
#include "declutr/prng.hpp"

namespace declutr {

struct SamplerConfig {
  int min_span_len = 32;          // l_min
  int max_span_len = 512;         // l_max
  int anchors_per_doc = 2;        // A
  int positives_per_anchor = 2;   // P
  double anchor_alpha = 4.0;
  double anchor_beta = 2.0;
  double positive_alpha = 2.0;
  double positive_beta = 4.0;
  double mask_rate = 0.15;
  double separation_multiplier = 2.0;  // anchors >= separation * l_max apart

  void validate() const;

  /// Smallest document length a batch can sample from. Equals
  /// A * separation * l_max at defaults (2048 at the published defaults), with a
  /// floor of l_max so every span length always fits.
  int min_eligible_tokens() const;
};

enum class SpanRole { anchor, positive };

struct SpanSpec {
  std::string doc_id;
  int start = 0;  // inclusive
  int end = 0;    // exclusive
  SpanRole role = SpanRole::anchor;
  int anchor_index = 0;    // i in [1, AN]
  int positive_index = 0;  // p in [1, P]; 0 for anchors

  int len() const { return end - start; }
};

enum class PositiveView { overlapping, adjacent, subsumed };

/// Classifies a positive relative to its anchor (the three sampled views).
PositiveView classify_view(const SpanSpec& anchor, const SpanSpec& positive);

const char* view_name(PositiveView v);

struct MlmInstance {
  std::vector<int> input_ids;  // anchor copy after masking
  std::vector<int> positions;  // masked positions, ascending
  std::vector<int> labels;     // original ids at those positions
};

struct PaddedBatch {
  Eigen::MatrixXi ids;    // rows x width, PAD-filled
  Eigen::MatrixXd mask;   // 1.0 = real token, 0.0 = padding
  std::vector<int> lengths;
};

PaddedBatch pad_sequences(std::span<const std::vector<int>> seqs, int pad_id, int width = -1);

/// One training minibatch: AN anchors at global index i = docIndex*A + slot + 1,
/// P positives per anchor at slot i + p*AN, plus MLM-masked anchor copies.
struct ContrastiveBatch {
  int num_docs = 0;             // N
  int anchors_per_doc = 0;      // A
  int positives_per_anchor = 0; // P

  std::vector<std::vector<int>> anchor_tokens;    // [i-1], i in [1, AN]
  std::vector<std::vector<int>> positive_tokens;  // [(p-1)*AN + (i-1)]
  std::vector<MlmInstance> mlm;                   // per anchor
  std::vector<SpanSpec> spans;                    // anchors first, then positives in slot order

  PaddedBatch padded_spans;           // anchors then positives, one shared width
  PaddedBatch padded_masked_anchors;  // same width

  int an() const { return num_docs * anchors_per_doc; }
  int pan() const { return an() * positives_per_anchor; }

  /// Positive p of anchor i, both 1-based (slot i + p*AN).
  const std::vector<int>& positive(int i, int p) const {
    return positive_tokens.at(static_cast<size_t>((p - 1) * an() + (i - 1)));
  }
};

/// Maps a Beta draw p to a span length: floor(p * (l_max - l_min) + l_min).
int span_length_from_fraction(double p, int l_min, int l_max);

/// Draws p ~ Beta(alpha, beta) and applies span_length_from_fraction.
int sample_span_length(Rng& rng, double alpha, double beta, int l_min, int l_max);

/// A anchors with beta-distributed lengths and uniform starts, pairwise
/// separated by >= separation * l_max (rejection with a budget of 64 tries,
/// then evenly spaced deterministic starts). Throws DocumentRejectedError
/// for documents below min_eligible_tokens().
std::vector<SpanSpec> sample_anchors(Rng& rng, const Document& doc, const SamplerConfig& cfg);

/// P positives per anchor; start uniform over the anchor neighbourhood
/// {anchor.start - l_positive, ..., anchor.end} clamped to document bounds.
/// Every result overlaps, is adjacent to, or is subsumed by the anchor.
std::vector<SpanSpec> sample_positives(Rng& rng, const Document& doc, const SpanSpec& anchor,
                                       const SamplerConfig& cfg);

/// BERT-style masking: each position selected with probability mask_rate,
/// then 80% MASK / 10% random non-special id / 10% unchanged. If nothing got
/// selected, one uniformly chosen position is forced so the loss is defined.
MlmInstance apply_mlm_masking(Rng& rng, std::span<const int> anchor_tokens, const Vocab& vocab,
                              double mask_rate);

/// Assembles a full minibatch from N eligible documents. Per-document
/// randomness comes from Rng::for_document(seed, doc.id, epoch), so the
/// result is independent of assembly order.
ContrastiveBatch assemble_batch(uint64_t seed, uint64_t epoch,
                                std::span<const Document* const> docs,
                                const SamplerConfig& cfg, const Vocab& vocab);

}  // namespace declutr
