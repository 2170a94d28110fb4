#include "declutr/encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "declutr/error.hpp"

namespace declutr {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

// y = scale . xhat + bias per position (row). Returns y, fills xhat/inv_std.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Param& scale, const Param& bias,
                           Eigen::MatrixXd& xhat, Eigen::VectorXd& inv_std) {
  const Eigen::Index w = x.rows();
  const Eigen::Index d = x.cols();
  xhat.resize(w, d);
  inv_std.resize(w);
  Eigen::MatrixXd y(w, d);
  for (Eigen::Index r = 0; r < w; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    inv_std(r) = inv;
    xhat.row(r) = (x.row(r).array() - mean) * inv;
    y.row(r) = xhat.row(r).cwiseProduct(scale.w.row(0)) + bias.w.row(0);
  }
  return y;
}

// dx for y = scale . xhat + bias; accumulates scale/bias grads.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& xhat,
                                    const Eigen::VectorXd& inv_std, Param& scale, Param& bias) {
  const Eigen::Index w = dy.rows();
  const Eigen::Index d = dy.cols();
  Eigen::MatrixXd dx(w, d);
  for (Eigen::Index r = 0; r < w; ++r) {
    scale.g.row(0) += dy.row(r).cwiseProduct(xhat.row(r));
    bias.g.row(0) += dy.row(r);
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(scale.w.row(0));
    const double mean_dxhat = dxhat.mean();
    const double mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(r)).mean();
    dx.row(r) = (dxhat.array() - mean_dxhat - xhat.row(r).array() * mean_dxhat_xhat) * inv_std(r);
  }
  return dx;
}

Eigen::MatrixXd linear(const Eigen::MatrixXd& x, const Param& w, const Param& b) {
  return (x * w.w).rowwise() + b.w.row(0);
}

// dx for y = x w + b; accumulates w/b grads.
Eigen::MatrixXd linear_backward(const Eigen::MatrixXd& dy, const Eigen::MatrixXd& x, Param& w, Param& b) {
  w.g += x.transpose() * dy;
  b.g.row(0) += dy.colwise().sum();
  return dy * w.w.transpose();
}

// Row softmax of q k^T / sqrt(dh). Rows hold only real (unpadded) positions;
// padding is excluded upstream by slicing, which keeps every row's arithmetic
// independent of batch layout.
Eigen::MatrixXd attention_probs(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Eigen::MatrixXd scores = q * k.transpose() * scale;
  Eigen::MatrixXd probs(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double max_z = scores.row(r).maxCoeff();
    probs.row(r) = (scores.row(r).array() - max_z).exp();
    probs.row(r) /= probs.row(r).sum();
  }
  return probs;
}

// Unpadded prefix length; the mask must be contiguous ones then zeros.
Eigen::Index real_length(const Eigen::VectorXd& mask_row) {
  Eigen::Index len = 0;
  while (len < mask_row.size() && mask_row(len) == 1.0) ++len;
  for (Eigen::Index c = len; c < mask_row.size(); ++c)
    if (mask_row(c) != 0.0)
      throw std::invalid_argument("pad mask must be a contiguous prefix of ones");
  return len;
}

}  // namespace

void EncoderConfig::validate() const {
  if (d_model < 1 || layers < 1 || heads < 1 || d_ff < 1) throw std::invalid_argument("encoder config: dimensions must be positive");
  if (d_model % heads != 0) throw std::invalid_argument("encoder config: d_model must be divisible by heads");
  if (max_positions < 1) throw std::invalid_argument("encoder config: max_positions must be positive");
  if (vocab_size < 4) throw std::invalid_argument("encoder config: vocab_size must be >= 4");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder config: dropout must be in [0, 1)");
}

EncoderParams EncoderParams::build(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  p.tok_emb = Param("tok_emb", cfg.vocab_size, cfg.d_model, true);
  p.pos_emb = Param("pos_emb", cfg.max_positions, cfg.d_model, true);
  p.layers.reserve(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    LayerParams lp;
    lp.ln1_scale = Param(pre + "ln1_scale", 1, cfg.d_model, false);
    lp.ln1_bias = Param(pre + "ln1_bias", 1, cfg.d_model, false);
    lp.wq = Param(pre + "wq", cfg.d_model, cfg.d_model, true);
    lp.bq = Param(pre + "bq", 1, cfg.d_model, false);
    lp.wk = Param(pre + "wk", cfg.d_model, cfg.d_model, true);
    lp.bk = Param(pre + "bk", 1, cfg.d_model, false);
    lp.wv = Param(pre + "wv", cfg.d_model, cfg.d_model, true);
    lp.bv = Param(pre + "bv", 1, cfg.d_model, false);
    lp.wo = Param(pre + "wo", cfg.d_model, cfg.d_model, true);
    lp.bo = Param(pre + "bo", 1, cfg.d_model, false);
    lp.ln2_scale = Param(pre + "ln2_scale", 1, cfg.d_model, false);
    lp.ln2_bias = Param(pre + "ln2_bias", 1, cfg.d_model, false);
    lp.ff_w1 = Param(pre + "ff_w1", cfg.d_model, cfg.d_ff, true);
    lp.ff_b1 = Param(pre + "ff_b1", 1, cfg.d_ff, false);
    lp.ff_w2 = Param(pre + "ff_w2", cfg.d_ff, cfg.d_model, true);
    lp.ff_b2 = Param(pre + "ff_b2", 1, cfg.d_model, false);
    p.layers.push_back(std::move(lp));
  }
  p.ln_f_scale = Param("ln_f_scale", 1, cfg.d_model, false);
  p.ln_f_bias = Param("ln_f_bias", 1, cfg.d_model, false);
  p.mlm_bias = Param("mlm_bias", 1, cfg.vocab_size, false);
  return p;
}

std::vector<Param*> EncoderParams::all() {
  std::vector<Param*> out;
  out.push_back(&tok_emb);
  out.push_back(&pos_emb);
  for (auto& l : layers) {
    for (Param* p : {&l.ln1_scale, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv,
                     &l.wo, &l.bo, &l.ln2_scale, &l.ln2_bias, &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2})
      out.push_back(p);
  }
  out.push_back(&ln_f_scale);
  out.push_back(&ln_f_bias);
  out.push_back(&mlm_bias);
  return out;
}

std::vector<const Param*> EncoderParams::all() const {
  auto mut = const_cast<EncoderParams*>(this)->all();
  return {mut.begin(), mut.end()};
}

void EncoderParams::zero_grads() {
  for (Param* p : all()) p->g.setZero();
}

int64_t EncoderParams::scalar_count() const {
  int64_t n = 0;
  for (const Param* p : all()) n += p->w.size();
  return n;
}

void EncoderParams::quantize_to_f32() {
  for (Param* p : all()) p->w = p->w.cast<float>().cast<double>();
}

EncoderParams init_params(const EncoderConfig& cfg, uint64_t seed) {
  EncoderParams p = EncoderParams::build(cfg);
  Rng rng(seed);
  auto fill_normal = [&](Param& t) {
    for (Eigen::Index r = 0; r < t.w.rows(); ++r)
      for (Eigen::Index c = 0; c < t.w.cols(); ++c)
        t.w(r, c) = std::clamp(rng.normal() * kInitStd, -2.0 * kInitStd, 2.0 * kInitStd);
  };
  fill_normal(p.tok_emb);
  fill_normal(p.pos_emb);
  for (auto& l : p.layers) {
    l.ln1_scale.w.setOnes();
    l.ln2_scale.w.setOnes();
    for (Param* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ff_w1, &l.ff_w2}) fill_normal(*t);
  }
  p.ln_f_scale.w.setOnes();
  return p;
}

std::vector<Eigen::MatrixXd> encode_tokens(const EncoderParams& params, const Eigen::MatrixXi& ids,
                                           const Eigen::MatrixXd& pad_mask, ForwardCache* cache,
                                           Rng* dropout_rng) {
  const EncoderConfig& cfg = params.config;
  const Eigen::Index rows = ids.rows();
  const Eigen::Index width = ids.cols();
  if (pad_mask.rows() != rows || pad_mask.cols() != width)
    throw std::invalid_argument("encode_tokens: ids/mask shape mismatch");
  if (width > cfg.max_positions)
    throw std::invalid_argument("encode_tokens: sequence length " + std::to_string(width) +
                                " exceeds max_positions " + std::to_string(cfg.max_positions));
  const int heads = cfg.heads;
  const int dh = cfg.d_model / heads;

  if (cache) {
    cache->ids = ids;
    cache->mask = pad_mask;
    cache->rows.assign(static_cast<size_t>(rows), RowCache{});
  }

  const bool dropout_on = dropout_rng != nullptr && cfg.dropout > 0.0;
  auto draw_mask = [&](Eigen::Index r_count, Eigen::Index c_count) {
    Eigen::MatrixXd mask(r_count, c_count);
    const double keep_scale = 1.0 / (1.0 - cfg.dropout);
    for (Eigen::Index a = 0; a < r_count; ++a)
      for (Eigen::Index b = 0; b < c_count; ++b)
        mask(a, b) = dropout_rng->uniform() < cfg.dropout ? 0.0 : keep_scale;
    return mask;
  };

  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    // Each row is computed at its true length: pad positions never enter the
    // arithmetic, so real positions are bit-identical under any padding or
    // batch companions. Their output rows are zero-filled.
    const Eigen::Index len = real_length(pad_mask.row(r));
    if (len == 0) throw std::invalid_argument("encode_tokens: empty sequence in row " + std::to_string(r));

    Eigen::MatrixXd x(len, cfg.d_model);
    for (Eigen::Index t = 0; t < len; ++t) {
      const int id = ids(r, t);
      if (id < 0 || id >= cfg.vocab_size)
        throw std::invalid_argument("encode_tokens: token id " + std::to_string(id) + " out of range");
      x.row(t) = params.tok_emb.w.row(id) + params.pos_emb.w.row(t);
    }

    RowCache* rc = cache ? &cache->rows[static_cast<size_t>(r)] : nullptr;
    if (rc) rc->layers.resize(static_cast<size_t>(cfg.layers));

    RowCache scratch_row;
    RowCache& row_cache = rc ? *rc : scratch_row;
    if (dropout_on) {
      row_cache.emb_drop = draw_mask(len, cfg.d_model);
      x = x.cwiseProduct(row_cache.emb_drop);
    }

    for (int l = 0; l < cfg.layers; ++l) {
      const LayerParams& lp = params.layers[static_cast<size_t>(l)];
      LayerRowCache scratch;
      LayerRowCache& lc = rc ? rc->layers[static_cast<size_t>(l)] : scratch;

      const Eigen::MatrixXd u = layer_norm(x, lp.ln1_scale, lp.ln1_bias, lc.ln1_xhat, lc.ln1_inv_std);
      lc.q = linear(u, lp.wq, lp.bq);
      lc.k = linear(u, lp.wk, lp.bk);
      lc.v = linear(u, lp.wv, lp.bv);

      Eigen::MatrixXd attn_concat(len, cfg.d_model);
      for (int h = 0; h < heads; ++h) {
        const auto qh = lc.q.middleCols(h * dh, dh);
        const auto kh = lc.k.middleCols(h * dh, dh);
        const auto vh = lc.v.middleCols(h * dh, dh);
        attn_concat.middleCols(h * dh, dh) = attention_probs(qh, kh) * vh;
      }
      Eigen::MatrixXd attn_out = linear(attn_concat, lp.wo, lp.bo);
      if (dropout_on) {
        lc.attn_drop = draw_mask(len, cfg.d_model);
        attn_out = attn_out.cwiseProduct(lc.attn_drop);
      }
      x += attn_out;

      const Eigen::MatrixXd v2 = layer_norm(x, lp.ln2_scale, lp.ln2_bias, lc.ln2_xhat, lc.ln2_inv_std);
      lc.ffn_pre = linear(v2, lp.ff_w1, lp.ff_b1);
      Eigen::MatrixXd act = lc.ffn_pre.unaryExpr([](double z) { return gelu(z); });
      Eigen::MatrixXd ffn_out = linear(act, lp.ff_w2, lp.ff_b2);
      if (dropout_on) {
        lc.ffn_drop = draw_mask(len, cfg.d_model);
        ffn_out = ffn_out.cwiseProduct(lc.ffn_drop);
      }
      x += ffn_out;
    }

    Eigen::MatrixXd lnf_xhat;
    Eigen::VectorXd lnf_inv;
    Eigen::MatrixXd y = layer_norm(x, params.ln_f_scale, params.ln_f_bias, lnf_xhat, lnf_inv);
    if (rc) {
      rc->lnf_xhat = std::move(lnf_xhat);
      rc->lnf_inv_std = std::move(lnf_inv);
    }
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(width, cfg.d_model);
    full.topRows(len) = y;
    out.push_back(std::move(full));
  }
  return out;
}

void encode_backward(EncoderParams& params, const ForwardCache& cache,
                     std::span<const Eigen::MatrixXd> d_out) {
  const EncoderConfig& cfg = params.config;
  const Eigen::Index rows = cache.ids.rows();
  const Eigen::Index width = cache.ids.cols();
  if (static_cast<Eigen::Index>(d_out.size()) != rows)
    throw std::invalid_argument("encode_backward: d_out row count mismatch");
  const int heads = cfg.heads;
  const int dh = cfg.d_model / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (Eigen::Index r = 0; r < rows; ++r) {
    const RowCache& rc = cache.rows[static_cast<size_t>(r)];
    const Eigen::Index len = real_length(cache.mask.row(r));
    if (d_out[static_cast<size_t>(r)].rows() != width)
      throw std::invalid_argument("encode_backward: d_out width mismatch");

    Eigen::MatrixXd dx =
        layer_norm_backward(d_out[static_cast<size_t>(r)].topRows(len), rc.lnf_xhat, rc.lnf_inv_std,
                            params.ln_f_scale, params.ln_f_bias);

    for (int l = cfg.layers - 1; l >= 0; --l) {
      LayerParams& lp = params.layers[static_cast<size_t>(l)];
      const LayerRowCache& lc = rc.layers[static_cast<size_t>(l)];

      // FFN sublayer: x_out = x_mid + drop(gelu(ln2(x_mid) w1 + b1) w2 + b2)
      Eigen::MatrixXd d_ffn_out = lc.ffn_drop.size() ? dx.cwiseProduct(lc.ffn_drop).eval() : dx;
      Eigen::MatrixXd act = lc.ffn_pre.unaryExpr([](double z) { return gelu(z); });
      Eigen::MatrixXd d_act = linear_backward(d_ffn_out, act, lp.ff_w2, lp.ff_b2);
      Eigen::MatrixXd d_pre = d_act.cwiseProduct(lc.ffn_pre.unaryExpr([](double z) { return gelu_grad(z); }));
      const Eigen::MatrixXd v2 =
          (lc.ln2_xhat.array().rowwise() * lp.ln2_scale.w.row(0).array()).rowwise() +
          lp.ln2_bias.w.row(0).array();
      Eigen::MatrixXd d_v2 = linear_backward(d_pre, v2, lp.ff_w1, lp.ff_b1);
      dx += layer_norm_backward(d_v2, lc.ln2_xhat, lc.ln2_inv_std, lp.ln2_scale, lp.ln2_bias);

      // Attention sublayer: x_mid = x_in + drop(concat_h(P_h V_h) wo + bo)
      Eigen::MatrixXd d_attn_out = lc.attn_drop.size() ? dx.cwiseProduct(lc.attn_drop).eval() : dx;
      Eigen::MatrixXd attn_concat(len, cfg.d_model);
      std::vector<Eigen::MatrixXd> probs(static_cast<size_t>(heads));
      for (int h = 0; h < heads; ++h) {
        probs[static_cast<size_t>(h)] =
            attention_probs(lc.q.middleCols(h * dh, dh), lc.k.middleCols(h * dh, dh));
        attn_concat.middleCols(h * dh, dh) = probs[static_cast<size_t>(h)] * lc.v.middleCols(h * dh, dh);
      }
      Eigen::MatrixXd d_concat = linear_backward(d_attn_out, attn_concat, lp.wo, lp.bo);

      Eigen::MatrixXd dq(len, cfg.d_model), dk(len, cfg.d_model), dv(len, cfg.d_model);
      for (int h = 0; h < heads; ++h) {
        const auto& ph = probs[static_cast<size_t>(h)];
        const auto vh = lc.v.middleCols(h * dh, dh);
        const auto d_oh = d_concat.middleCols(h * dh, dh);
        Eigen::MatrixXd d_ph = d_oh * vh.transpose();
        dv.middleCols(h * dh, dh) = ph.transpose() * d_oh;
        Eigen::VectorXd row_dot = (d_ph.cwiseProduct(ph)).rowwise().sum();
        Eigen::MatrixXd d_scores = ph.cwiseProduct(d_ph.colwise() - row_dot);
        dq.middleCols(h * dh, dh) = d_scores * lc.k.middleCols(h * dh, dh) * scale;
        dk.middleCols(h * dh, dh) = d_scores.transpose() * lc.q.middleCols(h * dh, dh) * scale;
      }

      const Eigen::MatrixXd u =
          (lc.ln1_xhat.array().rowwise() * lp.ln1_scale.w.row(0).array()).rowwise() +
          lp.ln1_bias.w.row(0).array();
      Eigen::MatrixXd du = linear_backward(dq, u, lp.wq, lp.bq);
      du += linear_backward(dk, u, lp.wk, lp.bk);
      du += linear_backward(dv, u, lp.wv, lp.bv);
      dx += layer_norm_backward(du, lc.ln1_xhat, lc.ln1_inv_std, lp.ln1_scale, lp.ln1_bias);
    }

    if (rc.emb_drop.size()) dx = dx.cwiseProduct(rc.emb_drop);
    for (Eigen::Index t = 0; t < len; ++t) {
      params.tok_emb.g.row(cache.ids(r, t)) += dx.row(t);
      params.pos_emb.g.row(t) += dx.row(t);
    }
  }
}

Eigen::VectorXd mean_pool(const Eigen::MatrixXd& token_embs, const Eigen::VectorXd& mask_row) {
  if (token_embs.rows() != mask_row.size()) throw std::invalid_argument("mean_pool: mask length mismatch");
  // Ordered accumulation over real positions only, so the result is
  // bit-identical under trailing padding.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(token_embs.cols());
  double count = 0.0;
  for (Eigen::Index t = 0; t < mask_row.size(); ++t) {
    if (mask_row(t) != 0.0) {
      sum += token_embs.row(t).transpose();
      count += 1.0;
    }
  }
  if (count == 0.0) throw std::invalid_argument("mean_pool: all positions are padding");
  return sum / count;
}

void mean_pool_backward(const Eigen::VectorXd& d_pooled, const Eigen::VectorXd& mask_row,
                        Eigen::MatrixXd& d_tokens) {
  const double count = mask_row.sum();
  for (Eigen::Index t = 0; t < mask_row.size(); ++t)
    if (mask_row(t) != 0.0) d_tokens.row(t) += d_pooled.transpose() / count;
}

Eigen::MatrixXd mlm_logits(const EncoderParams& params, const Eigen::MatrixXd& row_embs,
                           std::span<const int> positions) {
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(positions.size()), params.config.vocab_size);
  for (size_t i = 0; i < positions.size(); ++i) {
    const int pos = positions[i];
    if (pos < 0 || pos >= row_embs.rows()) throw std::invalid_argument("mlm_logits: position out of range");
    logits.row(static_cast<Eigen::Index>(i)) =
        (params.tok_emb.w * row_embs.row(pos).transpose()).transpose() + params.mlm_bias.w.row(0);
  }
  return logits;
}

void mlm_logits_backward(EncoderParams& params, const Eigen::MatrixXd& row_embs,
                         std::span<const int> positions, const Eigen::MatrixXd& dlogits,
                         Eigen::MatrixXd& d_row_embs) {
  if (dlogits.rows() != static_cast<Eigen::Index>(positions.size()))
    throw std::invalid_argument("mlm_logits_backward: positions/dlogits mismatch");
  for (size_t i = 0; i < positions.size(); ++i) {
    const int pos = positions[i];
    const auto dl = dlogits.row(static_cast<Eigen::Index>(i));
    d_row_embs.row(pos) += dl * params.tok_emb.w;
    params.tok_emb.g += dl.transpose() * row_embs.row(pos);
    params.mlm_bias.g.row(0) += dl;
  }
}

}  // namespace declutr
