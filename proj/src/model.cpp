#include "ssr/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssr/error.hpp"
#include "ssr/nucleus.hpp"

namespace ssr {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1 ||
      max_rel_distance < 0 || max_decode_len < 1) {
    throw Error("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
}

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

template <class Params, class Fn>
void visit_tensors(Params& p, Fn&& fn) {
  fn(std::string("embedding"), p.embedding);
  auto attn = [&](const std::string& prefix, auto& w) {
    fn(prefix + ".q", w.q);
    fn(prefix + ".k", w.k);
    fn(prefix + ".v", w.v);
    fn(prefix + ".o", w.o);
  };
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string pre = "encoder." + std::to_string(l);
    auto& L = p.encoder[l];
    fn(pre + ".attn_norm", L.attn_norm);
    attn(pre + ".self", L.self);
    fn(pre + ".ff_norm", L.ff_norm);
    fn(pre + ".ff_in", L.ff_in);
    fn(pre + ".ff_out", L.ff_out);
  }
  fn(std::string("encoder.final_norm"), p.encoder_final_norm);
  fn(std::string("encoder.rel_bias"), p.encoder_rel_bias);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string pre = "decoder." + std::to_string(l);
    auto& L = p.decoder[l];
    fn(pre + ".self_norm", L.self_norm);
    attn(pre + ".self", L.self);
    fn(pre + ".cross_norm", L.cross_norm);
    attn(pre + ".cross", L.cross);
    fn(pre + ".ff_norm", L.ff_norm);
    fn(pre + ".ff_in", L.ff_in);
    fn(pre + ".ff_out", L.ff_out);
  }
  fn(std::string("decoder.final_norm"), p.decoder_final_norm);
  fn(std::string("decoder.rel_bias"), p.decoder_rel_bias);
}

}  // namespace

std::vector<std::pair<std::string, Mat*>> ModelParams::tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  visit_tensors(*this, [&](const std::string& n, Mat& m) { out.emplace_back(n, &m); });
  return out;
}

std::vector<std::pair<std::string, const Mat*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  visit_tensors(*this, [&](const std::string& n, const Mat& m) { out.emplace_back(n, &m); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& [name, m] : tensors()) {
    if (!m->allFinite()) return false;
  }
  return true;
}

bool ModelParams::operator==(const ModelParams& o) const {
  if (!(config == o.config)) return false;
  const auto a = tensors();
  const auto b = o.tensors();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second->rows() != b[i].second->rows() || a[i].second->cols() != b[i].second->cols() ||
        *a[i].second != *b[i].second) {
      return false;
    }
  }
  return true;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t ff = static_cast<std::size_t>(cfg.d_ff);
  const std::size_t L = static_cast<std::size_t>(cfg.n_layers);
  const std::size_t rel = static_cast<std::size_t>(cfg.n_heads) *
                          (2 * static_cast<std::size_t>(cfg.max_rel_distance) + 1);
  const std::size_t enc_layer = 2 * d + 4 * d * d + 2 * d * ff;
  const std::size_t dec_layer = 3 * d + 8 * d * d + 2 * d * ff;
  return static_cast<std::size_t>(cfg.vocab_size) * d + L * enc_layer + d + rel + L * dec_layer +
         d + rel;
}

ModelParams zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.d_model;
  const int ff = cfg.d_ff;
  auto attn = [&] {
    return AttentionWeights{Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d), Mat::Zero(d, d)};
  };
  ModelParams p;
  p.config = cfg;
  p.embedding = Mat::Zero(cfg.vocab_size, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    p.encoder.push_back({Mat::Zero(1, d), attn(), Mat::Zero(1, d), Mat::Zero(d, ff), Mat::Zero(ff, d)});
    p.decoder.push_back({Mat::Zero(1, d), attn(), Mat::Zero(1, d), attn(), Mat::Zero(1, d),
                         Mat::Zero(d, ff), Mat::Zero(ff, d)});
  }
  p.encoder_final_norm = Mat::Zero(1, d);
  p.decoder_final_norm = Mat::Zero(1, d);
  p.encoder_rel_bias = Mat::Zero(cfg.n_heads, 2 * cfg.max_rel_distance + 1);
  p.decoder_rel_bias = Mat::Zero(cfg.n_heads, 2 * cfg.max_rel_distance + 1);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  auto p = zero_params(cfg);
  for (auto& [name, m] : p.tensors()) {
    if (name.ends_with("norm")) {
      m->setOnes();
    } else if (name.ends_with("rel_bias")) {
      m->setZero();
    } else {
      const double sd = name == "embedding" ? 0.05 : 1.0 / std::sqrt(static_cast<double>(m->rows()));
      for (Eigen::Index c = 0; c < m->cols(); ++c) {
        for (Eigen::Index r = 0; r < m->rows(); ++r) (*m)(r, c) = sd * rng.normal();
      }
    }
  }
  return p;
}

namespace {

// ---- building blocks -------------------------------------------------------

struct NormCache {
  Mat xhat;
  Eigen::VectorXd inv_rms;
};

Mat rms_forward(const Mat& x, const Mat& gain, NormCache* cache) {
  const double d = static_cast<double>(x.cols());
  Eigen::VectorXd inv = ((x.array().square().rowwise().sum() / d) + kNormEps).rsqrt().matrix();
  Mat xhat = x.array().colwise() * inv.array();
  Mat y = xhat.array().rowwise() * gain.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_rms = std::move(inv);
  }
  return y;
}

Mat rms_backward(const Mat& dy, const NormCache& c, const Mat& gain, Mat& dgain) {
  const double d = static_cast<double>(dy.cols());
  dgain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Eigen::VectorXd m = ((dxhat.array() * c.xhat.array()).rowwise().sum() / d).matrix();
  Mat dx = (dxhat.array() - c.xhat.array().colwise() * m.array()).colwise() * c.inv_rms.array();
  return dx;
}

int rel_bucket(Eigen::Index query, Eigen::Index key, int max_rel) {
  const auto dist = static_cast<int>(key - query);
  return std::clamp(dist, -max_rel, max_rel) + max_rel;
}

struct AttnCache {
  Mat xq, xkv, q, k, v, concat;
  std::vector<Mat> probs;
};

void softmax_rows(Mat& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
}

Mat attn_forward(const Mat& xq, const Mat& xkv, const AttentionWeights& w, const Mat* rel,
                 int max_rel, bool causal, int heads, AttnCache* cache) {
  Mat q = xq * w.q;
  Mat k = xkv * w.k;
  Mat v = xkv * w.v;
  const Eigen::Index tq = xq.rows();
  const Eigen::Index tk = xkv.rows();
  const Eigen::Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat concat(tq, q.cols());
  if (cache) cache->probs.clear();
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    if (rel) {
      for (Eigen::Index i = 0; i < tq; ++i) {
        for (Eigen::Index j = 0; j < tk; ++j) s(i, j) += (*rel)(h, rel_bucket(i, j, max_rel));
      }
    }
    if (causal) {
      for (Eigen::Index i = 0; i < tq; ++i) {
        for (Eigen::Index j = i + 1; j < tk; ++j) s(i, j) = kNegInf;
      }
    }
    softmax_rows(s);
    concat.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    if (cache) cache->probs.push_back(std::move(s));
  }
  Mat out = concat * w.o;
  if (cache) {
    cache->xq = xq;
    cache->xkv = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
  }
  return out;
}

void attn_backward(const Mat& dout, const AttnCache& c, const AttentionWeights& w,
                   AttentionWeights& gw, Mat* grel, int max_rel, int heads, Mat& dxq, Mat& dxkv) {
  gw.o.noalias() += c.concat.transpose() * dout;
  const Mat dconcat = dout * w.o.transpose();
  const Eigen::Index dh = c.q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat dq = Mat::Zero(c.q.rows(), c.q.cols());
  Mat dk = Mat::Zero(c.k.rows(), c.k.cols());
  Mat dv = Mat::Zero(c.v.rows(), c.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Mat& p = c.probs[static_cast<std::size_t>(h)];
    const auto doh = dconcat.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() += p.transpose() * doh;
    const Mat dp = doh * c.v.middleCols(h * dh, dh).transpose();
    const Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum().matrix();
    const Mat ds = p.array() * (dp.array().colwise() - rowdot.array());
    if (grel) {
      for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        for (Eigen::Index j = 0; j < ds.cols(); ++j) {
          if (p(i, j) != 0.0) (*grel)(h, rel_bucket(i, j, max_rel)) += ds(i, j);
        }
      }
    }
    dq.middleCols(h * dh, dh).noalias() += (ds * c.k.middleCols(h * dh, dh)) * scale;
    dk.middleCols(h * dh, dh).noalias() += (ds.transpose() * c.q.middleCols(h * dh, dh)) * scale;
  }
  gw.q.noalias() += c.xq.transpose() * dq;
  gw.k.noalias() += c.xkv.transpose() * dk;
  gw.v.noalias() += c.xkv.transpose() * dv;
  dxq = dq * w.q.transpose();
  dxkv = dk * w.k.transpose();
  dxkv.noalias() += dv * w.v.transpose();
}

struct FFCache {
  Mat x, pre;
};

Mat ff_forward(const Mat& x, const Mat& w_in, const Mat& w_out, FFCache* cache) {
  Mat pre = x * w_in;
  Mat out = pre.cwiseMax(0.0) * w_out;
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
  }
  return out;
}

Mat ff_backward(const Mat& dout, const FFCache& c, const Mat& w_in, const Mat& w_out, Mat& g_in,
                Mat& g_out) {
  g_out.noalias() += c.pre.cwiseMax(0.0).transpose() * dout;
  Mat dh = dout * w_out.transpose();
  dh = (c.pre.array() > 0.0).select(dh, 0.0);
  g_in.noalias() += c.x.transpose() * dh;
  return dh * w_in.transpose();
}

// Inverted dropout on a residual branch; the mask is kept for the backward pass.
void dropout(Mat& a, double rate, Rng* rng, Mat* mask) {
  if (rate <= 0.0 || !rng) return;
  Mat m(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng->uniform() < rate ? 0.0 : keep;
  }
  a.array() *= m.array();
  if (mask) *mask = std::move(m);
}

void undo_dropout(Mat& da, const Mat& mask) {
  if (mask.size() > 0) da.array() *= mask.array();
}

Mat gather(const Mat& embedding, std::span<const TokenId> ids) {
  Mat x(static_cast<Eigen::Index>(ids.size()), embedding.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= embedding.rows()) throw Error("token id outside model vocabulary");
    x.row(static_cast<Eigen::Index>(i)) = embedding.row(ids[i]);
  }
  return x;
}

void scatter_add(Mat& g_embedding, std::span<const TokenId> ids, const Mat& dx) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    g_embedding.row(ids[i]) += dx.row(static_cast<Eigen::Index>(i));
  }
}

// ---- encoder / decoder stacks ---------------------------------------------

struct EncLayerCache {
  NormCache n1;
  AttnCache attn;
  Mat drop1;
  NormCache n2;
  FFCache ff;
  Mat drop2;
};

struct EncCache {
  std::vector<EncLayerCache> layers;
  NormCache final_norm;
};

Mat encode(const ModelParams& p, std::span<const TokenId> src, EncCache* cache, Rng* rng) {
  const auto& cfg = p.config;
  Mat x = gather(p.embedding, src);
  if (cache) cache->layers.resize(p.encoder.size());
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& L = p.encoder[l];
    EncLayerCache* c = cache ? &cache->layers[l] : nullptr;
    Mat n1 = rms_forward(x, L.attn_norm, c ? &c->n1 : nullptr);
    Mat a = attn_forward(n1, n1, L.self, &p.encoder_rel_bias, cfg.max_rel_distance, false,
                         cfg.n_heads, c ? &c->attn : nullptr);
    dropout(a, cfg.dropout, rng, c ? &c->drop1 : nullptr);
    x += a;
    Mat n2 = rms_forward(x, L.ff_norm, c ? &c->n2 : nullptr);
    Mat f = ff_forward(n2, L.ff_in, L.ff_out, c ? &c->ff : nullptr);
    dropout(f, cfg.dropout, rng, c ? &c->drop2 : nullptr);
    x += f;
  }
  return rms_forward(x, p.encoder_final_norm, cache ? &cache->final_norm : nullptr);
}

void encode_backward(const ModelParams& p, std::span<const TokenId> src, const EncCache& cache,
                     const Mat& d_out, ModelParams& g) {
  const auto& cfg = p.config;
  Mat dx = rms_backward(d_out, cache.final_norm, p.encoder_final_norm, g.encoder_final_norm);
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    const auto& L = p.encoder[l];
    auto& G = g.encoder[l];
    const auto& c = cache.layers[l];
    Mat df = dx;
    undo_dropout(df, c.drop2);
    Mat dn2 = ff_backward(df, c.ff, L.ff_in, L.ff_out, G.ff_in, G.ff_out);
    dx += rms_backward(dn2, c.n2, L.ff_norm, G.ff_norm);
    Mat da = dx;
    undo_dropout(da, c.drop1);
    Mat dq, dkv;
    attn_backward(da, c.attn, L.self, G.self, &g.encoder_rel_bias, cfg.max_rel_distance,
                  cfg.n_heads, dq, dkv);
    dq += dkv;
    dx += rms_backward(dq, c.n1, L.attn_norm, G.attn_norm);
  }
  scatter_add(g.embedding, src, dx);
}

struct DecLayerCache {
  NormCache n1;
  AttnCache self;
  Mat drop1;
  NormCache n2;
  AttnCache cross;
  Mat drop2;
  NormCache n3;
  FFCache ff;
  Mat drop3;
};

struct DecCache {
  std::vector<DecLayerCache> layers;
  NormCache final_norm;
};

Mat decode_states(const ModelParams& p, const Mat& enc_out, std::span<const TokenId> tgt_in,
                  DecCache* cache, Rng* rng) {
  const auto& cfg = p.config;
  Mat y = gather(p.embedding, tgt_in);
  if (cache) cache->layers.resize(p.decoder.size());
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& L = p.decoder[l];
    DecLayerCache* c = cache ? &cache->layers[l] : nullptr;
    Mat n1 = rms_forward(y, L.self_norm, c ? &c->n1 : nullptr);
    Mat a = attn_forward(n1, n1, L.self, &p.decoder_rel_bias, cfg.max_rel_distance, true,
                         cfg.n_heads, c ? &c->self : nullptr);
    dropout(a, cfg.dropout, rng, c ? &c->drop1 : nullptr);
    y += a;
    Mat n2 = rms_forward(y, L.cross_norm, c ? &c->n2 : nullptr);
    Mat x = attn_forward(n2, enc_out, L.cross, nullptr, cfg.max_rel_distance, false, cfg.n_heads,
                         c ? &c->cross : nullptr);
    dropout(x, cfg.dropout, rng, c ? &c->drop2 : nullptr);
    y += x;
    Mat n3 = rms_forward(y, L.ff_norm, c ? &c->n3 : nullptr);
    Mat f = ff_forward(n3, L.ff_in, L.ff_out, c ? &c->ff : nullptr);
    dropout(f, cfg.dropout, rng, c ? &c->drop3 : nullptr);
    y += f;
  }
  return rms_forward(y, p.decoder_final_norm, cache ? &cache->final_norm : nullptr);
}

// Returns the gradient with respect to the encoder output.
Mat decode_backward(const ModelParams& p, std::span<const TokenId> tgt_in, const DecCache& cache,
                    const Mat& d_out, Eigen::Index src_len, ModelParams& g) {
  const auto& cfg = p.config;
  Mat d_enc = Mat::Zero(src_len, cfg.d_model);
  Mat dy = rms_backward(d_out, cache.final_norm, p.decoder_final_norm, g.decoder_final_norm);
  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    const auto& L = p.decoder[l];
    auto& G = g.decoder[l];
    const auto& c = cache.layers[l];
    Mat df = dy;
    undo_dropout(df, c.drop3);
    Mat dn3 = ff_backward(df, c.ff, L.ff_in, L.ff_out, G.ff_in, G.ff_out);
    dy += rms_backward(dn3, c.n3, L.ff_norm, G.ff_norm);

    Mat dx = dy;
    undo_dropout(dx, c.drop2);
    Mat dq, dkv;
    attn_backward(dx, c.cross, L.cross, G.cross, nullptr, cfg.max_rel_distance, cfg.n_heads, dq, dkv);
    d_enc += dkv;
    dy += rms_backward(dq, c.n2, L.cross_norm, G.cross_norm);

    Mat da = dy;
    undo_dropout(da, c.drop1);
    attn_backward(da, c.self, L.self, G.self, &g.decoder_rel_bias, cfg.max_rel_distance,
                  cfg.n_heads, dq, dkv);
    dq += dkv;
    dy += rms_backward(dq, c.n1, L.self_norm, G.self_norm);
  }
  scatter_add(g.embedding, tgt_in, dy);
  return d_enc;
}

void check_ids(const ModelParams& p, std::span<const TokenId> ids) {
  for (auto id : ids) {
    if (id < 0 || id >= p.config.vocab_size) throw Error("token id outside model vocabulary");
  }
}

std::vector<TokenId> decoder_input(std::span<const TokenId> target) {
  std::vector<TokenId> in;
  in.reserve(target.size() + 1);
  in.push_back(Vocab::kBos);
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

}  // namespace

Mat forward(const ModelParams& params, std::span<const TokenId> source,
            std::span<const TokenId> target_in) {
  if (source.empty()) throw Error("empty source sequence");
  if (target_in.empty()) throw Error("empty target sequence");
  check_ids(params, source);
  check_ids(params, target_in);
  const Mat enc = encode(params, source, nullptr, nullptr);
  const Mat y = decode_states(params, enc, target_in, nullptr, nullptr);
  return y * params.embedding.transpose();
}

LossResult loss_and_grad(const ModelParams& params, std::span<const Seq2SeqPair> batch,
                         Rng* dropout_rng) {
  if (batch.empty()) throw Error("empty batch");
  LossResult res;
  res.grad = zero_params(params.config);
  for (const auto& ex : batch) {
    if (!ex.target.empty()) res.tokens += ex.target.size() + 1;
  }
  if (res.tokens == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(res.tokens);
  Rng* rng = params.config.dropout > 0.0 ? dropout_rng : nullptr;

  for (const auto& ex : batch) {
    if (ex.target.empty()) continue;
    if (ex.source.empty()) throw Error("empty source sequence");
    check_ids(params, ex.source);
    check_ids(params, ex.target);
    const auto tgt_in = decoder_input(ex.target);
    EncCache ec;
    DecCache dc;
    const Mat enc = encode(params, ex.source, &ec, rng);
    const Mat y = decode_states(params, enc, tgt_in, &dc, rng);
    Mat logits = y * params.embedding.transpose();
    // Softmax cross-entropy; logits become dlogits in place.
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      const TokenId label = static_cast<std::size_t>(t) < ex.target.size()
                                ? ex.target[static_cast<std::size_t>(t)]
                                : Vocab::kEos;
      const double mx = logits.row(t).maxCoeff();
      logits.row(t) = (logits.row(t).array() - mx).exp().matrix();
      const double z = logits.row(t).sum();
      res.loss += -(std::log(logits(t, label)) - std::log(z));
      logits.row(t) /= z;
      logits(t, label) -= 1.0;
    }
    logits *= inv_n;
    res.grad.embedding.noalias() += logits.transpose() * y;
    const Mat dy = logits * params.embedding;
    const Mat d_enc = decode_backward(params, tgt_in, dc, dy, enc.rows(), res.grad);
    encode_backward(params, ex.source, ec, d_enc, res.grad);
  }
  res.loss *= inv_n;
  return res;
}

double batch_loss(const ModelParams& params, std::span<const Seq2SeqPair> batch) {
  if (batch.empty()) throw Error("empty batch");
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : batch) {
    if (ex.target.empty()) continue;
    const auto tgt_in = decoder_input(ex.target);
    const Mat logits = forward(params, ex.source, tgt_in);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      const TokenId label = static_cast<std::size_t>(t) < ex.target.size()
                                ? ex.target[static_cast<std::size_t>(t)]
                                : Vocab::kEos;
      const double mx = logits.row(t).maxCoeff();
      const double lse = mx + std::log((logits.row(t).array() - mx).exp().sum());
      total += lse - logits(t, label);
    }
    tokens += ex.target.size() + 1;
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

// ---- incremental decoding --------------------------------------------------

Decoder::Decoder(const ModelParams& params, std::span<const TokenId> source) : params_(&params) {
  if (source.empty()) throw Error("empty source sequence");
  check_ids(params, source);
  enc_out_ = encode(params, source, nullptr, nullptr);
  for (const auto& L : params.decoder) {
    cross_k_.push_back(enc_out_ * L.cross.k);
    cross_v_.push_back(enc_out_ * L.cross.v);
    self_k_.emplace_back(0, params.config.d_model);
    self_v_.emplace_back(0, params.config.d_model);
  }
}

namespace {

// One query row against cached keys/values.
Mat attend_row(const Mat& q, const Mat& keys, const Mat& values, const Mat* rel, int max_rel,
               Eigen::Index query_pos, int heads) {
  const Eigen::Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat concat(1, q.cols());
  for (int h = 0; h < heads; ++h) {
    Mat s = (q.middleCols(h * dh, dh) * keys.middleCols(h * dh, dh).transpose()) * scale;
    if (rel) {
      for (Eigen::Index j = 0; j < s.cols(); ++j) s(0, j) += (*rel)(h, rel_bucket(query_pos, j, max_rel));
    }
    softmax_rows(s);
    concat.middleCols(h * dh, dh).noalias() = s * values.middleCols(h * dh, dh);
  }
  return concat;
}

}  // namespace

Eigen::VectorXd Decoder::step(TokenId token) {
  const auto& p = *params_;
  const auto& cfg = p.config;
  if (token < 0 || token >= cfg.vocab_size) throw Error("token id outside model vocabulary");
  Mat y = p.embedding.row(token);
  const auto pos = static_cast<Eigen::Index>(pos_);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& L = p.decoder[l];
    Mat n1 = rms_forward(y, L.self_norm, nullptr);
    auto& K = self_k_[l];
    auto& V = self_v_[l];
    K.conservativeResize(pos + 1, Eigen::NoChange);
    V.conservativeResize(pos + 1, Eigen::NoChange);
    K.row(pos) = n1 * L.self.k;
    V.row(pos) = n1 * L.self.v;
    const Mat q = n1 * L.self.q;
    y += attend_row(q, K, V, &p.decoder_rel_bias, cfg.max_rel_distance, pos, cfg.n_heads) * L.self.o;
    Mat n2 = rms_forward(y, L.cross_norm, nullptr);
    const Mat qc = n2 * L.cross.q;
    y += attend_row(qc, cross_k_[l], cross_v_[l], nullptr, 0, pos, cfg.n_heads) * L.cross.o;
    Mat n3 = rms_forward(y, L.ff_norm, nullptr);
    y += ff_forward(n3, L.ff_in, L.ff_out, nullptr);
  }
  const Mat out = rms_forward(y, p.decoder_final_norm, nullptr);
  ++pos_;
  return (p.embedding * out.transpose()).col(0);
}

std::vector<double> softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    out[static_cast<std::size_t>(i)] = std::exp(logits(i) - mx);
    z += out[static_cast<std::size_t>(i)];
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<TokenId> decode_greedy(const ModelParams& params, std::span<const TokenId> source,
                                   DecodeOptions opts) {
  const std::size_t max_len =
      opts.max_len ? opts.max_len : static_cast<std::size_t>(params.config.max_decode_len);
  Decoder dec(params, source);
  std::vector<TokenId> out;
  TokenId tok = Vocab::kBos;
  while (out.size() < max_len) {
    const auto logits = dec.step(tok);
    Eigen::Index best = 0;
    // First maximum, i.e. ties go to the lowest id.
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
      if (logits(i) > logits(best)) best = i;
    }
    tok = static_cast<TokenId>(best);
    if (tok == Vocab::kEos) break;
    out.push_back(tok);
  }
  return out;
}

std::vector<TokenId> decode_nucleus(const ModelParams& params, std::span<const TokenId> source,
                                    double p, Rng& rng, DecodeOptions opts) {
  const std::size_t max_len =
      opts.max_len ? opts.max_len : static_cast<std::size_t>(params.config.max_decode_len);
  Decoder dec(params, source);
  std::vector<TokenId> out;
  TokenId tok = Vocab::kBos;
  while (out.size() < max_len) {
    const auto probs = softmax(dec.step(tok));
    tok = static_cast<TokenId>(nucleus_sample(probs, p, rng).id);
    if (tok == Vocab::kEos) break;
    out.push_back(tok);
  }
  return out;
}

}  // namespace ssr
