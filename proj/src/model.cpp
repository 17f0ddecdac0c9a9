#include "polytune/model.hpp"

#include <algorithm>
#include <cmath>

#include "model_layers.hpp"
#include "polytune/errors.hpp"

namespace polytune {

using detail::DecoderBlock;
using detail::EncoderBlock;
using detail::LayerNormLayer;
using detail::LinearLayer;
using detail::init_tensor;

void ModelConfig::validate() const {
  if (enc_dim <= 0 || dec_dim <= 0 || heads <= 0)
    throw ConfigError("model dimensions must be positive");
  if (enc_dim % heads != 0 || dec_dim % heads != 0)
    throw ConfigError("enc_dim and dec_dim must be divisible by heads");
  if (vocab_size != vocab::kSize)
    throw ConfigError("vocab_size must be " + std::to_string(vocab::kSize));
  if (num_patches <= 0 || patch_dim <= 0)
    throw ConfigError("patch geometry must be positive");
  if (max_decoder_len < 2) throw ConfigError("max_decoder_len too small");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must be in [0, 1)");
  if (enc_layers < 1 || joint_layers < 1 || dec_layers < 1)
    throw ConfigError("layer counts must be at least 1");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.enc_dim = 8;
  c.dec_dim = 8;
  c.enc_layers = 1;
  c.joint_layers = 1;
  c.dec_layers = 1;
  c.heads = 2;
  c.ff_multiplier = 2;
  c.max_decoder_len = 16;
  c.num_patches = 8;
  c.patch_dim = 12;
  c.dropout = 0.0;
  return c;
}

ModelConfig ModelConfig::paper_shape() {
  ModelConfig c;
  c.enc_dim = 768;
  c.dec_dim = 512;
  return c;
}

std::vector<double> loss_weights(const std::vector<int>& tokens,
                                 const ModelConfig& config) {
  auto mask = error_token_mask(tokens, config.alpha_scope);
  std::vector<double> weights(tokens.size(), 1.0);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (mask[i]) weights[i] = config.alpha_error;
  return weights;
}

// ---------------------------------------------------------------------------
// Model implementation
// ---------------------------------------------------------------------------

struct PolytuneModel::Impl {
  ModelConfig cfg;
  Rng rng;

  LinearLayer patch_proj[2];
  Tensor pos_emb[2];
  Tensor branch_emb;  // 2 x enc_dim
  std::vector<EncoderBlock> branch_enc[2];
  std::vector<EncoderBlock> joint_enc;
  LayerNormLayer ln_enc;
  LinearLayer memory_proj;
  Tensor dec_emb;  // vocab x dec_dim, tied with the output head
  Tensor dec_pos;  // max_decoder_len x dec_dim
  std::vector<DecoderBlock> dec;
  LayerNormLayer ln_dec;

  std::vector<Tensor*> params;

  // Forward caches.
  Mat memory;
  Mat hd_cache;
  std::vector<int> prefix_cache;

  explicit Impl(const ModelConfig& config) : cfg(config), rng(config.seed) {
    cfg.validate();
    const char* branch_names[2] = {"score", "perf"};
    for (int b = 0; b < 2; ++b) {
      patch_proj[b].init(std::string(branch_names[b]) + ".patch_proj",
                         cfg.patch_dim, cfg.enc_dim, rng);
      init_tensor(pos_emb[b], std::string(branch_names[b]) + ".pos_emb",
                  cfg.num_patches, cfg.enc_dim, rng);
      branch_enc[b].resize(std::size_t(cfg.enc_layers));
      for (int l = 0; l < cfg.enc_layers; ++l)
        branch_enc[b][std::size_t(l)].init(
            std::string(branch_names[b]) + ".enc" + std::to_string(l),
            cfg.enc_dim, cfg.heads, cfg.ff_multiplier, rng);
    }
    init_tensor(branch_emb, "branch_emb", 2, cfg.enc_dim, rng);
    joint_enc.resize(std::size_t(cfg.joint_layers));
    for (int l = 0; l < cfg.joint_layers; ++l)
      joint_enc[std::size_t(l)].init("joint.enc" + std::to_string(l),
                                     cfg.enc_dim, cfg.heads, cfg.ff_multiplier,
                                     rng);
    ln_enc.init("joint.ln_out", cfg.enc_dim);
    memory_proj.init("memory_proj", cfg.enc_dim, cfg.dec_dim, rng);
    init_tensor(dec_emb, "dec.embedding", cfg.vocab_size, cfg.dec_dim, rng);
    init_tensor(dec_pos, "dec.pos_emb", cfg.max_decoder_len, cfg.dec_dim, rng);
    dec.resize(std::size_t(cfg.dec_layers));
    for (int l = 0; l < cfg.dec_layers; ++l)
      dec[std::size_t(l)].init("dec.layer" + std::to_string(l), cfg.dec_dim,
                               cfg.heads, cfg.ff_multiplier, rng);
    ln_dec.init("dec.ln_out", cfg.dec_dim);

    for (int b = 0; b < 2; ++b) {
      patch_proj[b].collect(params);
      params.push_back(&pos_emb[b]);
      for (auto& block : branch_enc[b]) block.collect(params);
    }
    params.push_back(&branch_emb);
    for (auto& block : joint_enc) block.collect(params);
    ln_enc.collect(params);
    memory_proj.collect(params);
    params.push_back(&dec_emb);
    params.push_back(&dec_pos);
    for (auto& block : dec) block.collect(params);
    ln_dec.collect(params);
  }

  void check_patches(const Mat& m, const char* which) const {
    if (m.rows() != cfg.num_patches || m.cols() != cfg.patch_dim)
      throw InvalidInputError(std::string(which) + " patches must be " +
                              std::to_string(cfg.num_patches) + "x" +
                              std::to_string(cfg.patch_dim));
  }

  void encode(const Mat& score, const Mat& perf, bool training) {
    check_patches(score, "score");
    check_patches(perf, "performance");

    Mat h[2];
    const Mat* inputs[2] = {&score, &perf};
    for (int b = 0; b < 2; ++b) {
      h[b] = patch_proj[b].forward(*inputs[b]);
      h[b] += pos_emb[b].value;
      for (auto& block : branch_enc[b])
        h[b] = block.forward(h[b], cfg.dropout, training, rng);
    }

    Mat joint(2 * cfg.num_patches, cfg.enc_dim);
    joint.topRows(cfg.num_patches) =
        h[0].rowwise() + branch_emb.value.row(0);
    joint.bottomRows(cfg.num_patches) =
        h[1].rowwise() + branch_emb.value.row(1);
    for (auto& block : joint_enc)
      joint = block.forward(joint, cfg.dropout, training, rng);
    memory = memory_proj.forward(ln_enc.forward(joint));
  }

  Mat decode(const std::vector<int>& prefix, bool training) {
    if (memory.rows() == 0)
      throw InvalidInputError("decode called before encode");
    if (prefix.empty() || prefix.front() != vocab::kSos)
      throw InvalidInputError("decoder prefix must begin with SOS");
    if (int(prefix.size()) > cfg.max_decoder_len)
      throw InvalidInputError("decoder prefix exceeds max_decoder_len");
    for (int id : prefix)
      if (id < 0 || id >= cfg.vocab_size)
        throw InvalidInputError("token id out of range: " + std::to_string(id));

    prefix_cache = prefix;
    const auto len = Eigen::Index(prefix.size());
    Mat t(len, cfg.dec_dim);
    for (Eigen::Index i = 0; i < len; ++i)
      t.row(i) = dec_emb.value.row(prefix[std::size_t(i)]) + dec_pos.value.row(i);
    for (auto& block : dec)
      t = block.forward(t, memory, cfg.dropout, training, rng);
    hd_cache = ln_dec.forward(t);
    return hd_cache * dec_emb.value.transpose();
  }

  void backward_from_logit_grad(const Mat& dlogits) {
    // Tied head: logits = Hd * E^T.
    dec_emb.grad.noalias() += dlogits.transpose() * hd_cache;
    Mat dt = ln_dec.backward(dlogits * dec_emb.value);

    Mat dmemory = Mat::Zero(memory.rows(), memory.cols());
    for (auto it = dec.rbegin(); it != dec.rend(); ++it)
      dt = it->backward(dt, dmemory);

    for (Eigen::Index i = 0; i < dt.rows(); ++i) {
      dec_emb.grad.row(prefix_cache[std::size_t(i)]) += dt.row(i);
      dec_pos.grad.row(i) += dt.row(i);
    }

    Mat djoint = ln_enc.backward(memory_proj.backward(dmemory));
    for (auto it = joint_enc.rbegin(); it != joint_enc.rend(); ++it)
      djoint = it->backward(djoint);

    Mat dh[2] = {djoint.topRows(cfg.num_patches),
                 djoint.bottomRows(cfg.num_patches)};
    branch_emb.grad.row(0) += dh[0].colwise().sum();
    branch_emb.grad.row(1) += dh[1].colwise().sum();
    for (int b = 0; b < 2; ++b) {
      for (auto it = branch_enc[b].rbegin(); it != branch_enc[b].rend(); ++it)
        dh[b] = it->backward(dh[b]);
      pos_emb[b].grad += dh[b];
      patch_proj[b].backward(dh[b]);
    }
  }
};

PolytuneModel::PolytuneModel(const ModelConfig& config)
    : impl_(std::make_unique<Impl>(config)) {}
PolytuneModel::~PolytuneModel() = default;
PolytuneModel::PolytuneModel(PolytuneModel&&) noexcept = default;
PolytuneModel& PolytuneModel::operator=(PolytuneModel&&) noexcept = default;

const ModelConfig& PolytuneModel::config() const { return impl_->cfg; }

std::vector<Tensor*> PolytuneModel::parameters() { return impl_->params; }

Mat PolytuneModel::forward(const Mat& score_patches, const Mat& perf_patches,
                           const std::vector<int>& prefix, bool training) {
  impl_->encode(score_patches, perf_patches, training);
  return impl_->decode(prefix, training);
}

void PolytuneModel::encode_memory(const Mat& score_patches,
                                  const Mat& perf_patches, bool training) {
  impl_->encode(score_patches, perf_patches, training);
}

Mat PolytuneModel::decode_logits(const std::vector<int>& prefix, bool training) {
  return impl_->decode(prefix, training);
}

double PolytuneModel::loss(const Mat& logits, const std::vector<int>& targets,
                           const std::vector<double>& weights) const {
  if (std::size_t(logits.rows()) != targets.size() ||
      targets.size() != weights.size())
    throw InvalidInputError("loss inputs must have matching lengths");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int target = targets[std::size_t(i)];
    if (target < 0 || target >= impl_->cfg.vocab_size)
      throw InvalidInputError("target id out of range");
    const double m = logits.row(i).maxCoeff();
    const double lse =
        m + std::log((logits.row(i).array() - m).exp().sum());
    total += weights[std::size_t(i)] * (lse - logits(i, target));
  }
  return total / double(targets.size());
}

void PolytuneModel::backward(const Mat& logits, const std::vector<int>& targets,
                             const std::vector<double>& weights) {
  if (std::size_t(logits.rows()) != targets.size() ||
      targets.size() != weights.size())
    throw InvalidInputError("backward inputs must have matching lengths");
  const double inv_n = 1.0 / double(targets.size());
  Mat dlogits(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd p = (logits.row(i).array() - m).exp();
    p /= p.sum();
    dlogits.row(i) = p * (weights[std::size_t(i)] * inv_n);
    dlogits(i, targets[std::size_t(i)]) -= weights[std::size_t(i)] * inv_n;
  }
  impl_->backward_from_logit_grad(dlogits);
}

void PolytuneModel::zero_grad() {
  for (Tensor* t : impl_->params) t->grad.setZero();
}

std::vector<int> PolytuneModel::greedy_decode(const Mat& score_patches,
                                              const Mat& perf_patches,
                                              int max_len, bool* truncated) {
  impl_->encode(score_patches, perf_patches, false);
  max_len = std::min(max_len, impl_->cfg.max_decoder_len);
  std::vector<int> tokens = {vocab::kSos};
  if (truncated) *truncated = false;
  while (int(tokens.size()) < max_len) {
    Mat logits = impl_->decode(tokens, false);
    const Eigen::Index last = logits.rows() - 1;
    int best = 0;
    double best_v = logits(last, 0);
    for (int v = 1; v < impl_->cfg.vocab_size; ++v)
      if (logits(last, v) > best_v) {
        best_v = logits(last, v);
        best = v;
      }
    tokens.push_back(best);
    if (best == vocab::kEos) return tokens;
  }
  if (truncated) *truncated = true;
  return tokens;
}

Rng& PolytuneModel::rng() { return impl_->rng; }

}  // namespace polytune
