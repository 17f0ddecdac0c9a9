#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "polytune/errors.hpp"
#include "polytune/model.hpp"

namespace polytune {

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(PolytuneModel& model, const TrainConfig& config)
    : model_(model), config_(config) {
  for (Tensor* t : model_.parameters()) {
    m_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
    v_.push_back(Mat::Zero(t->value.rows(), t->value.cols()));
  }
}

std::pair<double, double> Trainer::step(const TrainSample& sample) {
  if (sample.tokens.size() < 2)
    throw InvalidInputError("training sample needs at least SOS and one target");
  const std::vector<int> prefix(sample.tokens.begin(), sample.tokens.end() - 1);
  const std::vector<int> targets(sample.tokens.begin() + 1, sample.tokens.end());
  auto all_weights = loss_weights(sample.tokens, model_.config());
  const std::vector<double> weights(all_weights.begin() + 1, all_weights.end());

  Mat logits = model_.forward(sample.score_patches, sample.perf_patches, prefix,
                              /*training=*/true);
  const double loss = model_.loss(logits, targets, weights);
  if (!std::isfinite(loss))
    throw Error("non-finite loss at step " + std::to_string(step_count_ + 1));

  model_.zero_grad();
  model_.backward(logits, targets, weights);
  apply_gradients();

  int hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (int(arg) == targets[std::size_t(i)]) hits++;
  }
  return {loss, double(hits) / double(targets.size())};
}

void Trainer::apply_gradients() {
  step_count_++;
  const double t = double(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  auto params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& g = params[i]->grad;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const Mat m_hat = m_[i] / bc1;
    const Mat v_hat = v_[i] / bc2;
    params[i]->value.array() -=
        config_.learning_rate * m_hat.array() /
        (v_hat.array().sqrt() + config_.adam_eps);
  }
}

double Trainer::evaluate(const std::vector<TrainSample>& samples) {
  int64_t hits = 0, total = 0;
  for (const auto& sample : samples) {
    const std::vector<int> prefix(sample.tokens.begin(), sample.tokens.end() - 1);
    Mat logits = model_.forward(sample.score_patches, sample.perf_patches,
                                prefix, /*training=*/false);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      hits += int(arg) == sample.tokens[std::size_t(i) + 1];
      total++;
    }
  }
  return total ? double(hits) / double(total) : 0.0;
}

TrainResult Trainer::run(const std::vector<TrainSample>& samples,
                         const StepCallback& on_step) {
  if (samples.empty()) throw InvalidInputError("no training samples");
  for (const auto& s : samples) {
    if (int(s.tokens.size()) - 1 > model_.config().max_decoder_len)
      throw InvalidInputError("sample token sequence exceeds max_decoder_len");
  }

  TrainResult result;
  while (result.steps_run < config_.max_steps) {
    const auto& sample = samples[std::size_t(step_count_) % samples.size()];
    auto [loss, acc] = step(sample);
    result.steps_run++;
    result.curve.push_back({int(step_count_), loss, acc});
    if (on_step) on_step(int(step_count_), loss);

    if (config_.stop_accuracy > 0.0 && config_.eval_every > 0 &&
        result.steps_run % config_.eval_every == 0) {
      if (evaluate(samples) >= config_.stop_accuracy) break;
    }
  }
  result.final_accuracy = evaluate(samples);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_i64(std::ostream& out, int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}
void put_matrix(std::ostream& out, const Mat& m) {
  put_u32(out, uint32_t(m.rows()));
  put_u32(out, uint32_t(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

uint32_t get_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
int64_t get_i64(std::istream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double get_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string get_string(std::istream& in) {
  const uint32_t len = get_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), std::streamsize(len));
  return s;
}
Mat get_matrix(std::istream& in) {
  const uint32_t rows = get_u32(in);
  const uint32_t cols = get_u32(in);
  Mat m(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) m(r, c) = get_f64(in);
  return m;
}

void put_config(std::ostream& out, const ModelConfig& c) {
  const int32_t ints[] = {c.enc_dim,        c.dec_dim,    c.enc_layers,
                          c.joint_layers,   c.dec_layers, c.heads,
                          c.ff_multiplier,  c.max_decoder_len,
                          c.vocab_size,     c.num_patches, c.patch_dim};
  for (int32_t v : ints) out.write(reinterpret_cast<const char*>(&v), 4);
  put_f64(out, c.alpha_error);
  const uint8_t scope = c.alpha_scope == AlphaScope::EventGroup ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&scope), 1);
  put_f64(out, c.dropout);
  out.write(reinterpret_cast<const char*>(&c.seed), 8);
}

ModelConfig get_config(std::istream& in) {
  ModelConfig c;
  int32_t* ints[] = {&c.enc_dim,        &c.dec_dim,    &c.enc_layers,
                     &c.joint_layers,   &c.dec_layers, &c.heads,
                     &c.ff_multiplier,  &c.max_decoder_len,
                     &c.vocab_size,     &c.num_patches, &c.patch_dim};
  for (int32_t* p : ints) in.read(reinterpret_cast<char*>(p), 4);
  c.alpha_error = get_f64(in);
  uint8_t scope = 1;
  in.read(reinterpret_cast<char*>(&scope), 1);
  c.alpha_scope = scope ? AlphaScope::EventGroup : AlphaScope::LabelOnly;
  c.dropout = get_f64(in);
  in.read(reinterpret_cast<char*>(&c.seed), 8);
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, PolytuneModel& model,
                     double feature_mean, double feature_std,
                     Trainer* trainer) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_config(out, model.config());
  put_f64(out, feature_mean);
  put_f64(out, feature_std);
  put_i64(out, trainer ? trainer->step_count() : 0);
  std::ostringstream rng_ss;
  rng_ss << model.rng().engine();
  put_string(out, rng_ss.str());

  auto params = model.parameters();
  put_u32(out, uint32_t(params.size()));
  for (Tensor* t : params) {
    put_string(out, t->name);
    put_matrix(out, t->value);
  }
  const uint8_t has_opt = trainer ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&has_opt), 1);
  if (trainer) {
    for (const Mat& m : trainer->first_moments()) put_matrix(out, m);
    for (const Mat& v : trainer->second_moments()) put_matrix(out, v);
  }
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("bad checkpoint magic", 0);
  if (get_u32(in) != kVersion)
    throw ParseError("unsupported checkpoint version", 4);

  Checkpoint ck;
  ck.config = get_config(in);
  ck.feature_mean = get_f64(in);
  ck.feature_std = get_f64(in);
  ck.step = get_i64(in);
  ck.rng_state = get_string(in);
  const uint32_t count = get_u32(in);
  ck.tensors.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    ck.tensors[i].name = get_string(in);
    ck.tensors[i].value = get_matrix(in);
  }
  uint8_t has_opt = 0;
  in.read(reinterpret_cast<char*>(&has_opt), 1);
  ck.has_optimizer = has_opt != 0;
  if (ck.has_optimizer) {
    ck.adam_m.resize(count);
    ck.adam_v.resize(count);
    for (uint32_t i = 0; i < count; ++i) ck.adam_m[i] = get_matrix(in);
    for (uint32_t i = 0; i < count; ++i) ck.adam_v[i] = get_matrix(in);
  }
  if (!in) throw ParseError("truncated checkpoint", 0);
  return ck;
}

PolytuneModel restore_model(const Checkpoint& checkpoint) {
  PolytuneModel model(checkpoint.config);
  auto params = model.parameters();
  if (params.size() != checkpoint.tensors.size())
    throw ParseError("checkpoint tensor count mismatch", 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& saved = checkpoint.tensors[i];
    if (params[i]->name != saved.name ||
        params[i]->value.rows() != saved.value.rows() ||
        params[i]->value.cols() != saved.value.cols())
      throw ParseError("checkpoint tensor '" + saved.name + "' mismatch", 0);
    params[i]->value = saved.value;
  }
  std::istringstream rng_ss(checkpoint.rng_state);
  rng_ss >> model.rng().engine();
  return model;
}

void restore_trainer(const Checkpoint& checkpoint, Trainer& trainer) {
  if (!checkpoint.has_optimizer)
    throw InvalidInputError("checkpoint carries no optimizer state");
  if (trainer.first_moments().size() != checkpoint.adam_m.size())
    throw ParseError("optimizer state count mismatch", 0);
  trainer.first_moments() = checkpoint.adam_m;
  trainer.second_moments() = checkpoint.adam_v;
  trainer.set_step_count(checkpoint.step);
}

void write_loss_curve_csv(const std::string& path,
                          const std::vector<LossCurvePoint>& curve) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write loss curve: " + path);
  out << "step,loss,token_accuracy\n";
  char line[128];
  for (const auto& p : curve) {
    std::snprintf(line, sizeof(line), "%d,%.17g,%.17g\n", p.step, p.loss,
                  p.token_accuracy);
    out << line;
  }
}

}  // namespace polytune
