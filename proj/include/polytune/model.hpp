#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "polytune/rng.hpp"
#include "polytune/token_codec.hpp"

namespace polytune {

using Mat = Eigen::MatrixXd;

/// A named parameter with its gradient accumulator.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;
};

/// Architecture and loss configuration. The published widths are 768-dim
/// encoders feeding a 512-dim decoder; the desk defaults shrink every width
/// while keeping the same structure.
struct ModelConfig {
  int enc_dim = 64;
  int dec_dim = 48;
  int enc_layers = 2;    // per branch
  int joint_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ff_multiplier = 4;
  int max_decoder_len = 512;
  int vocab_size = vocab::kSize;
  int num_patches = 512;
  int patch_dim = 256;
  double alpha_error = 10.0;
  AlphaScope alpha_scope = AlphaScope::EventGroup;
  double dropout = 0.1;
  uint64_t seed = 0;

  void validate() const;

  /// Small config for finite-difference gradient checks.
  static ModelConfig tiny();

  /// The published 768 -> 512 encoder/decoder projection widths.
  static ModelConfig paper_shape();
};

/// Per-token loss weights: alpha_error on error tokens, 1 elsewhere.
std::vector<double> loss_weights(const std::vector<int>& tokens,
                                 const ModelConfig& config);

/// Dual-encoder sequence-to-sequence error detection model: two patch
/// encoders (score and performance), a joint encoder over the concatenated
/// streams with additive branch embeddings, a linear projection to the
/// decoder width, and an autoregressive decoder with cross-attention.
class PolytuneModel {
 public:
  explicit PolytuneModel(const ModelConfig& config);
  ~PolytuneModel();
  PolytuneModel(PolytuneModel&&) noexcept;
  PolytuneModel& operator=(PolytuneModel&&) noexcept;

  const ModelConfig& config() const;

  /// All parameters in registration order (stable across runs).
  std::vector<Tensor*> parameters();

  /// Teacher-forced forward pass: logits for every prefix position.
  /// score_patches and perf_patches are num_patches x patch_dim.
  Mat forward(const Mat& score_patches, const Mat& perf_patches,
              const std::vector<int>& prefix, bool training = false);

  /// Runs the encoder half only and caches the projected memory, after
  /// which decode_logits can be called repeatedly (greedy decoding).
  void encode_memory(const Mat& score_patches, const Mat& perf_patches,
                     bool training = false);
  Mat decode_logits(const std::vector<int>& prefix, bool training = false);

  /// Mean over positions of alpha(y_i) * CE(y_i, logits_i).
  double loss(const Mat& logits, const std::vector<int>& targets,
              const std::vector<double>& weights) const;

  /// Accumulates exact gradients of loss() into every parameter's grad.
  /// Requires the activations cached by the matching forward call.
  void backward(const Mat& logits, const std::vector<int>& targets,
                const std::vector<double>& weights);

  void zero_grad();

  /// Greedy autoregressive decoding: SOS first, argmax each step, stops at
  /// EOS or max_len (truncation flagged).
  std::vector<int> greedy_decode(const Mat& score_patches,
                                 const Mat& perf_patches, int max_len,
                                 bool* truncated = nullptr);

  Rng& rng();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainSample {
  Mat score_patches;
  Mat perf_patches;
  std::vector<int> tokens;  // SOS ... EOS
};

struct TrainConfig {
  int max_steps = 3000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_every = 25;          // teacher-forced accuracy over the whole set
  double stop_accuracy = -1.0;  // early stop threshold, disabled when < 0
};

struct LossCurvePoint {
  int step;
  double loss;
  double token_accuracy;
};

struct TrainResult {
  std::vector<LossCurvePoint> curve;
  double final_accuracy = 0.0;  // teacher-forced, whole training set
  int steps_run = 0;
};

/// Adam state for one model; step order is deterministic (samples cycled in
/// order, one optimizer update per sample).
class Trainer {
 public:
  Trainer(PolytuneModel& model, const TrainConfig& config);

  using StepCallback = std::function<void(int step, double loss)>;
  TrainResult run(const std::vector<TrainSample>& samples,
                  const StepCallback& on_step = {});

  /// One teacher-forced update on a sample; returns (loss, accuracy).
  std::pair<double, double> step(const TrainSample& sample);

  /// Teacher-forced token accuracy over a sample set; no gradient updates.
  double evaluate(const std::vector<TrainSample>& samples);

  int64_t step_count() const { return step_count_; }

  // Optimizer state access for checkpointing.
  std::vector<Mat>& first_moments() { return m_; }
  std::vector<Mat>& second_moments() { return v_; }
  void set_step_count(int64_t steps) { step_count_ = steps; }

 private:
  void apply_gradients();

  PolytuneModel& model_;
  TrainConfig config_;
  std::vector<Mat> m_, v_;
  int64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Versioned binary checkpoint: header (version, config, feature
/// normalization stats, rng state, step), named f64 tensors, optional Adam
/// moments.
struct Checkpoint {
  ModelConfig config;
  double feature_mean = 0.0;
  double feature_std = 1.0;
  int64_t step = 0;
  std::string rng_state;
  std::vector<Tensor> tensors;
  std::vector<Mat> adam_m, adam_v;
  bool has_optimizer = false;
};

void save_checkpoint(const std::string& path, PolytuneModel& model,
                     double feature_mean, double feature_std,
                     Trainer* trainer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

/// Builds a model (and optionally restores trainer state) from a checkpoint.
PolytuneModel restore_model(const Checkpoint& checkpoint);
void restore_trainer(const Checkpoint& checkpoint, Trainer& trainer);

void write_loss_curve_csv(const std::string& path,
                          const std::vector<LossCurvePoint>& curve);

}  // namespace polytune
