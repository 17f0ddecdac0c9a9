#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "polytune/errors.hpp"
#include "polytune/model.hpp"
#include "polytune/rng.hpp"
#include "polytune/token_codec.hpp"

using namespace polytune;

namespace {

Mat random_patches(Rng& rng, const ModelConfig& cfg) {
  Mat m(cfg.num_patches, cfg.patch_dim);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.normal();
  return m;
}

std::vector<int> simple_tokens() {
  return {vocab::kSos,
          vocab::kEndTie,
          vocab::time_token(3),
          vocab::label_token(Label::Correct),
          vocab::kOn,
          vocab::note_token(60),
          vocab::time_token(40),
          vocab::label_token(Label::Missed),
          vocab::kOff,
          vocab::note_token(60),
          vocab::kEos};
}

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "polytune_model_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("forward produces one logit row per prefix position") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 1;
  PolytuneModel model(cfg);
  Rng rng(2);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);
  auto tokens = simple_tokens();
  const std::vector<int> prefix(tokens.begin(), tokens.end() - 1);
  Mat logits = model.forward(score, perf, prefix);
  CHECK(logits.rows() == Eigen::Index(prefix.size()));
  CHECK(logits.cols() == 341);
}

TEST_CASE("swapping score and performance inputs changes the logits") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 3;
  PolytuneModel model(cfg);
  Rng rng(4);
  Mat a = random_patches(rng, cfg);
  Mat b = random_patches(rng, cfg);
  const std::vector<int> prefix = {vocab::kSos, vocab::kEndTie};
  Mat ab = model.forward(a, b, prefix);
  Mat ba = model.forward(b, a, prefix);
  CHECK((ab - ba).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("uniform logits give the analytic loss values") {
  ModelConfig cfg = ModelConfig::tiny();
  PolytuneModel model(cfg);
  const int n = 7;
  Mat logits = Mat::Zero(n, cfg.vocab_size);
  std::vector<int> targets(n, vocab::note_token(60));

  SUBCASE("alpha == 1 recovers ln(341)") {
    std::vector<double> weights(n, 1.0);
    CHECK(std::abs(model.loss(logits, targets, weights) - std::log(341.0)) <
          1e-12);
  }
  SUBCASE("all-error targets weigh 10x") {
    std::vector<double> weights(n, 10.0);
    CHECK(std::abs(model.loss(logits, targets, weights) -
                   10.0 * std::log(341.0)) < 1e-12);
  }
  SUBCASE("matches brute-force weighted summation") {
    Rng rng(5);
    Mat noisy(n, cfg.vocab_size);
    for (Eigen::Index r = 0; r < noisy.rows(); ++r)
      for (Eigen::Index c = 0; c < noisy.cols(); ++c) noisy(r, c) = rng.normal();
    std::vector<double> weights;
    for (int i = 0; i < n; ++i) weights.push_back(i % 2 ? 10.0 : 1.0);

    double expect = 0.0;
    for (int i = 0; i < n; ++i) {
      double denom = 0.0;
      for (int v = 0; v < cfg.vocab_size; ++v) denom += std::exp(noisy(i, v));
      expect += weights[std::size_t(i)] *
                (-std::log(std::exp(noisy(i, targets[std::size_t(i)])) / denom));
    }
    expect /= n;
    CHECK(model.loss(noisy, targets, weights) ==
          doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("perfect one-hot logits drive the loss to zero") {
  ModelConfig cfg = ModelConfig::tiny();
  PolytuneModel model(cfg);
  const int n = 5;
  std::vector<int> targets;
  Mat logits = Mat::Zero(n, cfg.vocab_size);
  for (int i = 0; i < n; ++i) {
    targets.push_back(vocab::note_token(40 + i));
    logits(i, targets.back()) = 200.0;
  }
  std::vector<double> weights(n, 1.0);
  CHECK(model.loss(logits, targets, weights) < 1e-12);
}

TEST_CASE("loss weights follow the alpha scope") {
  ModelConfig cfg = ModelConfig::tiny();
  auto tokens = simple_tokens();
  auto weights = loss_weights(tokens, cfg);
  REQUIRE(weights.size() == tokens.size());
  CHECK(weights[3] == 1.0);   // Label(Correct)
  CHECK(weights[7] == 10.0);  // Label(Missed)
  CHECK(weights[8] == 10.0);  // Off in the missed group
  CHECK(weights[9] == 10.0);  // Note in the missed group
  CHECK(weights[2] == 1.0);   // Time token

  cfg.alpha_scope = AlphaScope::LabelOnly;
  auto label_only = loss_weights(tokens, cfg);
  CHECK(label_only[7] == 10.0);
  CHECK(label_only[8] == 1.0);
  CHECK(label_only[9] == 1.0);
}

TEST_CASE("analytic gradients match central finite differences") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 11;
  PolytuneModel model(cfg);
  Rng rng(12);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);
  auto tokens = simple_tokens();
  const std::vector<int> prefix(tokens.begin(), tokens.end() - 1);
  const std::vector<int> targets(tokens.begin() + 1, tokens.end());
  auto all_weights = loss_weights(tokens, cfg);
  const std::vector<double> weights(all_weights.begin() + 1, all_weights.end());

  model.zero_grad();
  Mat logits = model.forward(score, perf, prefix);
  model.backward(logits, targets, weights);

  auto loss_at = [&]() {
    return model.loss(model.forward(score, perf, prefix), targets, weights);
  };

  // Central differences leave ~1e-10 absolute noise (truncation h^2 plus
  // roundoff eps*|L|/h), so gradients below 1e-8 are compared absolutely;
  // everything resolvable must agree to 1e-4 relative.
  const double h = 1e-5;
  const double absolute_floor = 1e-8;
  double worst = 0.0;
  std::string worst_name;
  for (Tensor* t : model.parameters()) {
    for (Eigen::Index r = 0; r < t->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t->value.cols(); ++c) {
        const double saved = t->value(r, c);
        t->value(r, c) = saved + h;
        const double up = loss_at();
        t->value(r, c) = saved - h;
        const double down = loss_at();
        t->value(r, c) = saved;
        const double fd = (up - down) / (2.0 * h);
        const double an = t->grad(r, c);
        const double diff = std::abs(fd - an);
        if (diff < absolute_floor) continue;
        const double rel = diff / std::max(std::abs(fd), std::abs(an));
        if (rel > worst) {
          worst = rel;
          worst_name = t->name;
        }
      }
    }
  }
  INFO("worst relative error ", worst, " at ", worst_name);
  CHECK(worst < 1e-4);
}

TEST_CASE("doubling alpha doubles the error-token gradient contribution") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 21;
  Rng rng(22);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);
  // Single target position so the whole gradient scales with its weight.
  const std::vector<int> prefix = {vocab::kSos};
  const std::vector<int> targets = {vocab::label_token(Label::Missed)};

  PolytuneModel m1(cfg), m2(cfg);
  Mat l1 = m1.forward(score, perf, prefix);
  m1.zero_grad();
  m1.backward(l1, targets, {10.0});
  Mat l2 = m2.forward(score, perf, prefix);
  m2.zero_grad();
  m2.backward(l2, targets, {20.0});

  auto p1 = m1.parameters(), p2 = m2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const double diff =
        (p2[i]->grad - 2.0 * p1[i]->grad).cwiseAbs().maxCoeff();
    CHECK(diff < 1e-9);
  }
}

TEST_CASE("causality: later prefix tokens do not affect earlier logits") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 31;
  PolytuneModel model(cfg);
  Rng rng(32);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);

  std::vector<int> prefix = {vocab::kSos, vocab::kEndTie, vocab::time_token(5),
                             vocab::label_token(Label::Correct), vocab::kOn};
  Mat base = model.forward(score, perf, prefix);
  std::vector<int> mutated = prefix;
  mutated[4] = vocab::note_token(99);
  Mat changed = model.forward(score, perf, mutated);
  // Positions 0..3 see identical inputs under the causal mask.
  CHECK((base.topRows(4) - changed.topRows(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((base.row(4) - changed.row(4)).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("patch permutation with matching positional embeddings is a no-op") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 41;
  PolytuneModel model(cfg);
  Rng rng(42);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);
  const std::vector<int> prefix = {vocab::kSos, vocab::kEndTie};
  Mat base = model.forward(score, perf, prefix);

  // Rotate the score patches and the score positional embedding together.
  std::vector<int> perm(std::size_t(cfg.num_patches));
  std::iota(perm.begin(), perm.end(), 0);
  std::rotate(perm.begin(), perm.begin() + 3, perm.end());

  Mat score_perm(score.rows(), score.cols());
  for (int i = 0; i < cfg.num_patches; ++i)
    score_perm.row(i) = score.row(perm[std::size_t(i)]);

  Tensor* pos = nullptr;
  for (Tensor* t : model.parameters())
    if (t->name == "score.pos_emb") pos = t;
  REQUIRE(pos != nullptr);
  const Mat saved = pos->value;
  Mat permuted(saved.rows(), saved.cols());
  for (int i = 0; i < cfg.num_patches; ++i)
    permuted.row(i) = saved.row(perm[std::size_t(i)]);
  pos->value = permuted;

  Mat after = model.forward(score_perm, perf, prefix);
  pos->value = saved;
  CHECK((base - after).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("input validation") {
  ModelConfig cfg = ModelConfig::tiny();
  PolytuneModel model(cfg);
  Rng rng(51);
  Mat good = random_patches(rng, cfg);
  Mat bad(cfg.num_patches + 1, cfg.patch_dim);
  bad.setZero();
  CHECK_THROWS_AS(model.forward(bad, good, {vocab::kSos}), InvalidInputError);
  CHECK_THROWS_AS(model.forward(good, good, {vocab::kEndTie}),
                  InvalidInputError);  // must start with SOS
  CHECK_THROWS_AS(model.forward(good, good, std::vector<int>{}),
                  InvalidInputError);

  ModelConfig invalid = cfg;
  invalid.heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(PolytuneModel{invalid}, ConfigError);
  invalid = cfg;
  invalid.vocab_size = 340;
  CHECK_THROWS_AS(PolytuneModel{invalid}, ConfigError);
}

TEST_CASE("greedy decode stops at EOS and parses under the tolerant decoder") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 61;
  PolytuneModel model(cfg);
  Rng rng(62);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);
  bool truncated = false;
  auto tokens = model.greedy_decode(score, perf, cfg.max_decoder_len, &truncated);
  CHECK(tokens.front() == vocab::kSos);
  CHECK(int(tokens.size()) <= cfg.max_decoder_len);
  if (!truncated) CHECK(tokens.back() == vocab::kEos);

  TokenSegment seg;
  seg.tokens = tokens;
  DecodedSegment d = decode(seg, {});
  for (const auto& n : d.notes) {
    CHECK(n.pitch >= 0);
    CHECK(n.pitch <= 127);
  }
}

TEST_CASE("training is deterministic and resumable from a checkpoint") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 71;
  Rng rng(72);
  std::vector<TrainSample> samples;
  for (int i = 0; i < 2; ++i) {
    TrainSample s;
    s.score_patches = random_patches(rng, cfg);
    s.perf_patches = random_patches(rng, cfg);
    s.tokens = simple_tokens();
    samples.push_back(std::move(s));
  }
  TrainConfig tc;
  tc.max_steps = 5;
  tc.learning_rate = 1e-3;
  tc.eval_every = 0;

  // Run A: 5 steps, save, 3 more.
  PolytuneModel model_a(cfg);
  Trainer trainer_a(model_a, tc);
  trainer_a.run(samples);
  const std::string path = temp_path("resume.ckpt");
  save_checkpoint(path, model_a, 0.5, 2.0, &trainer_a);
  std::vector<double> continued;
  for (int i = 0; i < 3; ++i)
    continued.push_back(
        trainer_a.step(samples[std::size_t(trainer_a.step_count()) %
                                samples.size()]).first);

  // Run B: restore and repeat the 3 steps.
  Checkpoint ck = load_checkpoint(path);
  CHECK(ck.feature_mean == 0.5);
  CHECK(ck.feature_std == 2.0);
  CHECK(ck.step == 5);
  PolytuneModel model_b = restore_model(ck);
  Trainer trainer_b(model_b, tc);
  restore_trainer(ck, trainer_b);
  for (int i = 0; i < 3; ++i) {
    const double loss =
        trainer_b.step(samples[std::size_t(trainer_b.step_count()) %
                                samples.size()]).first;
    CHECK(loss == continued[std::size_t(i)]);
  }
}

TEST_CASE("two runs with the same seed produce identical curves") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 81;
  cfg.dropout = 0.1;  // exercise the rng path too
  Rng rng(82);
  TrainSample s;
  s.score_patches = random_patches(rng, cfg);
  s.perf_patches = random_patches(rng, cfg);
  s.tokens = simple_tokens();
  TrainConfig tc;
  tc.max_steps = 6;
  tc.eval_every = 0;

  PolytuneModel a(cfg), b(cfg);
  Trainer ta(a, tc), tb(b, tc);
  auto ra = ta.run({s});
  auto rb = tb.run({s});
  REQUIRE(ra.curve.size() == rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i)
    CHECK(ra.curve[i].loss == rb.curve[i].loss);
}

TEST_CASE("initial loss sits near the uniform value") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.seed = 91;
  PolytuneModel model(cfg);
  Rng rng(92);
  Mat score = random_patches(rng, cfg);
  Mat perf = random_patches(rng, cfg);
  auto tokens = simple_tokens();
  const std::vector<int> prefix(tokens.begin(), tokens.end() - 1);
  const std::vector<int> targets(tokens.begin() + 1, tokens.end());
  std::vector<double> weights(targets.size(), 1.0);
  const double loss =
      model.loss(model.forward(score, perf, prefix), targets, weights);
  // Random init with 0.02-scale weights stays close to uniform.
  CHECK(loss == doctest::Approx(std::log(341.0)).epsilon(0.05));
}

TEST_CASE("paper-shape config keeps the published projection widths") {
  ModelConfig cfg = ModelConfig::paper_shape();
  CHECK(cfg.enc_dim == 768);
  CHECK(cfg.dec_dim == 512);
  CHECK_NOTHROW(cfg.validate());
}
