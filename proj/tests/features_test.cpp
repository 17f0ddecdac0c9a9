#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "polytune/errors.hpp"
#include "polytune/features.hpp"
#include "polytune/rng.hpp"

using namespace polytune;

namespace {

AudioBuffer tone(double hz, double seconds, double amplitude = 0.5,
                 int rate = 16000) {
  AudioBuffer a;
  a.sample_rate = rate;
  a.samples.resize(std::size_t(seconds * rate));
  for (std::size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = amplitude * std::sin(2.0 * M_PI * hz * double(i) / rate);
  return a;
}

std::string temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "polytune_feat_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

// Mel centers recomputed here, independent of the implementation.
double test_mel_center(int band, const FeatureConfig& cfg) {
  auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto to_hz = [](double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
  };
  const double lo = to_mel(cfg.mel_fmin);
  const double hi = to_mel(cfg.sample_rate / 2.0);
  return to_hz(lo + (hi - lo) * (band + 1) / (cfg.mel_bins + 1));
}

}  // namespace

TEST_CASE("segment grid arithmetic gives exactly 512 patches") {
  FeatureConfig cfg;
  CHECK(cfg.segment_samples() == 34320);
  CHECK(cfg.patches_per_segment() == 512);
  CHECK(cfg.patch_dim() == 256);
  CHECK((cfg.mel_bins / cfg.patch_size) == 8);
  CHECK((cfg.frames_per_segment / cfg.patch_size) == 64);
}

TEST_CASE("segmentation counts and padding") {
  FeatureConfig cfg;
  SUBCASE("4.29 s gives two full segments") {
    auto segs = segment_audio(tone(440.0, 4.29), cfg);
    CHECK(segs.size() == 2);
    for (const auto& s : segs)
      CHECK(s.samples.size() == std::size_t(cfg.segment_samples()));
  }
  SUBCASE("1 s gives one zero-padded segment") {
    auto segs = segment_audio(tone(440.0, 1.0), cfg);
    REQUIRE(segs.size() == 1);
    REQUIRE(segs[0].samples.size() == std::size_t(cfg.segment_samples()));
    for (std::size_t i = 16000; i < segs[0].samples.size(); ++i)
      CHECK(segs[0].samples[i] == 0.0);
  }
  SUBCASE("empty audio gives no segments") {
    AudioBuffer empty;
    CHECK(segment_audio(empty, cfg).empty());
  }
}

TEST_CASE("segmentation is lossless up to padding") {
  FeatureConfig cfg;
  Rng rng(5);
  AudioBuffer a;
  a.samples.resize(std::size_t(cfg.segment_samples()) * 2 + 12345);
  for (auto& s : a.samples) s = rng.uniform(-1.0, 1.0);

  auto segs = segment_audio(a, cfg);
  std::vector<double> glued;
  for (const auto& s : segs)
    glued.insert(glued.end(), s.samples.begin(), s.samples.end());
  glued.resize(a.samples.size());
  CHECK(glued == a.samples);
}

TEST_CASE("splicing two segment-multiple tracks equals segmenting each") {
  FeatureConfig cfg;
  AudioBuffer a = tone(330.0, cfg.segment_seconds);
  AudioBuffer b = tone(550.0, cfg.segment_seconds * 2);
  a.samples.resize(std::size_t(cfg.segment_samples()));
  b.samples.resize(std::size_t(cfg.segment_samples()) * 2);

  AudioBuffer joined;
  joined.samples = a.samples;
  joined.samples.insert(joined.samples.end(), b.samples.begin(), b.samples.end());

  auto segs_joined = segment_audio(joined, cfg);
  auto segs_a = segment_audio(a, cfg);
  auto segs_b = segment_audio(b, cfg);
  REQUIRE(segs_joined.size() == segs_a.size() + segs_b.size());
  CHECK(segs_joined[0].samples == segs_a[0].samples);
  CHECK(segs_joined[1].samples == segs_b[0].samples);
  CHECK(segs_joined[2].samples == segs_b[1].samples);
}

TEST_CASE("all-zero segment hits the log floor everywhere") {
  FeatureConfig cfg;
  AudioBuffer z;
  z.samples.assign(std::size_t(cfg.segment_samples()), 0.0);
  Matrix m = logmel(z, cfg);
  REQUIRE(m.rows() == 128);
  REQUIRE(m.cols() == 1024);
  const double floor_log = std::log(cfg.log_floor);
  CHECK(m.minCoeff() == doctest::Approx(floor_log));
  CHECK(m.maxCoeff() == doctest::Approx(floor_log));
}

TEST_CASE("pure tone concentrates in its mel band") {
  FeatureConfig cfg;
  auto segs = segment_audio(tone(440.0, cfg.segment_seconds), cfg);
  REQUIRE(segs.size() == 1);
  Matrix m = logmel(segs[0], cfg);

  const int expected = mel_band_of(440.0, cfg);
  CHECK(std::abs(test_mel_center(expected, cfg) - 440.0) < 25.0);
  for (int frame = 0; frame < m.cols(); ++frame) {
    int arg = 0;
    m.col(frame).maxCoeff(&arg);
    CHECK(std::abs(arg - expected) <= 1);
  }
}

TEST_CASE("doubling amplitude shifts log energy by log 2 squared") {
  FeatureConfig cfg;
  auto quiet = segment_audio(tone(440.0, cfg.segment_seconds, 0.25), cfg)[0];
  auto loud = segment_audio(tone(440.0, cfg.segment_seconds, 0.5), cfg)[0];
  Matrix mq = logmel(quiet, cfg);
  Matrix ml = logmel(loud, cfg);
  // Power doubles twice (amplitude x2), where both are above the floor.
  const double floor_log = std::log(cfg.log_floor);
  int checked = 0;
  for (int r = 0; r < mq.rows(); ++r)
    for (int c = 0; c < mq.cols(); ++c)
      if (mq(r, c) > floor_log + 2.0 && ml(r, c) > floor_log + 2.0) {
        CHECK(ml(r, c) - mq(r, c) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-6));
        checked++;
      }
  CHECK(checked > 100);
}

TEST_CASE("logmel validates the segment length") {
  FeatureConfig cfg;
  AudioBuffer wrong;
  wrong.samples.assign(1000, 0.0);
  CHECK_THROWS_AS(logmel(wrong, cfg), InvalidInputError);
}

TEST_CASE("patchify produces 512 patches and inverts exactly") {
  FeatureConfig cfg;
  Rng rng(17);
  Matrix m(cfg.mel_bins, cfg.frames_per_segment);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-5.0, 5.0);

  Matrix patches = patchify(m, cfg);
  REQUIRE(patches.rows() == 512);
  REQUIRE(patches.cols() == 256);
  Matrix back = unpatchify(patches, cfg);
  CHECK((back - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant input gives identical patches") {
  FeatureConfig cfg;
  Matrix m = Matrix::Constant(cfg.mel_bins, cfg.frames_per_segment, 3.25);
  Matrix patches = patchify(m, cfg);
  for (int r = 1; r < patches.rows(); ++r)
    CHECK((patches.row(r) - patches.row(0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("patchify rejects wrong shapes") {
  FeatureConfig cfg;
  Matrix wrong(64, 1024);
  CHECK_THROWS_AS(patchify(wrong, cfg), InvalidInputError);
  Matrix wrong2(100, 256);
  CHECK_THROWS_AS(unpatchify(wrong2, cfg), InvalidInputError);
}

TEST_CASE("matrix cache round trips at float precision") {
  Rng rng(23);
  Matrix m(37, 53);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-100.0, 100.0);
  const std::string path = temp_path("cache.bin");
  save_matrix(m, path);
  Matrix back = load_matrix(path);
  REQUIRE(back.rows() == m.rows());
  REQUIRE(back.cols() == m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      CHECK(back(r, c) == doctest::Approx(m(r, c)).epsilon(1e-6));
}

TEST_CASE("extract_features normalizes and patchifies every segment") {
  FeatureConfig cfg;
  AudioBuffer a = tone(523.25, 3.0);
  auto feats = extract_features(a, cfg, -5.0, 2.0);
  REQUIRE(feats.size() == 2);
  for (const auto& f : feats) {
    CHECK(f.logmel.rows() == 128);
    CHECK(f.patches.rows() == 512);
  }
  // Normalization: patches = (logmel + 5) / 2 rearranged.
  Matrix manual = patchify(((feats[0].logmel.array() + 5.0) / 2.0).matrix(), cfg);
  CHECK((manual - feats[0].patches).cwiseAbs().maxCoeff() < 1e-12);
}
