#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "polytune/errors.hpp"
#include "polytune/error_gen.hpp"
#include "polytune/note_io.hpp"
#include "polytune/rng.hpp"

using namespace polytune;

namespace {

NoteTrack make_reference(int notes, uint64_t seed = 11, double gap = 0.25) {
  Rng rng(seed);
  NoteTrack t;
  t.source_id = "ref";
  t.instrument = "piano";
  double at = 0.0;
  for (int i = 0; i < notes; ++i) {
    NoteEvent n;
    n.pitch = 36 + int(rng.below(60));
    n.onset = at;
    n.offset = at + 0.2;
    t.notes.push_back(n);
    at += gap;
  }
  canonicalize(t);
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "polytune_gen_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

/// Exact standard deviation of N(0, sigma^2) truncated to [-a*sigma, a*sigma].
double truncated_std(double sigma, double a) {
  const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
  const double mass = std::erf(a / std::sqrt(2.0));
  return sigma * std::sqrt(1.0 - 2.0 * a * phi / mass);
}

}  // namespace

TEST_CASE("lambda zero is a fixed point") {
  NoteTrack ref = make_reference(50);
  ErrorConfig cfg;
  cfg.lambda_low = 0.0;
  cfg.lambda_high = 0.0;
  auto result = inject_errors(ref, cfg);
  CHECK(result.performance.notes == ref.notes);
  CHECK(result.labels.missed.empty());
  CHECK(result.labels.extra.empty());
  CHECK(result.labels.correct.notes == ref.notes);
  CHECK(result.log.empty());
}

TEST_CASE("miss removes the note and records it as missed") {
  NoteTrack ref = make_reference(30);
  ErrorConfig cfg;
  cfg.lambda_low = cfg.lambda_high = 1.0;
  cfg.error_type_weights = {1.0, 0.0, 0.0, 0.0};
  cfg.seed = 5;
  auto result = inject_errors(ref, cfg);
  CHECK(result.performance.empty());
  CHECK(result.labels.missed.notes == ref.notes);
  CHECK(result.labels.correct.empty());
  CHECK(result.labels.extra.empty());
  for (const auto& rec : result.log) {
    CHECK(rec.kind == ErrorKind::Miss);
    CHECK(!rec.injected_note.has_value());
  }
}

TEST_CASE("pitch change splits into a missed and an extra note at the same onset") {
  NoteTrack ref = make_reference(40);
  ErrorConfig cfg;
  cfg.lambda_low = cfg.lambda_high = 1.0;
  cfg.error_type_weights = {0.0, 1.0, 0.0, 0.0};
  cfg.seed = 6;
  auto result = inject_errors(ref, cfg);
  REQUIRE(result.log.size() == ref.size());
  for (const auto& rec : result.log) {
    REQUIRE(rec.kind == ErrorKind::PitchChange);
    CHECK(rec.eps_p != 0);
    REQUIRE(rec.original_note.has_value());
    REQUIRE(rec.injected_note.has_value());
    CHECK(rec.injected_note->pitch == rec.original_note->pitch + rec.eps_p);
    CHECK(rec.injected_note->onset == rec.original_note->onset);
    CHECK(rec.injected_note->pitch >= 0);
    CHECK(rec.injected_note->pitch <= 127);
  }
  CHECK(result.labels.missed.size() == ref.size());
  CHECK(result.labels.extra.size() == ref.size());
  CHECK(result.performance.notes == result.labels.extra.notes);
}

TEST_CASE("extra note keeps the original and inserts a shifted copy") {
  NoteTrack ref = make_reference(40);
  ErrorConfig cfg;
  cfg.lambda_low = cfg.lambda_high = 1.0;
  cfg.error_type_weights = {0.0, 0.0, 0.0, 1.0};
  cfg.seed = 7;
  auto result = inject_errors(ref, cfg);
  CHECK(result.labels.correct.notes == ref.notes);
  CHECK(result.labels.extra.size() == result.log.size());
  for (const auto& rec : result.log) {
    REQUIRE(rec.kind == ErrorKind::ExtraNote);
    CHECK(rec.eps_p != 0);
    REQUIRE(rec.injected_note.has_value());
    const double dur_orig = rec.original_note->offset - rec.original_note->onset;
    const double dur_new = rec.injected_note->offset - rec.injected_note->onset;
    CHECK(dur_new == doctest::Approx(dur_orig).epsilon(1e-12));
  }
}

TEST_CASE("timing shifts beyond tolerance become missed plus extra") {
  NoteTrack ref = make_reference(200, 3);
  ErrorConfig cfg;
  cfg.lambda_low = cfg.lambda_high = 1.0;
  cfg.error_type_weights = {0.0, 0.0, 1.0, 0.0};
  cfg.time_sigma = 0.04;  // wider so both branches occur
  cfg.seed = 8;
  auto result = inject_errors(ref, cfg);
  int beyond = 0, within = 0;
  for (const auto& rec : result.log) {
    REQUIRE(rec.kind == ErrorKind::TimingShift);
    CHECK(std::abs(rec.eps_t) <= cfg.time_truncation);
    if (std::abs(rec.eps_t) > cfg.match_tolerance) beyond++; else within++;
  }
  CHECK(beyond > 0);
  CHECK(within > 0);
  CHECK(result.labels.missed.size() == std::size_t(beyond));
  CHECK(result.labels.extra.size() == std::size_t(beyond));
  CHECK(result.labels.correct.size() == std::size_t(within));
}

TEST_CASE("observed error fraction concentrates around lambda") {
  NoteTrack ref = make_reference(10000, 21, 0.05);
  ErrorConfig cfg;
  cfg.lambda_low = cfg.lambda_high = 0.3;
  cfg.seed = 99;
  auto result = inject_errors(ref, cfg);
  const double fraction = double(result.log.size()) / double(ref.size());
  CHECK(fraction >= 0.28);
  CHECK(fraction <= 0.32);
}

TEST_CASE("error kind frequencies follow the configured weights") {
  NoteTrack ref = make_reference(40000, 22, 0.05);
  ErrorConfig cfg;
  cfg.lambda_low = cfg.lambda_high = 0.5;
  cfg.seed = 123;
  auto result = inject_errors(ref, cfg);
  auto counts = result.counts_by_kind();
  const double n = double(result.log.size());
  REQUIRE(n > 10000);
  // Chi-squared against the uniform default, 3 dof, p = 0.001.
  double chi2 = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double expected = n / 4.0;
    chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  CHECK(chi2 < 16.266);
}

TEST_CASE("truncated normal sampler matches its analytic moments") {
  Rng rng(31337);
  const double sigma = 0.02;
  const double bound = 3.0 * sigma;
  const int n = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.truncated_normal(sigma, bound);
    REQUIRE(x >= -bound);
    REQUIRE(x <= bound);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  CHECK(std::abs(mean) < 4.0 * sigma / std::sqrt(double(n)));
  const double analytic = truncated_std(sigma, 3.0);
  CHECK(std::abs(sd - analytic) / analytic < 0.02);
}

TEST_CASE("reconstruction identities hold") {
  NoteTrack ref = make_reference(500, 77, 0.11);
  ErrorConfig cfg;
  cfg.seed = 202;

  SUBCASE("performance identity is always exact") {
    auto result = inject_errors(ref, cfg);
    NoteTrack rebuilt = result.labels.reconstruct_performance();
    CHECK(rebuilt.notes == result.performance.notes);
  }

  SUBCASE("reference identity is exact without sub-tolerance timing shifts") {
    cfg.error_type_weights = {1.0, 1.0, 0.0, 1.0};
    auto result = inject_errors(ref, cfg);
    NoteTrack rebuilt = result.labels.reconstruct_reference();
    CHECK(rebuilt.notes == ref.notes);
  }

  SUBCASE("reference identity holds after unshifting logged timing jitter") {
    auto result = inject_errors(ref, cfg);
    // Sub-tolerance shifts keep the note Correct at its shifted position;
    // substitute the logged original to recover the reference exactly.
    std::map<std::pair<double, int>, NoteEvent> shifted_to_original;
    for (const auto& rec : result.log) {
      if (rec.kind == ErrorKind::TimingShift &&
          std::abs(rec.eps_t) <= cfg.match_tolerance)
        shifted_to_original[{rec.injected_note->onset, rec.injected_note->pitch}] =
            *rec.original_note;
    }
    NoteTrack unshifted = result.labels.correct;
    for (auto& n : unshifted.notes) {
      auto it = shifted_to_original.find({n.onset, n.pitch});
      if (it != shifted_to_original.end()) n = it->second;
    }
    canonicalize(unshifted);
    NoteTrack rebuilt = merge({unshifted, result.labels.missed});
    CHECK(rebuilt.notes == ref.notes);
  }
}

TEST_CASE("label tracks stay pairwise disjoint") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    NoteTrack ref = make_reference(300, seed + 1000, 0.08);
    ErrorConfig cfg;
    cfg.seed = seed;
    auto result = inject_errors(ref, cfg);
    CHECK(result.labels.labels_disjoint());
  }
}

TEST_CASE("determinism: same seed gives identical results") {
  NoteTrack ref = make_reference(200);
  ErrorConfig cfg;
  cfg.seed = 404;
  auto a = inject_errors(ref, cfg);
  auto b = inject_errors(ref, cfg);
  CHECK(a.performance.notes == b.performance.notes);
  CHECK(a.labels.correct.notes == b.labels.correct.notes);
  CHECK(a.labels.missed.notes == b.labels.missed.notes);
  CHECK(a.labels.extra.notes == b.labels.extra.notes);
  CHECK(a.lambda == b.lambda);
  CHECK(a.log.size() == b.log.size());
}

TEST_CASE("input validation") {
  NoteTrack empty;
  ErrorConfig cfg;
  CHECK_THROWS_AS(inject_errors(empty, cfg), InvalidInputError);

  NoteTrack ref = make_reference(5);
  ErrorConfig bad = cfg;
  bad.lambda_low = 0.5;
  bad.lambda_high = 0.2;
  CHECK_THROWS_AS(inject_errors(ref, bad), ConfigError);

  bad = cfg;
  bad.pitch_truncation = 0.4;  // below one semitone
  CHECK_THROWS_AS(inject_errors(ref, bad), ConfigError);

  bad = cfg;
  bad.error_type_weights = {0.0, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(inject_errors(ref, bad), ConfigError);

  bad = cfg;
  bad.time_sigma = -1.0;
  CHECK_THROWS_AS(inject_errors(ref, bad), ConfigError);
}

TEST_CASE("generate_dataset writes files and a consistent manifest") {
  std::vector<NoteTrack> refs;
  for (int i = 0; i < 2; ++i) {
    NoteTrack t = make_reference(60, 500 + i);
    t.source_id = "track" + std::to_string(i);
    t.instrument = i == 0 ? "piano" : "flute";
    refs.push_back(t);
  }
  ErrorConfig cfg;
  cfg.seed = 9000;
  const std::string dir = temp_dir("dataset");
  DatasetManifest manifest = generate_dataset(refs, cfg, dir);

  REQUIRE(manifest.entries.size() == 2);
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".notes") files++;
  CHECK(files == 10);

  // Manifest entries reproduce the per-track injection exactly.
  for (const auto& entry : manifest.entries) {
    CHECK(entry.seed == derive_seed(cfg.seed, entry.source_id));
    NoteTrack ref = read_track(manifest.resolve(entry.reference_file));
    ErrorConfig track_cfg = cfg;
    track_cfg.seed = entry.seed;
    auto redo = inject_errors(ref, track_cfg);
    CHECK(redo.lambda == entry.lambda);
    CHECK(redo.counts_by_kind() == entry.error_counts);
    NoteTrack perf = read_track(manifest.resolve(entry.performance_file));
    CHECK(perf.size() == redo.performance.size());
  }

  DatasetManifest reloaded =
      load_manifest((std::filesystem::path(dir) / "manifest.txt").string());
  REQUIRE(reloaded.entries.size() == 2);
  CHECK(reloaded.entries[0].source_id == manifest.entries[0].source_id);
  CHECK(reloaded.entries[0].lambda == manifest.entries[0].lambda);
  CHECK(reloaded.entries[1].error_counts == manifest.entries[1].error_counts);
}

TEST_CASE("regeneration is byte-identical, serial or parallel") {
  std::vector<NoteTrack> refs;
  for (int i = 0; i < 6; ++i) {
    NoteTrack t = make_reference(80, 700 + i);
    t.source_id = "piece" + std::to_string(i);
    refs.push_back(t);
  }
  ErrorConfig cfg;
  cfg.seed = 31415;
  const std::string dir1 = temp_dir("run1");
  const std::string dir2 = temp_dir("run2");
  const std::string dir3 = temp_dir("run3");
  generate_dataset(refs, cfg, dir1, 1);
  generate_dataset(refs, cfg, dir2, 1);
  generate_dataset(refs, cfg, dir3, 4);

  for (const auto& e : std::filesystem::directory_iterator(dir1)) {
    const std::string name = e.path().filename().string();
    const std::string a = slurp(e.path().string());
    CHECK(a == slurp((std::filesystem::path(dir2) / name).string()));
    CHECK(a == slurp((std::filesystem::path(dir3) / name).string()));
    CHECK(!a.empty());
  }
}

TEST_CASE("duplicate source ids are rejected") {
  std::vector<NoteTrack> refs = {make_reference(10), make_reference(12)};
  refs[0].source_id = refs[1].source_id = "same";
  ErrorConfig cfg;
  CHECK_THROWS_AS(generate_dataset(refs, cfg, temp_dir("dup")), InvalidInputError);
}
