#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "polytune/errors.hpp"
#include "polytune/eval.hpp"
#include "polytune/rng.hpp"

using namespace polytune;

namespace {

NoteEvent note(int pitch, double onset, double dur = 0.2) {
  NoteEvent n;
  n.pitch = pitch;
  n.onset = onset;
  n.offset = onset + dur;
  return n;
}

NoteTrack track(std::initializer_list<NoteEvent> notes) {
  NoteTrack t;
  t.notes = notes;
  canonicalize(t);
  return t;
}

/// Exhaustive maximum matching: recurse over reference notes, trying every
/// admissible estimate or skipping.
int brute_force_matching(const NoteTrack& ref, const NoteTrack& est,
                         double tolerance) {
  std::vector<bool> used(est.size(), false);
  auto walk = [&](auto&& self, std::size_t r) -> int {
    if (r == ref.size()) return 0;
    int best = self(self, r + 1);  // leave r unmatched
    for (std::size_t e = 0; e < est.size(); ++e) {
      if (used[e]) continue;
      if (ref.notes[r].pitch != est.notes[e].pitch) continue;
      if (std::abs(ref.notes[r].onset - est.notes[e].onset) > tolerance) continue;
      used[e] = true;
      best = std::max(best, 1 + self(self, r + 1));
      used[e] = false;
    }
    return best;
  };
  return walk(walk, 0);
}

NoteTrack random_notes(Rng& rng, int max_notes, int pitch_range = 4) {
  NoteTrack t;
  const int n = int(rng.below(uint64_t(max_notes + 1)));
  for (int i = 0; i < n; ++i)
    t.notes.push_back(
        note(60 + int(rng.below(uint64_t(pitch_range))), rng.uniform(0.0, 0.4)));
  canonicalize(t);
  return t;
}

}  // namespace

TEST_CASE("identical note lists match perfectly") {
  NoteTrack t = track({note(60, 0.0), note(64, 0.5), note(67, 1.0)});
  auto matching = onset_match(t, t);
  CHECK(matching.size() == 3);

  LabeledScore s;
  s.correct = t;
  DetectionReport rep = report(s, s);
  CHECK(rep.correct.precision == 1.0);
  CHECK(rep.correct.recall == 1.0);
  CHECK(rep.correct.f1 == 1.0);
  CHECK(rep.macro_f1 == 1.0);
}

TEST_CASE("tolerance boundary at 50 ms") {
  NoteTrack ref = track({note(60, 1.0)});
  SUBCASE("49 ms shift matches") {
    NoteTrack est = track({note(60, 1.049)});
    CHECK(onset_match(ref, est, 0.05).size() == 1);
  }
  SUBCASE("51 ms shift does not") {
    NoteTrack est = track({note(60, 1.051)});
    CHECK(onset_match(ref, est, 0.05).empty());
  }
  SUBCASE("pitch must be equal regardless of timing") {
    NoteTrack est = track({note(61, 1.0)});
    CHECK(onset_match(ref, est, 0.05).empty());
  }
}

TEST_CASE("crowded matchings equal the exhaustive maximum") {
  SUBCASE("two reference notes within tolerance of one estimate") {
    NoteTrack ref = track({note(60, 1.00), note(60, 1.04)});
    NoteTrack est = track({note(60, 1.02)});
    CHECK(onset_match(ref, est, 0.05).size() == 1);
    CHECK(brute_force_matching(ref, est, 0.05) == 1);
  }
  SUBCASE("chained tolerance windows need the augmenting path") {
    // est1 matches ref1 only; est2 matches both. Greedy ref1->est2 first
    // would block est1; maximum matching is 2.
    NoteTrack ref = track({note(60, 1.00), note(60, 1.08)});
    NoteTrack est = track({note(60, 1.04), note(60, 1.12)});
    CHECK(onset_match(ref, est, 0.05).size() == 2);
    CHECK(brute_force_matching(ref, est, 0.05) == 2);
  }
  SUBCASE("random small instances") {
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
      NoteTrack ref = random_notes(rng, 6);
      NoteTrack est = random_notes(rng, 6);
      const int got = int(onset_match(ref, est, 0.05).size());
      const int want = brute_force_matching(ref, est, 0.05);
      CHECK(got == want);
    }
  }
}

TEST_CASE("matched pairs are valid and disjoint") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    NoteTrack ref = random_notes(rng, 8);
    NoteTrack est = random_notes(rng, 8);
    auto matching = onset_match(ref, est, 0.05);
    std::vector<bool> ref_used(ref.size(), false), est_used(est.size(), false);
    for (const auto& [r, e] : matching) {
      CHECK(!ref_used[std::size_t(r)]);
      CHECK(!est_used[std::size_t(e)]);
      ref_used[std::size_t(r)] = est_used[std::size_t(e)] = true;
      CHECK(ref.notes[std::size_t(r)].pitch == est.notes[std::size_t(e)].pitch);
      CHECK(std::abs(ref.notes[std::size_t(r)].onset -
                     est.notes[std::size_t(e)].onset) <= 0.05);
    }
  }
}

TEST_CASE("five-note fixture with one label swap scores as hand-computed") {
  // Truth: three correct notes, one missed (D5), one extra (E5). The system
  // under test calls the missed D5 extra instead.
  LabeledScore truth;
  truth.correct = track({note(60, 0.0), note(62, 0.5), note(64, 1.0)});
  truth.missed = track({note(74, 1.5)});
  truth.extra = track({note(76, 2.0)});

  LabeledScore predicted;
  predicted.correct = truth.correct;
  predicted.extra = track({note(74, 1.5), note(76, 2.0)});

  DetectionReport rep = report(truth, predicted);
  CHECK(rep.correct.precision == 1.0);
  CHECK(rep.correct.recall == 1.0);
  CHECK(rep.correct.f1 == 1.0);

  // No missed predictions against one truth note: both conventions give 0.
  CHECK(rep.missed.precision == 0.0);
  CHECK(rep.missed.recall == 0.0);
  CHECK(rep.missed.f1 == 0.0);

  // Extra: TP=1 (E5), FP=1 (D5), FN=0 -> P=1/2, R=1, F1=2/3.
  CHECK(rep.extra.tp == 1);
  CHECK(rep.extra.fp == 1);
  CHECK(rep.extra.fn == 0);
  CHECK(rep.extra.precision == doctest::Approx(0.5));
  CHECK(rep.extra.recall == doctest::Approx(1.0));
  CHECK(rep.extra.f1 == doctest::Approx(2.0 / 3.0));

  CHECK(rep.macro_f1 == doctest::Approx((1.0 + 0.0 + 2.0 / 3.0) / 3.0));
}

TEST_CASE("empty against empty counts as perfect") {
  LabeledScore truth, predicted;
  truth.correct = track({note(60, 0.0)});
  predicted.correct = truth.correct;
  DetectionReport rep = report(truth, predicted);
  // Missed and extra are empty on both sides.
  CHECK(rep.missed.precision == 1.0);
  CHECK(rep.missed.recall == 1.0);
  CHECK(rep.missed.f1 == 1.0);
  CHECK(rep.macro_f1 == 1.0);
}

TEST_CASE("monotonicity: adding a correct prediction never lowers TP") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    LabeledScore truth;
    truth.missed = random_notes(rng, 6);
    if (truth.missed.empty()) continue;
    LabeledScore predicted;
    predicted.missed = random_notes(rng, 6);

    DetectionReport before = report(truth, predicted);
    // Add a prediction exactly matching an unmatched-or-not truth note.
    predicted.missed.notes.push_back(truth.missed.notes[0]);
    canonicalize(predicted.missed);
    DetectionReport after = report(truth, predicted);
    CHECK(after.missed.tp >= before.missed.tp);
  }
}

TEST_CASE("aggregate of one report is that report") {
  LabeledScore truth;
  truth.correct = track({note(60, 0.0), note(64, 0.5)});
  truth.missed = track({note(67, 1.0)});
  LabeledScore predicted = truth;
  predicted.missed = track({});
  DetectionReport rep = report(truth, predicted);

  AggregateReport agg = aggregate({{"piano", rep}});
  REQUIRE(agg.per_instrument.size() == 1);
  CHECK(agg.per_instrument[0].mean.correct.f1 == rep.correct.f1);
  CHECK(agg.per_instrument[0].mean.missed.f1 == rep.missed.f1);
  CHECK(agg.overall.mean.macro_f1 == rep.macro_f1);
  CHECK(agg.overall.tracks == 1);
}

TEST_CASE("aggregate averages instruments track-weighted") {
  DetectionReport a, b;
  a.correct.f1 = 0.4;
  b.correct.f1 = 0.6;
  AggregateReport agg = aggregate({{"flute", a}, {"oboe", b}});
  CHECK(agg.overall.mean.correct.f1 == doctest::Approx(0.5));

  // Order invariance.
  AggregateReport swapped = aggregate({{"oboe", b}, {"flute", a}});
  CHECK(swapped.overall.mean.correct.f1 == doctest::Approx(0.5));
  REQUIRE(agg.per_instrument.size() == 2);
  REQUIRE(swapped.per_instrument.size() == 2);
  CHECK(agg.per_instrument[0].instrument == swapped.per_instrument[0].instrument);
}

TEST_CASE("report outputs render in all three formats") {
  DetectionReport r;
  r.correct.precision = r.correct.recall = r.correct.f1 = 1.0;
  AggregateReport agg = aggregate({{"piano", r}, {"piano", r}, {"cello", r}});
  const std::string csv = to_csv(agg);
  CHECK(csv.find("instrument,tracks,") != std::string::npos);
  CHECK(csv.find("piano,2,") != std::string::npos);
  CHECK(csv.find("Average,3,") != std::string::npos);
  const std::string table = to_table(agg);
  CHECK(table.find("piano") != std::string::npos);
  const std::string json = to_json_summary(agg);
  CHECK(json.find("\"track_weighted\"") != std::string::npos);
}

TEST_CASE("invalid tolerance is rejected") {
  NoteTrack t = track({note(60, 0.0)});
  CHECK_THROWS_AS(onset_match(t, t, 0.0), ConfigError);
  CHECK_THROWS_AS(aggregate({}), InvalidInputError);
}
