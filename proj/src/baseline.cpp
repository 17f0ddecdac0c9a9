#include "polytune/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "polytune/errors.hpp"
#include "polytune/note_io.hpp"
#include "polytune/rng.hpp"

namespace polytune {

void BaselineConfig::validate() const {
  if (onset_tolerance <= 0.0) throw ConfigError("onset tolerance must be positive");
  if (pitch_cost < 0.0 || time_cost < 0.0)
    throw ConfigError("alignment costs must be non-negative");
  if (noise.onset_jitter_sigma < 0.0 || noise.drop_rate < 0.0 ||
      noise.drop_rate > 1.0 || noise.insert_rate < 0.0 || noise.insert_rate > 1.0)
    throw ConfigError("transcription noise parameters out of range");
}

NoteTrack transcribe(const AudioBuffer& audio, const NoteTrack& ground_truth,
                     const BaselineConfig& config) {
  (void)audio;  // the oracle reads the notes directly
  config.validate();
  if (!config.oracle_transcriber) {
    if (config.external_transcription.empty())
      throw InvalidInputError("external transcriber mode needs a note file");
    return read_track(config.external_transcription);
  }

  NoteTrack out = ground_truth;
  const auto& noise = config.noise;
  if (noise.onset_jitter_sigma == 0.0 && noise.drop_rate == 0.0 &&
      noise.insert_rate == 0.0)
    return out;

  Rng rng(noise.seed);
  NoteTrack noisy;
  noisy.instrument = out.instrument;
  noisy.source_id = out.source_id;
  for (const auto& n : out.notes) {
    if (noise.drop_rate > 0.0 && rng.bernoulli(noise.drop_rate)) continue;
    NoteEvent moved = n;
    if (noise.onset_jitter_sigma > 0.0) {
      const double jitter = rng.normal(noise.onset_jitter_sigma);
      moved.onset = std::max(0.0, n.onset + jitter);
      moved.offset = moved.onset + (n.offset - n.onset);
    }
    noisy.notes.push_back(moved);
    if (noise.insert_rate > 0.0 && rng.bernoulli(noise.insert_rate)) {
      // Spurious detection near the real note, a semitone to a fifth away.
      NoteEvent ghost = moved;
      const int delta = 1 + int(rng.below(7));
      ghost.pitch = std::clamp(moved.pitch + (rng.bernoulli(0.5) ? delta : -delta),
                               0, 127);
      ghost.onset = std::max(0.0, moved.onset + rng.normal(0.02));
      ghost.offset = ghost.onset + (moved.offset - moved.onset);
      noisy.notes.push_back(ghost);
    }
  }
  canonicalize(noisy);
  return noisy;
}

AlignmentPath dtw_align(const NoteTrack& perf, const NoteTrack& ref,
                        const BaselineConfig& config) {
  config.validate();
  if (perf.empty() || ref.empty())
    throw InvalidInputError("DTW alignment needs two non-empty tracks");

  const int n = int(perf.size());
  const int m = int(ref.size());
  auto cell_cost = [&](int i, int j) {
    return config.time_cost *
               std::abs(perf.notes[std::size_t(i)].onset -
                        ref.notes[std::size_t(j)].onset) +
           config.pitch_cost * std::abs(perf.notes[std::size_t(i)].pitch -
                                        ref.notes[std::size_t(j)].pitch);
  };

  // dp[i][j]: minimal cost of a monotone path from (0,0) to (i,j).
  std::vector<std::vector<double>> dp{std::size_t(n), std::vector<double>(std::size_t(m))};
  std::vector<std::vector<int8_t>> from{std::size_t(n), std::vector<int8_t>(std::size_t(m))};
  constexpr int8_t kDiag = 0, kUp = 1, kLeft = 2;  // (1,1), (1,0), (0,1)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      const double c = cell_cost(i, j);
      if (i == 0 && j == 0) {
        dp[0][0] = c;
        from[0][0] = kDiag;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int8_t dir = kDiag;
      // Tie break: diagonal first, then (1,0), then (0,1).
      if (i > 0 && j > 0 && dp[std::size_t(i - 1)][std::size_t(j - 1)] < best) {
        best = dp[std::size_t(i - 1)][std::size_t(j - 1)];
        dir = kDiag;
      }
      if (i > 0 && dp[std::size_t(i - 1)][std::size_t(j)] < best) {
        best = dp[std::size_t(i - 1)][std::size_t(j)];
        dir = kUp;
      }
      if (j > 0 && dp[std::size_t(i)][std::size_t(j - 1)] < best) {
        best = dp[std::size_t(i)][std::size_t(j - 1)];
        dir = kLeft;
      }
      dp[std::size_t(i)][std::size_t(j)] = best + c;
      from[std::size_t(i)][std::size_t(j)] = dir;
    }
  }

  AlignmentPath path;
  path.cost = dp[std::size_t(n - 1)][std::size_t(m - 1)];
  int i = n - 1, j = m - 1;
  while (true) {
    path.pairs.push_back({i, j});
    if (i == 0 && j == 0) break;
    switch (from[std::size_t(i)][std::size_t(j)]) {
      case kDiag: --i; --j; break;
      case kUp: --i; break;
      default: --j; break;
    }
  }
  std::reverse(path.pairs.begin(), path.pairs.end());
  return path;
}

LabeledScore classify(const AlignmentPath& path, const NoteTrack& perf,
                      const NoteTrack& ref, const BaselineConfig& config) {
  config.validate();
  std::vector<bool> perf_matched(perf.size(), false);
  std::vector<bool> ref_matched(ref.size(), false);

  LabeledScore out;
  for (const auto& [i, j] : path.pairs) {
    const NoteEvent& p = perf.notes[std::size_t(i)];
    const NoteEvent& r = ref.notes[std::size_t(j)];
    if (!perf_matched[std::size_t(i)] && !ref_matched[std::size_t(j)] &&
        p.pitch == r.pitch &&
        std::abs(p.onset - r.onset) <= config.onset_tolerance) {
      perf_matched[std::size_t(i)] = true;
      ref_matched[std::size_t(j)] = true;
      out.correct.notes.push_back(p);
    }
  }
  for (std::size_t j = 0; j < ref.size(); ++j)
    if (!ref_matched[j]) out.missed.notes.push_back(ref.notes[j]);
  for (std::size_t i = 0; i < perf.size(); ++i)
    if (!perf_matched[i]) out.extra.notes.push_back(perf.notes[i]);

  canonicalize(out.correct);
  canonicalize(out.missed);
  canonicalize(out.extra);
  return out;
}

LabeledScore baseline_detect(const NoteTrack& score_track,
                             const NoteTrack& performance_truth,
                             const BaselineConfig& config,
                             const AudioBuffer* performance_audio) {
  AudioBuffer silence;
  const AudioBuffer& audio = performance_audio ? *performance_audio : silence;
  NoteTrack transcribed = transcribe(audio, performance_truth, config);
  if (transcribed.empty() || score_track.empty()) {
    // Degenerate inputs: nothing aligns, everything is missed or extra.
    LabeledScore out;
    out.missed = score_track;
    out.extra = transcribed;
    return out;
  }
  AlignmentPath path = dtw_align(transcribed, score_track, config);
  return classify(path, transcribed, score_track, config);
}

}  // namespace polytune
