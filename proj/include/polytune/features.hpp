#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "polytune/synth.hpp"

namespace polytune {

using Matrix = Eigen::MatrixXd;

/// Spectrogram frontend parameters. The segment length and patch count are
/// architectural constants; window/hop/mel choices are toolkit defaults
/// picked so each segment yields exactly a 128x1024 log-mel matrix and an
/// 8x64 grid of 16x16 patches.
struct FeatureConfig {
  int sample_rate = 16000;
  double segment_seconds = 2.145;
  int mel_bins = 128;
  int frames_per_segment = 1024;
  int fft_size = 512;
  double mel_fmin = 30.0;
  double log_floor = 1e-5;
  int patch_size = 16;

  int segment_samples() const {
    return static_cast<int>(std::lround(segment_seconds * sample_rate));
  }
  int patches_per_segment() const {
    return (mel_bins / patch_size) * (frames_per_segment / patch_size);
  }
  int patch_dim() const { return patch_size * patch_size; }
};

struct SegmentFeatures {
  int segment_index = 0;
  Matrix logmel;   // mel_bins x frames_per_segment
  Matrix patches;  // patches_per_segment x patch_dim
};

/// Splits audio into consecutive non-overlapping segments of exactly
/// segment_seconds; the final segment is zero-padded. Empty audio gives an
/// empty list.
std::vector<AudioBuffer> segment_audio(const AudioBuffer& audio,
                                       const FeatureConfig& config = {});

/// Log-mel spectrogram of one segment: Hann-windowed STFT with frame centers
/// spread uniformly so exactly frames_per_segment frames result, a mel
/// filterbank over [mel_fmin, Nyquist], natural log with a fixed floor.
Matrix logmel(const AudioBuffer& segment, const FeatureConfig& config = {});

/// Splits a mel_bins x frames matrix into non-overlapping patch_size^2
/// patches in mel-major order, each flattened row-major.
Matrix patchify(const Matrix& logmel, const FeatureConfig& config = {});

/// Inverse of patchify (exact).
Matrix unpatchify(const Matrix& patches, const FeatureConfig& config = {});

/// Full frontend for one audio stream: segment, log-mel, normalize with the
/// given statistics, patchify.
std::vector<SegmentFeatures> extract_features(const AudioBuffer& audio,
                                              const FeatureConfig& config,
                                              double norm_mean = 0.0,
                                              double norm_std = 1.0);

/// Mel band index whose filter center is closest to the given frequency.
int mel_band_of(double hz, const FeatureConfig& config = {});

// Version-tagged binary cache for one matrix (row-major float32).
void save_matrix(const Matrix& m, const std::string& path);
Matrix load_matrix(const std::string& path);

}  // namespace polytune
