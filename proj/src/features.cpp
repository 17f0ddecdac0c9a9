#include "polytune/features.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "polytune/errors.hpp"

namespace polytune {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// In-place iterative radix-2 FFT. n must be a power of two.
void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / double(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

/// Triangular mel filterbank, rows = mel bands, cols = FFT bins.
Matrix mel_filterbank(const FeatureConfig& cfg) {
  const int bins = cfg.fft_size / 2 + 1;
  const double fmax = cfg.sample_rate / 2.0;
  const double mel_lo = hz_to_mel(cfg.mel_fmin);
  const double mel_hi = hz_to_mel(fmax);

  std::vector<double> edges(cfg.mel_bins + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.mel_bins + 1));

  Matrix fb = Matrix::Zero(cfg.mel_bins, bins);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = double(b) * cfg.sample_rate / cfg.fft_size;
      if (f > lo && f < mid)
        fb(m, b) = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi)
        fb(m, b) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (n - 1));
  return w;
}

}  // namespace

std::vector<AudioBuffer> segment_audio(const AudioBuffer& audio,
                                       const FeatureConfig& config) {
  if (audio.sample_rate != config.sample_rate)
    throw InvalidInputError("audio sample rate does not match feature config");
  std::vector<AudioBuffer> segments;
  if (audio.samples.empty()) return segments;

  const std::size_t seg = static_cast<std::size_t>(config.segment_samples());
  const std::size_t count = (audio.samples.size() + seg - 1) / seg;
  segments.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    AudioBuffer piece;
    piece.sample_rate = config.sample_rate;
    piece.samples.assign(seg, 0.0);
    const std::size_t begin = s * seg;
    const std::size_t n = std::min(seg, audio.samples.size() - begin);
    std::copy_n(audio.samples.begin() + begin, n, piece.samples.begin());
    segments.push_back(std::move(piece));
  }
  return segments;
}

Matrix logmel(const AudioBuffer& segment, const FeatureConfig& config) {
  const int seg_samples = config.segment_samples();
  if (static_cast<int>(segment.samples.size()) != seg_samples)
    throw InvalidInputError("segment has wrong length for log-mel");

  static thread_local Matrix fb;
  static thread_local int fb_rate = 0;
  if (fb.rows() != config.mel_bins || fb_rate != config.sample_rate) {
    fb = mel_filterbank(config);
    fb_rate = config.sample_rate;
  }
  const std::vector<double> window = hann_window(config.fft_size);
  const int half = config.fft_size / 2;
  const int bins = half + 1;

  Matrix power(bins, config.frames_per_segment);
  std::vector<std::complex<double>> buf(config.fft_size);
  for (int frame = 0; frame < config.frames_per_segment; ++frame) {
    // Fractional hop: frame centers spread uniformly over the segment.
    const int center = static_cast<int>(
        std::llround(double(frame) * seg_samples / config.frames_per_segment));
    for (int i = 0; i < config.fft_size; ++i) {
      const int src = center - half + i;
      const double v = (src >= 0 && src < seg_samples) ? segment.samples[src] : 0.0;
      buf[i] = v * window[i];
    }
    fft(buf);
    for (int b = 0; b < bins; ++b) power(b, frame) = std::norm(buf[b]);
  }

  Matrix mel = fb * power;
  return mel.array().max(config.log_floor).log().matrix();
}

Matrix patchify(const Matrix& logmel, const FeatureConfig& config) {
  const int ps = config.patch_size;
  if (logmel.rows() != config.mel_bins ||
      logmel.cols() != config.frames_per_segment)
    throw InvalidInputError("log-mel matrix has wrong shape for patchify");

  const int grid_mel = config.mel_bins / ps;
  const int grid_time = config.frames_per_segment / ps;
  Matrix patches(grid_mel * grid_time, ps * ps);
  for (int gm = 0; gm < grid_mel; ++gm) {
    for (int gt = 0; gt < grid_time; ++gt) {
      const int row = gm * grid_time + gt;
      for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
          patches(row, i * ps + j) = logmel(gm * ps + i, gt * ps + j);
    }
  }
  return patches;
}

Matrix unpatchify(const Matrix& patches, const FeatureConfig& config) {
  const int ps = config.patch_size;
  const int grid_mel = config.mel_bins / ps;
  const int grid_time = config.frames_per_segment / ps;
  if (patches.rows() != grid_mel * grid_time || patches.cols() != ps * ps)
    throw InvalidInputError("patch matrix has wrong shape for unpatchify");

  Matrix out(config.mel_bins, config.frames_per_segment);
  for (int gm = 0; gm < grid_mel; ++gm)
    for (int gt = 0; gt < grid_time; ++gt) {
      const int row = gm * grid_time + gt;
      for (int i = 0; i < ps; ++i)
        for (int j = 0; j < ps; ++j)
          out(gm * ps + i, gt * ps + j) = patches(row, i * ps + j);
    }
  return out;
}

std::vector<SegmentFeatures> extract_features(const AudioBuffer& audio,
                                              const FeatureConfig& config,
                                              double norm_mean,
                                              double norm_std) {
  std::vector<SegmentFeatures> out;
  const double scale = norm_std > 0.0 ? 1.0 / norm_std : 1.0;
  auto segments = segment_audio(audio, config);
  out.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    SegmentFeatures f;
    f.segment_index = static_cast<int>(i);
    f.logmel = logmel(segments[i], config);
    Matrix normed = (f.logmel.array() - norm_mean).matrix() * scale;
    f.patches = patchify(normed, config);
    out.push_back(std::move(f));
  }
  return out;
}

int mel_band_of(double hz, const FeatureConfig& config) {
  const double fmax = config.sample_rate / 2.0;
  const double mel_lo = hz_to_mel(config.mel_fmin);
  const double mel_hi = hz_to_mel(fmax);
  int best = 0;
  double best_dist = 1e300;
  for (int m = 0; m < config.mel_bins; ++m) {
    // Filter m peaks at edge m+1.
    const double center =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (config.mel_bins + 1));
    const double d = std::abs(center - hz);
    if (d < best_dist) {
      best_dist = d;
      best = m;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Matrix cache
// ---------------------------------------------------------------------------

namespace {
constexpr char kCacheMagic[4] = {'P', 'T', 'F', 'C'};
constexpr uint32_t kCacheVersion = 1;
}  // namespace

void save_matrix(const Matrix& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write matrix cache: " + path);
  out.write(kCacheMagic, 4);
  uint32_t header[3] = {kCacheVersion, static_cast<uint32_t>(m.rows()),
                        static_cast<uint32_t>(m.cols())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      float v = static_cast<float>(m(r, c));
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  if (!out) throw IoError("matrix cache write failed: " + path);
}

Matrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open matrix cache: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw ParseError("bad matrix cache magic", 0);
  uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || header[0] != kCacheVersion)
    throw ParseError("unsupported matrix cache version", 4);
  Matrix m(header[1], header[2]);
  for (uint32_t r = 0; r < header[1]; ++r)
    for (uint32_t c = 0; c < header[2]; ++c) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof(v));
      if (!in) throw ParseError("truncated matrix cache", 16);
      m(r, c) = v;
    }
  return m;
}

}  // namespace polytune
