// Internal transformer building blocks with hand-derived backward passes.
// Every layer caches what its backward needs; forward(training=false) still
// caches so tests can probe, but dropout only fires while training.
#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "polytune/model.hpp"

namespace polytune::detail {

inline void init_tensor(Tensor& t, const std::string& name, int rows, int cols,
                        Rng& rng, double scale = 0.02) {
  t.name = name;
  t.value.resize(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t.value(r, c) = scale * rng.normal();
  t.grad = Mat::Zero(rows, cols);
}

inline void init_zeros(Tensor& t, const std::string& name, int rows, int cols) {
  t.name = name;
  t.value = Mat::Zero(rows, cols);
  t.grad = Mat::Zero(rows, cols);
}

inline void init_ones(Tensor& t, const std::string& name, int rows, int cols) {
  t.name = name;
  t.value = Mat::Ones(rows, cols);
  t.grad = Mat::Zero(rows, cols);
}

struct LinearLayer {
  Tensor weight, bias;
  Mat x_cache;

  void init(const std::string& name, int in, int out, Rng& rng) {
    init_tensor(weight, name + ".weight", in, out, rng);
    init_zeros(bias, name + ".bias", 1, out);
  }

  void collect(std::vector<Tensor*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Mat forward(const Mat& x) {
    x_cache = x;
    Mat y = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat backward(const Mat& dy) {
    weight.grad.noalias() += x_cache.transpose() * dy;
    bias.grad.row(0) += dy.colwise().sum();
    return dy * weight.value.transpose();
  }
};

struct LayerNormLayer {
  static constexpr double kEps = 1e-5;
  Tensor gamma, beta;
  Mat xhat_cache;
  Eigen::VectorXd inv_std_cache;

  void init(const std::string& name, int dim) {
    init_ones(gamma, name + ".gamma", 1, dim);
    init_zeros(beta, name + ".beta", 1, dim);
  }

  void collect(std::vector<Tensor*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Mat forward(const Mat& x) {
    const auto d = double(x.cols());
    const Eigen::VectorXd mean = x.rowwise().mean();
    Mat centered = x.colwise() - mean;
    const Eigen::VectorXd var = centered.array().square().rowwise().sum() / d;
    inv_std_cache = (var.array() + kEps).sqrt().inverse();
    xhat_cache = centered.array().colwise() * inv_std_cache.array();
    Mat y = xhat_cache.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  Mat backward(const Mat& dy) {
    const auto d = double(dy.cols());
    gamma.grad.row(0) += dy.cwiseProduct(xhat_cache).colwise().sum();
    beta.grad.row(0) += dy.colwise().sum();
    Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const Eigen::VectorXd sum_dxhat = dxhat.rowwise().sum();
    const Eigen::VectorXd sum_dxhat_xhat =
        (dxhat.array() * xhat_cache.array()).rowwise().sum();
    Mat dx = d * dxhat.array() -
             (Mat(xhat_cache.array().colwise() * sum_dxhat_xhat.array()))
                 .array();
    dx.colwise() -= sum_dxhat;
    dx.array().colwise() *= inv_std_cache.array() / d;
    return dx;
  }
};

struct DropoutLayer {
  Mat mask;
  bool active = false;

  Mat forward(const Mat& x, double rate, bool training, Rng& rng) {
    active = training && rate > 0.0;
    if (!active) return x;
    const double keep = 1.0 - rate;
    mask.resize(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
      for (Eigen::Index c = 0; c < x.cols(); ++c)
        mask(r, c) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return x.cwiseProduct(mask);
  }

  Mat backward(const Mat& dy) const {
    if (!active) return dy;
    return dy.cwiseProduct(mask);
  }
};

/// Multi-head attention. Self-attention passes the same matrix as query and
/// key/value input; cross-attention passes the decoder state and the encoder
/// memory. Backward returns (d_query_input, d_keyvalue_input).
struct AttentionLayer {
  LinearLayer wq, wk, wv, wo;
  int heads = 1;
  bool causal = false;

  Mat q_cache, k_cache, v_cache, concat_cache;
  std::vector<Mat> attn_cache;

  void init(const std::string& name, int dim, int n_heads, bool is_causal,
            Rng& rng) {
    heads = n_heads;
    causal = is_causal;
    wq.init(name + ".wq", dim, dim, rng);
    wk.init(name + ".wk", dim, dim, rng);
    wv.init(name + ".wv", dim, dim, rng);
    wo.init(name + ".wo", dim, dim, rng);
  }

  void collect(std::vector<Tensor*>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }

  Mat forward(const Mat& xq, const Mat& xkv) {
    const int dim = int(wq.weight.value.cols());
    const int dh = dim / heads;
    const double scale = 1.0 / std::sqrt(double(dh));

    q_cache = wq.forward(xq);
    k_cache = wk.forward(xkv);
    v_cache = wv.forward(xkv);

    const auto lq = xq.rows();
    concat_cache.resize(lq, dim);
    attn_cache.assign(std::size_t(heads), Mat());
    for (int h = 0; h < heads; ++h) {
      auto qh = q_cache.middleCols(h * dh, dh);
      auto kh = k_cache.middleCols(h * dh, dh);
      auto vh = v_cache.middleCols(h * dh, dh);
      Mat scores = (qh * kh.transpose()) * scale;
      if (causal) {
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
          for (Eigen::Index j = i + 1; j < scores.cols(); ++j)
            scores(i, j) = -std::numeric_limits<double>::infinity();
      }
      const Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
      scores = (scores.colwise() - row_max).array().exp();
      const Eigen::VectorXd row_sum = scores.rowwise().sum();
      scores.array().colwise() /= row_sum.array();
      attn_cache[std::size_t(h)] = scores;
      concat_cache.middleCols(h * dh, dh).noalias() = scores * vh;
    }
    return wo.forward(concat_cache);
  }

  std::pair<Mat, Mat> backward(const Mat& dy) {
    const int dim = int(wq.weight.value.cols());
    const int dh = dim / heads;
    const double scale = 1.0 / std::sqrt(double(dh));

    Mat dconcat = wo.backward(dy);
    Mat dq(q_cache.rows(), dim), dk(k_cache.rows(), dim), dv(v_cache.rows(), dim);
    for (int h = 0; h < heads; ++h) {
      const Mat& attn = attn_cache[std::size_t(h)];
      auto kh = k_cache.middleCols(h * dh, dh);
      auto vh = v_cache.middleCols(h * dh, dh);
      auto qh = q_cache.middleCols(h * dh, dh);
      auto dout = dconcat.middleCols(h * dh, dh);

      Mat dattn = dout * vh.transpose();
      dv.middleCols(h * dh, dh).noalias() = attn.transpose() * dout;

      // Softmax backward per row: ds = a .* (da - sum(da .* a)).
      const Eigen::VectorXd dot =
          (dattn.array() * attn.array()).rowwise().sum();
      dattn.colwise() -= dot;
      Mat dscores = dattn.cwiseProduct(attn);
      dq.middleCols(h * dh, dh).noalias() = dscores * kh * scale;
      dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * qh * scale;
    }

    Mat dxq = wq.backward(dq);
    Mat dxkv = wk.backward(dk);
    dxkv += wv.backward(dv);
    return {dxq, dxkv};
  }
};

// Tanh-form GELU; tanh vectorizes where erf does not.
struct FeedForwardLayer {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;

  LinearLayer w1, w2;
  Mat pre_act_cache, tanh_cache;

  void init(const std::string& name, int dim, int hidden, Rng& rng) {
    w1.init(name + ".w1", dim, hidden, rng);
    w2.init(name + ".w2", hidden, dim, rng);
  }

  void collect(std::vector<Tensor*>& out) {
    w1.collect(out);
    w2.collect(out);
  }

  Mat forward(const Mat& x) {
    pre_act_cache = w1.forward(x);
    const auto& z = pre_act_cache.array();
    tanh_cache = (kC * (z + kA * z.cube())).tanh();
    Mat h = 0.5 * z * (1.0 + tanh_cache.array());
    return w2.forward(h);
  }

  Mat backward(const Mat& dy) {
    Mat dh = w2.backward(dy);
    const auto& z = pre_act_cache.array();
    const auto& t = tanh_cache.array();
    dh.array() *= 0.5 * (1.0 + t) +
                  0.5 * z * (1.0 - t.square()) * kC * (1.0 + 3.0 * kA * z.square());
    return w1.backward(dh);
  }
};

/// Pre-norm encoder block: x + Drop(Attn(LN(x))), then x + Drop(FF(LN(x))).
struct EncoderBlock {
  LayerNormLayer ln1, ln2;
  AttentionLayer attn;
  FeedForwardLayer ff;
  DropoutLayer drop1, drop2;

  void init(const std::string& name, int dim, int heads, int ff_mult, Rng& rng) {
    ln1.init(name + ".ln1", dim);
    attn.init(name + ".attn", dim, heads, false, rng);
    ln2.init(name + ".ln2", dim);
    ff.init(name + ".ff", dim, dim * ff_mult, rng);
  }

  void collect(std::vector<Tensor*>& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    ff.collect(out);
  }

  Mat forward(const Mat& x, double dropout, bool training, Rng& rng) {
    Mat normed = ln1.forward(x);
    Mat a = x + drop1.forward(attn.forward(normed, normed), dropout, training, rng);
    Mat y = a + drop2.forward(ff.forward(ln2.forward(a)), dropout, training, rng);
    return y;
  }

  Mat backward(const Mat& dy) {
    Mat da = dy + ln2.backward(ff.backward(drop2.backward(dy)));
    auto [dq, dkv] = attn.backward(drop1.backward(da));
    return da + ln1.backward(dq + dkv);
  }
};

/// Pre-norm decoder block: causal self-attention, cross-attention over the
/// encoder memory, feed-forward. backward() returns dx and adds the memory
/// gradient into dmemory.
struct DecoderBlock {
  LayerNormLayer ln1, ln2, ln3;
  AttentionLayer self_attn, cross_attn;
  FeedForwardLayer ff;
  DropoutLayer drop1, drop2, drop3;

  void init(const std::string& name, int dim, int heads, int ff_mult, Rng& rng) {
    ln1.init(name + ".ln1", dim);
    self_attn.init(name + ".self", dim, heads, true, rng);
    ln2.init(name + ".ln2", dim);
    cross_attn.init(name + ".cross", dim, heads, false, rng);
    ln3.init(name + ".ln3", dim);
    ff.init(name + ".ff", dim, dim * ff_mult, rng);
  }

  void collect(std::vector<Tensor*>& out) {
    ln1.collect(out);
    self_attn.collect(out);
    ln2.collect(out);
    cross_attn.collect(out);
    ln3.collect(out);
    ff.collect(out);
  }

  Mat forward(const Mat& x, const Mat& memory, double dropout, bool training,
              Rng& rng) {
    Mat normed = ln1.forward(x);
    Mat a = x + drop1.forward(self_attn.forward(normed, normed), dropout,
                              training, rng);
    Mat b = a + drop2.forward(cross_attn.forward(ln2.forward(a), memory),
                              dropout, training, rng);
    return b + drop3.forward(ff.forward(ln3.forward(b)), dropout, training, rng);
  }

  Mat backward(const Mat& dy, Mat& dmemory) {
    Mat db = dy + ln3.backward(ff.backward(drop3.backward(dy)));
    auto [db_q, dmem] = cross_attn.backward(drop2.backward(db));
    dmemory += dmem;
    Mat da = db + ln2.backward(db_q);
    auto [dq, dkv] = self_attn.backward(drop1.backward(da));
    return da + ln1.backward(dq + dkv);
  }
};

}  // namespace polytune::detail
