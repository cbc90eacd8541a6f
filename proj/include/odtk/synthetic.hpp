#pragma once

// Bundles with planted outlier structure. The construction is the oracle: the
// planted dimensions, their signs and the frequency prior are all known.
//
// Hidden state of sample i with ground truth g:
//   non-planted dims  a_i * U[g, :] + noise,   a_i ~ U(0, 2 * signal)
//   planted dim j     sign_j * (od_magnitude + N(0, 1))
// Unembedding:
//   non-planted dims  N(0, 1 / (d - P))
//   planted dim j     sign_j * prior / (P * od_magnitude) * (log f_t - mean log f + jitter)
// so the planted dims add roughly prior * (log f_t - mean) to every logit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "odtk/bundle.hpp"
#include "odtk/core.hpp"
#include "odtk/prng.hpp"

namespace odtk::synthetic {

struct Config {
  std::size_t n = 2000;
  std::size_t d = 640;
  std::size_t v = 1000;
  std::size_t h = 256;
  std::size_t planted = 5;
  std::size_t n_layers = 0;
  std::uint64_t seed = 7;
  double od_magnitude = 8.0;
  double signal = 3.0;
  double prior = 0.5;
  double noise = 1.0;
  double prior_jitter = 0.3;
  double zipf_exponent = 1.1;
  bool with_ln_weight = true;
  bool with_ln_bias = true;
  bool with_mlp_down = true;
  bool reference_predictions = false;
  std::string model_name = "synthetic-planted";
  std::string step = "final";
};

struct Planted {
  ModelBundle bundle;
  IndexSet dims;
  std::vector<int> signs;
  /// Singular values used for the low-rank part of mlp_down.
  std::vector<double> mlp_scales;
};

class Gaussian {
public:
  explicit Gaussian(CounterRng &rng) : rng_(rng) {}

  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = rng_.uniform01();
    const double u2 = rng_.uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

private:
  CounterRng &rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

namespace detail {

inline std::vector<double> unit_vector(std::size_t n, Gaussian &gauss) {
  std::vector<double> u(n);
  for (auto &x : u) x = gauss();
  const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  for (auto &x : u) x /= norm;
  return u;
}

/// Argmax in float32 with sequential accumulation, the way a framework that
/// never leaves single precision would compute it.
inline std::vector<std::size_t> float32_argmax(const MatrixF &acts, const MatrixF &unemb) {
  std::vector<std::size_t> out(acts.rows());
  for (std::size_t i = 0; i < acts.rows(); ++i) {
    const auto c = acts.row(i);
    float best = 0.0f;
    std::size_t arg = 0;
    for (std::size_t t = 0; t < unemb.rows(); ++t) {
      const auto u = unemb.row(t);
      float s = 0.0f;
      for (std::size_t j = 0; j < c.size(); ++j) s += c[j] * u[j];
      if (t == 0 || s > best) {
        best = s;
        arg = t;
      }
    }
    out[i] = arg;
  }
  return out;
}

} // namespace detail

inline Planted make_planted(const Config &cfg) {
  require(cfg.planted < cfg.d && cfg.n >= 1 && cfg.v >= 2, ErrorKind::InvalidArgument,
          "synthetic config: need planted < d, n >= 1, v >= 2");
  CounterRng rng(cfg.seed);
  Gaussian gauss(rng);
  const std::size_t n = cfg.n, d = cfg.d, v = cfg.v, P = cfg.planted;

  Planted out;
  out.dims = sample_distinct(P, d, rng);
  for (std::size_t j = 0; j < P; ++j) out.signs.push_back(rng.uniform(2) ? 1 : -1);
  std::vector<int> sign_of(d, 0);
  for (std::size_t j = 0; j < P; ++j) sign_of[out.dims[j]] = out.signs[j];

  // Zipf frequencies over a shuffled id order, so frequency rank is not token id.
  std::vector<std::size_t> rank(v);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  for (std::size_t i = v; i > 1; --i) std::swap(rank[i - 1], rank[rng.uniform(i)]);
  auto &b = out.bundle;
  b.vocab.surface.resize(v);
  b.vocab.corpus_frequency.resize(v);
  std::vector<double> logf(v);
  for (std::size_t t = 0; t < v; ++t) {
    const double f = std::max(1.0, std::round(1e7 / std::pow(double(rank[t] + 1), cfg.zipf_exponent)));
    b.vocab.corpus_frequency[t] = f;
    b.vocab.surface[t] = fmt::format("w{}", t);
    logf[t] = std::log(f);
  }
  const double mean_logf = std::accumulate(logf.begin(), logf.end(), 0.0) / double(v);

  // Ground truth drawn from the corpus distribution.
  std::vector<double> cdf(v);
  std::partial_sum(b.vocab.corpus_frequency.begin(), b.vocab.corpus_frequency.end(), cdf.begin());
  b.samples.ground_truth.resize(n);
  b.samples.context_id.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform01() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
    b.samples.ground_truth[i] = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), v - 1);
    b.samples.context_id[i] = fmt::format("ctx-{:05}", i);
  }

  const double emb_scale = 1.0 / std::sqrt(double(d - P));
  const double od_weight = cfg.prior / (double(P) * cfg.od_magnitude);
  b.unembedding = MatrixF(v, d);
  for (std::size_t t = 0; t < v; ++t)
    for (std::size_t j = 0; j < d; ++j)
      b.unembedding(t, j) = static_cast<float>(
          sign_of[j] == 0 ? emb_scale * gauss()
                          : sign_of[j] * od_weight * (logf[t] - mean_logf + cfg.prior_jitter * gauss()));

  b.activations = MatrixF(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * cfg.signal * rng.uniform01();
    const std::size_t g = b.samples.ground_truth[i];
    for (std::size_t j = 0; j < d; ++j)
      b.activations(i, j) = static_cast<float>(
          sign_of[j] == 0 ? a * b.unembedding(g, j) + cfg.noise * gauss()
                          : sign_of[j] * (cfg.od_magnitude + gauss()));
  }

  if (cfg.with_ln_weight) {
    std::vector<float> w(d);
    for (std::size_t j = 0; j < d; ++j) w[j] = static_cast<float>(sign_of[j] ? 4.0 : 1.0 + 0.05 * gauss());
    b.ln_weight = std::move(w);
  }
  if (cfg.with_ln_bias) {
    std::vector<float> w(d);
    for (std::size_t j = 0; j < d; ++j) w[j] = static_cast<float>(sign_of[j] ? 0.8 * sign_of[j] : 0.02 * gauss());
    b.ln_bias = std::move(w);
  }
  if (cfg.with_mlp_down) {
    // Rank-4 signal plus small noise; the leading left direction spikes on the planted dims.
    out.mlp_scales = {40.0, 20.0, 15.0, 10.0};
    std::vector<std::vector<double>> us, vs;
    for (std::size_t r = 0; r < out.mlp_scales.size(); ++r) {
      auto u = detail::unit_vector(d, gauss);
      if (r == 0) {
        for (auto &x : u) x *= 0.5;
        for (std::size_t j = 0; j < d; ++j)
          if (sign_of[j]) u[j] = sign_of[j] * 1.0;
        const double norm = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
        for (auto &x : u) x /= norm;
      }
      us.push_back(std::move(u));
      vs.push_back(detail::unit_vector(cfg.h, gauss));
    }
    MatrixF w(d, cfg.h);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < cfg.h; ++k) {
        double x = 0.01 * gauss();
        for (std::size_t r = 0; r < us.size(); ++r) x += out.mlp_scales[r] * us[r][j] * vs[r][k];
        w(j, k) = static_cast<float>(x);
      }
    b.mlp_down = std::move(w);
  }

  // Layer l keeps the first ceil(P * (l + 1) / L) planted dims; the last layer is the final state.
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    if (l + 1 == cfg.n_layers) {
      b.layers.push_back(b.activations);
      break;
    }
    const std::size_t active = (P * (l + 1) + cfg.n_layers - 1) / cfg.n_layers;
    MatrixF m(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const auto pos = std::lower_bound(out.dims.begin(), out.dims.end(), j);
        const bool on = pos != out.dims.end() && *pos == j && std::size_t(pos - out.dims.begin()) < active;
        m(i, j) = static_cast<float>(on ? sign_of[j] * (cfg.od_magnitude + gauss()) : cfg.noise * gauss());
      }
    b.layers.push_back(std::move(m));
  }

  if (cfg.reference_predictions)
    b.samples.reference_prediction = detail::float32_argmax(b.activations, b.unembedding);

  auto &m = b.manifest;
  m.model_name = cfg.model_name;
  m.checkpoint_step = cfg.step;
  m.hidden_dim = d;
  m.vocab_size = v;
  m.mlp_dim = cfg.with_mlp_down ? cfg.h : 0;
  m.n_samples = n;
  m.n_layers = b.layers.size();
  m.dtype = "float32";
  m.has_ln_weight = cfg.with_ln_weight;
  m.has_ln_bias = cfg.with_ln_bias;
  m.has_mlp_down = cfg.with_mlp_down;
  m.has_layers = !b.layers.empty();
  m.files.layers.clear();
  for (std::size_t l = 0; l < b.layers.size(); ++l) m.files.layers.push_back(fmt::format("layer_{}.f32", l));
  m.metadata["generator"] = "planted";
  m.metadata["seed"] = cfg.seed;
  m.metadata["planted_dims"] = out.dims;
  return out;
}

/// Small stand-in for an exported model: two planted dims over d = 256.
inline Config toy_config() {
  Config c;
  c.n = 2000;
  c.d = 256;
  c.v = 400;
  c.h = 128;
  c.planted = 2;
  c.n_layers = 2;
  c.seed = 11;
  c.signal = 4.0;
  c.reference_predictions = true;
  c.model_name = "toy-decoder";
  return c;
}

/// Constant-zero activations: every logit is 0 so surprisal is ln V.
inline ModelBundle zero_bundle(std::size_t n, std::size_t d, std::size_t v) {
  ModelBundle b;
  b.activations = MatrixF(n, d);
  b.unembedding = MatrixF(v, d);
  CounterRng rng(3);
  for (auto &x : b.unembedding.values()) x = static_cast<float>(rng.uniform01() - 0.5);
  b.vocab.surface.resize(v);
  b.vocab.corpus_frequency.assign(v, 1.0);
  for (std::size_t t = 0; t < v; ++t) b.vocab.surface[t] = fmt::format("w{}", t);
  for (std::size_t i = 0; i < n; ++i) {
    b.samples.ground_truth.push_back(rng.uniform(v));
    b.samples.context_id.push_back(fmt::format("ctx-{}", i));
  }
  b.manifest.model_name = "zeros";
  b.manifest.checkpoint_step = "0";
  b.manifest.hidden_dim = d;
  b.manifest.vocab_size = v;
  b.manifest.n_samples = n;
  return b;
}

} // namespace odtk::synthetic
