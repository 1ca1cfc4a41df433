#include "pfl/tailored.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace pfl {

namespace {

double log_normal_pdf(double x, double mean, double std) {
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * std::numbers::pi);
}

double log_add(double a, double b) {
  const double hi = std::max(a, b);
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

constexpr double kMinWeight = 1e-12;

Gmm1D fit_once(std::span<const double> samples, double range, Rng& rng, const GmmFitOptions& opts);

}  // namespace

double Gmm1D::responsibility(double x, int c) const {
  const double l0 = std::log(weights[0]) + log_normal_pdf(x, means[0], stds[0]);
  const double l1 = std::log(weights[1]) + log_normal_pdf(x, means[1], stds[1]);
  const double total = log_add(l0, l1);
  return std::exp((c == 0 ? l0 : l1) - total);
}

Gmm1D gmm_fit_1d(std::span<const double> samples, Rng& rng, const GmmFitOptions& opts) {
  if (samples.size() < 4) throw std::invalid_argument("gmm_fit_1d: need at least 4 samples");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double range = *hi_it - *lo_it;

  Gmm1D gmm;
  if (range == 0.0) {
    gmm.degenerate = true;
    gmm.means[0] = gmm.means[1] = *lo_it;
    gmm.stds[0] = gmm.stds[1] = std::numeric_limits<double>::min();
    return gmm;
  }
  Gmm1D best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.restarts); ++r) {
    Gmm1D fit = fit_once(samples, range, rng, opts);
    if (r == 0 || fit.log_likelihood.back() > best.log_likelihood.back()) best = std::move(fit);
  }
  return best;
}

namespace {

Gmm1D fit_once(std::span<const double> samples, double range, Rng& rng, const GmmFitOptions& opts) {
  Gmm1D gmm;
  const double floor = opts.std_floor_fraction * range;
  const std::size_t n = samples.size();

  // k-means++ seeding: one uniform center, the second drawn proportional to D^2.
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const double c0 = samples[pick(rng)];
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (samples[i] - c0) * (samples[i] - c0);
  std::discrete_distribution<std::size_t> by_distance(d2.begin(), d2.end());
  const double c1 = samples[by_distance(rng)];

  // Hard assignment to the nearer seed gives the starting parameters.
  std::vector<double> resp(n);  // responsibility of component 1
  for (std::size_t i = 0; i < n; ++i) resp[i] = std::abs(samples[i] - c1) < std::abs(samples[i] - c0) ? 1.0 : 0.0;

  auto m_step = [&] {
    double w1 = 0.0, s1 = 0.0;
    double w0 = 0.0, s0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w1 += resp[i];
      s1 += resp[i] * samples[i];
      w0 += 1.0 - resp[i];
      s0 += (1.0 - resp[i]) * samples[i];
    }
    gmm.means[0] = w0 > 0.0 ? s0 / w0 : c0;
    gmm.means[1] = w1 > 0.0 ? s1 / w1 : c1;
    double v0 = 0.0, v1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v0 += (1.0 - resp[i]) * (samples[i] - gmm.means[0]) * (samples[i] - gmm.means[0]);
      v1 += resp[i] * (samples[i] - gmm.means[1]) * (samples[i] - gmm.means[1]);
    }
    gmm.stds[0] = std::max(w0 > 0.0 ? std::sqrt(v0 / w0) : 0.0, floor);
    gmm.stds[1] = std::max(w1 > 0.0 ? std::sqrt(v1 / w1) : 0.0, floor);
    const double total = static_cast<double>(n);
    gmm.weights[0] = std::clamp(w0 / total, kMinWeight, 1.0 - kMinWeight);
    gmm.weights[1] = 1.0 - gmm.weights[0];
  };

  auto e_step = [&] {
    double ll = 0.0;
    const double lw0 = std::log(gmm.weights[0]);
    const double lw1 = std::log(gmm.weights[1]);
    for (std::size_t i = 0; i < n; ++i) {
      const double l0 = lw0 + log_normal_pdf(samples[i], gmm.means[0], gmm.stds[0]);
      const double l1 = lw1 + log_normal_pdf(samples[i], gmm.means[1], gmm.stds[1]);
      const double total = log_add(l0, l1);
      resp[i] = std::exp(l1 - total);
      ll += total;
    }
    return ll;
  };

  m_step();
  double prev = e_step();
  gmm.log_likelihood.push_back(prev);
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    m_step();
    const double ll = e_step();
    gmm.log_likelihood.push_back(ll);
    gmm.iterations = it + 1;
    if (std::abs(ll - prev) <= opts.tolerance * std::max(1.0, std::abs(ll))) break;
    prev = ll;
  }
  return gmm;
}

}  // namespace

DetectionVerdict detect(const std::map<std::size_t, double>& features, FakeCluster which, Rng& rng) {
  DetectionVerdict verdict;
  if (features.size() < 4) return verdict;
  std::vector<double> values;
  values.reserve(features.size());
  for (const auto& [id, x] : features) values.push_back(x);
  verdict.mixture = gmm_fit_1d(values, rng);
  const Gmm1D& g = verdict.mixture;
  if (g.degenerate) return verdict;

  const double gap = std::abs(g.means[0] - g.means[1]);
  verdict.clusters_separable = gap >= std::max(g.stds[0], g.stds[1]);
  if (!verdict.clusters_separable) return verdict;

  const bool lower_is_zero = g.means[0] <= g.means[1];
  const int target = (which == FakeCluster::kLower) == lower_is_zero ? 0 : 1;
  for (const auto& [id, x] : features) {
    if (g.responsibility(x, target) >= 0.5) verdict.detected_ids.push_back(id);
  }
  return verdict;
}

std::optional<double> gmm_sign_feature(std::span<const ParamVector> history, std::size_t window) {
  if (history.size() < 2) return std::nullopt;
  const std::size_t pairs = std::min(window, history.size() - 1);
  double flips = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    const auto& cur = history[history.size() - 1 - p];
    const auto& prev = history[history.size() - 2 - p];
    flips += static_cast<double>(count_flips(sign_of(cur), sign_of(prev)));
  }
  return flips;
}

std::vector<double> nearest_peer_distances(std::span<const ParamVector> updates, std::size_t m) {
  if (m < 2) throw std::invalid_argument("nearest_peer_distances: m must be >= 2");
  const std::size_t k = updates.size();
  if (k < m) return {};
  std::vector<double> out(k);
  std::vector<double> dists;
  for (std::size_t i = 0; i < k; ++i) {
    dists.clear();
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) dists.push_back(squared_distance(updates[i], updates[j]));
    }
    std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(m - 1), dists.end());
    double sum = 0.0;
    for (std::size_t r = 0; r + 1 < m; ++r) sum += dists[r];
    out[i] = sum / static_cast<double>(m - 1);
  }
  return out;
}

std::map<std::size_t, double> gmm_magnitude_features(
    std::span<const std::map<std::size_t, ParamVector>> rounds, std::size_t m) {
  std::map<std::size_t, double> features;
  std::vector<std::size_t> ids;
  std::vector<ParamVector> updates;
  for (const auto& round : rounds) {
    if (round.size() < m) continue;
    ids.clear();
    updates.clear();
    for (const auto& [id, g] : round) {
      ids.push_back(id);
      updates.push_back(g);
    }
    const auto d = nearest_peer_distances(updates, m);
    for (std::size_t i = 0; i < ids.size(); ++i) features[ids[i]] += d[i];
  }
  return features;
}

ParamVector normalize_total_update(const ParamVector& w_final, const ParamVector& w_init, double b) {
  if (!(b > 0.0)) throw std::invalid_argument("normalize_total_update: b must be positive");
  ParamVector total = sub(w_final, w_init);
  const double norm = l2_norm(total);
  if (norm == 0.0) return w_init;
  ParamVector out = w_init;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += b * (total[j] / norm);
  return out;
}

}  // namespace pfl
