#pragma once

// Countermeasures aimed at consistent-direction poisoning: per-client features
// clustered by a two-component 1-D Gaussian mixture, and normalization of the
// total update.

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "pfl/param.hpp"
#include "pfl/rng.hpp"

namespace pfl {

struct Gmm1D {
  double means[2] = {0.0, 0.0};
  double stds[2] = {1.0, 1.0};
  double weights[2] = {0.5, 0.5};
  /// All samples equal; the mixture is meaningless.
  bool degenerate = false;
  std::size_t iterations = 0;
  /// Log-likelihood after each EM iteration.
  std::vector<double> log_likelihood;

  /// Posterior probability that x came from component `c`.
  double responsibility(double x, int c) const;
};

struct GmmFitOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 500;
  double std_floor_fraction = 1e-9;  ///< sigma floor relative to the sample range
  std::size_t restarts = 10;         ///< seedings tried; the highest final log-likelihood wins
};

/// EM with k-means++ seeding. Throws std::invalid_argument for fewer than 4 samples.
Gmm1D gmm_fit_1d(std::span<const double> samples, Rng& rng, const GmmFitOptions& opts = {});

enum class FakeCluster { kLower, kHigher };

struct DetectionVerdict {
  std::vector<std::size_t> detected_ids;
  bool clusters_separable = false;
  Gmm1D mixture;
};

/// Fits the mixture to the per-client features and flags the chosen cluster,
/// but only when the component means are at least max(sigma0, sigma1) apart.
DetectionVerdict detect(const std::map<std::size_t, double>& features, FakeCluster which, Rng& rng);

/// Sum of sign flips over the last `window` consecutive pairs in `history`
/// (oldest first). Returns nothing for fewer than two entries.
std::optional<double> gmm_sign_feature(std::span<const ParamVector> history, std::size_t window);

/// For each client in one round: mean squared distance to its closest (m-1)
/// peers. Empty when fewer than m updates are given.
std::vector<double> nearest_peer_distances(std::span<const ParamVector> updates, std::size_t m);

/// Per-client magnitude feature summed over the given rounds. Each round maps
/// client id to update; rounds with fewer than m participants are skipped.
std::map<std::size_t, double> gmm_magnitude_features(
    std::span<const std::map<std::size_t, ParamVector>> rounds, std::size_t m);

/// w_init + b * (w_final - w_init) / ||w_final - w_init||; w_init when they coincide.
ParamVector normalize_total_update(const ParamVector& w_final, const ParamVector& w_init, double b);

}  // namespace pfl
