#pragma once

// Dense feed-forward classifier (ReLU hidden layers, softmax output) operating
// directly on flat parameter vectors, plus local SGD and evaluation.
//
// Flat layout: for each layer in order, the weight matrix (out x in, row-major)
// followed by its bias vector.

#include <cstddef>
#include <span>
#include <vector>

#include "pfl/data.hpp"
#include "pfl/param.hpp"
#include "pfl/rng.hpp"

namespace pfl {

struct ModelSpec {
  std::vector<std::size_t> layer_sizes;  ///< input, hidden..., classes

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t param_count() const;
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 10;

  void validate() const;
};

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  ///< out x in
  std::vector<double> bias;     ///< out
  bool operator==(const Layer&) const = default;
};

/// Structured view of a parameter vector.
struct Model {
  ModelSpec spec;
  std::vector<Layer> layers;
};

ParamVector flatten(const Model& model);
/// Throws std::invalid_argument on a dimension mismatch.
Model unflatten(const ModelSpec& spec, const ParamVector& params);

/// Glorot-uniform weights, zero biases.
ParamVector init_params(const ModelSpec& spec, Rng& rng);

/// Mean softmax cross-entropy over the listed rows; writes the gradient of
/// that mean into `grad` when non-null.
double loss_and_gradient(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                         std::span<const std::size_t> rows, ParamVector* grad);

/// Mean loss over every row of `data`.
double dataset_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& data);

/// Class with the largest logit (lowest index on ties).
int predict(const ModelSpec& spec, const ParamVector& params, std::span<const double> x);

/// Fraction of misclassified rows.
double evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& test);

/// Mini-batch SGD from `global` on the client's rows; returns local - global.
ParamVector local_train(const ModelSpec& spec, const ParamVector& global, const ClientDataset& data,
                        const TrainConfig& cfg, Rng& rng);

/// Max over parameters of |analytic - central difference| / (|analytic| + |fd| + 1e-8).
double gradient_check(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                      std::span<const std::size_t> rows, double h = 1e-5);

/// w + noise_norm * u where u has unit norm, signs s and |N(0,1)| magnitudes.
ParamVector perturb_along_random_direction(const ParamVector& w, const SignVector& s,
                                           double noise_norm, Rng& rng);

}  // namespace pfl
