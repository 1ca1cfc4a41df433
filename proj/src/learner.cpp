#include "pfl/learner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace pfl {

std::size_t ModelSpec::param_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    total += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  }
  return total;
}

void ModelSpec::validate() const {
  if (layer_sizes.size() < 2) throw std::invalid_argument("model: need input and output layers");
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw std::invalid_argument("model: layer sizes must be positive");
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train: learning_rate must be finite and >= 0");
  }
  if (local_epochs == 0) throw std::invalid_argument("train: local_epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
}

ParamVector flatten(const Model& model) {
  std::vector<double> flat;
  flat.reserve(model.spec.param_count());
  for (const auto& layer : model.layers) {
    flat.insert(flat.end(), layer.weights.begin(), layer.weights.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return ParamVector(std::move(flat));
}

Model unflatten(const ModelSpec& spec, const ParamVector& params) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("unflatten: expected " + std::to_string(spec.param_count()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  Model model{spec, {}};
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    Layer layer;
    layer.in = spec.layer_sizes[l];
    layer.out = spec.layer_sizes[l + 1];
    const auto* p = params.values().data();
    layer.weights.assign(p + offset, p + offset + layer.in * layer.out);
    offset += layer.in * layer.out;
    layer.bias.assign(p + offset, p + offset + layer.out);
    offset += layer.out;
    model.layers.push_back(std::move(layer));
  }
  return model;
}

ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ParamVector params(spec.param_count());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t i = 0; i < in * out; ++i) params[offset + i] = dist(rng);
    offset += in * out + out;
  }
  return params;
}

namespace {

// Activations for a single example, reused across rows.
struct Workspace {
  std::vector<std::vector<double>> acts;    // acts[0] = input, acts[L] = logits
  std::vector<std::vector<double>> deltas;  // dLoss/dpre-activation per layer

  explicit Workspace(const ModelSpec& spec) {
    acts.resize(spec.layer_sizes.size());
    deltas.resize(spec.layer_sizes.size());
    for (std::size_t l = 0; l < spec.layer_sizes.size(); ++l) {
      acts[l].resize(spec.layer_sizes[l]);
      deltas[l].resize(spec.layer_sizes[l]);
    }
  }
};

void forward(const ModelSpec& spec, const double* params, std::span<const double> x, Workspace& ws) {
  std::copy(x.begin(), x.end(), ws.acts[0].begin());
  std::size_t offset = 0;
  const std::size_t layers = spec.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double* w = params + offset;
    const double* b = w + in * out;
    const auto& a = ws.acts[l];
    auto& z = ws.acts[l + 1];
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * a[i];
      z[o] = (l + 1 < layers) ? std::max(acc, 0.0) : acc;
    }
    offset += in * out + out;
  }
}

// Stable log-softmax cross-entropy; fills `probs` with softmax(logits).
double cross_entropy(const std::vector<double>& logits, int label, std::vector<double>& probs) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - peak);
    sum += probs[c];
  }
  for (double& p : probs) p /= sum;
  return std::log(sum) + peak - logits[static_cast<std::size_t>(label)];
}

void backward(const ModelSpec& spec, const double* params, Workspace& ws, double weight, double* grad) {
  const std::size_t layers = spec.num_layers();
  std::vector<std::size_t> offsets(layers);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    offsets[l] = offset;
    offset += spec.layer_sizes[l] * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
  }
  for (std::size_t l = layers; l-- > 0;) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double* w = params + offsets[l];
    double* gw = grad + offsets[l];
    double* gb = gw + in * out;
    const auto& delta = ws.deltas[l + 1];
    const auto& a = ws.acts[l];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o] * weight;
      if (d == 0.0) continue;
      double* grow = gw + o * in;
      for (std::size_t i = 0; i < in; ++i) grow[i] += d * a[i];
      gb[o] += d;
    }
    if (l == 0) break;
    auto& prev = ws.deltas[l];
    std::fill(prev.begin(), prev.end(), 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
    }
    for (std::size_t i = 0; i < in; ++i) {
      if (a[i] <= 0.0) prev[i] = 0.0;  // ReLU derivative, 0 at the kink
    }
  }
}

double batch_loss_grad(const ModelSpec& spec, const double* params, const Dataset& data,
                       std::span<const std::size_t> rows, double* grad, Workspace& ws) {
  if (rows.empty()) throw std::invalid_argument("loss: empty batch");
  const std::size_t layers = spec.num_layers();
  std::vector<double> probs(spec.num_classes());
  const double weight = 1.0 / static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t r : rows) {
    forward(spec, params, data.row(r), ws);
    const int label = data.labels[r];
    total += cross_entropy(ws.acts[layers], label, probs);
    if (grad != nullptr) {
      auto& delta = ws.deltas[layers];
      for (std::size_t c = 0; c < probs.size(); ++c) delta[c] = probs[c];
      delta[static_cast<std::size_t>(label)] -= 1.0;
      backward(spec, params, ws, weight, grad);
    }
  }
  return total * weight;
}

void check_compatible(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  spec.validate();
  if (params.size() != spec.param_count()) {
    throw std::invalid_argument("model: parameter vector has length " + std::to_string(params.size()) +
                                ", spec needs " + std::to_string(spec.param_count()));
  }
  if (data.feature_dim != spec.input_dim()) throw std::invalid_argument("model: feature_dim mismatch");
}

}  // namespace

double loss_and_gradient(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                         std::span<const std::size_t> rows, ParamVector* grad) {
  check_compatible(spec, params, data);
  Workspace ws(spec);
  double* g = nullptr;
  if (grad != nullptr) {
    *grad = ParamVector(params.size());
    g = grad->span().data();
  }
  return batch_loss_grad(spec, params.values().data(), data, rows, g, ws);
}

double dataset_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& data) {
  std::vector<std::size_t> rows(data.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return loss_and_gradient(spec, params, data, rows, nullptr);
}

int predict(const ModelSpec& spec, const ParamVector& params, std::span<const double> x) {
  Workspace ws(spec);
  forward(spec, params.values().data(), x, ws);
  const auto& logits = ws.acts[spec.num_layers()];
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

double evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& test) {
  check_compatible(spec, params, test);
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  Workspace ws(spec);
  const auto& logits = ws.acts[spec.num_layers()];
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    forward(spec, params.values().data(), test.row(r), ws);
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    if (best != test.labels[r]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

ParamVector local_train(const ModelSpec& spec, const ParamVector& global, const ClientDataset& data,
                        const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (data.source == nullptr || data.size() == 0) throw std::invalid_argument("local_train: empty dataset");
  check_compatible(spec, global, *data.source);

  ParamVector local = global;
  ParamVector grad(global.size());
  Workspace ws(spec);
  std::vector<std::size_t> order = data.indices;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      batch_loss_grad(spec, local.values().data(), *data.source,
                      std::span<const std::size_t>(order).subspan(start, stop - start),
                      grad.span().data(), ws);
      for (std::size_t j = 0; j < local.size(); ++j) local[j] -= cfg.learning_rate * grad[j];
    }
  }
  local -= global;
  return local;
}

double gradient_check(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                      std::span<const std::size_t> rows, double h) {
  ParamVector analytic;
  loss_and_gradient(spec, params, data, rows, &analytic);
  ParamVector probe = params;
  double worst = 0.0;
  for (std::size_t j = 0; j < params.size(); ++j) {
    probe[j] = params[j] + h;
    const double up = loss_and_gradient(spec, probe, data, rows, nullptr);
    probe[j] = params[j] - h;
    const double down = loss_and_gradient(spec, probe, data, rows, nullptr);
    probe[j] = params[j];
    const double fd = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[j] - fd) / (std::abs(analytic[j]) + std::abs(fd) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

ParamVector perturb_along_random_direction(const ParamVector& w, const SignVector& s, double noise_norm,
                                           Rng& rng) {
  require_same_size(w.size(), s.size(), "perturb_along_random_direction");
  if (!(noise_norm >= 0.0)) throw std::invalid_argument("perturb: noise_norm must be >= 0");
  if (noise_norm == 0.0) return w;
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVector direction(w.size());
  for (double& v : direction) v = std::abs(normal(rng));
  const double norm = l2_norm(direction);
  if (norm == 0.0) return w;
  ParamVector out = w;
  for (std::size_t j = 0; j < w.size(); ++j) out[j] += noise_norm * (direction[j] / norm) * s[j];
  return out;
}

}  // namespace pfl
