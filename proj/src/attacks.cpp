#include "pfl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace pfl {

AttackState AttackState::start(const SignVector& s, const PoisonedFlParams& params) {
  if (params.e == 0) throw std::invalid_argument("poisonedfl: e must be positive");
  if (!(params.beta > 0.0 && params.beta < 1.0)) throw std::invalid_argument("poisonedfl: beta must lie in (0,1)");
  if (!(params.c_floor > 0.0)) throw std::invalid_argument("poisonedfl: c_floor must be positive");
  if (!(params.p_threshold > 0.0 && params.p_threshold < 1.0)) {
    throw std::invalid_argument("poisonedfl: p must lie in (0,1)");
  }
  AttackState state;
  state.s = s;
  state.c = std::max(params.c0, params.c_floor);
  state.k_prev = ParamVector(s.size());
  state.e = params.e;
  state.beta = params.beta;
  state.c_floor = params.c_floor;
  state.p_threshold = params.p_threshold;
  return state;
}

ParamVector uniform_unit_vector(std::size_t d) {
  return ParamVector(d, 1.0 / std::sqrt(static_cast<double>(d)));
}

ParamVector poisonedfl_unit_vector(const ParamVector& prev_aggregate, const AttackState& state) {
  const std::size_t d = prev_aggregate.size();
  require_same_size(d, state.k_prev.size(), "poisonedfl_unit_vector");
  const ParamVector fake = hadamard_sign(state.k_prev, state.s);
  const double g_norm = l2_norm(prev_aggregate);
  const double fake_norm = l2_norm(fake);
  if (g_norm == 0.0 || fake_norm == 0.0) return uniform_unit_vector(d);

  const double ratio = g_norm / fake_norm;
  ParamVector residual(d);
  for (std::size_t j = 0; j < d; ++j) residual[j] = std::abs(prev_aggregate[j] - ratio * fake[j]);
  const double r_norm = l2_norm(residual);
  if (r_norm == 0.0 || !std::isfinite(r_norm)) return uniform_unit_vector(d);
  for (double& v : residual) v /= r_norm;
  return residual;
}

double poisonedfl_scale(const AttackerView& view, const AttackState& state) {
  if (view.w_prev.empty()) return 0.0;
  return state.c * std::sqrt(squared_distance(view.w_curr, view.w_prev));
}

namespace {

double log_binomial_pmf_half(std::size_t d, std::size_t k) {
  const double dd = static_cast<double>(d);
  const double kk = static_cast<double>(k);
  return std::lgamma(dd + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(dd - kk + 1.0) - dd * std::numbers::ln2;
}

}  // namespace

double binomial_log_upper_tail(std::size_t d, std::size_t matches) {
  if (matches == 0) return 0.0;
  if (matches > d) return -std::numeric_limits<double>::infinity();
  // Terms decrease for k >= d/2; sum from the largest term for accuracy.
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t k = matches; k <= d; ++k) peak = std::max(peak, log_binomial_pmf_half(d, k));
  double sum = 0.0;
  for (std::size_t k = d + 1; k-- > matches;) sum += std::exp(log_binomial_pmf_half(d, k) - peak);
  return peak + std::log(sum);
}

double binomial_upper_tail(std::size_t d, std::size_t matches) {
  return std::exp(binomial_log_upper_tail(d, matches));
}

TestOutcome poisonedfl_hypothesis_test(const ParamVector& total_delta, const SignVector& s, double p_threshold) {
  require_same_size(total_delta.size(), s.size(), "poisonedfl_hypothesis_test");
  std::size_t matches = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const int sign = total_delta[j] < 0.0 ? -1 : 1;
    if (sign == s[j]) ++matches;
  }
  const double log_tail = binomial_log_upper_tail(s.size(), matches);
  return log_tail <= std::log(p_threshold) ? TestOutcome::kSuccess : TestOutcome::kFailure;
}

void poisonedfl_update_c(AttackState& state, TestOutcome outcome) {
  ++state.tests_run;
  if (outcome == TestOutcome::kSuccess) return;
  ++state.tests_failed;
  state.c = std::max(state.c_floor, state.beta * state.c);
}

CraftResult poisonedfl_craft(const AttackerView& view, AttackState& state, const PoisonedFlParams& params) {
  const std::size_t d = state.s.size();
  require_same_size(view.w_curr.size(), d, "poisonedfl_craft");
  const std::size_t t = view.round;
  if (t == 0) throw std::invalid_argument("poisonedfl_craft: rounds are numbered from 1");
  state.checkpoints[t - 1] = view.w_curr;

  CraftResult out;
  if (view.w_prev.empty()) {
    // Warm-up: only w^0 is known.
    out.magnitude = ParamVector(d);
    out.update = ParamVector(d);
    state.k_prev = out.magnitude;
    return out;
  }
  if (state.t_started == 0) state.t_started = t;

  if (t > state.t_started && (t - state.t_started) % state.e == 0) {
    auto it = state.checkpoints.find(t - state.e);
    if (it != state.checkpoints.end()) {
      const ParamVector total = sub(view.w_curr, it->second);
      poisonedfl_update_c(state, poisonedfl_hypothesis_test(total, state.s, state.p_threshold));
      out.window_tested = true;
    }
  }
  // Keep w^0 and the window the next test needs.
  for (auto it = state.checkpoints.begin(); it != state.checkpoints.end();) {
    if (it->first != 0 && it->first + state.e < t) {
      it = state.checkpoints.erase(it);
    } else {
      ++it;
    }
  }

  const ParamVector prev_aggregate = sub(view.w_curr, view.w_prev);
  const ParamVector unit = params.unit_mode == UnitMode::kAdaptive ? poisonedfl_unit_vector(prev_aggregate, state)
                                                                    : uniform_unit_vector(d);
  out.lambda = params.scale_mode == ScaleMode::kAdaptive ? state.c * l2_norm(prev_aggregate) : params.max_scale;
  out.magnitude = scale(unit, out.lambda);
  if (!std::isfinite(out.lambda) || !all_finite(out.magnitude)) {
    throw std::runtime_error("poisonedfl: malicious magnitude overflowed in round " + std::to_string(t) +
                             " (global model diverged)");
  }
  out.update = hadamard_sign(out.magnitude, state.s);
  state.k_prev = out.magnitude;
  return out;
}

ParamVector poisonedfl_adapt_sign(const ParamVector& magnitude, const SignVector& s, double alpha, double eps,
                                  Rng& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("adapt_sign: alpha must lie in [0,1]");
  ParamVector out = hadamard_sign(magnitude, s);
  if (alpha == 0.0) return out;
  std::bernoulli_distribution flip(alpha);
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (flip(rng)) out[j] = -s[j] * eps;
  }
  return out;
}

ParamVector poisonedfl_adapt_noise(const ParamVector& magnitude, const SignVector& s, double gamma, Rng& rng,
                                   std::size_t* clamped) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("adapt_noise: gamma must be >= 0");
  if (clamped != nullptr) *clamped = 0;
  if (gamma == 0.0) return hadamard_sign(magnitude, s);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVector noise(magnitude.size());
  for (double& v : noise) v = normal(rng);
  const double factor = gamma * l2_norm(magnitude) / l2_norm(noise);
  ParamVector k = magnitude;
  for (std::size_t j = 0; j < k.size(); ++j) {
    k[j] += factor * noise[j];
    if (k[j] < 0.0) {
      k[j] = 0.0;
      if (clamped != nullptr) ++*clamped;
    }
  }
  return hadamard_sign(k, s);
}

ParamVector attack_random(std::size_t d, double lambda_scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamVector out(d);
  for (double& v : out) v = lambda_scale * normal(rng);
  return out;
}

ParamVector attack_mpaf(const AttackerView& view, const ParamVector& w_target, double lambda_scale) {
  return scale(sub(w_target, view.w_curr), lambda_scale);
}

namespace {

const std::vector<ParamVector>& knowledge(const AttackerView& view, const char* who) {
  if (!view.genuine_updates) throw std::invalid_argument(std::string(who) + ": genuine updates not available");
  return *view.genuine_updates;
}

ParamVector mean_vector(const std::vector<ParamVector>& vs) {
  ParamVector out(vs.front().size());
  for (const auto& v : vs) out += v;
  for (double& x : out) x /= static_cast<double>(vs.size());
  return out;
}

// -mean / ||mean||, or zero when the mean vanishes.
ParamVector inverse_unit(const ParamVector& mean) {
  const double norm = l2_norm(mean);
  if (norm == 0.0) return ParamVector(mean.size());
  return scale(mean, -1.0 / norm);
}

ParamVector along(const ParamVector& mean, const ParamVector& dir, double gamma) {
  ParamVector out = mean;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += gamma * dir[j];
  return out;
}

}  // namespace

ParamVector attack_lie(const AttackerView& view) {
  const auto& genuine = knowledge(view, "lie");
  if (genuine.empty()) throw std::invalid_argument("lie: no genuine updates");
  const ParamVector mean = mean_vector(genuine);
  ParamVector out(mean.size());
  for (std::size_t j = 0; j < mean.size(); ++j) {
    double var = 0.0;
    for (const auto& g : genuine) var += (g[j] - mean[j]) * (g[j] - mean[j]);
    var /= static_cast<double>(genuine.size());
    out[j] = mean[j] + 0.74 * std::sqrt(var);
  }
  return out;
}

std::vector<ParamVector> attack_fang(const AttackerView& view, std::size_t n_fake, Rng& rng) {
  const auto& genuine = knowledge(view, "fang");
  if (genuine.empty()) throw std::invalid_argument("fang: no genuine updates");
  const std::size_t d = genuine.front().size();
  const ParamVector mean = mean_vector(genuine);

  if (view.rule_hint == RuleKind::kMultiKrum) {
    // Krum attack: -lambda * sign(mean), halving lambda until Krum picks it.
    double max_norm = 0.0;
    for (const auto& g : genuine) max_norm = std::max(max_norm, l2_norm(g));
    ParamVector direction(d);
    for (std::size_t j = 0; j < d; ++j) direction[j] = mean[j] < 0.0 ? 1.0 : -1.0;
    double lambda = max_norm;
    ParamVector crafted = scale(direction, lambda);
    for (int halving = 0; halving < 50 && n_fake > 0; ++halving) {
      std::vector<ParamVector> pool = genuine;
      for (std::size_t f = 0; f < n_fake; ++f) pool.push_back(crafted);
      const auto pick = multi_krum_selection(pool, 1);
      if (pick.front() >= genuine.size()) break;
      lambda /= 2.0;
      crafted = scale(direction, lambda);
    }
    return std::vector<ParamVector>(n_fake, crafted);
  }

  // Trim attack: per dimension, land beyond the genuine range on the side
  // opposite to the mean's sign, with b = 2.
  std::vector<double> lo(d, std::numeric_limits<double>::infinity());
  std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
  for (const auto& g : genuine) {
    for (std::size_t j = 0; j < d; ++j) {
      lo[j] = std::min(lo[j], g[j]);
      hi[j] = std::max(hi[j], g[j]);
    }
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ParamVector> out;
  out.reserve(n_fake);
  for (std::size_t f = 0; f < n_fake; ++f) {
    ParamVector v(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double u = 1.0 - unit(rng);  // (0, 1]
      if (mean[j] > 0.0) {
        const double span = lo[j] > 0.0 ? lo[j] * 0.5 : -lo[j];
        v[j] = lo[j] - u * span;
      } else {
        const double span = hi[j] > 0.0 ? hi[j] : -hi[j] * 0.5;
        v[j] = hi[j] + u * span;
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

double search_max_gamma(const std::function<bool(double)>& feasible, double initial) {
  if (!(initial > 0.0) || !feasible(0.0)) return 0.0;
  double lo = 0.0;
  double hi = initial;
  int doublings = 0;
  while (feasible(hi)) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 60) return 0.0;  // unbounded: no meaningful boundary
  }
  for (int halving = 0; halving < 50; ++halving) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

ParamVector attack_minmax(const AttackerView& view) {
  const auto& genuine = knowledge(view, "minmax");
  if (genuine.empty()) throw std::invalid_argument("minmax: no genuine updates");
  const ParamVector mean = mean_vector(genuine);
  const ParamVector dir = inverse_unit(mean);
  double bound = 0.0;
  for (std::size_t i = 0; i < genuine.size(); ++i) {
    for (std::size_t j = i + 1; j < genuine.size(); ++j) bound = std::max(bound, squared_distance(genuine[i], genuine[j]));
  }
  auto feasible = [&](double gamma) {
    const ParamVector mal = along(mean, dir, gamma);
    for (const auto& g : genuine) {
      if (squared_distance(mal, g) > bound) return false;
    }
    return true;
  };
  return along(mean, dir, search_max_gamma(feasible, std::sqrt(bound)));
}

ParamVector attack_minsum(const AttackerView& view) {
  const auto& genuine = knowledge(view, "minsum");
  if (genuine.empty()) throw std::invalid_argument("minsum: no genuine updates");
  const ParamVector mean = mean_vector(genuine);
  const ParamVector dir = inverse_unit(mean);
  double bound = 0.0;
  for (const auto& gi : genuine) {
    double sum = 0.0;
    for (const auto& gj : genuine) sum += squared_distance(gi, gj);
    bound = std::max(bound, sum);
  }
  auto feasible = [&](double gamma) {
    const ParamVector mal = along(mean, dir, gamma);
    double sum = 0.0;
    for (const auto& g : genuine) sum += squared_distance(mal, g);
    return sum <= bound;
  };
  return along(mean, dir, search_max_gamma(feasible, std::sqrt(bound)));
}

ParamVector attack_optfang(const AttackerView& view, std::size_t n_fake) {
  const auto& genuine = knowledge(view, "optfang");
  if (genuine.empty()) throw std::invalid_argument("optfang: no genuine updates");
  if (!view.rule_oracle) throw std::invalid_argument("optfang: aggregation rule oracle not available");
  const ParamVector mean = mean_vector(genuine);
  const ParamVector dir = inverse_unit(mean);
  if (n_fake == 0) return mean;
  const ParamVector reference = view.rule_oracle(genuine);

  double spread = 0.0;
  for (const auto& g : genuine) spread = std::max(spread, std::sqrt(squared_distance(g, mean)));
  double gamma = std::max(spread, l2_norm(mean));
  double step = gamma / 2.0;
  double best_gamma = 0.0;
  double best_dev = -1.0;
  std::vector<ParamVector> pool;
  for (int it = 0; it < 50 && gamma > 0.0; ++it) {
    const ParamVector mal = along(mean, dir, gamma);
    pool = genuine;
    for (std::size_t f = 0; f < n_fake; ++f) pool.push_back(mal);
    const double dev = squared_distance(view.rule_oracle(pool), reference);
    if (dev > best_dev) {
      best_dev = dev;
      best_gamma = gamma;
      gamma += step;
    } else {
      gamma -= step;
    }
    step /= 2.0;
  }
  return along(mean, dir, best_gamma);
}

AttackKind parse_attack(std::string_view key) {
  if (key == "none") return AttackKind::kNone;
  if (key == "poisonedfl") return AttackKind::kPoisonedFl;
  if (key == "poisonedfl-adapt-sign") return AttackKind::kPoisonedFlAdaptSign;
  if (key == "poisonedfl-adapt-noise") return AttackKind::kPoisonedFlAdaptNoise;
  if (key == "random") return AttackKind::kRandom;
  if (key == "mpaf") return AttackKind::kMpaf;
  if (key == "lie") return AttackKind::kLie;
  if (key == "fang") return AttackKind::kFang;
  if (key == "optfang") return AttackKind::kOptFang;
  if (key == "minmax") return AttackKind::kMinMax;
  if (key == "minsum") return AttackKind::kMinSum;
  throw std::invalid_argument("unknown attack '" + std::string(key) + "'");
}

std::string_view attack_key(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kPoisonedFl: return "poisonedfl";
    case AttackKind::kPoisonedFlAdaptSign: return "poisonedfl-adapt-sign";
    case AttackKind::kPoisonedFlAdaptNoise: return "poisonedfl-adapt-noise";
    case AttackKind::kRandom: return "random";
    case AttackKind::kMpaf: return "mpaf";
    case AttackKind::kLie: return "lie";
    case AttackKind::kFang: return "fang";
    case AttackKind::kOptFang: return "optfang";
    case AttackKind::kMinMax: return "minmax";
    case AttackKind::kMinSum: return "minsum";
  }
  return "?";
}

bool needs_genuine_knowledge(AttackKind kind) {
  switch (kind) {
    case AttackKind::kLie:
    case AttackKind::kFang:
    case AttackKind::kOptFang:
    case AttackKind::kMinMax:
    case AttackKind::kMinSum: return true;
    default: return false;
  }
}

namespace {

class NoAttack final : public Attack {
 public:
  std::vector<ParamVector> craft(const AttackerView& view, Rng&) override {
    return std::vector<ParamVector>(view.participating_fake_ids.size(), ParamVector(view.w_curr.size()));
  }
};

class PoisonedFlAttack final : public Attack {
 public:
  PoisonedFlAttack(const AttackConfig& cfg, const SignVector& s)
      : cfg_(cfg), state_(AttackState::start(s, cfg.poisonedfl)) {}

  std::vector<ParamVector> craft(const AttackerView& view, Rng& rng) override {
    const CraftResult base = poisonedfl_craft(view, state_, cfg_.poisonedfl);
    info_ = {};
    info_.active = !view.w_prev.empty();
    info_.c = state_.c;
    info_.lambda = base.lambda;
    std::vector<ParamVector> out;
    out.reserve(view.participating_fake_ids.size());
    for (std::size_t f = 0; f < view.participating_fake_ids.size(); ++f) {
      if (!info_.active) {
        out.push_back(base.update);
      } else if (cfg_.kind == AttackKind::kPoisonedFlAdaptSign) {
        out.push_back(poisonedfl_adapt_sign(base.magnitude, state_.s, cfg_.alpha, cfg_.eps, rng));
      } else if (cfg_.kind == AttackKind::kPoisonedFlAdaptNoise) {
        std::size_t clamped = 0;
        out.push_back(poisonedfl_adapt_noise(base.magnitude, state_.s, cfg_.gamma, rng, &clamped));
        info_.clamped_dims += clamped;
      } else {
        out.push_back(base.update);
      }
    }
    return out;
  }

  const SignVector* sign_vector() const override { return &state_.s; }

 private:
  AttackConfig cfg_;
  AttackState state_;
};

class RandomAttack final : public Attack {
 public:
  explicit RandomAttack(double lambda) : lambda_(lambda) {}
  std::vector<ParamVector> craft(const AttackerView& view, Rng& rng) override {
    info_ = {};
    info_.active = true;
    std::vector<ParamVector> out;
    for (std::size_t f = 0; f < view.participating_fake_ids.size(); ++f) {
      out.push_back(attack_random(view.w_curr.size(), lambda_, rng));
    }
    return out;
  }

 private:
  double lambda_;
};

class MpafAttack final : public Attack {
 public:
  MpafAttack(ParamVector target, double lambda) : target_(std::move(target)), lambda_(lambda) {}
  std::vector<ParamVector> craft(const AttackerView& view, Rng&) override {
    info_ = {};
    info_.active = true;
    return std::vector<ParamVector>(view.participating_fake_ids.size(), attack_mpaf(view, target_, lambda_));
  }

 private:
  ParamVector target_;
  double lambda_;
};

class KnowledgeAttack final : public Attack {
 public:
  explicit KnowledgeAttack(AttackKind kind) : kind_(kind) {}
  std::vector<ParamVector> craft(const AttackerView& view, Rng& rng) override {
    info_ = {};
    const std::size_t n_fake = view.participating_fake_ids.size();
    const std::size_t d = view.w_curr.size();
    if (n_fake == 0) return {};
    if (!view.genuine_updates) throw std::invalid_argument(std::string(attack_key(kind_)) + ": no genuine knowledge");
    if (view.genuine_updates->empty()) return std::vector<ParamVector>(n_fake, ParamVector(d));
    info_.active = true;
    switch (kind_) {
      case AttackKind::kLie: return std::vector<ParamVector>(n_fake, attack_lie(view));
      case AttackKind::kFang: return attack_fang(view, n_fake, rng);
      case AttackKind::kOptFang: return std::vector<ParamVector>(n_fake, attack_optfang(view, n_fake));
      case AttackKind::kMinMax: return std::vector<ParamVector>(n_fake, attack_minmax(view));
      case AttackKind::kMinSum: return std::vector<ParamVector>(n_fake, attack_minsum(view));
      default: break;
    }
    throw std::logic_error("KnowledgeAttack: unexpected kind");
  }

 private:
  AttackKind kind_;
};

}  // namespace

std::unique_ptr<Attack> make_attack(const AttackConfig& cfg, std::size_t d, const SignVector& s,
                                    const ParamVector& w_target) {
  switch (cfg.kind) {
    case AttackKind::kNone: return std::make_unique<NoAttack>();
    case AttackKind::kPoisonedFl:
    case AttackKind::kPoisonedFlAdaptSign:
    case AttackKind::kPoisonedFlAdaptNoise:
      require_same_size(s.size(), d, "make_attack");
      return std::make_unique<PoisonedFlAttack>(cfg, s);
    case AttackKind::kRandom: return std::make_unique<RandomAttack>(cfg.lambda);
    case AttackKind::kMpaf:
      require_same_size(w_target.size(), d, "make_attack");
      return std::make_unique<MpafAttack>(w_target, cfg.lambda);
    case AttackKind::kLie:
    case AttackKind::kFang:
    case AttackKind::kOptFang:
    case AttackKind::kMinMax:
    case AttackKind::kMinSum: return std::make_unique<KnowledgeAttack>(cfg.kind);
  }
  throw std::invalid_argument("make_attack: unknown kind");
}

}  // namespace pfl
