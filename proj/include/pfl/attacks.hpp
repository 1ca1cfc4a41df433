#pragma once

// Model-poisoning attacks run by injected fake clients.
//
// PoisonedFL keeps one random sign vector for the whole run and only adapts
// the per-dimension magnitudes, so every malicious update pushes the global
// model the same way round after round. The remaining attacks are baselines.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pfl/aggregation.hpp"
#include "pfl/param.hpp"
#include "pfl/rng.hpp"

namespace pfl {

enum class UnitMode { kAdaptive, kSame };
enum class ScaleMode { kAdaptive, kMaximized };

struct PoisonedFlParams {
  double c0 = 8.0;
  std::size_t e = 50;
  double beta = 0.7;
  double c_floor = 0.5;
  double p_threshold = 0.01;
  UnitMode unit_mode = UnitMode::kAdaptive;
  ScaleMode scale_mode = ScaleMode::kAdaptive;
  double max_scale = 100000.0;
};

struct AttackState {
  SignVector s;
  double c = 8.0;
  ParamVector k_prev;
  std::size_t e = 50;
  double beta = 0.7;
  double c_floor = 0.5;
  double p_threshold = 0.01;
  /// Global models seen so far, keyed by round index (w^0 is kept for the run).
  std::map<std::size_t, ParamVector> checkpoints;
  std::size_t t_started = 0;
  std::size_t tests_run = 0;
  std::size_t tests_failed = 0;

  static AttackState start(const SignVector& s, const PoisonedFlParams& params);
};

/// What the fake clients see in round t.
struct AttackerView {
  std::size_t round = 0;
  ParamVector w_curr;  ///< w^{t-1}
  ParamVector w_prev;  ///< w^{t-2}; empty in round 1
  /// Only granted to the knowledge-assuming baselines.
  std::optional<std::vector<ParamVector>> genuine_updates;
  std::vector<std::size_t> participating_fake_ids;
  /// Aggregation oracle for Opt. Fang (full knowledge of the rule).
  std::function<ParamVector(std::span<const ParamVector>)> rule_oracle;
  RuleKind rule_hint = RuleKind::kMedian;
};

// --- PoisonedFL building blocks -------------------------------------------

/// Unit magnitude vector estimated from the previous aggregate g = w^{t-1} - w^{t-2}:
/// |g - (||g|| / ||k_prev*s||) k_prev*s| normalized. Falls back to the uniform
/// vector 1/sqrt(d) whenever a denominator is zero.
ParamVector poisonedfl_unit_vector(const ParamVector& prev_aggregate, const AttackState& state);
ParamVector uniform_unit_vector(std::size_t d);

/// c * ||w^{t-1} - w^{t-2}||.
double poisonedfl_scale(const AttackerView& view, const AttackState& state);

/// Pr(x >= matches) for x ~ Bin(d, 1/2), computed exactly in log space.
double binomial_upper_tail(std::size_t d, std::size_t matches);
/// Natural log of the same tail; stays finite where the tail underflows.
double binomial_log_upper_tail(std::size_t d, std::size_t matches);

enum class TestOutcome { kSuccess, kFailure };
TestOutcome poisonedfl_hypothesis_test(const ParamVector& total_delta, const SignVector& s, double p_threshold);

/// Success keeps c; failure sets c = max(c_floor, beta * c).
void poisonedfl_update_c(AttackState& state, TestOutcome outcome);

struct CraftResult {
  ParamVector magnitude;  ///< k^t
  ParamVector update;     ///< k^t * s
  double lambda = 0.0;
  bool window_tested = false;
};

/// Advances the attack by one round (window test, magnitude estimate) and
/// returns the shared malicious update. Round 1 is a warm-up with a zero update.
CraftResult poisonedfl_craft(const AttackerView& view, AttackState& state, const PoisonedFlParams& params);

/// Flips each dimension to -s with probability alpha, giving it magnitude eps.
ParamVector poisonedfl_adapt_sign(const ParamVector& magnitude, const SignVector& s, double alpha, double eps,
                                  Rng& rng);

/// k + gamma * ||k|| * n / ||n|| with n ~ N(0, I), clamped at zero, times s.
/// `clamped` receives the number of dimensions clamped.
ParamVector poisonedfl_adapt_noise(const ParamVector& magnitude, const SignVector& s, double gamma, Rng& rng,
                                   std::size_t* clamped = nullptr);

// --- Baselines ---------------------------------------------------------------

ParamVector attack_random(std::size_t d, double lambda_scale, Rng& rng);
ParamVector attack_mpaf(const AttackerView& view, const ParamVector& w_target, double lambda_scale);
/// mean + 0.74 * population std of the genuine updates, per dimension.
ParamVector attack_lie(const AttackerView& view);
/// Fang's trim attack (or Krum attack when rule_hint is multikrum), one vector per fake.
std::vector<ParamVector> attack_fang(const AttackerView& view, std::size_t n_fake, Rng& rng);
/// mean + gamma * (-mean / ||mean||), gamma maximizing the rule's deviation.
ParamVector attack_optfang(const AttackerView& view, std::size_t n_fake);
ParamVector attack_minmax(const AttackerView& view);
ParamVector attack_minsum(const AttackerView& view);

/// Largest gamma in [0, hi] with `feasible(gamma)`, by bracketing then 50 bisections.
double search_max_gamma(const std::function<bool(double)>& feasible, double initial);

// --- Attack strategies -------------------------------------------------------

enum class AttackKind {
  kNone,
  kPoisonedFl,
  kPoisonedFlAdaptSign,
  kPoisonedFlAdaptNoise,
  kRandom,
  kMpaf,
  kLie,
  kFang,
  kOptFang,
  kMinMax,
  kMinSum
};

AttackKind parse_attack(std::string_view key);
std::string_view attack_key(AttackKind kind);
bool needs_genuine_knowledge(AttackKind kind);

struct AttackConfig {
  AttackKind kind = AttackKind::kNone;
  PoisonedFlParams poisonedfl;
  double alpha = 0.0;
  double eps = 1e-6;
  double gamma = 0.0;
  double lambda = 1e6;  ///< Random and MPAF scaling
};

/// Per-round diagnostics an attack may report.
struct AttackRoundInfo {
  bool active = false;  ///< fakes submitted a real (non warm-up) malicious update
  double c = 0.0;
  double lambda = 0.0;
  std::size_t clamped_dims = 0;
};

class Attack {
 public:
  virtual ~Attack() = default;
  /// Called every round, including rounds with no participating fakes.
  /// Returns one update per participating fake, in order.
  virtual std::vector<ParamVector> craft(const AttackerView& view, Rng& rng) = 0;
  virtual AttackRoundInfo last_round() const { return info_; }
  /// Sign vector for attacks that have one.
  virtual const SignVector* sign_vector() const { return nullptr; }

 protected:
  AttackRoundInfo info_;
};

/// `s` is used by the PoisonedFL family; `w_target` by MPAF.
std::unique_ptr<Attack> make_attack(const AttackConfig& cfg, std::size_t d, const SignVector& s,
                                    const ParamVector& w_target);

}  // namespace pfl
