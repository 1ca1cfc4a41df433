#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "pfl/attacks.hpp"

using namespace pfl;

namespace {

SignVector random_signs(std::size_t d, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  SignVector s(d);
  for (std::size_t j = 0; j < d; ++j) s.set(j, coin(rng) ? 1 : -1);
  return s;
}

// Vector whose first `matches` signs agree with s and the rest disagree.
ParamVector with_matches(const SignVector& s, std::size_t matches) {
  ParamVector v(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) v[j] = (j < matches ? 1.0 : -1.0) * s[j] * (0.5 + j % 3);
  return v;
}

AttackerView view_at(std::size_t round, const ParamVector& w_curr, const ParamVector& w_prev, std::size_t fakes) {
  AttackerView v;
  v.round = round;
  v.w_curr = w_curr;
  v.w_prev = w_prev;
  for (std::size_t f = 0; f < fakes; ++f) v.participating_fake_ids.push_back(100 + f);
  return v;
}

// Drives an attack through `rounds` rounds of a toy global model that moves
// by noise plus the first fake update; returns the crafted updates per round.
std::vector<std::vector<ParamVector>> drive(Attack& attack, std::size_t d, std::size_t rounds, std::uint64_t seed) {
  Rng world = make_stream(seed, {1});
  Rng arng = make_stream(seed, {2});
  std::normal_distribution<double> normal(0.0, 0.1);
  ParamVector w(d), w_prev;
  std::vector<std::vector<ParamVector>> out;
  for (std::size_t t = 1; t <= rounds; ++t) {
    const auto ups = attack.craft(view_at(t, w, w_prev, 3), arng);
    out.push_back(ups);
    ParamVector step(d);
    for (auto& x : step) x = normal(world);
    step += scale(ups.front(), 0.2);
    w_prev = w;
    w += step;
  }
  return out;
}

}  // namespace

TEST_CASE("unit vector") {
  AttackState st = AttackState::start(SignVector{1, 1}, {});
  st.k_prev = ParamVector{2, 0};
  const ParamVector v = poisonedfl_unit_vector({3, 4}, st);
  CHECK(v[0] == doctest::Approx(2 / std::sqrt(20.0)).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(4 / std::sqrt(20.0)).epsilon(1e-12));
  CHECK(v[0] == doctest::Approx(0.4472).epsilon(1e-4));

  AttackState st4 = AttackState::start(SignVector(4), {});
  st4.k_prev = ParamVector{1, 2, 3, 4};
  for (double x : poisonedfl_unit_vector(ParamVector(4), st4)) CHECK(x == 0.5);

  AttackState fresh = AttackState::start(SignVector(3), {});
  CHECK(poisonedfl_unit_vector({1, 2, 3}, fresh) == uniform_unit_vector(3));

  Rng rng = make_stream(51, {1});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 20;
    AttackState s = AttackState::start(random_signs(d, rng), {});
    for (auto& x : s.k_prev) x = std::abs(normal(rng));
    ParamVector g(d);
    for (auto& x : g) x = normal(rng);
    const ParamVector u = poisonedfl_unit_vector(g, s);
    CHECK(std::abs(l2_norm(u) - 1.0) <= 1e-9);
    for (double x : u) CHECK(x >= 0.0);
  }
}

TEST_CASE("scale") {
  AttackState st = AttackState::start(SignVector(2), {});
  st.c = 8;
  CHECK(poisonedfl_scale(view_at(2, {0.3, 0.4}, {0, 0}, 1), st) == doctest::Approx(4.0));
  CHECK(poisonedfl_scale(view_at(2, {1, 1}, {1, 1}, 1), st) == 0.0);
  st.c = 0.5;
  CHECK(poisonedfl_scale(view_at(2, {2, 0}, {0, 0}, 1), st) == doctest::Approx(1.0));
}

TEST_CASE("binomial tail") {
  CHECK(binomial_upper_tail(100, 66) == doctest::Approx(8.9e-4).epsilon(0.02));
  CHECK(binomial_upper_tail(100, 56) == doctest::Approx(0.136).epsilon(0.02));
  for (std::size_t x : {0u, 1u, 30u, 50u, 66u, 90u, 100u}) {
    CHECK(binomial_log_upper_tail(100, x) == doctest::Approx(oracle::log_binomial_tail(100, x)).epsilon(1e-12));
  }
  CHECK(binomial_upper_tail(10, 10) == doctest::Approx(std::pow(2.0, -10)).epsilon(1e-12));
  CHECK(std::isfinite(binomial_log_upper_tail(2000, 2000)));

  Rng rng = make_stream(52, {1});
  const SignVector s = random_signs(100, rng);
  CHECK(poisonedfl_hypothesis_test(with_matches(s, 66), s, 0.01) == TestOutcome::kSuccess);
  CHECK(poisonedfl_hypothesis_test(with_matches(s, 56), s, 0.01) == TestOutcome::kFailure);
  for (std::size_t d : {7u, 8u, 50u}) {
    const SignVector sd = random_signs(d, rng);
    CHECK(poisonedfl_hypothesis_test(with_matches(sd, d), sd, 0.01) == TestOutcome::kSuccess);
  }
  const SignVector s6 = random_signs(6, rng);
  CHECK(poisonedfl_hypothesis_test(with_matches(s6, 6), s6, 0.01) == TestOutcome::kFailure);
}

TEST_CASE("update_c") {
  AttackState st = AttackState::start(SignVector(1), {});
  CHECK(st.c == 8.0);
  poisonedfl_update_c(st, TestOutcome::kFailure);
  CHECK(st.c == doctest::Approx(5.6));
  st.c = 0.6;
  poisonedfl_update_c(st, TestOutcome::kFailure);
  CHECK(st.c == 0.5);
  poisonedfl_update_c(st, TestOutcome::kFailure);
  CHECK(st.c == 0.5);
  st.c = 3.0;
  poisonedfl_update_c(st, TestOutcome::kSuccess);
  CHECK(st.c == 3.0);
}

TEST_CASE("craft: warm-up, identical updates, zero flips, c above the floor") {
  Rng rng = make_stream(53, {1});
  const std::size_t d = 40;
  const SignVector s = random_signs(d, rng);
  AttackConfig cfg;
  cfg.kind = AttackKind::kPoisonedFl;
  cfg.poisonedfl.e = 5;
  auto attack = make_attack(cfg, d, s, {});
  const auto rounds = drive(*attack, d, 60, 53);
  CHECK(rounds.front().front() == ParamVector(d));
  for (std::size_t t = 1; t < rounds.size(); ++t) {
    const auto& ups = rounds[t];
    for (const auto& u : ups) CHECK(u == ups.front());
    for (std::size_t j = 0; j < d; ++j) {
      if (ups.front()[j] != 0.0) CHECK((ups.front()[j] > 0 ? 1 : -1) == s[j]);
    }
    if (t >= 2) {
      CHECK(count_flips(sign_of(rounds[t].front()), sign_of(rounds[t - 1].front())) == 0);
    }
  }
  CHECK(attack->last_round().c >= cfg.poisonedfl.c_floor);
}

TEST_CASE("craft is deterministic given view and state") {
  Rng rng = make_stream(54, {1});
  const std::size_t d = 16;
  const SignVector s = random_signs(d, rng);
  AttackConfig cfg;
  cfg.kind = AttackKind::kPoisonedFl;
  auto a = make_attack(cfg, d, s, {});
  auto b = make_attack(cfg, d, s, {});
  CHECK(drive(*a, d, 20, 54) == drive(*b, d, 20, 54));
}

TEST_CASE("window test runs every e rounds after the start") {
  const std::size_t d = 30;
  Rng rng = make_stream(55, {1});
  const SignVector s = random_signs(d, rng);
  PoisonedFlParams params;
  params.e = 4;
  AttackState st = AttackState::start(s, params);
  ParamVector w(d), w_prev;
  std::vector<std::size_t> tested;
  for (std::size_t t = 1; t <= 20; ++t) {
    // The global model ignores the attack, so every test fails.
    const auto r = poisonedfl_craft(view_at(t, w, w_prev, 1), st, params);
    if (r.window_tested) tested.push_back(t);
    w_prev = w;
    for (std::size_t j = 0; j < d; ++j) w[j] += (j % 2 == 0 ? 0.1 : -0.1);
  }
  CHECK(tested == std::vector<std::size_t>{6, 10, 14, 18});
  CHECK(st.tests_run == 4);
  CHECK(st.c >= params.c_floor);
}

TEST_CASE("ablation: same magnitude and maximized scale") {
  const std::size_t d = 25;
  Rng rng = make_stream(56, {1});
  const SignVector s = random_signs(d, rng);
  PoisonedFlParams params;
  params.unit_mode = UnitMode::kSame;
  params.scale_mode = ScaleMode::kMaximized;
  AttackState st = AttackState::start(s, params);
  poisonedfl_craft(view_at(1, ParamVector(d), {}, 1), st, params);
  ParamVector w1(d, 0.3);
  const auto r = poisonedfl_craft(view_at(2, w1, ParamVector(d), 1), st, params);
  for (std::size_t j = 0; j < d; ++j) CHECK(r.update[j] == doctest::Approx(1e5 / 5.0 * s[j]).epsilon(1e-12));
}

TEST_CASE("adapt sign") {
  Rng rng = make_stream(57, {1});
  const std::size_t d = 200;
  const SignVector s = random_signs(d, rng);
  ParamVector k(d);
  for (std::size_t j = 0; j < d; ++j) k[j] = 1.0 + j;
  CHECK(poisonedfl_adapt_sign(k, s, 0.0, 1e-6, rng) == hadamard_sign(k, s));
  const ParamVector all = poisonedfl_adapt_sign(k, s, 1.0, 1e-6, rng);
  for (std::size_t j = 0; j < d; ++j) CHECK(all[j] == -s[j] * 1e-6);

  const double alpha = 0.1;
  const int draws = 10000;
  double flipped = 0.0;
  for (int i = 0; i < draws; ++i) {
    const ParamVector u = poisonedfl_adapt_sign(k, s, alpha, 1e-6, rng);
    for (std::size_t j = 0; j < d; ++j) flipped += (u[j] > 0 ? 1 : -1) != s[j];
  }
  const double n = static_cast<double>(draws) * d;
  CHECK(std::abs(flipped - alpha * n) <= 3 * std::sqrt(n * alpha * (1 - alpha)));

  // alpha = 0 through the strategy is bit-identical to plain PoisonedFL.
  AttackConfig plain;
  plain.kind = AttackKind::kPoisonedFl;
  AttackConfig adapt = plain;
  adapt.kind = AttackKind::kPoisonedFlAdaptSign;
  auto a = make_attack(plain, d, s, {});
  auto b = make_attack(adapt, d, s, {});
  CHECK(drive(*a, d, 15, 57) == drive(*b, d, 15, 57));
}

TEST_CASE("adapt noise") {
  Rng rng = make_stream(58, {1});
  const std::size_t d = 300;
  const SignVector s = random_signs(d, rng);
  ParamVector k(d);
  for (std::size_t j = 0; j < d; ++j) k[j] = 1.0 + 0.01 * j;
  CHECK(poisonedfl_adapt_noise(k, s, 0.0, rng) == hadamard_sign(k, s));

  // Without clamping the noise norm is exactly gamma * ||k||.
  const double gamma = 0.05;
  std::size_t clamped = 0;
  const ParamVector u = poisonedfl_adapt_noise(k, s, gamma, rng, &clamped);
  REQUIRE(clamped == 0);
  ParamVector mag(d);
  for (std::size_t j = 0; j < d; ++j) mag[j] = u[j] * s[j];
  CHECK(std::abs(l2_norm(sub(mag, k)) - gamma * l2_norm(k)) <= 1e-9 * gamma * l2_norm(k));

  const ParamVector u2 = poisonedfl_adapt_noise(k, s, gamma, rng);
  CHECK(u2 != u);

  const ParamVector big = poisonedfl_adapt_noise(k, s, 2.0, rng, &clamped);
  CHECK(clamped > 0);
  for (std::size_t j = 0; j < d; ++j) CHECK(big[j] * s[j] >= 0.0);

  AttackConfig plain;
  plain.kind = AttackKind::kPoisonedFl;
  AttackConfig adapt = plain;
  adapt.kind = AttackKind::kPoisonedFlAdaptNoise;
  auto a = make_attack(plain, d, s, {});
  auto b = make_attack(adapt, d, s, {});
  CHECK(drive(*a, d, 15, 58) == drive(*b, d, 15, 58));
}

TEST_CASE("random and mpaf") {
  Rng rng = make_stream(59, {1});
  CHECK(attack_random(10, 0.0, rng) == ParamVector(10));
  double total = 0.0;
  for (int i = 0; i < 200; ++i) total += l2_norm(attack_random(400, 3.0, rng));
  CHECK(total / 200 == doctest::Approx(3.0 * std::sqrt(400.0)).epsilon(0.02));
  CHECK(attack_random(5, 1.0, rng) != attack_random(5, 1.0, rng));

  const ParamVector target{1, -2, 3};
  CHECK(attack_mpaf(view_at(2, target, {}, 1), target, 1e6) == ParamVector(3));
  CHECK(attack_mpaf(view_at(2, {0.5, 0.5, 0.5}, {}, 1), target, 1.0) == ParamVector{0.5, -2.5, 2.5});
  CHECK(attack_mpaf(view_at(2, {0, 0, 0}, {}, 1), target, 2.0) == attack_mpaf(view_at(3, {0, 0, 0}, {}, 1), target, 2.0));
}

TEST_CASE("knowledge attacks") {
  AttackerView v = view_at(3, ParamVector(3), ParamVector(3), 2);
  CHECK_THROWS(attack_lie(v));

  v.genuine_updates = std::vector<ParamVector>{{1, 2, 3}, {1, 2, 3}};
  CHECK(attack_lie(v) == ParamVector{1, 2, 3});
  v.genuine_updates = std::vector<ParamVector>{{0}, {2}};
  CHECK(attack_lie(v)[0] == doctest::Approx(1.74).epsilon(1e-12));

  SUBCASE("min-max is tight") {
    Rng rng = make_stream(60, {1});
    std::normal_distribution<double> normal(0.3, 1.0);
    std::vector<ParamVector> g(6, ParamVector(4));
    for (auto& u : g) {
      for (auto& x : u) x = normal(rng);
    }
    v.genuine_updates = g;
    const ParamVector mal = attack_minmax(v);
    ParamVector mean(4);
    for (const auto& u : g) mean += u;
    mean *= 1.0 / 6;
    const double gamma = l2_norm(sub(mal, mean));
    const ParamVector dir = scale(mean, -1.0 / l2_norm(mean));
    double bound = 0.0;
    for (const auto& a : g) {
      for (const auto& b : g) bound = std::max(bound, squared_distance(a, b));
    }
    auto feasible = [&](double gm) {
      const ParamVector m = add(mean, scale(dir, gm));
      for (const auto& u : g) {
        if (squared_distance(m, u) > bound) return false;
      }
      return true;
    };
    CHECK(gamma > 0.0);
    CHECK(feasible(gamma));
    CHECK_FALSE(feasible(1.05 * gamma));
  }

  SUBCASE("min-sum with one genuine update returns it") {
    v.genuine_updates = std::vector<ParamVector>{{0.4, -1.2, 2}};
    const ParamVector mal = attack_minsum(v);
    for (std::size_t j = 0; j < 3; ++j) CHECK(mal[j] == doctest::Approx((*v.genuine_updates)[0][j]).epsilon(1e-12));
  }

  SUBCASE("fang trim variant lands outside the genuine range opposite the mean") {
    Rng rng = make_stream(61, {1});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<ParamVector> g(5, ParamVector(4));
    for (auto& u : g) {
      for (auto& x : u) x = normal(rng);
    }
    v.genuine_updates = g;
    v.rule_hint = RuleKind::kMedian;
    for (const auto& mal : attack_fang(v, 3, rng)) {
      for (std::size_t j = 0; j < 4; ++j) {
        double lo = g[0][j], hi = g[0][j], mean = 0.0;
        for (const auto& u : g) {
          lo = std::min(lo, u[j]);
          hi = std::max(hi, u[j]);
          mean += u[j];
        }
        if (mean > 0) {
          CHECK(mal[j] < lo);
        } else {
          CHECK(mal[j] > hi);
        }
      }
    }
  }

  SUBCASE("opt fang moves against the mean") {
    v.genuine_updates = std::vector<ParamVector>{{1, 1, 0}, {1.2, 0.8, 0.1}, {0.9, 1.1, -0.1}};
    v.rule_oracle = [](std::span<const ParamVector> ups) {
      ParamVector m(ups.front().size());
      for (const auto& u : ups) m += u;
      return scale(m, 1.0 / static_cast<double>(ups.size()));
    };
    const ParamVector mal = attack_optfang(v, 2);
    CHECK(dot(mal, ParamVector{1, 1, 0}) < 0.0);
  }
}

TEST_CASE("search_max_gamma") {
  CHECK(search_max_gamma([](double g) { return g <= 3.0; }, 1.0) == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(search_max_gamma([](double) { return true; }, 1.0) == 0.0);
  CHECK(search_max_gamma([](double) { return false; }, 1.0) == 0.0);
}

TEST_CASE("attack keys round trip") {
  for (const char* key : {"none", "poisonedfl", "poisonedfl-adapt-sign", "poisonedfl-adapt-noise", "random", "mpaf",
                          "lie", "fang", "optfang", "minmax", "minsum"}) {
    CHECK(attack_key(parse_attack(key)) == key);
  }
  CHECK(needs_genuine_knowledge(AttackKind::kLie));
  CHECK_FALSE(needs_genuine_knowledge(AttackKind::kPoisonedFl));
  CHECK_FALSE(needs_genuine_knowledge(AttackKind::kMpaf));
  CHECK_FALSE(needs_genuine_knowledge(AttackKind::kRandom));
}
