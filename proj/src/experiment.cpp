#include "pfl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/uuid/detail/sha1.hpp>

namespace pfl {

namespace {

using nlohmann::json;

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ConfigError(key + ": expected " + expected);
}

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || v.get<long long>() < 0) type_error(key, "a non-negative integer");
  return v.get<std::size_t>();
}

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

std::string as_text(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

template <typename F>
auto parse_enum(const std::string& key, const json& v, F parse) {
  const std::string text = as_text(key, v);
  try {
    return parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct KeyHandler {
  std::function<void(SimConfig&, const json&)> set;
  std::function<json(const SimConfig&)> get;
};

#define PFL_COUNT(name, field)                                                       \
  {                                                                                  \
    name, {                                                                          \
      [](SimConfig& c, const json& v) { c.field = as_count(name, v); },              \
          [](const SimConfig& c) { return json(c.field); }                           \
    }                                                                                \
  }
#define PFL_REAL(name, field)                                                        \
  {                                                                                  \
    name, {                                                                          \
      [](SimConfig& c, const json& v) { c.field = as_real(name, v); },               \
          [](const SimConfig& c) { return json(c.field); }                           \
    }                                                                                \
  }
#define PFL_TEXT(name, field)                                                        \
  {                                                                                  \
    name, {                                                                          \
      [](SimConfig& c, const json& v) { c.field = as_text(name, v); },               \
          [](const SimConfig& c) { return json(c.field); }                           \
    }                                                                                \
  }

const std::map<std::string, KeyHandler>& handlers() {
  static const std::map<std::string, KeyHandler> table = {
      PFL_COUNT("n_genuine", n_genuine),
      PFL_REAL("fake_fraction", fake_fraction),
      PFL_REAL("participation_rate", participation_rate),
      PFL_COUNT("rounds", rounds),
      PFL_COUNT("eval_every", eval_every),
      {"seed",
       {[](SimConfig& c, const json& v) {
          if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            type_error("seed", "a non-negative integer");
          }
          c.seed = v.get<std::uint64_t>();
        },
        [](const SimConfig& c) { return json(c.seed); }}},
      {"hidden_layers",
       {[](SimConfig& c, const json& v) {
          if (!v.is_array()) type_error("hidden_layers", "an array of positive integers");
          c.hidden_layers.clear();
          for (const auto& h : v) c.hidden_layers.push_back(as_count("hidden_layers", h));
        },
        [](const SimConfig& c) { return json(c.hidden_layers); }}},
      PFL_REAL("learning_rate", train.learning_rate),
      PFL_COUNT("local_epochs", train.local_epochs),
      PFL_COUNT("batch_size", train.batch_size),
      PFL_COUNT("num_classes", data.num_classes),
      PFL_COUNT("feature_dim", data.feature_dim),
      PFL_COUNT("examples_per_client", data.examples_per_client),
      PFL_REAL("spread", data.spread),
      PFL_REAL("q", data.q),
      PFL_COUNT("test_per_class", data.test_per_class),
      PFL_COUNT("root_size", data.root_size),
      PFL_TEXT("train_csv", data.train_csv),
      PFL_TEXT("test_csv", data.test_csv),
      {"attack",
       {[](SimConfig& c, const json& v) { c.attack.kind = parse_enum("attack", v, parse_attack); },
        [](const SimConfig& c) { return json(std::string(attack_key(c.attack.kind))); }}},
      PFL_REAL("c0", attack.poisonedfl.c0),
      PFL_COUNT("e", attack.poisonedfl.e),
      PFL_REAL("beta", attack.poisonedfl.beta),
      PFL_REAL("c_floor", attack.poisonedfl.c_floor),
      PFL_REAL("p", attack.poisonedfl.p_threshold),
      {"unit_mode",
       {[](SimConfig& c, const json& v) {
          c.attack.poisonedfl.unit_mode = parse_enum("unit_mode", v, [](const std::string& s) {
            if (s == "adaptive") return UnitMode::kAdaptive;
            if (s == "same") return UnitMode::kSame;
            throw std::invalid_argument("expected adaptive or same");
          });
        },
        [](const SimConfig& c) {
          return json(c.attack.poisonedfl.unit_mode == UnitMode::kSame ? "same" : "adaptive");
        }}},
      {"scale_mode",
       {[](SimConfig& c, const json& v) {
          c.attack.poisonedfl.scale_mode = parse_enum("scale_mode", v, [](const std::string& s) {
            if (s == "adaptive") return ScaleMode::kAdaptive;
            if (s == "maximized") return ScaleMode::kMaximized;
            throw std::invalid_argument("expected adaptive or maximized");
          });
        },
        [](const SimConfig& c) {
          return json(c.attack.poisonedfl.scale_mode == ScaleMode::kMaximized ? "maximized" : "adaptive");
        }}},
      PFL_REAL("max_scale", attack.poisonedfl.max_scale),
      PFL_REAL("alpha", attack.alpha),
      PFL_REAL("eps", attack.eps),
      PFL_REAL("gamma", attack.gamma),
      PFL_REAL("lambda", attack.lambda),
      {"defense",
       {[](SimConfig& c, const json& v) { c.defense.rule = parse_enum("defense", v, parse_rule); },
        [](const SimConfig& c) { return json(std::string(rule_key(c.defense.rule))); }}},
      {"m_assumed",
       {[](SimConfig& c, const json& v) {
          if (v.is_null()) {
            c.defense.m_assumed.reset();
          } else {
            c.defense.m_assumed = as_count("m_assumed", v);
          }
        },
        [](const SimConfig& c) { return c.defense.m_assumed ? json(*c.defense.m_assumed) : json(nullptr); }}},
      PFL_COUNT("flcert_groups", defense.flcert_groups),
      PFL_COUNT("fldetector_rounds", defense.fldetector_rounds),
      PFL_COUNT("fldetector_window", defense.fldetector_window),
      {"tailored",
       {[](SimConfig& c, const json& v) { c.defense.tailored = parse_enum("tailored", v, parse_tailored); },
        [](const SimConfig& c) { return json(std::string(tailored_key(c.defense.tailored))); }}},
      PFL_COUNT("N", defense.gmm_window),
      {"which_cluster",
       {[](SimConfig& c, const json& v) {
          c.defense.which_cluster = parse_enum("which_cluster", v, [](const std::string& s) {
            if (s == "lower") return FakeCluster::kLower;
            if (s == "higher") return FakeCluster::kHigher;
            throw std::invalid_argument("expected lower or higher");
          });
        },
        [](const SimConfig& c) {
          return json(c.defense.which_cluster == FakeCluster::kHigher ? "higher" : "lower");
        }}},
      PFL_REAL("b", defense.normalize_b),
  };
  return table;
}

#undef PFL_COUNT
#undef PFL_REAL
#undef PFL_TEXT

const char* const kRequired[] = {"attack", "defense"};

void validate_point(const SimConfig& cfg) {
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::mutex log_mutex;

void log_line(LogLevel level, const std::string& message) {
  if (log_level() < level) return;
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << message << '\n';
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, h] : handlers()) out.push_back(k);
    return out;
  }();
  return keys;
}

SimConfig config_from_json(const json& object, SimConfig base) {
  if (!object.is_object()) throw ConfigError("experiment file: expected a JSON object");
  for (const auto& [key, value] : object.items()) {
    auto it = handlers().find(key);
    if (it == handlers().end()) throw ConfigError(key + ": unknown key");
    it->second.set(base, value);
  }
  return base;
}

json config_to_json(const SimConfig& cfg) {
  json out = json::object();
  for (const auto& [key, h] : handlers()) out[key] = h.get(cfg);
  return out;
}

ExperimentSet parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("experiment file: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("experiment file: expected a JSON object");

  json sweep = json::object();
  if (auto it = doc.find("sweep"); it != doc.end()) {
    sweep = *it;
    doc.erase(it);
    if (!sweep.is_object()) type_error("sweep", "an object of key -> value list");
  }
  for (const char* key : kRequired) {
    if (!doc.contains(key)) throw ConfigError(std::string(key) + ": missing required key");
  }
  const SimConfig base = config_from_json(doc);

  std::vector<std::pair<std::string, std::vector<json>>> axes;
  for (const auto& [key, values] : sweep.items()) {
    if (handlers().find(key) == handlers().end()) throw ConfigError("sweep." + key + ": unknown key");
    if (!values.is_array() || values.empty()) type_error("sweep." + key, "a non-empty array");
    axes.emplace_back(key, std::vector<json>(values.begin(), values.end()));
  }

  ExperimentSet set;
  set.config_hash = git_blob_hash(text);
  std::size_t total = 1;
  for (const auto& axis : axes) total *= axis.second.size();
  for (std::size_t index = 0; index < total; ++index) {
    json overrides = json::object();
    std::size_t rest = index;
    for (std::size_t a = axes.size(); a-- > 0;) {
      overrides[axes[a].first] = axes[a].second[rest % axes[a].second.size()];
      rest /= axes[a].second.size();
    }
    ExperimentPoint point;
    point.config = config_from_json(overrides, base);
    validate_point(point.config);
    point.resolved = config_to_json(point.config);
    if (!axes.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "point_%03zu", index);
      point.label = buf;
    }
    set.points.push_back(std::move(point));
  }
  return set;
}

ExperimentSet parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot read experiment file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string git_blob_hash(const std::string& contents) {
  boost::uuids::detail::sha1 sha;
  const std::string header = "blob " + std::to_string(contents.size()) + '\0';
  sha.process_bytes(header.data(), header.size());
  sha.process_bytes(contents.data(), contents.size());
  boost::uuids::detail::sha1::digest_type digest;
  sha.get_digest(digest);
  char hex[41];
  for (int i = 0; i < 5; ++i) std::snprintf(hex + 8 * i, 9, "%08x", static_cast<unsigned>(digest[i]));
  return std::string(hex, 40);
}

const std::vector<std::string>& rounds_csv_columns() {
  static const std::vector<std::string> cols = {
      "phase",         "round",        "testing_error",     "sign_match",     "total_update_norm",
      "flipping_rate", "flip_measured", "participants",     "fake_participants", "accepted_fakes",
      "trust_genuine", "trust_fake",   "attack_c"};
  return cols;
}

void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& records) {
  const auto& cols = rounds_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : records) {
    out << r.phase << ',' << r.round << ',' << format_double(r.testing_error) << ',' << format_double(r.sign_match)
        << ',' << format_double(r.total_update_norm) << ',' << format_double(r.flipping_rate) << ','
        << r.flip_measured << ',' << r.participants << ',' << r.fake_participants << ',' << r.accepted_fakes << ','
        << format_double(r.trust_genuine) << ',' << format_double(r.trust_fake) << ','
        << format_double(r.attack_c) << '\n';
  }
}

json summary_json(const RunResult& result, const ExperimentPoint& point, const std::string& config_hash,
                  double runtime_seconds) {
  json out;
  out["config"] = point.resolved;
  out["config_hash"] = config_hash;
  if (!point.label.empty()) out["label"] = point.label;
  out["final_error"] = result.final_error;
  out["final_error_before_normalization"] = result.final_error_before_normalization;
  out["final_sign_match"] = result.final_sign_match;
  out["final_norm"] = result.final_norm;
  out["param_count"] = result.w0.size();
  out["rounds_recorded"] = result.records.size();
  if (result.detection) {
    const auto& d = *result.detection;
    out["detection"] = {{"method", d.method},
                        {"detected_ids", d.detected_ids},
                        {"clusters_separable", d.separable},
                        {"detection_accuracy", d.detection_accuracy},
                        {"false_positives", d.false_positives}};
  } else {
    out["detection"] = nullptr;
  }
  out["runtime_seconds"] = runtime_seconds;
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  out.close();
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void run_point(const ExperimentPoint& point, const std::string& hash, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir.string() + ": " + ec.message());
  // Fail on an unwritable directory before spending time on the run.
  write_text(dir / "rounds.csv", "");

  const auto start = std::chrono::steady_clock::now();
  const RunResult result = run(point.config);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::ostringstream csv;
  write_rounds_csv(csv, result.records);
  write_text(dir / "rounds.csv", csv.str());
  write_text(dir / "summary.json", summary_json(result, point, hash, seconds).dump(2) + "\n");
}

}  // namespace

int run_experiments(const ExperimentSet& set, const std::filesystem::path& out_dir, std::size_t parallel) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < set.points.size(); i = next++) {
      const auto& point = set.points[i];
      const auto dir = point.label.empty() ? out_dir : out_dir / point.label;
      const std::string name = point.label.empty() ? "run" : point.label;
      log_line(LogLevel::kInfo, name + ": start (" + point.resolved["attack"].get<std::string>() + " vs " +
                                    point.resolved["defense"].get<std::string>() + ")");
      try {
        run_point(point, set.config_hash, dir);
        log_line(LogLevel::kInfo, name + ": done -> " + dir.string());
      } catch (const std::exception& e) {
        failed = true;
        log_line(LogLevel::kQuiet, name + ": error: " + e.what());
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(parallel, set.points.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return failed ? 2 : 0;
}

LogLevel log_level() {
  const char* env = std::getenv("PFL_LOG");
  if (env == nullptr) return LogLevel::kInfo;
  const std::string v(env);
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

}  // namespace pfl
