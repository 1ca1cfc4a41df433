#pragma once

// Experiment files, the run matrix and result emission.
//
// An experiment file is a flat JSON object. Every key maps onto one SimConfig
// field (see config_keys()). `attack` and `defense` are required; everything
// else falls back to the SimConfig defaults. An optional `sweep` object maps
// keys to value lists and expands to their cartesian product, keys in sorted
// order, last key varying fastest.
//
// rounds.csv columns, in order:
//   phase, round, testing_error, sign_match, total_update_norm, flipping_rate,
//   flip_measured, participants, fake_participants, accepted_fakes,
//   trust_genuine, trust_fake, attack_c

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfl/simulator.hpp"

namespace pfl {

/// Bad experiment file: unknown, missing or ill-typed key, or a range violation.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentPoint {
  SimConfig config;
  nlohmann::json resolved;  ///< every key, after defaults and sweep substitution
  std::string label;        ///< output subdirectory; empty without a sweep
};

struct ExperimentSet {
  std::vector<ExperimentPoint> points;
  std::string config_hash;  ///< git blob hash of the file contents
};

const std::vector<std::string>& config_keys();

/// Applies one flat object on top of `base`. Throws ConfigError.
SimConfig config_from_json(const nlohmann::json& object, SimConfig base = {});
nlohmann::json config_to_json(const SimConfig& cfg);

ExperimentSet parse_config_text(const std::string& text);
/// Throws ConfigError, including for unreadable files.
ExperimentSet parse_config(const std::filesystem::path& path);

/// sha1("blob <size>\0" + contents) in hex, as `git hash-object` prints it.
std::string git_blob_hash(const std::string& contents);

const std::vector<std::string>& rounds_csv_columns();
void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& records);
nlohmann::json summary_json(const RunResult& result, const ExperimentPoint& point, const std::string& config_hash,
                            double runtime_seconds);

/// Runs every point and writes rounds.csv and summary.json per point.
/// Returns 0 on success and 2 if any point failed.
int run_experiments(const ExperimentSet& set, const std::filesystem::path& out_dir, std::size_t parallel = 1);

enum class LogLevel { kQuiet, kInfo, kDebug };
/// From PFL_LOG (quiet, info, debug); info when unset.
LogLevel log_level();

}  // namespace pfl
