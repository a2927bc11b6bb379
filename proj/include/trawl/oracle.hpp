#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace trawl {

// Metrics reported by an evaluation oracle. At least one of accuracy/loss is
// present.
struct OracleResult {
    std::optional<double> accuracy;
    std::optional<double> loss;
    std::map<std::string, double> extra;

    friend bool operator==(const OracleResult&, const OracleResult&) = default;
};

enum class OracleStatus { Ok, NonzeroExit, Timeout, Unparsable, LaunchFailure };

std::string_view to_string(OracleStatus status);

struct OracleOutcome {
    OracleStatus status = OracleStatus::Ok;
    std::optional<OracleResult> result;  // set iff status == Ok
    int exit_code = 0;
    std::string message;

    bool ok() const noexcept { return status == OracleStatus::Ok; }
};

// Environment variable through which the oracle learns the weights path.
inline constexpr const char* kWeightsEnvVar = "TRAWL_WEIGHTS";
inline constexpr std::chrono::seconds kDefaultOracleTimeout{3600};

// Parses the oracle's stdout: exactly one JSON object such as
// {"accuracy": 0.5, "loss": 1.0, "f1": 0.3}. Other numeric members land in
// `extra`. Throws std::invalid_argument when the text does not conform.
OracleResult parse_oracle_output(std::string_view text);

// Runs `oracle_cmd` through /bin/sh with TRAWL_WEIGHTS=patched_path, captures
// stdout (stderr passes through) and classifies the outcome. Never throws for
// oracle misbehaviour.
OracleOutcome evaluate_with_oracle(const std::filesystem::path& patched_path,
                                   const std::string& oracle_cmd,
                                   std::chrono::milliseconds timeout = kDefaultOracleTimeout);

}  // namespace trawl
