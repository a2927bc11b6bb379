#pragma once

#include "trawl/decomposition.hpp"
#include "trawl/oracle.hpp"
#include "trawl/report.hpp"
#include "trawl/stacking.hpp"

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace trawl {

enum class Strategy { PerLayer, Global, Segmented };
enum class Method { CP, Tucker, SVDBaseline, None };

std::string_view to_string(Strategy strategy);
std::string_view to_string(Method method);
Strategy parse_strategy(std::string_view text);  // "PerLayer"/"per-layer", "Global", "Segmented"/"segment"
Method parse_method(std::string_view text);      // "CP"/"cp", "Tucker", "SVDBaseline"/"svd", "None"

// A rank cell: {R} for CP/SVD (and Tucker, expanded per expand_tucker_rank),
// or {R1, R2, R3} for an explicit Tucker triple.
using RankSpec = std::vector<std::size_t>;

struct SweepConfig {
    std::filesystem::path weights_path;
    std::filesystem::path pattern_path;
    Strategy strategy = Strategy::PerLayer;
    StackKind kind = StackKind::Fc;
    std::vector<Method> methods{Method::CP};
    std::vector<RankSpec> ranks;
    std::vector<std::size_t> layers;
    std::vector<Segment> segments;
    FitOptions fit;
    std::string oracle_cmd;  // empty: rows carry no metrics
    std::filesystem::path out_dir;
    std::chrono::milliseconds oracle_timeout = kDefaultOracleTimeout;

    void validate() const;  // throws ConfigError
};

// Relative paths in the document are resolved against `base_dir`.
SweepConfig parse_sweep_config(std::string_view json_text, const std::filesystem::path& base_dir);
SweepConfig load_sweep_config(const std::filesystem::path& path);

// Low-rank replacement of a stacked tensor by one method.
struct Approximation {
    StackedTensor approx;
    double relative_error = 0.0;
    int iterations = 0;
    bool converged = true;
    RankSpec rank;  // ranks actually used (Tucker scalars expanded)
};

Approximation approximate_stack(const StackedTensor& stack, Method method, const RankSpec& rank,
                                const FitOptions& fit);

/**
 * Patch-evaluate-restore loop.
 *
 * Emits the unpatched baseline row first, then one row per
 * (method, target, rank) in that nesting order. Each cell patches a copy of
 * the pristine weights, writes it under out_dir, runs the oracle and deletes
 * the file again. Oracle and decomposition failures become rows carrying an
 * `error` note; configuration and I/O failures throw.
 */
std::vector<ReportRow> run_sweep(const SweepConfig& cfg);

struct DecomposeRequest {
    std::filesystem::path weights_path;
    std::filesystem::path pattern_path;
    Strategy strategy = Strategy::PerLayer;
    std::optional<Segment> segment;
    std::optional<std::size_t> layer;
    StackKind kind = StackKind::Fc;
    Method method = Method::CP;
    RankSpec rank;
    FitOptions fit;
    std::filesystem::path out_path;
    std::string oracle_cmd;
    std::chrono::milliseconds oracle_timeout = kDefaultOracleTimeout;
};

struct DecomposeResult {
    Approximation approximation;
    Shape tensor_shape;
    std::optional<OracleOutcome> oracle;
};

// One-shot build, decompose, patch and save to out_path.
DecomposeResult run_decompose(const DecomposeRequest& req);

}  // namespace trawl
