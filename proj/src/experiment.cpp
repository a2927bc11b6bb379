#include "trawl/experiment.hpp"

#include "trawl/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace trawl {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct Target {
    std::string label;
    std::size_t first_layer;
    std::size_t last_layer;
};

std::vector<Target> sweep_targets(const SweepConfig& cfg, std::size_t num_layers) {
    std::vector<Target> targets;
    switch (cfg.strategy) {
        case Strategy::PerLayer:
            for (std::size_t l : cfg.layers) {
                if (l >= num_layers)
                    throw ConfigError("layer " + std::to_string(l) + " out of range for a " +
                                      std::to_string(num_layers) + "-layer pattern");
                targets.push_back({std::to_string(l), l, l + 1});
            }
            break;
        case Strategy::Global:
            targets.push_back({"all", 0, num_layers});
            break;
        case Strategy::Segmented:
            for (Segment s : cfg.segments) {
                const auto [first, last] = segment_layers(s, num_layers);
                if (first >= last)
                    throw ConfigError("segment " + std::string(to_string(s)) + " is empty for a " +
                                      std::to_string(num_layers) + "-layer model");
                targets.push_back({std::string(to_string(s)), first, last});
            }
            break;
    }
    return targets;
}

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void apply_oracle(ReportRow& row, const OracleOutcome& outcome) {
    if (outcome.ok()) {
        row.metric_accuracy = outcome.result->accuracy;
        row.metric_loss = outcome.result->loss;
    } else {
        row.error = "oracle " + std::string(to_string(outcome.status)) + ": " + outcome.message;
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

RankSpec parse_rank(const json& j) {
    if (j.is_number_integer()) {
        const auto v = j.get<long long>();
        if (v < 1) throw ConfigError("ranks must be positive");
        return {static_cast<std::size_t>(v)};
    }
    if (j.is_array() && j.size() == 3) {
        RankSpec r;
        for (const auto& e : j) {
            if (!e.is_number_integer() || e.get<long long>() < 1)
                throw ConfigError("rank triples must hold positive integers");
            r.push_back(e.get<std::size_t>());
        }
        return r;
    }
    throw ConfigError("each rank must be a positive integer or a [R1, R2, R3] triple");
}

}  // namespace

std::string_view to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::PerLayer: return "PerLayer";
        case Strategy::Global: return "Global";
        case Strategy::Segmented: return "Segmented";
    }
    return "?";
}

std::string_view to_string(Method method) {
    switch (method) {
        case Method::CP: return "CP";
        case Method::Tucker: return "Tucker";
        case Method::SVDBaseline: return "SVDBaseline";
        case Method::None: return "None";
    }
    return "?";
}

Strategy parse_strategy(std::string_view text) {
    if (text == "PerLayer" || text == "per-layer") return Strategy::PerLayer;
    if (text == "Global" || text == "global") return Strategy::Global;
    if (text == "Segmented" || text == "segment" || text == "segmented") return Strategy::Segmented;
    throw ConfigError("unknown strategy '" + std::string(text) + "'");
}

Method parse_method(std::string_view text) {
    if (text == "CP" || text == "cp") return Method::CP;
    if (text == "Tucker" || text == "tucker") return Method::Tucker;
    if (text == "SVDBaseline" || text == "svd") return Method::SVDBaseline;
    if (text == "None" || text == "none") return Method::None;
    throw ConfigError("unknown method '" + std::string(text) + "'");
}

void SweepConfig::validate() const {
    if (weights_path.empty()) throw ConfigError("weights_path is required");
    if (pattern_path.empty()) throw ConfigError("pattern_path is required");
    if (out_dir.empty()) throw ConfigError("out_dir is required");
    if (methods.empty()) throw ConfigError("at least one method is required");
    try {
        fit.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    const bool decomposes =
        std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::None; });
    if (!decomposes) return;
    if (ranks.empty()) throw ConfigError("ranks must be non-empty when a method decomposes");
    for (const auto& r : ranks) {
        if (r.empty() || (r.size() != 1 && r.size() != 3))
            throw ConfigError("each rank must be a scalar or a triple");
        for (std::size_t v : r)
            if (v < 1) throw ConfigError("ranks must be positive");
        if (r.size() == 3)
            for (Method m : methods)
                if (m == Method::CP || m == Method::SVDBaseline)
                    throw ConfigError("rank triples apply to the Tucker method only");
    }
    if (strategy == Strategy::PerLayer && layers.empty())
        throw ConfigError("PerLayer strategy requires a non-empty layers list");
    if (strategy == Strategy::Segmented && segments.empty())
        throw ConfigError("Segmented strategy requires a non-empty segments list");
    if (oracle_timeout.count() <= 0) throw ConfigError("oracle timeout must be positive");
}

SweepConfig parse_sweep_config(std::string_view json_text, const std::filesystem::path& base_dir) {
    SweepConfig cfg;
    try {
        const json doc = json::parse(json_text);
        if (!doc.is_object()) throw ConfigError("sweep config must be a JSON object");
        static const std::set<std::string> known{
            "weights_path", "pattern_path", "strategy", "kind",       "method",  "ranks",
            "layers",       "segments",     "fit",      "oracle_cmd", "out_dir", "oracle_timeout_s"};
        for (const auto& [key, _] : doc.items())
            if (!known.contains(key)) throw ConfigError("unknown sweep config field '" + key + "'");

        cfg.weights_path = resolve(base_dir, doc.at("weights_path").get<std::string>());
        cfg.pattern_path = resolve(base_dir, doc.at("pattern_path").get<std::string>());
        cfg.out_dir = resolve(base_dir, doc.at("out_dir").get<std::string>());
        cfg.strategy = parse_strategy(doc.at("strategy").get<std::string>());
        cfg.kind = parse_stack_kind(doc.at("kind").get<std::string>());

        cfg.methods.clear();
        const auto& method = doc.at("method");
        if (method.is_array()) {
            for (const auto& m : method) cfg.methods.push_back(parse_method(m.get<std::string>()));
        } else {
            cfg.methods.push_back(parse_method(method.get<std::string>()));
        }

        if (doc.contains("ranks"))
            for (const auto& r : doc.at("ranks")) cfg.ranks.push_back(parse_rank(r));
        if (doc.contains("layers") && !doc.at("layers").is_null())
            for (const auto& l : doc.at("layers")) {
                if (!l.is_number_integer() || l.get<long long>() < 0)
                    throw ConfigError("layers must be non-negative integers");
                cfg.layers.push_back(l.get<std::size_t>());
            }
        if (doc.contains("segments") && !doc.at("segments").is_null())
            for (const auto& s : doc.at("segments"))
                cfg.segments.push_back(parse_segment(s.get<std::string>()));
        if (doc.contains("fit")) {
            const auto& fit = doc.at("fit");
            if (fit.contains("max_iters")) cfg.fit.max_iters = fit.at("max_iters").get<int>();
            if (fit.contains("tol")) cfg.fit.tol = fit.at("tol").get<double>();
            if (fit.contains("seed")) cfg.fit.seed = fit.at("seed").get<std::uint64_t>();
            if (fit.contains("init"))
                cfg.fit.init = parse_init_method(fit.at("init").get<std::string>());
            if (fit.contains("restarts")) cfg.fit.restarts = fit.at("restarts").get<int>();
        }
        if (doc.contains("oracle_cmd")) cfg.oracle_cmd = doc.at("oracle_cmd").get<std::string>();
        if (doc.contains("oracle_timeout_s"))
            cfg.oracle_timeout = std::chrono::milliseconds(
                static_cast<long long>(doc.at("oracle_timeout_s").get<double>() * 1000.0));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed sweep config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    cfg.validate();
    return cfg;
}

SweepConfig load_sweep_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open sweep config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_sweep_config(ss.str(), path.parent_path());
}

Approximation approximate_stack(const StackedTensor& stack, Method method, const RankSpec& rank,
                                const FitOptions& fit) {
    Approximation out;
    const DenseTensor& t = stack.tensor;
    DenseTensor approx = t;
    switch (method) {
        case Method::None:
            out.rank = {};
            break;
        case Method::CP: {
            if (rank.size() != 1) throw std::invalid_argument("CP takes a single rank");
            auto fitted = cp_als(t, rank[0], fit);
            approx = cp_reconstruct(fitted.model);
            out.iterations = fitted.report.iterations_run;
            out.converged = fitted.report.converged;
            out.rank = rank;
            break;
        }
        case Method::Tucker: {
            TuckerRanks ranks{};
            if (rank.size() == 1)
                ranks = expand_tucker_rank(rank[0], t.shape());
            else if (rank.size() == 3)
                ranks = {rank[0], rank[1], rank[2]};
            else
                throw std::invalid_argument("Tucker takes a scalar rank or a triple");
            auto fitted = tucker_hooi(t, ranks, fit);
            approx = tucker_reconstruct(fitted.model);
            out.iterations = fitted.report.iterations_run;
            out.converged = fitted.report.converged;
            out.rank = {ranks[0], ranks[1], ranks[2]};
            break;
        }
        case Method::SVDBaseline: {
            if (rank.size() != 1) throw std::invalid_argument("SVD baseline takes a single rank");
            // Transposition commutes with truncated SVD, so each slice can be
            // reduced in its stacked orientation.
            std::vector<Matrix> slices = unstack_matrices(t);
            for (auto& s : slices) s = truncated_svd_matrix(s, rank[0]);
            approx = stack_matrices(slices);
            out.rank = rank;
            break;
        }
    }
    out.relative_error = frobenius_norm(t) > 0 ? relative_error(t, approx) : 0.0;
    out.approx = StackedTensor{std::move(approx), stack.provenance};
    return out;
}

std::vector<ReportRow> run_sweep(const SweepConfig& cfg) {
    cfg.validate();
    const std::uint64_t pristine = file_digest(cfg.weights_path);
    const ModelWeights weights = load_weights(cfg.weights_path);
    const ArchitecturePattern pattern = load_pattern(cfg.pattern_path);
    const std::vector<Target> targets = sweep_targets(cfg, pattern.num_layers);

    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.out_dir.string() + "'");
    const auto patched_path = cfg.out_dir / "patched.safetensors";

    const std::string strategy(to_string(cfg.strategy));
    const std::string kind(to_string(cfg.kind));
    std::vector<ReportRow> rows;

    {
        const auto start = Clock::now();
        ReportRow baseline;
        baseline.strategy = strategy;
        baseline.kind = kind;
        baseline.method = std::string(to_string(Method::None));
        if (!cfg.oracle_cmd.empty())
            apply_oracle(baseline,
                         evaluate_with_oracle(cfg.weights_path, cfg.oracle_cmd, cfg.oracle_timeout));
        baseline.wall_time_ms = elapsed_ms(start);
        rows.push_back(std::move(baseline));
    }

    for (Method method : cfg.methods) {
        if (method == Method::None) continue;
        for (const Target& target : targets) {
            std::optional<StackedTensor> stack;
            std::string stack_error;
            try {
                stack = build_range_tensor(weights, target.first_layer, target.last_layer, cfg.kind,
                                           pattern);
            } catch (const std::invalid_argument& e) {
                stack_error = e.what();
            }
            for (const RankSpec& rank : cfg.ranks) {
                const auto start = Clock::now();
                ReportRow row;
                row.strategy = strategy;
                row.kind = kind;
                row.method = std::string(to_string(method));
                row.layer_or_segment = target.label;
                row.rank = rank;
                if (!stack) {
                    row.error = "stacking failed: " + stack_error;
                    row.wall_time_ms = elapsed_ms(start);
                    rows.push_back(std::move(row));
                    continue;
                }
                try {
                    Approximation a = approximate_stack(*stack, method, rank, cfg.fit);
                    row.rank = a.rank;
                    row.relative_error = a.relative_error;
                    row.fit_iterations = a.iterations;
                    if (!cfg.oracle_cmd.empty()) {
                        save_weights(unstack_and_patch(weights, a.approx), patched_path);
                        apply_oracle(row, evaluate_with_oracle(patched_path, cfg.oracle_cmd,
                                                               cfg.oracle_timeout));
                        std::filesystem::remove(patched_path, ec);
                    }
                } catch (const std::invalid_argument& e) {
                    row.error = std::string("decomposition failed: ") + e.what();
                }
                row.wall_time_ms = elapsed_ms(start);
                rows.push_back(std::move(row));
            }
        }
    }

    if (file_digest(cfg.weights_path) != pristine)
        throw IoError("input weights file '" + cfg.weights_path.string() +
                      "' changed during the sweep");
    return rows;
}

DecomposeResult run_decompose(const DecomposeRequest& req) {
    try {
        req.fit.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (req.method == Method::None) throw ConfigError("decompose requires a decomposition method");
    if (req.out_path.empty()) throw ConfigError("an output path is required");
    const ModelWeights weights = load_weights(req.weights_path);
    const ArchitecturePattern pattern = load_pattern(req.pattern_path);

    StackedTensor stack;
    try {
        switch (req.strategy) {
            case Strategy::PerLayer:
                if (!req.layer) throw ConfigError("per-layer strategy requires --layer");
                stack = build_layer_tensor(weights, *req.layer, req.kind, pattern);
                break;
            case Strategy::Global:
                stack = build_global_tensor(weights, req.kind, pattern);
                break;
            case Strategy::Segmented:
                if (!req.segment) throw ConfigError("segment strategy requires --segment");
                stack = build_segment_tensor(weights, *req.segment, req.kind, pattern);
                break;
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    DecomposeResult result;
    result.tensor_shape = stack.tensor.shape();
    try {
        result.approximation = approximate_stack(stack, req.method, req.rank, req.fit);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    save_weights(unstack_and_patch(weights, result.approximation.approx), req.out_path);
    if (!req.oracle_cmd.empty())
        result.oracle = evaluate_with_oracle(req.out_path, req.oracle_cmd, req.oracle_timeout);
    return result;
}

}  // namespace trawl
