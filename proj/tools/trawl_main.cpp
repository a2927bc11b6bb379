// trawl: stack transformer weight matrices into 3-mode tensors, replace them
// with low-rank CP/Tucker reconstructions and sweep the result through an
// external evaluation oracle.

#include "trawl/errors.hpp"
#include "trawl/experiment.hpp"
#include "trawl/fixture.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitOracle = 4;

trawl::RankSpec parse_triple(const std::string& text) {
    trawl::RankSpec out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            const long long v = std::stoll(item);
            if (v < 1) throw trawl::ConfigError("ranks must be positive");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw trawl::ConfigError("--ranks-3 expects R1,R2,R3, got '" + text + "'");
        }
    }
    if (out.size() != 3) throw trawl::ConfigError("--ranks-3 expects R1,R2,R3, got '" + text + "'");
    return out;
}

trawl::FloatDType parse_dtype(const std::string& text) {
    std::string upper;
    for (char c : text) upper += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (auto d = trawl::parse_float_dtype(upper)) return *d;
    throw trawl::ConfigError("unknown dtype '" + text + "' (expected f32, f16, bf16 or f64)");
}

nlohmann::ordered_json oracle_json(const trawl::OracleOutcome& o) {
    nlohmann::ordered_json j;
    j["status"] = std::string(trawl::to_string(o.status));
    if (o.ok()) {
        j["accuracy"] = o.result->accuracy ? nlohmann::ordered_json(*o.result->accuracy) : nullptr;
        j["loss"] = o.result->loss ? nlohmann::ordered_json(*o.result->loss) : nullptr;
    } else {
        j["message"] = o.message;
    }
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Low-rank tensor surgery on transformer weight matrices"};
    app.require_subcommand(1);

    // decompose
    auto* decompose = app.add_subcommand("decompose", "One-shot stack, decompose and patch");
    trawl::DecomposeRequest req;
    std::string strategy = "per-layer", kind = "fc", method = "cp", segment, ranks3, init = "hosvd";
    std::size_t rank = 0, layer = 0;
    double oracle_timeout_s = 3600;
    decompose->add_option("--weights", req.weights_path, "Input safetensors file")->required();
    decompose->add_option("--pattern", req.pattern_path, "Architecture pattern JSON")->required();
    decompose->add_option("--strategy", strategy, "per-layer | global | segment");
    decompose->add_option("--segment", segment, "early | middle | last");
    decompose->add_option("--kind", kind, "qkvo | fc");
    decompose->add_option("--method", method, "cp | tucker | svd");
    decompose->add_option("--rank", rank, "Rank R");
    decompose->add_option("--ranks-3", ranks3, "Tucker rank triple R1,R2,R3");
    auto* layer_opt = decompose->add_option("--layer", layer, "Layer index (per-layer)");
    decompose->add_option("--seed", req.fit.seed);
    decompose->add_option("--tol", req.fit.tol);
    decompose->add_option("--max-iters", req.fit.max_iters);
    decompose->add_option("--restarts", req.fit.restarts);
    decompose->add_option("--init", init, "hosvd | random");
    decompose->add_option("--out", req.out_path, "Patched safetensors output")->required();
    decompose->add_option("--oracle-cmd", req.oracle_cmd, "Evaluate the patched file");
    decompose->add_option("--oracle-timeout", oracle_timeout_s, "Oracle timeout in seconds");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Run a patch-evaluate-restore sweep");
    std::filesystem::path config_path;
    sweep->add_option("--config", config_path, "Sweep config JSON")->required();

    // gen-fixture
    auto* gen = app.add_subcommand("gen-fixture", "Emit a toy transformer weights file");
    trawl::FixtureOptions fx;
    std::filesystem::path fixture_out, pattern_out;
    std::string noise_target = "none", dtype = "f32";
    gen->add_option("--out", fixture_out, "Output safetensors file")->required();
    gen->add_option("--layers", fx.layers, "Number of layers");
    gen->add_option("--dim", fx.dim, "Model width");
    gen->add_option("--ffn-mult", fx.ffn_multiplier, "FC hidden width multiplier");
    gen->add_option("--planted-rank", fx.planted_rank, "CP rank of the clean stacks");
    gen->add_option("--seed", fx.seed);
    gen->add_option("--noise-sigma", fx.noise_sigma, "Gaussian noise std dev");
    auto* target_opt = gen->add_option("--noise-target", noise_target, "last-fc");
    gen->add_option("--dtype", dtype, "f32 | f16 | bf16 | f64");
    gen->add_option("--pattern-out", pattern_out, "Also write the matching pattern JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*decompose) {
            req.strategy = trawl::parse_strategy(strategy);
            req.kind = trawl::parse_stack_kind(kind);
            req.method = trawl::parse_method(method);
            req.fit.init = trawl::parse_init_method(init);
            if (!segment.empty()) req.segment = trawl::parse_segment(segment);
            if (*layer_opt) req.layer = layer;
            if (!ranks3.empty()) {
                if (req.method != trawl::Method::Tucker)
                    throw trawl::ConfigError("--ranks-3 applies to --method tucker only");
                req.rank = parse_triple(ranks3);
            } else if (rank > 0) {
                req.rank = {rank};
            } else {
                throw trawl::ConfigError("--rank (or --ranks-3 for tucker) is required");
            }
            req.oracle_timeout = std::chrono::milliseconds(static_cast<long long>(oracle_timeout_s * 1000));

            const auto result = trawl::run_decompose(req);
            const auto& a = result.approximation;
            nlohmann::ordered_json out;
            out["relative_error"] = a.relative_error;
            out["method"] = std::string(trawl::to_string(req.method));
            out["rank"] = a.rank;
            out["tensor_shape"] = result.tensor_shape;
            out["iterations"] = a.iterations;
            out["converged"] = a.converged;
            out["out"] = req.out_path.string();
            if (result.oracle) out["oracle"] = oracle_json(*result.oracle);
            std::cout << out.dump() << "\n";
            if (result.oracle && !result.oracle->ok()) return kExitOracle;
            return kExitOk;
        }
        if (*sweep) {
            const auto cfg = trawl::load_sweep_config(config_path);
            const auto rows = trawl::run_sweep(cfg);
            trawl::emit_report(rows, cfg.out_dir);
            std::cerr << "wrote " << rows.size() << " rows to " << (cfg.out_dir / "report.json")
                      << "\n";
            return kExitOk;
        }
        if (*gen) {
            if (*target_opt) fx.noise_target = trawl::parse_noise_target(noise_target);
            else if (fx.noise_sigma > 0) fx.noise_target = trawl::NoiseTarget::LastFc;
            fx.dtype = parse_dtype(dtype);
            trawl::save_weights(trawl::make_toy_weights(fx), fixture_out);
            if (!pattern_out.empty()) {
                std::ofstream p(pattern_out);
                p << trawl::pattern_to_json(trawl::toy_pattern(fx.layers));
                if (!p) throw trawl::IoError("cannot write pattern to '" + pattern_out.string() + "'");
            }
            return kExitOk;
        }
    } catch (const trawl::IoError& e) {
        std::cerr << "trawl: I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "trawl: configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "trawl: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}
