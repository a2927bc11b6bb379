#include "trawl/fixture.hpp"

#include "trawl/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

namespace trawl {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
    return m;
}

// Slices a * diag(w_k) * b^T for each row w_k of `weights`.
std::vector<Matrix> planted_slices(const Matrix& a, const Matrix& b, const Matrix& weights) {
    std::vector<Matrix> out;
    for (Eigen::Index k = 0; k < weights.rows(); ++k)
        out.emplace_back(a * weights.row(k).asDiagonal() * b.transpose());
    return out;
}

std::vector<std::uint8_t> f32_bytes(const std::vector<float>& values) {
    std::vector<std::uint8_t> bytes(values.size() * sizeof(float));
    std::memcpy(bytes.data(), values.data(), bytes.size());
    return bytes;
}

}  // namespace

NoiseTarget parse_noise_target(std::string_view text) {
    if (text == "none") return NoiseTarget::None;
    if (text == "last-fc") return NoiseTarget::LastFc;
    throw ConfigError("unknown noise target '" + std::string(text) + "' (expected last-fc)");
}

ArchitecturePattern toy_pattern(std::size_t layers) {
    ArchitecturePattern p;
    p.num_layers = layers;
    p.templates = {{WeightRole::Q, "layers.{layer}.attn.q_proj.weight"},
                   {WeightRole::K, "layers.{layer}.attn.k_proj.weight"},
                   {WeightRole::V, "layers.{layer}.attn.v_proj.weight"},
                   {WeightRole::O, "layers.{layer}.attn.o_proj.weight"},
                   {WeightRole::FcIn, "layers.{layer}.mlp.fc_in.weight"},
                   {WeightRole::FcOut, "layers.{layer}.mlp.fc_out.weight"}};
    p.validate();
    return p;
}

std::string pattern_to_json(const ArchitecturePattern& pattern) {
    nlohmann::ordered_json doc;
    doc["num_layers"] = pattern.num_layers;
    nlohmann::ordered_json templates = nlohmann::ordered_json::object();
    for (const auto& [role, tmpl] : pattern.templates) templates[std::string(to_string(role))] = tmpl;
    doc["templates"] = std::move(templates);
    return doc.dump(2) + "\n";
}

ModelWeights make_toy_weights(const FixtureOptions& opts) {
    if (opts.layers == 0 || opts.dim == 0 || opts.ffn_multiplier == 0 || opts.planted_rank == 0 ||
        opts.vocab == 0 || opts.num_classes == 0)
        throw ConfigError("fixture sizes must be positive");
    if (!(opts.noise_sigma >= 0) || !std::isfinite(opts.noise_sigma))
        throw ConfigError("noise sigma must be a non-negative finite number");

    std::mt19937_64 rng(opts.seed);
    // Separate stream so noisy and clean fixtures share every clean weight.
    std::mt19937_64 noise_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    const auto d = static_cast<Eigen::Index>(opts.dim);
    const auto hidden = static_cast<Eigen::Index>(opts.dim * opts.ffn_multiplier);
    const auto r = static_cast<Eigen::Index>(opts.planted_rank);
    const double scale = 1.0 / std::sqrt(static_cast<double>(opts.dim));
    const ArchitecturePattern pattern = toy_pattern(opts.layers);

    ModelWeights w;
    w.metadata()["format"] = "pt";
    w.metadata()["generator"] = "trawl gen-fixture";

    w.add_matrix("embed.weight", gaussian(static_cast<Eigen::Index>(opts.vocab), d, 1.0, rng),
                 opts.dtype);

    for (std::size_t layer = 0; layer < opts.layers; ++layer) {
        std::vector<float> ones(opts.dim, 1.0f);
        w.add_raw("layers." + std::to_string(layer) + ".norm.weight", "F32", {opts.dim},
                  f32_bytes(ones));

        const Matrix qa = gaussian(d, r, 1.0, rng), qb = gaussian(d, r, scale, rng);
        const Matrix qw = gaussian(4, r, 1.0, rng);
        const auto attn = planted_slices(qa, qb, qw);
        const std::array<WeightRole, 4> roles{WeightRole::Q, WeightRole::K, WeightRole::V,
                                              WeightRole::O};
        for (std::size_t k = 0; k < 4; ++k)
            w.add_matrix(pattern.resolve(roles[k], layer), attn[k], opts.dtype);

        const Matrix fa = gaussian(hidden, r, 1.0, rng), fb = gaussian(d, r, scale, rng);
        const Matrix fw = gaussian(2, r, 1.0, rng);
        auto fc = planted_slices(fa, fb, fw);  // both hidden x dim
        if (opts.noise_target == NoiseTarget::LastFc && layer + 1 == opts.layers &&
            opts.noise_sigma > 0) {
            for (auto& m : fc) m += gaussian(m.rows(), m.cols(), opts.noise_sigma, noise_rng);
        }
        w.add_matrix(pattern.resolve(WeightRole::FcIn, layer), fc[0], opts.dtype);
        w.add_matrix(pattern.resolve(WeightRole::FcOut, layer), fc[1].transpose(), opts.dtype);
    }

    w.add_matrix("head.weight", gaussian(static_cast<Eigen::Index>(opts.num_classes), d, scale, rng),
                 opts.dtype);
    return w;
}

double stub_oracle_loss(const ModelWeights& candidate, const ModelWeights& reference) {
    double deviation = 0.0, energy = 0.0;
    for (const auto& e : reference.entries()) {
        if (!e.patchable()) continue;
        const Matrix& ref = *e.values;
        const Matrix& cand = candidate.matrix(e.name);
        if (cand.rows() != ref.rows() || cand.cols() != ref.cols())
            throw std::invalid_argument("shape of '" + e.name + "' differs from the reference");
        deviation += (cand - ref).squaredNorm();
        energy += ref.squaredNorm();
    }
    if (energy == 0) throw std::invalid_argument("reference weights have zero energy");
    return 1.0 + deviation / energy;
}

}  // namespace trawl
