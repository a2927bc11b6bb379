#pragma once

#include "trawl/stacking.hpp"
#include "trawl/weights_io.hpp"

#include <cstdint>
#include <string>

namespace trawl {

enum class NoiseTarget { None, LastFc };

NoiseTarget parse_noise_target(std::string_view text);  // "none", "last-fc"

// Toy transformer weights. Each layer's QKVO quadruple and FC pair are
// generated from a shared rank-`planted_rank` CP structure, which gives the
// stacked tensors genuine low-rank content to recover.
struct FixtureOptions {
    std::size_t layers = 6;
    std::size_t dim = 16;
    std::size_t ffn_multiplier = 4;
    std::size_t planted_rank = 4;
    std::size_t vocab = 32;
    std::size_t num_classes = 2;
    std::uint64_t seed = 0;
    double noise_sigma = 0.0;
    NoiseTarget noise_target = NoiseTarget::None;
    FloatDType dtype = FloatDType::F32;
};

ModelWeights make_toy_weights(const FixtureOptions& opts);

// Pattern matching the tensor names emitted by make_toy_weights.
ArchitecturePattern toy_pattern(std::size_t layers);
std::string pattern_to_json(const ArchitecturePattern& pattern);

// Deterministic stand-in for a task loss:
//   1 + sum ||W - W_ref||_F^2 / sum ||W_ref||_F^2
// over every patchable matrix of the reference. A clean model scores 1.
double stub_oracle_loss(const ModelWeights& candidate, const ModelWeights& reference);

}  // namespace trawl
