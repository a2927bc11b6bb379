#pragma once

#include "trawl/tensor.hpp"
#include "trawl/weights_io.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace trawl {

enum class WeightRole { Q, K, V, O, FcIn, FcOut };
enum class StackKind { Qkvo, Fc };
enum class Segment { Early, Middle, Last };

std::string_view to_string(WeightRole role);
std::string_view to_string(StackKind kind);
std::string_view to_string(Segment segment);
WeightRole parse_weight_role(std::string_view text);  // "Q", ..., "FC_IN", "FC_OUT"
StackKind parse_stack_kind(std::string_view text);    // "QKVO"/"qkvo", "FC"/"fc"
Segment parse_segment(std::string_view text);         // "Early"/"early", ...

// Roles stacked for a kind, in frontal-slice order.
std::span<const WeightRole> roles_for(StackKind kind);

// Half-open layer range [first, last) of a segment for an L-layer model:
// floor thirds, remainder layers going to the later segments.
std::pair<std::size_t, std::size_t> segment_layers(Segment segment, std::size_t num_layers);

/**
 * Maps abstract per-layer roles to concrete tensor names.
 *
 * Each template contains "{layer}" exactly once, e.g.
 * "transformer.h.{layer}.mlp.fc_in.weight". A pattern may omit roles it does
 * not need; building a stack for a kind whose roles are missing is an error.
 */
struct ArchitecturePattern {
    std::map<WeightRole, std::string> templates;
    std::size_t num_layers = 0;

    std::string resolve(WeightRole role, std::size_t layer) const;
    void validate() const;  // throws ConfigError
};

// {"num_layers": int, "templates": {"Q": "...{layer}...", ...}}
ArchitecturePattern parse_pattern(std::string_view json_text);
ArchitecturePattern load_pattern(const std::filesystem::path& path);

struct SliceProvenance {
    std::string weight_name;
    std::size_t layer_index = 0;
    WeightRole role = WeightRole::Q;
    bool transposed = false;  // true only for FC_OUT

    friend bool operator==(const SliceProvenance&, const SliceProvenance&) = default;
};

// 3-mode tensor with one provenance record per frontal slice.
struct StackedTensor {
    DenseTensor tensor{Shape{1, 1, 1}};
    std::vector<SliceProvenance> provenance;
};

// Slices ordered (layer ascending, role order from roles_for). FC_OUT is
// stored transposed so it matches FC_IN's shape.
StackedTensor build_layer_tensor(const ModelWeights& weights, std::size_t layer, StackKind kind,
                                 const ArchitecturePattern& pattern);
StackedTensor build_global_tensor(const ModelWeights& weights, StackKind kind,
                                  const ArchitecturePattern& pattern);
StackedTensor build_segment_tensor(const ModelWeights& weights, Segment segment, StackKind kind,
                                   const ArchitecturePattern& pattern);
StackedTensor build_range_tensor(const ModelWeights& weights, std::size_t first_layer,
                                 std::size_t last_layer, StackKind kind,
                                 const ArchitecturePattern& pattern);

// Returns a copy of `weights` where each provenance slice of `approx`
// overwrites its source matrix (transposed back where recorded). The input is
// never modified.
ModelWeights unstack_and_patch(const ModelWeights& weights, const StackedTensor& approx);

}  // namespace trawl
