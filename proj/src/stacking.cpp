#include "trawl/stacking.hpp"

#include "trawl/errors.hpp"

#include <json.hpp>

#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace trawl {

namespace {

constexpr std::string_view kLayerPlaceholder = "{layer}";
constexpr std::array<WeightRole, 4> kQkvoRoles{WeightRole::Q, WeightRole::K, WeightRole::V,
                                               WeightRole::O};
constexpr std::array<WeightRole, 2> kFcRoles{WeightRole::FcIn, WeightRole::FcOut};

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
    return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t count = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size()))
        ++count;
    return count;
}

}  // namespace

std::string_view to_string(WeightRole role) {
    switch (role) {
        case WeightRole::Q: return "Q";
        case WeightRole::K: return "K";
        case WeightRole::V: return "V";
        case WeightRole::O: return "O";
        case WeightRole::FcIn: return "FC_IN";
        case WeightRole::FcOut: return "FC_OUT";
    }
    return "?";
}

std::string_view to_string(StackKind kind) { return kind == StackKind::Qkvo ? "QKVO" : "FC"; }

std::string_view to_string(Segment segment) {
    switch (segment) {
        case Segment::Early: return "Early";
        case Segment::Middle: return "Middle";
        case Segment::Last: return "Last";
    }
    return "?";
}

WeightRole parse_weight_role(std::string_view text) {
    for (WeightRole r : {WeightRole::Q, WeightRole::K, WeightRole::V, WeightRole::O,
                         WeightRole::FcIn, WeightRole::FcOut})
        if (text == to_string(r)) return r;
    throw ConfigError("unknown weight role '" + std::string(text) + "'");
}

StackKind parse_stack_kind(std::string_view text) {
    if (text == "QKVO" || text == "qkvo") return StackKind::Qkvo;
    if (text == "FC" || text == "fc") return StackKind::Fc;
    throw ConfigError("unknown stack kind '" + std::string(text) + "' (expected QKVO or FC)");
}

Segment parse_segment(std::string_view text) {
    if (text == "Early" || text == "early") return Segment::Early;
    if (text == "Middle" || text == "middle") return Segment::Middle;
    if (text == "Last" || text == "last") return Segment::Last;
    throw ConfigError("unknown segment '" + std::string(text) + "' (expected Early, Middle or Last)");
}

std::span<const WeightRole> roles_for(StackKind kind) {
    if (kind == StackKind::Qkvo) return kQkvoRoles;
    return kFcRoles;
}

std::pair<std::size_t, std::size_t> segment_layers(Segment segment, std::size_t num_layers) {
    const std::size_t one_third = num_layers / 3;
    const std::size_t two_thirds = 2 * num_layers / 3;
    switch (segment) {
        case Segment::Early: return {0, one_third};
        case Segment::Middle: return {one_third, two_thirds};
        case Segment::Last: return {two_thirds, num_layers};
    }
    return {0, 0};
}

std::string ArchitecturePattern::resolve(WeightRole role, std::size_t layer) const {
    const auto it = templates.find(role);
    if (it == templates.end())
        throw ConfigError("architecture pattern has no template for role " +
                          std::string(to_string(role)));
    if (layer >= num_layers)
        throw ConfigError("layer " + std::to_string(layer) + " out of range for a " +
                          std::to_string(num_layers) + "-layer pattern");
    std::string name = it->second;
    name.replace(name.find(kLayerPlaceholder), kLayerPlaceholder.size(), std::to_string(layer));
    return name;
}

void ArchitecturePattern::validate() const {
    if (num_layers == 0) throw ConfigError("pattern num_layers must be positive");
    if (templates.empty()) throw ConfigError("pattern defines no templates");
    for (const auto& [role, tmpl] : templates)
        if (count_occurrences(tmpl, kLayerPlaceholder) != 1)
            throw ConfigError("template for " + std::string(to_string(role)) +
                              " must contain \"{layer}\" exactly once: '" + tmpl + "'");
    std::set<std::string> seen;
    for (std::size_t l = 0; l < num_layers; ++l)
        for (const auto& [role, tmpl] : templates)
            if (!seen.insert(resolve(role, l)).second)
                throw ConfigError("pattern resolves two slots to the name '" + resolve(role, l) + "'");
}

ArchitecturePattern parse_pattern(std::string_view json_text) {
    ArchitecturePattern pattern;
    try {
        const auto doc = nlohmann::json::parse(json_text);
        const auto layers = doc.at("num_layers").get<long long>();
        if (layers <= 0) throw ConfigError("pattern num_layers must be positive");
        pattern.num_layers = static_cast<std::size_t>(layers);
        for (const auto& [role, tmpl] : doc.at("templates").items())
            pattern.templates[parse_weight_role(role)] = tmpl.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed architecture pattern: ") + e.what());
    }
    pattern.validate();
    return pattern;
}

ArchitecturePattern load_pattern(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open pattern file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_pattern(ss.str());
}

StackedTensor build_range_tensor(const ModelWeights& weights, std::size_t first_layer,
                                 std::size_t last_layer, StackKind kind,
                                 const ArchitecturePattern& pattern) {
    if (first_layer >= last_layer)
        throw std::invalid_argument("empty layer range [" + std::to_string(first_layer) + ", " +
                                    std::to_string(last_layer) + ")");
    if (last_layer > pattern.num_layers)
        throw std::invalid_argument("layer range exceeds the pattern's " +
                                    std::to_string(pattern.num_layers) + " layers");

    std::vector<Matrix> slices;
    std::vector<SliceProvenance> provenance;
    for (std::size_t layer = first_layer; layer < last_layer; ++layer) {
        for (WeightRole role : roles_for(kind)) {
            SliceProvenance p;
            p.weight_name = pattern.resolve(role, layer);
            p.layer_index = layer;
            p.role = role;
            p.transposed = role == WeightRole::FcOut;
            if (!weights.contains(p.weight_name))
                throw std::invalid_argument("missing weight '" + p.weight_name + "' (layer " +
                                            std::to_string(layer) + ", role " +
                                            std::string(to_string(role)) + ")");
            const Matrix& m = weights.matrix(p.weight_name);
            Matrix slice = p.transposed ? Matrix(m.transpose()) : m;
            if (!slices.empty() && (slice.rows() != slices.front().rows() ||
                                    slice.cols() != slices.front().cols()))
                throw std::invalid_argument(
                    "shape mismatch: '" + p.weight_name + "' gives " +
                    shape_string(slice.rows(), slice.cols()) +
                    (p.transposed ? " after transpose" : "") + " but '" +
                    provenance.front().weight_name + "' gives " +
                    shape_string(slices.front().rows(), slices.front().cols()));
            slices.push_back(std::move(slice));
            provenance.push_back(std::move(p));
        }
    }
    return StackedTensor{stack_matrices(slices), std::move(provenance)};
}

StackedTensor build_layer_tensor(const ModelWeights& weights, std::size_t layer, StackKind kind,
                                 const ArchitecturePattern& pattern) {
    if (layer >= pattern.num_layers)
        throw std::invalid_argument("layer " + std::to_string(layer) + " out of range [0, " +
                                    std::to_string(pattern.num_layers) + ")");
    return build_range_tensor(weights, layer, layer + 1, kind, pattern);
}

StackedTensor build_global_tensor(const ModelWeights& weights, StackKind kind,
                                  const ArchitecturePattern& pattern) {
    return build_range_tensor(weights, 0, pattern.num_layers, kind, pattern);
}

StackedTensor build_segment_tensor(const ModelWeights& weights, Segment segment, StackKind kind,
                                   const ArchitecturePattern& pattern) {
    const auto [first, last] = segment_layers(segment, pattern.num_layers);
    if (first >= last)
        throw std::invalid_argument("segment " + std::string(to_string(segment)) +
                                    " is empty for a " + std::to_string(pattern.num_layers) +
                                    "-layer model");
    return build_range_tensor(weights, first, last, kind, pattern);
}

ModelWeights unstack_and_patch(const ModelWeights& weights, const StackedTensor& approx) {
    const DenseTensor& t = approx.tensor;
    if (t.order() != 3) throw std::invalid_argument("stacked tensor must have 3 modes");
    if (approx.provenance.size() != t.dim(2))
        throw std::invalid_argument("provenance has " + std::to_string(approx.provenance.size()) +
                                    " records for " + std::to_string(t.dim(2)) + " slices");

    ModelWeights patched = weights;
    for (std::size_t k = 0; k < approx.provenance.size(); ++k) {
        const SliceProvenance& p = approx.provenance[k];
        if (!weights.contains(p.weight_name))
            throw std::invalid_argument("unknown weight name '" + p.weight_name + "'");
        const auto slice = t.frontal_slice(k);
        if (p.transposed)
            patched.set_matrix(p.weight_name, slice.transpose());
        else
            patched.set_matrix(p.weight_name, slice);
    }
    return patched;
}

}  // namespace trawl
