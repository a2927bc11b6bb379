#pragma once

#include "trawl/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace trawl {

// Floating dtypes that can back a patchable matrix.
enum class FloatDType { F64, F32, F16, BF16 };

std::optional<FloatDType> parse_float_dtype(std::string_view tag);
std::string_view to_string(FloatDType dtype);

// One tensor of a safetensors container. `bytes` is the exact little-endian
// payload; `values` is present only for 2-D floating tensors and always
// equals the decoded payload.
struct WeightEntry {
    std::string name;
    std::string dtype;
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> bytes;
    std::optional<Matrix> values;

    bool patchable() const noexcept { return values.has_value(); }
    std::optional<FloatDType> float_dtype() const { return parse_float_dtype(dtype); }
};

/**
 * Named model weights in file order.
 *
 * 2-D f64/f32/f16/bf16 tensors are exposed as double-precision matrices;
 * everything else is carried through opaquely. Writing a matrix rounds it to
 * the entry's stored dtype immediately, so the in-memory values always match
 * what save_weights() will write.
 */
class ModelWeights {
public:
    const std::vector<WeightEntry>& entries() const noexcept { return entries_; }
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }
    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }

    std::size_t size() const noexcept { return entries_.size(); }
    bool contains(std::string_view name) const;
    const WeightEntry& entry(std::string_view name) const;

    // Throws std::invalid_argument for unknown or non-patchable names.
    const Matrix& matrix(std::string_view name) const;

    // Replaces the values of an existing patchable matrix. Shape must match.
    void set_matrix(std::string_view name, const Matrix& values);

    // Appends a 2-D floating tensor encoded as `dtype`.
    void add_matrix(std::string name, const Matrix& values, FloatDType dtype);

    // Appends an arbitrary tensor given its raw little-endian payload.
    void add_raw(std::string name, std::string dtype, std::vector<std::size_t> shape,
                 std::vector<std::uint8_t> bytes);

    friend bool operator==(const ModelWeights& a, const ModelWeights& b);

private:
    void append(WeightEntry entry);

    std::vector<WeightEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

// Element width in bytes of a safetensors dtype tag, or nullopt if unknown.
std::optional<std::size_t> dtype_size(std::string_view tag);

std::vector<std::uint8_t> encode_matrix(const Matrix& m, FloatDType dtype);
Matrix decode_matrix(std::span<const std::uint8_t> bytes, std::size_t rows, std::size_t cols,
                     FloatDType dtype);

// Throws IoError on unreadable files, malformed headers, truncated payloads
// and unsupported dtypes.
ModelWeights load_weights(const std::filesystem::path& path);
void save_weights(const ModelWeights& weights, const std::filesystem::path& path);

// FNV-1a digests used for pristine-file and payload comparisons.
std::uint64_t payload_digest(const ModelWeights& weights);
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace trawl
