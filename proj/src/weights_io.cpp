#include "trawl/weights_io.hpp"

#include "trawl/errors.hpp"
#include "trawl/float_convert.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <system_error>

namespace trawl {

static_assert(std::endian::native == std::endian::little,
              "safetensors payloads are little-endian; big-endian hosts are not supported");

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv1a(std::uint64_t& h, std::span<const std::uint8_t> bytes) {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= kFnvPrime;
    }
}

void fnv1a(std::uint64_t& h, std::string_view text) {
    fnv1a(h, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

template <typename T>
T load_scalar(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
void store_scalar(std::uint8_t* p, T v) {
    std::memcpy(p, &v, sizeof(T));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on '" + path.string() + "'");
    return buf;
}

}  // namespace

std::optional<FloatDType> parse_float_dtype(std::string_view tag) {
    if (tag == "F64") return FloatDType::F64;
    if (tag == "F32") return FloatDType::F32;
    if (tag == "F16") return FloatDType::F16;
    if (tag == "BF16") return FloatDType::BF16;
    return std::nullopt;
}

std::string_view to_string(FloatDType dtype) {
    switch (dtype) {
        case FloatDType::F64: return "F64";
        case FloatDType::F32: return "F32";
        case FloatDType::F16: return "F16";
        case FloatDType::BF16: return "BF16";
    }
    return "F32";
}

std::optional<std::size_t> dtype_size(std::string_view tag) {
    static const std::map<std::string_view, std::size_t> sizes{
        {"BOOL", 1}, {"U8", 1},  {"I8", 1},   {"F8_E5M2", 1}, {"F8_E4M3", 1},
        {"I16", 2},  {"U16", 2}, {"F16", 2},  {"BF16", 2},    {"I32", 4},
        {"U32", 4},  {"F32", 4}, {"I64", 8},  {"U64", 8},     {"F64", 8}};
    const auto it = sizes.find(tag);
    if (it == sizes.end()) return std::nullopt;
    return it->second;
}

std::vector<std::uint8_t> encode_matrix(const Matrix& m, FloatDType dtype) {
    const auto rows = static_cast<std::size_t>(m.rows());
    const auto cols = static_cast<std::size_t>(m.cols());
    const std::size_t width = *dtype_size(to_string(dtype));
    std::vector<std::uint8_t> out(rows * cols * width);
    // Row-major on disk.
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
            std::uint8_t* p = out.data() + (r * cols + c) * width;
            switch (dtype) {
                case FloatDType::F64: store_scalar(p, v); break;
                case FloatDType::F32: store_scalar(p, static_cast<float>(v)); break;
                case FloatDType::F16: store_scalar(p, double_to_f16_bits(v)); break;
                case FloatDType::BF16: store_scalar(p, double_to_bf16_bits(v)); break;
            }
        }
    }
    return out;
}

Matrix decode_matrix(std::span<const std::uint8_t> bytes, std::size_t rows, std::size_t cols,
                     FloatDType dtype) {
    const std::size_t width = *dtype_size(to_string(dtype));
    if (bytes.size() != rows * cols * width)
        throw std::invalid_argument("decode_matrix: payload size does not match shape");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::uint8_t* p = bytes.data() + (r * cols + c) * width;
            double v = 0.0;
            switch (dtype) {
                case FloatDType::F64: v = load_scalar<double>(p); break;
                case FloatDType::F32: v = load_scalar<float>(p); break;
                case FloatDType::F16: v = f16_bits_to_double(load_scalar<std::uint16_t>(p)); break;
                case FloatDType::BF16: v = bf16_bits_to_double(load_scalar<std::uint16_t>(p)); break;
            }
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
        }
    }
    return m;
}

// --- ModelWeights -------------------------------------------------------------

bool ModelWeights::contains(std::string_view name) const {
    return index_.contains(std::string(name));
}

const WeightEntry& ModelWeights::entry(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end())
        throw std::invalid_argument("unknown weight name '" + std::string(name) + "'");
    return entries_[it->second];
}

const Matrix& ModelWeights::matrix(std::string_view name) const {
    const WeightEntry& e = entry(name);
    if (!e.values)
        throw std::invalid_argument("weight '" + e.name + "' (" + e.dtype +
                                    ") is not a 2-D floating matrix");
    return *e.values;
}

void ModelWeights::set_matrix(std::string_view name, const Matrix& values) {
    const auto it = index_.find(std::string(name));
    if (it == index_.end())
        throw std::invalid_argument("unknown weight name '" + std::string(name) + "'");
    WeightEntry& e = entries_[it->second];
    if (!e.values)
        throw std::invalid_argument("weight '" + e.name + "' is not patchable");
    if (values.rows() != e.values->rows() || values.cols() != e.values->cols())
        throw std::invalid_argument("patch for '" + e.name + "' is " +
                                    std::to_string(values.rows()) + "x" +
                                    std::to_string(values.cols()) + ", expected " +
                                    std::to_string(e.values->rows()) + "x" +
                                    std::to_string(e.values->cols()));
    if (!values.allFinite())
        throw std::invalid_argument("patch for '" + e.name + "' contains non-finite values");
    const FloatDType dtype = *e.float_dtype();
    e.bytes = encode_matrix(values, dtype);
    e.values = decode_matrix(e.bytes, e.shape[0], e.shape[1], dtype);
}

void ModelWeights::add_matrix(std::string name, const Matrix& values, FloatDType dtype) {
    WeightEntry e;
    e.name = std::move(name);
    e.dtype = std::string(to_string(dtype));
    e.shape = {static_cast<std::size_t>(values.rows()), static_cast<std::size_t>(values.cols())};
    e.bytes = encode_matrix(values, dtype);
    e.values = decode_matrix(e.bytes, e.shape[0], e.shape[1], dtype);
    append(std::move(e));
}

void ModelWeights::add_raw(std::string name, std::string dtype, std::vector<std::size_t> shape,
                           std::vector<std::uint8_t> bytes) {
    const auto width = dtype_size(dtype);
    if (!width)
        throw std::invalid_argument("unsupported dtype '" + dtype + "' for tensor '" + name + "'");
    if (shape_product(shape) * *width != bytes.size())
        throw std::invalid_argument("payload of tensor '" + name + "' has " +
                                    std::to_string(bytes.size()) +
                                    " bytes, inconsistent with its shape and dtype");
    WeightEntry e;
    e.name = std::move(name);
    e.dtype = std::move(dtype);
    e.shape = std::move(shape);
    e.bytes = std::move(bytes);
    if (const auto fd = parse_float_dtype(e.dtype); fd && e.shape.size() == 2 &&
                                                    e.shape[0] > 0 && e.shape[1] > 0)
        e.values = decode_matrix(e.bytes, e.shape[0], e.shape[1], *fd);
    append(std::move(e));
}

void ModelWeights::append(WeightEntry entry) {
    if (entry.name == "__metadata__")
        throw std::invalid_argument("'__metadata__' is reserved and cannot name a tensor");
    if (index_.contains(entry.name))
        throw std::invalid_argument("duplicate weight name '" + entry.name + "'");
    index_.emplace(entry.name, entries_.size());
    entries_.push_back(std::move(entry));
}

bool operator==(const ModelWeights& a, const ModelWeights& b) {
    if (a.metadata_ != b.metadata_ || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
        const auto& x = a.entries_[i];
        const auto& y = b.entries_[i];
        if (x.name != y.name || x.dtype != y.dtype || x.shape != y.shape || x.bytes != y.bytes)
            return false;
    }
    return true;
}

// --- safetensors I/O ----------------------------------------------------------

ModelWeights load_weights(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = read_file(path);
    const std::string where = " in '" + path.string() + "'";
    if (buf.size() < 8) throw IoError("truncated header length" + where);

    const auto header_len = load_scalar<std::uint64_t>(buf.data());
    if (header_len > buf.size() - 8)
        throw IoError("header length " + std::to_string(header_len) + " exceeds file size" + where);
    const std::size_t payload_start = 8 + static_cast<std::size_t>(header_len);
    const std::size_t payload_size = buf.size() - payload_start;

    json header;
    try {
        header = json::parse(buf.begin() + 8, buf.begin() + static_cast<std::ptrdiff_t>(payload_start));
    } catch (const json::parse_error& e) {
        throw IoError("malformed header" + where + ": " + e.what());
    }
    if (!header.is_object()) throw IoError("malformed header" + where + ": not a JSON object");

    struct Pending {
        std::string name;
        std::string dtype;
        std::vector<std::size_t> shape;
        std::size_t begin, end;
    };
    std::vector<Pending> pending;
    ModelWeights weights;

    for (const auto& [name, desc] : header.items()) {
        if (name == "__metadata__") {
            if (!desc.is_object()) throw IoError("malformed __metadata__" + where);
            for (const auto& [k, v] : desc.items()) {
                if (!v.is_string()) throw IoError("non-string metadata value for '" + k + "'" + where);
                weights.metadata()[k] = v.get<std::string>();
            }
            continue;
        }
        try {
            Pending p;
            p.name = name;
            p.dtype = desc.at("dtype").get<std::string>();
            p.shape = desc.at("shape").get<std::vector<std::size_t>>();
            const auto offsets = desc.at("data_offsets").get<std::vector<std::size_t>>();
            if (offsets.size() != 2 || offsets[0] > offsets[1])
                throw IoError("invalid data_offsets for tensor '" + name + "'" + where);
            p.begin = offsets[0];
            p.end = offsets[1];
            pending.push_back(std::move(p));
        } catch (const json::exception& e) {
            throw IoError("malformed header entry for tensor '" + name + "'" + where + ": " +
                          e.what());
        }
    }

    std::sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
        return std::tie(a.begin, a.name) < std::tie(b.begin, b.name);
    });
    for (auto& p : pending) {
        const auto width = dtype_size(p.dtype);
        if (!width) throw IoError("unsupported dtype '" + p.dtype + "' for tensor '" + p.name + "'" + where);
        if (p.end > payload_size)
            throw IoError("truncated payload: tensor '" + p.name + "' ends at byte " +
                          std::to_string(p.end) + " but the payload has " +
                          std::to_string(payload_size) + where);
        if (shape_product(p.shape) * *width != p.end - p.begin)
            throw IoError("tensor '" + p.name + "' byte range does not match its shape and dtype" + where);
        const auto first = buf.begin() + static_cast<std::ptrdiff_t>(payload_start + p.begin);
        std::vector<std::uint8_t> bytes(first, first + static_cast<std::ptrdiff_t>(p.end - p.begin));
        try {
            weights.add_raw(std::move(p.name), std::move(p.dtype), std::move(p.shape), std::move(bytes));
        } catch (const std::invalid_argument& e) {
            throw IoError(std::string(e.what()) + where);
        }
    }
    return weights;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    if (!weights.metadata().empty()) header["__metadata__"] = weights.metadata();
    std::size_t offset = 0;
    for (const auto& e : weights.entries()) {
        if (header.contains(e.name)) throw IoError("name collision on '" + e.name + "'");
        header[e.name] = {{"dtype", e.dtype},
                          {"shape", e.shape},
                          {"data_offsets", {offset, offset + e.bytes.size()}}};
        offset += e.bytes.size();
    }
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        std::uint8_t len[8];
        store_scalar(len, static_cast<std::uint64_t>(text.size()));
        out.write(reinterpret_cast<const char*>(len), 8);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& e : weights.entries())
            out.write(reinterpret_cast<const char*>(e.bytes.data()),
                      static_cast<std::streamsize>(e.bytes.size()));
        out.flush();
        if (!out) throw IoError("write failure on '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move weights into place at '" + path.string() + "'");
    }
}

std::uint64_t payload_digest(const ModelWeights& weights) {
    std::uint64_t h = kFnvOffset;
    for (const auto& e : weights.entries()) {
        fnv1a(h, e.name);
        fnv1a(h, e.dtype);
        for (std::size_t d : e.shape) fnv1a(h, std::to_string(d) + ",");
        fnv1a(h, e.bytes);
    }
    return h;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
    std::uint64_t h = kFnvOffset;
    fnv1a(h, read_file(path));
    return h;
}

}  // namespace trawl
