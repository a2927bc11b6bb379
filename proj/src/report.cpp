#include "trawl/report.hpp"

#include "trawl/errors.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace trawl {

namespace {

std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), res.ptr};
}

// RFC 4180: quote fields containing separators, quotes or line breaks.
std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\r\n") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::string rank_text(const std::vector<std::size_t>& rank) {
    std::string out;
    for (std::size_t i = 0; i < rank.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(rank[i]);
    }
    return out;
}

std::string optional_text(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failure on '" + path.string() + "'");
}

}  // namespace

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> columns{
        "strategy",        "kind",           "method",      "layer_or_segment",
        "rank",            "relative_error", "metric_accuracy", "metric_loss",
        "fit_iterations",  "wall_time_ms",   "error"};
    return columns;
}

nlohmann::ordered_json row_to_json(const ReportRow& row) {
    auto opt = [](const auto& v) -> nlohmann::ordered_json {
        if (v) return *v;
        return nullptr;
    };
    nlohmann::ordered_json j;
    j["strategy"] = row.strategy;
    j["kind"] = row.kind;
    j["method"] = row.method;
    j["layer_or_segment"] = row.layer_or_segment;
    if (row.rank.empty())
        j["rank"] = nullptr;
    else if (row.rank.size() == 1)
        j["rank"] = row.rank.front();
    else
        j["rank"] = row.rank;
    j["relative_error"] = opt(row.relative_error);
    j["metric_accuracy"] = opt(row.metric_accuracy);
    j["metric_loss"] = opt(row.metric_loss);
    j["fit_iterations"] = row.fit_iterations;
    j["wall_time_ms"] = row.wall_time_ms;
    j["error"] = opt(row.error);
    return j;
}

ReportRow row_from_json(const nlohmann::json& j) {
    auto opt_double = [&](const char* key) -> std::optional<double> {
        if (j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<double>();
    };
    ReportRow row;
    row.strategy = j.at("strategy").get<std::string>();
    row.kind = j.at("kind").get<std::string>();
    row.method = j.at("method").get<std::string>();
    row.layer_or_segment = j.at("layer_or_segment").get<std::string>();
    const auto& rank = j.at("rank");
    if (rank.is_number())
        row.rank = {rank.get<std::size_t>()};
    else if (rank.is_array())
        row.rank = rank.get<std::vector<std::size_t>>();
    row.relative_error = opt_double("relative_error");
    row.metric_accuracy = opt_double("metric_accuracy");
    row.metric_loss = opt_double("metric_loss");
    row.fit_iterations = j.at("fit_iterations").get<int>();
    row.wall_time_ms = j.at("wall_time_ms").get<double>();
    if (!j.at("error").is_null()) row.error = j.at("error").get<std::string>();
    return row;
}

std::string rows_to_csv(const std::vector<ReportRow>& rows) {
    std::string out;
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += "\r\n";
    for (const auto& r : rows) {
        const std::array<std::string, 11> fields{r.strategy,
                                                 r.kind,
                                                 r.method,
                                                 r.layer_or_segment,
                                                 rank_text(r.rank),
                                                 optional_text(r.relative_error),
                                                 optional_text(r.metric_accuracy),
                                                 optional_text(r.metric_loss),
                                                 std::to_string(r.fit_iterations),
                                                 format_double(r.wall_time_ms),
                                                 r.error.value_or("")};
        for (std::size_t i = 0; i < fields.size(); ++i) out += (i ? "," : "") + csv_field(fields[i]);
        out += "\r\n";
    }
    return out;
}

std::string rows_to_json(const std::vector<ReportRow>& rows) {
    nlohmann::ordered_json doc = nlohmann::ordered_json::array();
    for (const auto& r : rows) doc.push_back(row_to_json(r));
    return doc.dump(2) + "\n";
}

void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& out_dir) {
    if (rows.empty()) throw std::invalid_argument("emit_report: no rows");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create report directory '" + out_dir.string() + "'");
    write_text(out_dir / "report.json", rows_to_json(rows));
    write_text(out_dir / "report.csv", rows_to_csv(rows));
}

}  // namespace trawl
