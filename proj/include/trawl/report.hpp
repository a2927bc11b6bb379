#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace trawl {

// One sweep cell (or the baseline). `rank` is empty for the baseline, holds
// one entry for CP/SVD ranks and three for Tucker rank triples.
struct ReportRow {
    std::string strategy;
    std::string kind;
    std::string method;
    std::string layer_or_segment;
    std::vector<std::size_t> rank;
    std::optional<double> relative_error;
    std::optional<double> metric_accuracy;
    std::optional<double> metric_loss;
    int fit_iterations = 0;
    double wall_time_ms = 0.0;
    std::optional<std::string> error;

    friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

// Column order shared by report.json objects and report.csv.
const std::vector<std::string>& report_columns();

nlohmann::ordered_json row_to_json(const ReportRow& row);
ReportRow row_from_json(const nlohmann::json& j);

std::string rows_to_csv(const std::vector<ReportRow>& rows);
std::string rows_to_json(const std::vector<ReportRow>& rows);

// Writes out_dir/report.json and out_dir/report.csv. Throws IoError.
void emit_report(const std::vector<ReportRow>& rows, const std::filesystem::path& out_dir);

}  // namespace trawl
