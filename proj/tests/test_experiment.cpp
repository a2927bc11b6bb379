#include "scratch.hpp"

#include "trawl/errors.hpp"
#include "trawl/experiment.hpp"
#include "trawl/fixture.hpp"
#include "trawl/oracle.hpp"
#include "trawl/report.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

using namespace trawl;
using namespace trawl::test;
using nlohmann::json;

namespace {

// Minimal RFC-4180 reader, CRLF records.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                field += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
        } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
            record.push_back(std::move(field));
            field.clear();
            records.push_back(std::move(record));
            record.clear();
            ++i;
        } else {
            field += c;
        }
    }
    return records;
}

std::string shell_quote(const std::string& s) { return "'" + s + "'"; }

int run_cli(const std::string& args) {
    const std::string cmd = shell_quote(TRAWL_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<ReportRow> ten_rows() {
    std::vector<ReportRow> rows;
    for (int i = 0; i < 10; ++i) {
        ReportRow r;
        r.strategy = i % 2 ? "PerLayer" : "Global";
        r.kind = "FC";
        r.method = i == 0 ? "None" : (i % 3 ? "CP" : "Tucker");
        r.layer_or_segment = i == 0 ? "" : std::to_string(i);
        if (i > 0) r.rank = i % 3 ? std::vector<std::size_t>{std::size_t(i)} : std::vector<std::size_t>{4, 4, 2};
        if (i > 0) r.relative_error = 1.0 / (i + 2);
        if (i % 4 != 1) r.metric_accuracy = 0.125 * (i % 8);
        if (i != 7) r.metric_loss = 1.0 + i / 3.0;
        r.fit_iterations = 3 * i;
        r.wall_time_ms = 0.5 * i;
        if (i == 7) r.error = "oracle NonzeroExit: said \"no\", twice\nthen quit";
        rows.push_back(r);
    }
    return rows;
}

SweepConfig base_config(const ToyFiles& files, const std::filesystem::path& out) {
    SweepConfig cfg;
    cfg.weights_path = files.weights;
    cfg.pattern_path = files.pattern;
    cfg.strategy = Strategy::PerLayer;
    cfg.kind = StackKind::Fc;
    cfg.methods = {Method::CP};
    cfg.ranks = {{1}, {2}, {4}};
    cfg.layers = {0, 2};
    cfg.fit.max_iters = 50;
    cfg.out_dir = out;
    return cfg;
}

std::string stub_oracle_cmd(const std::filesystem::path& reference) {
    return shell_quote(TRAWL_STUB_ORACLE) + " --reference " + shell_quote(reference.string());
}

FixtureOptions small_fixture() {
    FixtureOptions opts;
    opts.layers = 3;
    opts.dim = 8;
    opts.seed = 5;
    return opts;
}

}  // namespace

TEST(ParseOracleOutput, Contract) {
    const auto r = parse_oracle_output(R"({"accuracy": 0.5, "loss": 1.0, "f1": 0.25, "note": "x"})");
    EXPECT_EQ(r.accuracy, 0.5);
    EXPECT_EQ(r.loss, 1.0);
    EXPECT_EQ(r.extra.at("f1"), 0.25);
    EXPECT_FALSE(r.extra.contains("note"));
    EXPECT_FALSE(parse_oracle_output(R"({"accuracy": 1})").loss.has_value());
    EXPECT_FALSE(parse_oracle_output(" {\"loss\": 2.5}\n").accuracy.has_value());
    EXPECT_THROW(parse_oracle_output(""), std::invalid_argument);
    EXPECT_THROW(parse_oracle_output("[1]"), std::invalid_argument);
    EXPECT_THROW(parse_oracle_output(R"({"f1": 1})"), std::invalid_argument);
    EXPECT_THROW(parse_oracle_output(R"({"accuracy": 1.5})"), std::invalid_argument);
    EXPECT_THROW(parse_oracle_output(R"({"loss": "low"})"), std::invalid_argument);
    EXPECT_THROW(parse_oracle_output("{\"loss\": 1}\n{\"loss\": 2}"), std::invalid_argument);
}

TEST(EvaluateWithOracle, Outcomes) {
    ScratchDir dir("oracle");
    const auto w = dir / "w.safetensors";

    auto ok = evaluate_with_oracle(w, R"(echo '{"accuracy": 0.5, "loss": 1.0}')");
    ASSERT_TRUE(ok.ok()) << ok.message;
    EXPECT_EQ(ok.result->accuracy, 0.5);
    EXPECT_EQ(ok.result->loss, 1.0);

    const auto env = evaluate_with_oracle(
        w, "test \"$TRAWL_WEIGHTS\" = " + shell_quote(w.string()) + " && echo '{\"loss\": 3}'");
    ASSERT_TRUE(env.ok()) << env.message;
    EXPECT_EQ(env.result->loss, 3.0);

    const auto acc_only = evaluate_with_oracle(w, R"(echo '{"accuracy": 0.75}' ; echo noise >&2)");
    ASSERT_TRUE(acc_only.ok());
    EXPECT_FALSE(acc_only.result->loss.has_value());

    const auto failed = evaluate_with_oracle(w, R"(echo '{"loss": 1}'; exit 1)");
    EXPECT_EQ(failed.status, OracleStatus::NonzeroExit);
    EXPECT_EQ(failed.exit_code, 1);
    EXPECT_FALSE(failed.result.has_value());

    const auto garbage = evaluate_with_oracle(w, "echo hello");
    EXPECT_EQ(garbage.status, OracleStatus::Unparsable);

    const auto script = write_script(dir / "slow.sh", "sleep 30\necho '{\"loss\": 1}'");
    const auto start = std::chrono::steady_clock::now();
    const auto slow = evaluate_with_oracle(w, shell_quote(script.string()), std::chrono::milliseconds(300));
    EXPECT_EQ(slow.status, OracleStatus::Timeout);
    EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(10));

    EXPECT_EQ(to_string(OracleStatus::Timeout), "timeout");
}

TEST(EmitReport, SingleBaselineRow) {
    ScratchDir dir("report");
    ReportRow r;
    r.strategy = "PerLayer";
    r.kind = "FC";
    r.method = "None";
    r.metric_loss = 1.25;
    emit_report({r}, dir.path());
    const auto csv = read_file(dir / "report.csv");
    EXPECT_EQ(parse_csv(csv).size(), 2u);
    EXPECT_EQ(csv.substr(0, csv.find("\r\n")),
              "strategy,kind,method,layer_or_segment,rank,relative_error,metric_accuracy,metric_loss,"
              "fit_iterations,wall_time_ms,error");
    EXPECT_EQ(parse_csv(csv)[1],
              (std::vector<std::string>{"PerLayer", "FC", "None", "", "", "", "", "1.25", "0", "0", ""}));
    const auto doc = json::parse(read_file(dir / "report.json"));
    ASSERT_EQ(doc.size(), 1u);
    EXPECT_TRUE(doc[0]["metric_accuracy"].is_null());
    EXPECT_TRUE(doc[0]["relative_error"].is_null());
    EXPECT_TRUE(doc[0]["rank"].is_null());
    EXPECT_EQ(doc[0]["metric_loss"], 1.25);
    EXPECT_THROW(emit_report({}, dir.path()), std::invalid_argument);
}

TEST(EmitReport, JsonAndCsvAgreeOnTenRows) {
    ScratchDir dir("report10");
    const auto rows = ten_rows();
    emit_report(rows, dir.path());
    const auto doc = nlohmann::ordered_json::parse(read_file(dir / "report.json"));
    const auto csv = parse_csv(read_file(dir / "report.csv"));
    ASSERT_EQ(doc.size(), 10u);
    ASSERT_EQ(csv.size(), 11u);
    EXPECT_EQ(csv[0], report_columns());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& obj = doc[i];
        const auto& rec = csv[i + 1];
        ASSERT_EQ(rec.size(), report_columns().size());
        std::size_t c = 0;
        for (const auto& [key, value] : obj.items()) {
            ASSERT_EQ(key, report_columns()[c]);
            const std::string& cell = rec[c++];
            if (value.is_null()) {
                EXPECT_EQ(cell, "") << key;
            } else if (value.is_string()) {
                EXPECT_EQ(cell, value.get<std::string>()) << key;
            } else if (value.is_array()) {
                std::string joined;
                for (const auto& v : value) joined += (joined.empty() ? "" : ",") + std::to_string(v.get<int>());
                EXPECT_EQ(cell, joined);
            } else {
                EXPECT_EQ(std::stod(cell), value.get<double>()) << key;
            }
        }
        EXPECT_EQ(row_from_json(obj), rows[i]);
    }
}

TEST(SweepConfig, ParseAndResolvePaths) {
    const auto cfg = parse_sweep_config(R"({
        "weights_path": "w.safetensors", "pattern_path": "/abs/p.json",
        "strategy": "PerLayer", "kind": "FC", "method": ["None", "Tucker"],
        "ranks": [1, [2, 2, 1]], "layers": [0, 1],
        "fit": {"max_iters": 10, "tol": 1e-6, "seed": 3, "init": "random", "restarts": 2},
        "oracle_cmd": "true", "out_dir": "out", "oracle_timeout_s": 1.5})",
                                        "/base");
    EXPECT_EQ(cfg.weights_path, "/base/w.safetensors");
    EXPECT_EQ(cfg.pattern_path, "/abs/p.json");
    EXPECT_EQ(cfg.out_dir, "/base/out");
    EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::None, Method::Tucker}));
    EXPECT_EQ(cfg.ranks, (std::vector<RankSpec>{{1}, {2, 2, 1}}));
    EXPECT_EQ(cfg.fit.max_iters, 10);
    EXPECT_EQ(cfg.fit.init, InitMethod::Random);
    EXPECT_EQ(cfg.oracle_timeout, std::chrono::milliseconds(1500));
}

TEST(SweepConfig, Rejections) {
    const std::string head = R"("weights_path": "w", "pattern_path": "p", "out_dir": "o", "kind": "FC", )";
    auto bad = [&](const std::string& tail) {
        EXPECT_THROW(parse_sweep_config("{" + head + tail + "}", ""), ConfigError) << tail;
    };
    bad(R"("strategy": "PerLayer", "method": "CP", "ranks": [1])");                     // no layers
    bad(R"("strategy": "Segmented", "method": "CP", "ranks": [1])");                    // no segments
    bad(R"("strategy": "Global", "method": "CP", "ranks": [])");                        // no ranks
    bad(R"("strategy": "Global", "method": "CP", "ranks": [0])");
    bad(R"("strategy": "Global", "method": "CP", "ranks": [[2, 2, 2]])");
    bad(R"("strategy": "Global", "method": "LASER", "ranks": [1])");
    bad(R"("strategy": "Sideways", "method": "CP", "ranks": [1])");
    bad(R"("strategy": "Global", "method": "CP", "ranks": [1], "colour": 1)");
    bad(R"("strategy": "Global", "method": "CP", "ranks": [1], "fit": {"max_iters": 0})");
    bad(R"("strategy": "Global", "method": "CP", "ranks": [1], "layers": [-1])");
    EXPECT_THROW(parse_sweep_config("{", ""), ConfigError);
    EXPECT_NO_THROW(parse_sweep_config("{" + head + R"("strategy": "Global", "method": "None"})", ""));
    EXPECT_THROW(load_sweep_config("/nonexistent/sweep.json"), IoError);
}

TEST(ApproximateStack, MethodsAndRanks) {
    const auto w = make_toy_weights(small_fixture());
    const auto stack = build_layer_tensor(w, 0, StackKind::Fc, toy_pattern(3));
    FitOptions fit;
    const auto tucker = approximate_stack(stack, Method::Tucker, {4}, fit);
    EXPECT_EQ(tucker.rank, (RankSpec{4, 4, 2}));
    const auto svd = approximate_stack(stack, Method::SVDBaseline, {2}, fit);
    for (std::size_t k = 0; k < 2; ++k) {
        const Matrix slice = svd.approx.tensor.frontal_slice(k);
        Eigen::JacobiSVD<Matrix> s(slice);
        EXPECT_LT(s.singularValues()(2), 1e-9);
    }
    const auto none = approximate_stack(stack, Method::None, {}, fit);
    EXPECT_EQ(none.relative_error, 0.0);
    EXPECT_EQ(none.approx.tensor, stack.tensor);
    EXPECT_THROW(approximate_stack(stack, Method::CP, {1, 2, 3}, fit), std::invalid_argument);
    EXPECT_THROW(approximate_stack(stack, Method::Tucker, {1, 2}, fit), std::invalid_argument);
}

TEST(RunSweep, BaselineOnly) {
    ScratchDir dir("sweep_none");
    const auto files = write_toy_model(dir.path(), small_fixture());
    auto cfg = base_config(files, dir / "out");
    cfg.methods = {Method::None};
    cfg.oracle_cmd = stub_oracle_cmd(files.weights);
    const auto rows = run_sweep(cfg);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].method, "None");
    EXPECT_EQ(rows[0].metric_loss, 1.0);
    EXPECT_FALSE(rows[0].relative_error.has_value());
}

TEST(RunSweep, CellCountDeterminismAndBaseline) {
    ScratchDir dir("sweep_cells");
    const auto files = write_toy_model(dir.path(), small_fixture());
    auto cfg = base_config(files, dir / "out");
    cfg.oracle_cmd = stub_oracle_cmd(files.weights);
    const auto before = file_digest(files.weights);
    auto a = run_sweep(cfg);
    auto b = run_sweep(cfg);
    ASSERT_EQ(a.size(), 7u);
    EXPECT_EQ(file_digest(files.weights), before);
    EXPECT_FALSE(std::filesystem::exists(cfg.out_dir / "patched.safetensors"));
    for (auto* rows : {&a, &b})
        for (auto& r : *rows) r.wall_time_ms = 0;
    EXPECT_EQ(a, b);
    EXPECT_EQ(a[1].layer_or_segment, "0");
    EXPECT_EQ(a[4].layer_or_segment, "2");
    EXPECT_EQ(a[6].rank, (RankSpec{4}));
    for (std::size_t i = 1; i < a.size(); ++i) {
        EXPECT_TRUE(a[i].relative_error.has_value());
        EXPECT_TRUE(a[i].metric_loss.has_value());
        EXPECT_FALSE(a[i].error.has_value());
    }
    const auto direct = evaluate_with_oracle(files.weights, cfg.oracle_cmd);
    ASSERT_TRUE(direct.ok());
    EXPECT_EQ(a[0].metric_loss, direct.result->loss);
    EXPECT_EQ(a[0].metric_accuracy, direct.result->accuracy);
}

TEST(RunSweep, FailuresBecomeRows) {
    ScratchDir dir("sweep_fail");
    const auto files = write_toy_model(dir.path(), small_fixture());
    auto cfg = base_config(files, dir / "out");
    cfg.oracle_cmd = "exit 1";
    cfg.ranks = {{2}};
    auto rows = run_sweep(cfg);
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) {
        ASSERT_TRUE(r.error.has_value());
        EXPECT_NE(r.error->find("nonzero-exit"), std::string::npos);
        EXPECT_FALSE(r.metric_loss.has_value());
    }
    EXPECT_TRUE(rows[1].relative_error.has_value());

    cfg.layers = {0, 7};
    cfg.oracle_cmd.clear();
    EXPECT_THROW(run_sweep(cfg), ConfigError);

    // The pattern promises a fourth layer the weights file lacks.
    write_file(files.pattern, pattern_to_json(toy_pattern(4)));
    cfg.layers = {0, 3};
    rows = run_sweep(cfg);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_FALSE(rows[1].error.has_value());
    ASSERT_TRUE(rows[2].error.has_value());
    EXPECT_NE(rows[2].error->find("stacking failed"), std::string::npos);
}

TEST(RunSweep, StrategiesAndMethods) {
    ScratchDir dir("sweep_mix");
    const auto files = write_toy_model(dir.path(), small_fixture());
    auto cfg = base_config(files, dir / "out");
    cfg.strategy = Strategy::Segmented;
    cfg.segments = {Segment::Early, Segment::Last};
    cfg.kind = StackKind::Qkvo;
    cfg.methods = {Method::None, Method::SVDBaseline, Method::Tucker};
    cfg.ranks = {{2}};
    auto rows = run_sweep(cfg);
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[1].method, "SVDBaseline");
    EXPECT_EQ(rows[1].layer_or_segment, "Early");
    EXPECT_EQ(rows[3].method, "Tucker");
    EXPECT_EQ(rows[3].rank, (RankSpec{2, 2, 2}));

    cfg.strategy = Strategy::Global;
    cfg.methods = {Method::CP};
    rows = run_sweep(cfg);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1].layer_or_segment, "all");
}

TEST(RunSweep, MissingInputsThrow) {
    ScratchDir dir("sweep_io");
    const auto files = write_toy_model(dir.path(), small_fixture());
    auto cfg = base_config(files, dir / "out");
    cfg.weights_path = dir / "missing.safetensors";
    EXPECT_THROW(run_sweep(cfg), IoError);
    cfg = base_config(files, dir / "out");
    cfg.strategy = Strategy::Segmented;
    cfg.segments = {Segment::Early};
    write_file(files.pattern, pattern_to_json(toy_pattern(2)));
    EXPECT_THROW(run_sweep(cfg), ConfigError);
}

TEST(RunDecompose, WritesPatchedFile) {
    ScratchDir dir("decompose");
    const auto files = write_toy_model(dir.path(), small_fixture());
    DecomposeRequest req;
    req.weights_path = files.weights;
    req.pattern_path = files.pattern;
    req.strategy = Strategy::Segmented;
    req.segment = Segment::Last;
    req.kind = StackKind::Fc;
    req.method = Method::CP;
    req.rank = {16};
    req.out_path = dir / "patched.safetensors";
    const auto res = run_decompose(req);
    EXPECT_EQ(res.tensor_shape, (Shape{32, 8, 2}));
    const auto original = load_weights(files.weights);
    const auto patched = load_weights(req.out_path);
    EXPECT_EQ(patched.size(), original.size());
    EXPECT_EQ(patched.entry("head.weight").bytes, original.entry("head.weight").bytes);

    req.layer.reset();
    req.strategy = Strategy::PerLayer;
    EXPECT_THROW(run_decompose(req), ConfigError);
    req.layer = 0;
    req.method = Method::None;
    EXPECT_THROW(run_decompose(req), ConfigError);
}

TEST(Cli, ExitCodes) {
    ScratchDir dir("cli");
    const auto w = (dir / "w.safetensors").string();
    const auto p = (dir / "p.json").string();
    EXPECT_EQ(run_cli("gen-fixture --out " + w + " --layers 3 --dim 8 --pattern-out " + p), 0);
    const std::string base = "decompose --weights " + w + " --pattern " + p + " --out " +
                             (dir / "o.safetensors").string();
    EXPECT_EQ(run_cli(base + " --strategy per-layer --layer 1 --kind fc --method cp --rank 2"), 0);
    EXPECT_EQ(run_cli(base + " --strategy global --kind qkvo --method tucker --ranks-3 4,4,2"), 0);
    EXPECT_EQ(run_cli(base + " --strategy segment --segment last --kind fc --method svd --rank 1"), 0);
    EXPECT_EQ(run_cli(base + " --strategy per-layer --layer 1 --kind fc --method cp --rank 2 "
                             "--oracle-cmd 'exit 3'"),
              4);
    EXPECT_EQ(run_cli(base + " --strategy per-layer --layer 1 --kind fc --method cp --rank 2 "
                             "--oracle-cmd " + shell_quote(stub_oracle_cmd(w))),
              0);
    EXPECT_EQ(run_cli(base + " --strategy per-layer --kind fc --method cp --rank 2"), 2);
    EXPECT_EQ(run_cli(base + " --strategy diagonal --layer 0 --method cp --rank 2"), 2);
    EXPECT_EQ(run_cli(base + " --strategy per-layer --layer 0 --method cp"), 2);
    EXPECT_EQ(run_cli("decompose --bogus"), 2);
    EXPECT_EQ(run_cli("decompose --weights /nonexistent.safetensors --pattern " + p +
                      " --out /tmp/x --layer 0 --rank 1"),
              3);

    write_file(dir / "sweep.json", R"({"weights_path": "w.safetensors", "pattern_path": "p.json",
        "strategy": "PerLayer", "kind": "FC", "method": "CP", "ranks": [1, 2], "layers": [0],
        "out_dir": "report"})");
    EXPECT_EQ(run_cli("sweep --config " + (dir / "sweep.json").string()), 0);
    EXPECT_EQ(parse_csv(read_file(dir / "report" / "report.csv")).size(), 4u);
    write_file(dir / "bad.json", R"({"weights_path": "w.safetensors"})");
    EXPECT_EQ(run_cli("sweep --config " + (dir / "bad.json").string()), 2);
    EXPECT_EQ(run_cli("sweep --config " + (dir / "none.json").string()), 3);
}
