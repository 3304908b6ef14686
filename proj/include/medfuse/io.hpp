#pragma once

// File formats: input CSV, fit report (JSON and text), simulation summary and
// replicate CSVs, aggregated report tables, and the run manifest.

#include "medfuse/core.hpp"
#include "medfuse/inference.hpp"
#include "medfuse/simlab.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace medfuse {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kSummarySchema = 1;
inline constexpr int kReportSchema = 1;

// ---------------------------------------------------------------------------
// Input data
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    Matrix values;  // rows x header.size()

    Index column(const std::string& name) const;  // throws InvalidArgument when absent
};

// Header row required; numeric cells only. `source` prefixes error messages.
CsvTable parse_csv(std::istream& in, const std::string& source = "<input>");
CsvTable read_csv(const std::filesystem::path& path);

struct ColumnRoles {
    std::string outcome;
    std::string exposure;
    std::vector<std::string> mediators;
    std::vector<std::string> confounders;
};

// Assembles the dataset. An intercept column is prepended to C unless one of
// the named confounders is already constant and non-zero.
InternalDataset build_dataset(const CsvTable& table, const ColumnRoles& roles, bool* intercept_added = nullptr);

// ---------------------------------------------------------------------------
// Fit report
// ---------------------------------------------------------------------------

struct FitReport {
    std::string tool_version = kToolVersion;
    ColumnRoles roles;
    bool intercept_added = false;
    std::optional<ExternalSummary> external;
    std::string s2_spec = "eb";  // "eb" or the fixed value as given
    int bootstrap_B = 0;
    std::uint64_t seed = 0;
    EffectReport report;
};

nlohmann::json to_json(const FitReport& r);
FitReport fit_report_from_json(const nlohmann::json& j);
std::string format_fit_text(const FitReport& r);

// Doubles as JSON; non-finite values become the strings "inf", "-inf", "nan".
nlohmann::json json_number(double x);
double json_to_double(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Simulation output
// ---------------------------------------------------------------------------

std::string format_double(double x);  // %.17g, "nan"/"inf"/"-inf" for non-finite
double parse_double(const std::string& text, const std::string& context);

// First line: "# medfuse summary schema=1 seed=<seed> scenario=<id>", then a
// fixed header and one row per (method, effect).
void write_summary_csv(std::ostream& out, const ScenarioSummary& s);
ScenarioSummary read_summary_csv(std::istream& in, const std::string& source = "<summary>");

// Replicate-major, one row per (replicate, method). Wall time only when
// `timing` is set, since it differs run to run.
void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& reps, bool timing = false);
std::vector<ReplicateResult> read_replicates_csv(std::istream& in, const std::string& source = "<replicates>");

// Aggregated comparison over summaries: one row per (scenario, seed, method, effect).
void write_report_markdown(std::ostream& out, const std::vector<ScenarioSummary>& summaries);
void write_report_csv(std::ostream& out, const std::vector<ScenarioSummary>& summaries);

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
    std::string tool_version = kToolVersion;
    std::string command;
    std::string config_hash;  // SHA-256 of the canonical config
    std::uint64_t seed = 0;
    int workers = 1;
    std::string started_utc;
    std::string finished_utc;
    std::vector<std::pair<std::string, std::string>> inputs;   // path, SHA-256
    std::vector<std::pair<std::string, std::string>> outputs;  // path, SHA-256
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
std::string utc_timestamp();

// Whole-file helpers raising IoError.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace medfuse
