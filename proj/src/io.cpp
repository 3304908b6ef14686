#include "medfuse/io.hpp"

#include "medfuse/error.hpp"

#include <boost/tokenizer.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace medfuse {

using nlohmann::json;

namespace {

constexpr const char* kSummaryColumns[] = {"scenario_id", "method",     "effect",   "truth",
                                           "mean_est",    "rmse",       "rel_rmse_vs_unconstrained",
                                           "coverage",    "mean_ci_length", "n_replicates", "n_failed"};

constexpr const char* kReplicateColumns[] = {
    "replicate",  "method",     "converged", "error",    "nde",          "nde_lower",   "nde_upper",
    "nde_avar",   "nie",        "nie_lower", "nie_upper", "nie_avar",    "te",          "te_lower",
    "te_upper",   "te_avar",    "bootstrap_var_nde",      "theta_e_hat", "var_theta_e", "s2_used",
    "iterations", "wald_p"};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line, const std::string& context) {
    using Sep = boost::escaped_list_separator<char>;
    try {
        boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
        std::vector<std::string> out;
        for (const std::string& cell : tok) out.push_back(cell);
        return out;
    } catch (const boost::escaped_list_error& e) {
        throw Error(ErrorKind::ParseError, context + ": malformed CSV (" + e.what() + ")");
    }
}

std::string quote_csv(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '\\' || ch == '"') out += '\\';
        if (ch == '\n') {
            out += "\\n";
            continue;
        }
        out += ch;
    }
    return out + "\"";
}

// Reads non-empty lines, dropping a UTF-8 byte-order mark and carriage returns.
std::vector<std::pair<long, std::string>> read_lines(std::istream& in) {
    std::vector<std::pair<long, std::string>> lines;
    std::string line;
    long number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (number == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        lines.emplace_back(number, line);
    }
    return lines;
}

long parse_long(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        throw Error(ErrorKind::ParseError, context + ": expected an integer, got '" + text + "'");
    }
    return v;
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Index j = 0; j < m.cols(); ++j) row.push_back(json_number(m(i, j)));
        rows.push_back(row);
    }
    return rows;
}

json vector_json(const Vector& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(json_number(v(i)));
    return out;
}

Vector json_vector(const json& j) {
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = json_to_double(j[i]);
    return v;
}

Matrix json_matrix(const json& j, Index cols_if_empty) {
    const Index rows = static_cast<Index>(j.size());
    const Index cols = rows > 0 ? static_cast<Index>(j[0].size()) : cols_if_empty;
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        if (static_cast<Index>(j[i].size()) != cols) throw Error(ErrorKind::ParseError, "ragged matrix in JSON");
        for (Index k = 0; k < cols; ++k) m(i, k) = json_to_double(j[i][k]);
    }
    return m;
}

json optional_number(const std::optional<double>& x) { return x ? json_number(*x) : json(nullptr); }

std::optional<double> number_or_null(const json& j) {
    if (j.is_null()) return std::nullopt;
    return json_to_double(j);
}

json interval_json(const std::optional<IntervalEstimate>& ci) {
    if (!ci) return nullptr;
    return json{{"lower", json_number(ci->lower)},
                {"upper", json_number(ci->upper)},
                {"level", json_number(ci->level)},
                {"kind", std::string(to_string(ci->kind))},
                {"length", json_number(ci->length())}};
}

std::optional<IntervalEstimate> interval_from_json(const json& j) {
    if (j.is_null()) return std::nullopt;
    IntervalEstimate ci;
    ci.lower = json_to_double(j.at("lower"));
    ci.upper = json_to_double(j.at("upper"));
    ci.level = json_to_double(j.at("level"));
    ci.kind = parse_interval_kind(j.at("kind").get<std::string>());
    return ci;
}

json fit_json(const MediationFit& f) {
    return json{{"method", std::string(to_string(f.method))},
                {"alpha_a", vector_json(f.alpha_a)},
                {"alpha_c", matrix_json(f.alpha_c)},
                {"sigma_m", matrix_json(f.sigma_m)},
                {"beta_a", json_number(f.beta_a)},
                {"beta_m", vector_json(f.beta_m)},
                {"beta_c", vector_json(f.beta_c)},
                {"sigma_e2", json_number(f.sigma_e2)},
                {"te", json_number(f.te)},
                {"loglik", json_number(f.loglik)},
                {"s2_used", optional_number(f.s2_used)},
                {"iterations", f.iterations}};
}

MediationFit fit_from_json(const json& j) {
    MediationFit f;
    f.method = parse_method(j.at("method").get<std::string>());
    f.alpha_a = json_vector(j.at("alpha_a"));
    f.alpha_c = json_matrix(j.at("alpha_c"), 0);
    f.sigma_m = json_matrix(j.at("sigma_m"), 0);
    f.beta_a = json_to_double(j.at("beta_a"));
    f.beta_m = json_vector(j.at("beta_m"));
    f.beta_c = json_vector(j.at("beta_c"));
    f.sigma_e2 = json_to_double(j.at("sigma_e2"));
    f.te = json_to_double(j.at("te"));
    f.loglik = json_to_double(j.at("loglik"));
    f.s2_used = number_or_null(j.at("s2_used"));
    f.iterations = j.at("iterations").get<int>();
    return f;
}

std::string fixed(double x, int digits = 4) {
    if (!std::isfinite(x)) return format_double(x);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

std::string general(double x) {
    if (!std::isfinite(x)) return format_double(x);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Input data
// ---------------------------------------------------------------------------

Index CsvTable::column(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] == name) return static_cast<Index>(j);
    }
    throw Error(ErrorKind::InvalidArgument, "column '" + name + "' not found");
}

CsvTable parse_csv(std::istream& in, const std::string& source) {
    const auto lines = read_lines(in);
    if (lines.empty()) throw Error(ErrorKind::ParseError, source + ": empty file, a header row is required");
    CsvTable t;
    for (std::string& h : split_csv_line(lines[0].second, source + ": line " + std::to_string(lines[0].first))) {
        t.header.push_back(trim(h));
    }
    std::set<std::string> seen;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        if (t.header[j].empty()) {
            throw Error(ErrorKind::ParseError, source + ": header column " + std::to_string(j + 1) + " is empty");
        }
        if (!seen.insert(t.header[j]).second) {
            throw Error(ErrorKind::ParseError, source + ": duplicate header '" + t.header[j] + "'");
        }
    }
    const Index cols = static_cast<Index>(t.header.size());
    t.values.resize(static_cast<Index>(lines.size()) - 1, cols);
    for (std::size_t r = 1; r < lines.size(); ++r) {
        const std::string where = source + ": line " + std::to_string(lines[r].first);
        const std::vector<std::string> cells = split_csv_line(lines[r].second, where);
        if (static_cast<Index>(cells.size()) != cols) {
            throw Error(ErrorKind::ParseError, where + ": expected " + std::to_string(cols) + " fields, found " +
                                                   std::to_string(cells.size()));
        }
        for (Index j = 0; j < cols; ++j) {
            const std::string ctx = where + ", column " + std::to_string(j + 1) + " ('" + t.header[j] + "')";
            if (trim(cells[j]).empty()) throw Error(ErrorKind::ParseError, ctx + ": missing value");
            const double v = parse_double(cells[j], ctx);
            if (!std::isfinite(v)) throw Error(ErrorKind::ParseError, ctx + ": non-finite value");
            t.values(static_cast<Index>(r) - 1, j) = v;
        }
    }
    return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    return parse_csv(in, path.string());
}

InternalDataset build_dataset(const CsvTable& table, const ColumnRoles& roles, bool* intercept_added) {
    std::vector<std::string> all = {roles.outcome, roles.exposure};
    all.insert(all.end(), roles.mediators.begin(), roles.mediators.end());
    all.insert(all.end(), roles.confounders.begin(), roles.confounders.end());
    std::set<std::string> seen;
    for (const std::string& name : all) {
        if (name.empty()) throw Error(ErrorKind::InvalidArgument, "empty column name");
        if (!seen.insert(name).second) throw Error(ErrorKind::InvalidArgument, "column '" + name + "' used twice");
        table.column(name);
    }
    if (roles.mediators.empty()) throw Error(ErrorKind::InvalidArgument, "at least one mediator column is required");

    InternalDataset d;
    const Index n = table.values.rows();
    d.y = table.values.col(table.column(roles.outcome));
    d.a = table.values.col(table.column(roles.exposure));
    d.m.resize(n, static_cast<Index>(roles.mediators.size()));
    for (std::size_t j = 0; j < roles.mediators.size(); ++j) {
        d.m.col(static_cast<Index>(j)) = table.values.col(table.column(roles.mediators[j]));
    }
    Matrix c(n, static_cast<Index>(roles.confounders.size()));
    for (std::size_t j = 0; j < roles.confounders.size(); ++j) {
        c.col(static_cast<Index>(j)) = table.values.col(table.column(roles.confounders[j]));
    }
    const bool add = n == 0 || !intercept_column(c).has_value();
    if (add) {
        d.c.resize(n, c.cols() + 1);
        d.c.col(0).setOnes();
        d.c.rightCols(c.cols()) = c;
    } else {
        d.c = c;
    }
    if (intercept_added) *intercept_added = add;
    return d;
}

// ---------------------------------------------------------------------------
// Fit report
// ---------------------------------------------------------------------------

json json_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return x;
}

double json_to_double(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw Error(ErrorKind::ParseError, "expected a number, got " + j.dump());
}

json to_json(const FitReport& r) {
    const EffectReport& e = r.report;
    json j;
    j["schema"] = kReportSchema;
    j["tool_version"] = r.tool_version;
    j["method"] = std::string(to_string(e.method));
    j["columns"] = {{"outcome", r.roles.outcome},
                    {"exposure", r.roles.exposure},
                    {"mediators", r.roles.mediators},
                    {"confounders", r.roles.confounders}};
    j["intercept_added"] = r.intercept_added;
    j["external"] = r.external ? json{{"theta_hat", json_number(r.external->theta_hat)},
                                      {"var_theta_hat", json_number(r.external->var_theta_hat)},
                                      {"n_e", r.external->n_e ? json(*r.external->n_e) : json(nullptr)}}
                               : json(nullptr);
    j["s2"] = r.s2_spec;
    j["bootstrap_B"] = r.bootstrap_B;
    j["seed"] = r.seed;
    j["n"] = e.n;
    j["estimates"] = {{"nde", json_number(e.point.nde)}, {"nie", json_number(e.point.nie)},
                      {"te", json_number(e.point.te)}};
    j["intervals"] = {{"nde", interval_json(e.nde_ci)}, {"nie", interval_json(e.nie_ci)},
                      {"te", interval_json(e.te_ci)}};
    j["bootstrap_var_nde"] = optional_number(e.bootstrap_var_nde);
    j["avar"] = {{"nde", optional_number(e.avar.avar_nde)},
                 {"nie", json_number(e.avar.avar_nie)},
                 {"te", optional_number(e.avar.avar_te)},
                 {"partial_r2", json_number(e.avar.partial_r2)},
                 {"method", std::string(to_string(e.avar.method))}};
    j["wald"] = {{"statistic", json_number(e.wald.statistic)},
                 {"dof", e.wald.dof},
                 {"p_value", json_number(e.wald.p_value)}};
    j["partial_r2"] = json_number(e.partial_r2);
    j["sigma_a2"] = json_number(e.sigma_a2);
    j["fit"] = fit_json(e.fit);
    j["warnings"] = e.warnings;
    return j;
}

FitReport fit_report_from_json(const json& j) {
    try {
        if (j.at("schema").get<int>() != kReportSchema) {
            throw Error(ErrorKind::SchemaMismatch, "fit report schema " + j.at("schema").dump() + " is not supported");
        }
        FitReport r;
        r.tool_version = j.at("tool_version").get<std::string>();
        const json& cols = j.at("columns");
        r.roles.outcome = cols.at("outcome").get<std::string>();
        r.roles.exposure = cols.at("exposure").get<std::string>();
        r.roles.mediators = cols.at("mediators").get<std::vector<std::string>>();
        r.roles.confounders = cols.at("confounders").get<std::vector<std::string>>();
        r.intercept_added = j.at("intercept_added").get<bool>();
        if (!j.at("external").is_null()) {
            const json& x = j.at("external");
            ExternalSummary ext;
            ext.theta_hat = json_to_double(x.at("theta_hat"));
            ext.var_theta_hat = json_to_double(x.at("var_theta_hat"));
            if (!x.at("n_e").is_null()) ext.n_e = x.at("n_e").get<long>();
            r.external = ext;
        }
        r.s2_spec = j.at("s2").get<std::string>();
        r.bootstrap_B = j.at("bootstrap_B").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();

        EffectReport& e = r.report;
        e.method = parse_method(j.at("method").get<std::string>());
        e.n = j.at("n").get<Index>();
        e.point = {json_to_double(j.at("estimates").at("nde")), json_to_double(j.at("estimates").at("nie")),
                   json_to_double(j.at("estimates").at("te"))};
        e.nde_ci = interval_from_json(j.at("intervals").at("nde"));
        e.nie_ci = interval_from_json(j.at("intervals").at("nie"));
        e.te_ci = interval_from_json(j.at("intervals").at("te"));
        e.bootstrap_var_nde = number_or_null(j.at("bootstrap_var_nde"));
        const json& av = j.at("avar");
        e.avar.avar_nde = number_or_null(av.at("nde"));
        e.avar.avar_nie = json_to_double(av.at("nie"));
        e.avar.avar_te = number_or_null(av.at("te"));
        e.avar.partial_r2 = json_to_double(av.at("partial_r2"));
        e.avar.method = parse_method(av.at("method").get<std::string>());
        e.wald.statistic = json_to_double(j.at("wald").at("statistic"));
        e.wald.dof = j.at("wald").at("dof").get<int>();
        e.wald.p_value = json_to_double(j.at("wald").at("p_value"));
        e.partial_r2 = json_to_double(j.at("partial_r2"));
        e.sigma_a2 = json_to_double(j.at("sigma_a2"));
        e.fit = fit_from_json(j.at("fit"));
        e.warnings = j.at("warnings").get<std::vector<std::string>>();
        return r;
    } catch (const json::exception& ex) {
        throw Error(ErrorKind::ParseError, std::string("fit report: ") + ex.what());
    }
}

std::string format_fit_text(const FitReport& r) {
    const EffectReport& e = r.report;
    std::ostringstream o;
    o << "medfuse fit (" << to_string(e.method) << ")\n";
    o << "n = " << e.n << ", mediators = " << r.roles.mediators.size()
      << ", confounder columns = " << e.fit.beta_c.size() << (r.intercept_added ? " (intercept added)" : "")
      << "\n";
    if (r.external) {
        o << "external TE = " << general(r.external->theta_hat)
          << ", variance = " << general(r.external->var_theta_hat);
        if (r.external->n_e) o << ", n_E = " << *r.external->n_e;
        o << "\n";
    }
    if (e.fit.s2_used) o << "s2 = " << general(*e.fit.s2_used) << " (" << r.s2_spec << ")\n";
    o << "\n" << pad("effect", 8) << pad("estimate", 12) << pad("lower", 12) << pad("upper", 12) << pad("length", 12)
      << "interval\n";
    const auto line = [&](const char* name, double est, const std::optional<IntervalEstimate>& ci) {
        o << pad(name, 8) << pad(fixed(est), 12);
        if (ci) {
            o << pad(fixed(ci->lower), 12) << pad(fixed(ci->upper), 12) << pad(fixed(ci->length()), 12)
              << to_string(ci->kind) << " " << fixed(100.0 * ci->level, 1) << "%";
        } else {
            o << pad("-", 12) << pad("-", 12) << pad("-", 12) << "none";
        }
        o << "\n";
    };
    line("NDE", e.point.nde, e.nde_ci);
    line("NIE", e.point.nie, e.nie_ci);
    line("TE", e.point.te, e.te_ci);
    o << "\nWald test of no mediation: statistic = " << general(e.wald.statistic) << ", df = " << e.wald.dof
      << ", p = " << general(e.wald.p_value) << "\n";
    o << "estimated partial R2 of the mediators = " << fixed(e.partial_r2) << "\n";
    for (const std::string& w : e.warnings) o << "warning: " << w << "\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Simulation output
// ---------------------------------------------------------------------------

std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_double(const std::string& text, const std::string& context) {
    std::string t = trim(text);
    if (!t.empty() && t[0] == '+') t.erase(0, 1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        throw Error(ErrorKind::ParseError, context + ": cannot parse '" + text + "' as a number");
    }
    return v;
}

void write_summary_csv(std::ostream& out, const ScenarioSummary& s) {
    out << "# medfuse summary schema=" << kSummarySchema << " seed=" << s.seed << " scenario=" << s.scenario_id
        << "\n";
    for (std::size_t i = 0; i < std::size(kSummaryColumns); ++i) out << (i ? "," : "") << kSummaryColumns[i];
    out << "\n";
    for (const SummaryRow& r : s.rows) {
        out << quote_csv(r.scenario_id) << "," << to_string(r.method) << "," << r.effect << ","
            << format_double(r.truth) << "," << format_double(r.mean_est) << "," << format_double(r.rmse) << ","
            << format_double(r.rel_rmse_vs_unconstrained) << "," << format_double(r.coverage) << ","
            << format_double(r.mean_ci_length) << "," << r.n_replicates << "," << r.n_failed << "\n";
    }
}

ScenarioSummary read_summary_csv(std::istream& in, const std::string& source) {
    const auto lines = read_lines(in);
    if (lines.size() < 2) throw Error(ErrorKind::SchemaMismatch, source + ": missing summary preamble or header");
    const std::string& pre = lines[0].second;
    const std::string tag = "# medfuse summary ";
    if (pre.rfind(tag, 0) != 0) throw Error(ErrorKind::SchemaMismatch, source + ": not a medfuse summary file");

    ScenarioSummary s;
    std::map<std::string, std::string> kv;
    std::istringstream words(pre.substr(tag.size()));
    std::string word;
    while (words >> word) {
        const auto eq = word.find('=');
        if (eq != std::string::npos) kv[word.substr(0, eq)] = word.substr(eq + 1);
    }
    if (kv["schema"] != std::to_string(kSummarySchema)) {
        throw Error(ErrorKind::SchemaMismatch, source + ": summary schema '" + kv["schema"] + "', expected " +
                                                   std::to_string(kSummarySchema));
    }
    s.seed = std::stoull(kv.count("seed") ? kv["seed"] : "0");
    // The scenario id may contain spaces; it runs to the end of the preamble.
    const auto at = pre.find(" scenario=");
    s.scenario_id = at == std::string::npos ? "" : pre.substr(at + 10);

    const auto header = split_csv_line(lines[1].second, source);
    if (header.size() != std::size(kSummaryColumns) ||
        !std::equal(header.begin(), header.end(), std::begin(kSummaryColumns))) {
        throw Error(ErrorKind::SchemaMismatch, source + ": unexpected summary columns");
    }
    for (std::size_t i = 2; i < lines.size(); ++i) {
        const std::string where = source + ": line " + std::to_string(lines[i].first);
        const auto c = split_csv_line(lines[i].second, where);
        if (c.size() != std::size(kSummaryColumns)) throw Error(ErrorKind::ParseError, where + ": wrong field count");
        SummaryRow r;
        r.scenario_id = c[0];
        r.method = parse_sim_method(c[1]);
        r.effect = c[2];
        r.truth = parse_double(c[3], where);
        r.mean_est = parse_double(c[4], where);
        r.rmse = parse_double(c[5], where);
        r.rel_rmse_vs_unconstrained = parse_double(c[6], where);
        r.coverage = parse_double(c[7], where);
        r.mean_ci_length = parse_double(c[8], where);
        r.n_replicates = parse_long(c[9], where);
        r.n_failed = parse_long(c[10], where);
        s.rows.push_back(r);
    }
    return s;
}

void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& reps, bool timing) {
    for (std::size_t i = 0; i < std::size(kReplicateColumns); ++i) out << (i ? "," : "") << kReplicateColumns[i];
    out << (timing ? ",seconds\n" : "\n");
    for (const ReplicateResult& r : reps) {
        out << r.replicate << "," << to_string(r.method) << "," << (r.converged ? 1 : 0) << "," << quote_csv(r.error);
        for (const EffectRecord* e : {&r.nde, &r.nie, &r.te}) {
            out << "," << format_double(e->estimate) << "," << format_double(e->lower) << ","
                << format_double(e->upper) << "," << format_double(e->avar);
        }
        out << "," << format_double(r.bootstrap_var_nde) << "," << format_double(r.theta_e_hat) << ","
            << format_double(r.var_theta_e) << "," << format_double(r.s2_used) << "," << r.iterations << ","
            << format_double(r.wald_p);
        if (timing) out << "," << format_double(r.seconds);
        out << "\n";
    }
}

std::vector<ReplicateResult> read_replicates_csv(std::istream& in, const std::string& source) {
    const auto lines = read_lines(in);
    if (lines.empty()) throw Error(ErrorKind::SchemaMismatch, source + ": missing header");
    const auto header = split_csv_line(lines[0].second, source);
    const std::size_t base = std::size(kReplicateColumns);
    const bool timing = header.size() == base + 1 && header.back() == "seconds";
    if ((header.size() != base && !timing) ||
        !std::equal(std::begin(kReplicateColumns), std::end(kReplicateColumns), header.begin())) {
        throw Error(ErrorKind::SchemaMismatch, source + ": unexpected replicate columns");
    }
    std::vector<ReplicateResult> reps;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = source + ": line " + std::to_string(lines[i].first);
        const auto c = split_csv_line(lines[i].second, where);
        if (c.size() != header.size()) throw Error(ErrorKind::ParseError, where + ": wrong field count");
        ReplicateResult r;
        r.replicate = parse_long(c[0], where);
        r.method = parse_sim_method(c[1]);
        r.converged = parse_long(c[2], where) != 0;
        r.error = c[3];
        std::size_t k = 4;
        for (EffectRecord* e : {&r.nde, &r.nie, &r.te}) {
            e->estimate = parse_double(c[k++], where);
            e->lower = parse_double(c[k++], where);
            e->upper = parse_double(c[k++], where);
            e->avar = parse_double(c[k++], where);
        }
        r.bootstrap_var_nde = parse_double(c[k++], where);
        r.theta_e_hat = parse_double(c[k++], where);
        r.var_theta_e = parse_double(c[k++], where);
        r.s2_used = parse_double(c[k++], where);
        r.iterations = static_cast<int>(parse_long(c[k++], where));
        r.wald_p = parse_double(c[k++], where);
        if (timing) r.seconds = parse_double(c[k++], where);
        reps.push_back(r);
    }
    return reps;
}

void write_report_markdown(std::ostream& out, const std::vector<ScenarioSummary>& summaries) {
    out << "| scenario | seed | method | effect | truth | mean | RMSE | relative RMSE | coverage | mean CI length | "
           "replicates | failed |\n";
    out << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const ScenarioSummary& s : summaries) {
        for (const SummaryRow& r : s.rows) {
            out << "| " << r.scenario_id << " | " << s.seed << " | " << to_string(r.method) << " | " << r.effect
                << " | " << fixed(r.truth) << " | " << fixed(r.mean_est) << " | " << fixed(r.rmse) << " | "
                << fixed(r.rel_rmse_vs_unconstrained, 3) << " | " << fixed(r.coverage, 3) << " | "
                << fixed(r.mean_ci_length) << " | " << r.n_replicates << " | " << r.n_failed << " |\n";
        }
    }
}

void write_report_csv(std::ostream& out, const std::vector<ScenarioSummary>& summaries) {
    out << "scenario_id,seed,method,effect,truth,mean_est,rmse,rel_rmse_vs_unconstrained,coverage,mean_ci_length,"
           "n_replicates,n_failed\n";
    for (const ScenarioSummary& s : summaries) {
        for (const SummaryRow& r : s.rows) {
            out << quote_csv(r.scenario_id) << "," << s.seed << "," << to_string(r.method) << "," << r.effect << ","
                << format_double(r.truth) << "," << format_double(r.mean_est) << "," << format_double(r.rmse) << ","
                << format_double(r.rel_rmse_vs_unconstrained) << "," << format_double(r.coverage) << ","
                << format_double(r.mean_ci_length) << "," << r.n_replicates << "," << r.n_failed << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorKind::IoError, "SHA-256 computation failed");
    }
    std::ostringstream o;
    for (unsigned int i = 0; i < len; ++i) o << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return o.str();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

json to_json(const RunManifest& m) {
    const auto pairs = [](const std::vector<std::pair<std::string, std::string>>& v) {
        json a = json::array();
        for (const auto& [path, digest] : v) a.push_back({{"path", path}, {"sha256", digest}});
        return a;
    };
    return json{{"tool_version", m.tool_version}, {"command", m.command},      {"config_sha256", m.config_hash},
                {"seed", m.seed},                 {"workers", m.workers},      {"started_utc", m.started_utc},
                {"finished_utc", m.finished_utc}, {"inputs", pairs(m.inputs)}, {"outputs", pairs(m.outputs)}};
}

RunManifest manifest_from_json(const json& j) {
    try {
        RunManifest m;
        m.tool_version = j.at("tool_version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.config_hash = j.at("config_sha256").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.workers = j.at("workers").get<int>();
        m.started_utc = j.at("started_utc").get<std::string>();
        m.finished_utc = j.at("finished_utc").get<std::string>();
        for (const json& x : j.at("inputs")) m.inputs.emplace_back(x.at("path"), x.at("sha256"));
        for (const json& x : j.at("outputs")) m.outputs.emplace_back(x.at("path"), x.at("sha256"));
        return m;
    } catch (const json::exception& ex) {
        throw Error(ErrorKind::ParseError, std::string("manifest: ") + ex.what());
    }
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::ostringstream o;
    o << in.rdbuf();
    return o.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    out << bytes;
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace medfuse
