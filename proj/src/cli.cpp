#include "medfuse/cli.hpp"

#include "medfuse/config.hpp"
#include "medfuse/estimators.hpp"
#include "medfuse/inference.hpp"
#include "medfuse/io.hpp"
#include "medfuse/simlab.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace medfuse {

namespace fs = std::filesystem;

namespace {

struct FitArgs {
    std::string data;
    std::string outcome;
    std::string exposure;
    std::vector<std::string> mediators;
    std::vector<std::string> confounders;
    std::optional<double> theta;
    std::optional<double> var;
    std::optional<long> n_e;
    std::string method = "unconstrained";
    std::string s2 = "eb";
    int bootstrap = 500;
    double level = 0.95;
    std::uint64_t seed = 0;
    int workers = 1;
    std::string out;
    bool json = false;
};

struct SimulateArgs {
    std::string config;
    std::string out;
    int workers = 0;
    std::optional<std::uint64_t> seed;
    bool timing = false;
};

struct ReportArgs {
    std::vector<std::string> paths;
    std::string out;
};

std::string command_line(int argc, const char* const* argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
    return s;
}

SoftConfig soft_config_from(const std::string& s2) {
    SoftConfig cfg;
    if (s2 == "eb") return cfg;
    const double v = parse_double(s2, "--s2");
    if (v < 0.0) throw Error(ErrorKind::InvalidArgument, "--s2 must be 'eb' or a number >= 0");
    return SoftConfig::fixed(v);
}

int cmd_fit(const FitArgs& a, std::ostream& out) {
    const Method method = parse_method(a.method);
    if (a.theta.has_value() != a.var.has_value()) {
        throw Error(ErrorKind::InvalidArgument, "--external-theta and --external-var must be given together");
    }
    if (method != Method::Unconstrained && !a.theta) {
        throw Error(ErrorKind::InvalidArgument, "method '" + a.method + "' needs --external-theta and --external-var");
    }
    const SoftConfig soft = soft_config_from(a.s2);
    const CsvTable table = read_csv(a.data);
    FitReport rep;
    rep.roles = {a.outcome, a.exposure, a.mediators, a.confounders};
    const InternalDataset data = build_dataset(table, rep.roles, &rep.intercept_added);
    if (a.theta) {
        ExternalSummary ext{*a.theta, *a.var, a.n_e};
        validate(ext);
        rep.external = ext;
    }
    rep.s2_spec = a.s2;
    rep.bootstrap_B = a.bootstrap;
    rep.seed = a.seed;

    InferenceOptions opts;
    opts.level = a.level;
    opts.bootstrap_B = a.bootstrap;
    opts.seed = a.seed;
    opts.workers = a.workers;
    rep.report = analyze(data, rep.external ? &*rep.external : nullptr, method, soft, HardConfig{}, opts);

    const std::string js = to_json(rep).dump(2) + "\n";
    if (!a.out.empty()) write_file(a.out, js);
    out << (a.json ? js : format_fit_text(rep));
    return kExitOk;
}

int cmd_simulate(const SimulateArgs& a, const std::string& cmdline, std::ostream& out, std::ostream& err) {
    RunManifest manifest;
    manifest.command = cmdline;
    manifest.started_utc = utc_timestamp();
    const std::string text = read_file(a.config);
    std::vector<ScenarioConfig> cells = parse_sim_config(text);
    if (a.seed) {
        for (ScenarioConfig& c : cells) c.seed = *a.seed;
    }
    const int workers = a.workers > 0 ? a.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create " + a.out + ": " + ec.message());

    std::string canonical;
    for (const ScenarioConfig& c : cells) canonical += canonical_config(c) + "---\n";
    manifest.config_hash = sha256_hex(canonical);
    manifest.seed = a.seed ? *a.seed : cells.front().seed;
    manifest.workers = workers;
    manifest.inputs.emplace_back(a.config, sha256_hex(text));

    for (const ScenarioConfig& cfg : cells) {
        const ScenarioResult res = run_scenario(cfg, workers);
        const std::string stem = file_stem(cfg.id);
        std::ostringstream summary, reps;
        write_summary_csv(summary, res.summary);
        write_replicates_csv(reps, res.replicates, a.timing);
        const fs::path sp = fs::path(a.out) / (stem + ".summary.csv");
        const fs::path rp = fs::path(a.out) / (stem + ".replicates.csv");
        write_file(sp, summary.str());
        write_file(rp, reps.str());
        manifest.outputs.emplace_back(sp.string(), sha256_hex(summary.str()));
        manifest.outputs.emplace_back(rp.string(), sha256_hex(reps.str()));
        for (const std::string& w : res.summary.warnings) err << "warning [" << cfg.id << "]: " << w << "\n";
        out << cfg.id << ": " << cfg.replicates << " replicates -> " << sp.string() << "\n";
    }
    manifest.finished_utc = utc_timestamp();
    write_file(fs::path(a.out) / "manifest.json", to_json(manifest).dump(2) + "\n");
    return kExitOk;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
    std::vector<ScenarioSummary> summaries;
    for (const std::string& p : a.paths) {
        std::istringstream in(read_file(p));
        summaries.push_back(read_summary_csv(in, p));
    }
    std::ostringstream md, csv;
    write_report_markdown(md, summaries);
    write_report_csv(csv, summaries);
    if (a.out.empty()) {
        out << md.str();
        return kExitOk;
    }
    const fs::path target(a.out);
    fs::path csv_path = target;
    csv_path.replace_extension(".csv");
    if (csv_path == target) csv_path += ".csv";
    write_file(target, md.str());
    write_file(csv_path, csv.str());
    out << "wrote " << target.string() << " and " << csv_path.string() << "\n";
    return kExitOk;
}

}  // namespace

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NoConvergence: return kExitConvergence;
        case ErrorKind::IoError: return kExitIo;
        default: return kExitValidation;
    }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mediation analysis with an external total-effect summary", "medfuse"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    FitArgs fa;
    CLI::App* fit = app.add_subcommand("fit", "Fit one mediation model to a CSV file");
    fit->add_option("--data", fa.data, "input CSV with a header row")->required();
    fit->add_option("--outcome", fa.outcome, "outcome column")->required();
    fit->add_option("--exposure", fa.exposure, "exposure column")->required();
    fit->add_option("--mediators", fa.mediators, "mediator columns")->required()->delimiter(',');
    fit->add_option("--confounders", fa.confounders, "confounder columns (an intercept is added if absent)")
        ->delimiter(',');
    fit->add_option("--external-theta", fa.theta, "external total-effect estimate");
    fit->add_option("--external-var", fa.var, "variance of the external estimate")->check(CLI::PositiveNumber);
    fit->add_option("--external-n", fa.n_e, "external sample size (informational)");
    fit->add_option("--method", fa.method, "unconstrained, hard or soft")
        ->check(CLI::IsMember({"unconstrained", "hard", "soft"}))
        ->capture_default_str();
    fit->add_option("--s2", fa.s2, "soft-constraint scale: eb or a number")->capture_default_str();
    fit->add_option("--bootstrap", fa.bootstrap, "bootstrap replicates for soft NDE/TE intervals (0 disables)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    fit->add_option("--level", fa.level, "confidence level")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    fit->add_option("--seed", fa.seed, "random seed")->capture_default_str();
    fit->add_option("--workers", fa.workers, "bootstrap threads")->check(CLI::PositiveNumber)->capture_default_str();
    fit->add_option("--out", fa.out, "write the JSON report here");
    fit->add_flag("--json", fa.json, "print JSON instead of text");

    SimulateArgs sa;
    CLI::App* sim = app.add_subcommand("simulate", "Run a simulation grid");
    sim->add_option("--config", sa.config, "YAML grid config")->required();
    sim->add_option("--out", sa.out, "output directory")->required();
    sim->add_option("--workers", sa.workers, "threads (0: all cores)")->check(CLI::NonNegativeNumber);
    sim->add_option("--seed", sa.seed, "overrides the seed of every cell");
    sim->add_flag("--timing", sa.timing, "add per-replicate wall time to the replicate CSV");

    ReportArgs ra;
    CLI::App* rep = app.add_subcommand("report", "Aggregate summary CSVs into one table");
    rep->add_option("summaries", ra.paths, "summary CSV files")->required();
    rep->add_option("--out", ra.out, "markdown output; a CSV with the same stem is written next to it");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*fit) return cmd_fit(fa, out);
        if (*sim) return cmd_simulate(sa, command_line(argc, argv), out, err);
        if (*rep) return cmd_report(ra, out);
    } catch (const Error& e) {
        err << "medfuse: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "medfuse: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitValidation;
}

}  // namespace medfuse
