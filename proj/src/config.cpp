#include "medfuse/config.hpp"

#include "medfuse/error.hpp"
#include "medfuse/io.hpp"

#include <yaml-cpp/yaml.h>

#include <functional>
#include <sstream>

namespace medfuse {

namespace {

[[noreturn]] void bad(const std::string& field, const std::string& what) {
    throw Error(ErrorKind::ConfigError, "field '" + field + "': " + what);
}

std::string node_text(const YAML::Node& node) {
    YAML::Emitter e;
    e << YAML::Flow << node;
    return e.c_str();
}

template <class T>
T scalar(const YAML::Node& node, const std::string& field, const char* expected) {
    if (!node.IsScalar()) bad(field, std::string("expected ") + expected + ", got " + node_text(node));
    try {
        return node.as<T>();
    } catch (const YAML::BadConversion&) {
        bad(field, std::string("expected ") + expected + ", got '" + node.Scalar() + "'");
    }
}

long positive(const YAML::Node& node, const std::string& field) {
    const long v = scalar<long>(node, field, "an integer");
    if (v <= 0) bad(field, "must be positive, got " + std::to_string(v));
    return v;
}

long non_negative(const YAML::Node& node, const std::string& field) {
    const long v = scalar<long>(node, field, "an integer");
    if (v < 0) bad(field, "must be >= 0, got " + std::to_string(v));
    return v;
}

double real(const YAML::Node& node, const std::string& field) { return scalar<double>(node, field, "a number"); }

ThetaEMode theta_mode(const YAML::Node& node, const std::string& field) {
    if (node.IsScalar()) {
        if (node.Scalar() == "congenial") return ThetaEMode::congenial();
        bad(field, "expected 'congenial', {fixed: x} or {normal: {mean: m, variance: v}}, got '" + node.Scalar() +
                       "'");
    }
    if (node.IsMap() && node.size() == 1) {
        if (node["fixed"]) return ThetaEMode::fixed(real(node["fixed"], field + ".fixed"));
        if (const YAML::Node nrm = node["normal"]; nrm && nrm.IsMap()) {
            for (const auto& kv : nrm) {
                const std::string k = kv.first.as<std::string>();
                if (k != "mean" && k != "variance") bad(field + ".normal", "unknown key '" + k + "'");
            }
            if (!nrm["mean"] || !nrm["variance"]) bad(field + ".normal", "needs mean and variance");
            const double var = real(nrm["variance"], field + ".normal.variance");
            if (var < 0.0) bad(field + ".normal.variance", "must be >= 0");
            return ThetaEMode::random_normal(real(nrm["mean"], field + ".normal.mean"), var);
        }
    }
    bad(field, "expected 'congenial', {fixed: x} or {normal: {mean: m, variance: v}}, got " + node_text(node));
}

std::string theta_label(const ThetaEMode& m) {
    switch (m.kind) {
        case ThetaEMode::Kind::Congenial: return "congenial";
        case ThetaEMode::Kind::Fixed: return "fixed" + format_double(m.value);
        case ThetaEMode::Kind::RandomNormal:
            return "normal" + format_double(m.mean) + "v" + format_double(m.variance);
    }
    return "";
}

void set_soft(ScenarioConfig& c, const YAML::Node& node) {
    if (!node.IsMap()) bad("soft", "expected a mapping");
    for (const auto& kv : node) {
        const std::string k = kv.first.as<std::string>();
        const std::string f = "soft." + k;
        const YAML::Node& v = kv.second;
        if (k == "s2") {
            if (v.IsScalar() && v.Scalar() == "eb") {
                c.soft.s2_mode = SoftConfig::S2::EmpiricalBayes;
            } else {
                const double s2 = real(v, f);
                if (s2 < 0.0) bad(f, "must be 'eb' or a number >= 0");
                c.soft.s2_mode = SoftConfig::S2::Fixed;
                c.soft.s2_fixed = s2;
            }
        } else if (k == "eps_s2") {
            c.soft.eps_s2 = real(v, f);
        } else if (k == "em_tol") {
            c.soft.em_tol = real(v, f);
        } else if (k == "em_max_iter") {
            c.soft.em_max_iter = static_cast<int>(positive(v, f));
        } else if (k == "inner_ccd_tol") {
            c.soft.inner_ccd_tol = real(v, f);
        } else if (k == "inner_ccd_max_iter") {
            c.soft.inner_ccd_max_iter = static_cast<int>(positive(v, f));
        } else {
            bad(f, "unknown field");
        }
    }
}

void set_hard(ScenarioConfig& c, const YAML::Node& node) {
    if (!node.IsMap()) bad("hard", "expected a mapping");
    for (const auto& kv : node) {
        const std::string k = kv.first.as<std::string>();
        const std::string f = "hard." + k;
        if (k == "ccd_tol") {
            c.hard.ccd_tol = real(kv.second, f);
        } else if (k == "ccd_max_iter") {
            c.hard.ccd_max_iter = static_cast<int>(positive(kv.second, f));
        } else {
            bad(f, "unknown field");
        }
    }
}

struct Field {
    bool gridable;
    std::function<void(ScenarioConfig&, const YAML::Node&, const std::string&)> set;
};

const std::vector<std::pair<std::string, Field>>& fields() {
    using N = const YAML::Node&;
    using S = const std::string&;
    static const std::vector<std::pair<std::string, Field>> table = {
        {"id", {false, [](ScenarioConfig& c, N v, S f) { c.id = scalar<std::string>(v, f, "a string"); }}},
        {"n", {true, [](ScenarioConfig& c, N v, S f) { c.n = positive(v, f); }}},
        {"n_e_multiplier", {true, [](ScenarioConfig& c, N v, S f) { c.n_e_multiplier = positive(v, f); }}},
        {"p_m", {true, [](ScenarioConfig& c, N v, S f) { c.p_m = positive(v, f); }}},
        {"p_c", {true, [](ScenarioConfig& c, N v, S f) { c.p_c = non_negative(v, f); }}},
        {"rho", {true, [](ScenarioConfig& c, N v, S f) { c.rho = real(v, f); }}},
        {"alpha_active", {true, [](ScenarioConfig& c, N v, S f) { c.alpha_active = real(v, f); }}},
        {"alpha_active_count", {true, [](ScenarioConfig& c, N v, S f) { c.alpha_active_count = non_negative(v, f); }}},
        {"alpha_c_fill", {true, [](ScenarioConfig& c, N v, S f) { c.alpha_c_fill = real(v, f); }}},
        {"beta_m_pattern",
         {false,
          [](ScenarioConfig& c, N v, S f) {
              if (!v.IsSequence()) bad(f, "expected a list of [value, count] pairs");
              c.beta_m_pattern.clear();
              for (std::size_t i = 0; i < v.size(); ++i) {
                  const std::string fi = f + "[" + std::to_string(i) + "]";
                  if (!v[i].IsSequence() || v[i].size() != 2) bad(fi, "expected [value, count]");
                  c.beta_m_pattern.emplace_back(real(v[i][0], fi), non_negative(v[i][1], fi));
              }
          }}},
        {"beta_c_fill", {true, [](ScenarioConfig& c, N v, S f) { c.beta_c_fill = real(v, f); }}},
        {"r2_ac", {true, [](ScenarioConfig& c, N v, S f) { c.r2_ac = real(v, f); }}},
        {"r2_mac", {true, [](ScenarioConfig& c, N v, S f) { c.r2_mac = real(v, f); }}},
        {"within_block_corr", {true, [](ScenarioConfig& c, N v, S f) { c.within_block_corr = real(v, f); }}},
        {"across_block_corr", {true, [](ScenarioConfig& c, N v, S f) { c.across_block_corr = real(v, f); }}},
        {"sigma_m_blocks",
         {false,
          [](ScenarioConfig& c, N v, S f) {
              if (!v.IsSequence()) bad(f, "expected a list of block sizes");
              c.sigma_m_blocks.clear();
              for (std::size_t i = 0; i < v.size(); ++i) {
                  c.sigma_m_blocks.push_back(positive(v[i], f + "[" + std::to_string(i) + "]"));
              }
          }}},
        {"theta_i", {true, [](ScenarioConfig& c, N v, S f) { c.theta_i = real(v, f); }}},
        {"theta_e", {true, [](ScenarioConfig& c, N v, S f) { c.theta_e = theta_mode(v, f); }}},
        {"replicates", {true, [](ScenarioConfig& c, N v, S f) { c.replicates = static_cast<int>(positive(v, f)); }}},
        {"seed", {true, [](ScenarioConfig& c, N v, S f) { c.seed = scalar<std::uint64_t>(v, f, "an integer"); }}},
        {"bootstrap_B",
         {true, [](ScenarioConfig& c, N v, S f) { c.bootstrap_B = static_cast<int>(non_negative(v, f)); }}},
        {"level", {true, [](ScenarioConfig& c, N v, S f) { c.level = real(v, f); }}},
        {"external_exact_threshold",
         {false, [](ScenarioConfig& c, N v, S f) { c.external_exact_threshold = non_negative(v, f); }}},
        {"soft", {false, [](ScenarioConfig& c, N v, S) { set_soft(c, v); }}},
        {"hard", {false, [](ScenarioConfig& c, N v, S) { set_hard(c, v); }}},
    };
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& [name, f] : fields()) {
        if (name == key) return &f;
    }
    return nullptr;
}

std::string value_label(const std::string& key, const YAML::Node& node) {
    if (key == "theta_e") return theta_label(theta_mode(node, key));
    return node.IsScalar() ? node.Scalar() : node_text(node);
}

}  // namespace

std::vector<ScenarioConfig> parse_sim_config(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw Error(ErrorKind::ConfigError, "YAML syntax error at line " + std::to_string(e.mark.line + 1) + ": " +
                                                e.msg);
    }
    if (!root.IsMap()) throw Error(ErrorKind::ConfigError, "config must be a mapping of field names to values");

    struct Axis {
        std::string key;
        std::vector<YAML::Node> values;
    };
    std::vector<Axis> axes;
    for (const auto& kv : root) {
        const std::string key = kv.first.as<std::string>();
        const Field* f = find_field(key);
        if (!f) throw Error(ErrorKind::ConfigError, "field '" + key + "': unknown field");
        Axis axis{key, {}};
        if (f->gridable && kv.second.IsSequence()) {
            if (kv.second.size() == 0) bad(key, "empty value list");
            for (const YAML::Node& v : kv.second) axis.values.push_back(v);
        } else {
            axis.values.push_back(kv.second);
        }
        axes.push_back(std::move(axis));
    }

    std::size_t cells = 1;
    for (const Axis& a : axes) cells *= a.values.size();
    std::vector<ScenarioConfig> out;
    out.reserve(cells);
    for (std::size_t cell = 0; cell < cells; ++cell) {
        ScenarioConfig cfg;
        std::string suffix;
        std::size_t rem = cell;
        std::vector<std::size_t> pick(axes.size());
        for (std::size_t k = axes.size(); k-- > 0;) {
            pick[k] = rem % axes[k].values.size();
            rem /= axes[k].values.size();
        }
        for (std::size_t k = 0; k < axes.size(); ++k) {
            const YAML::Node& v = axes[k].values[pick[k]];
            find_field(axes[k].key)->set(cfg, v, axes[k].key);
            if (axes[k].values.size() > 1) suffix += "_" + axes[k].key + "-" + value_label(axes[k].key, v);
        }
        cfg.id += suffix;
        try {
            validate(cfg);
        } catch (const Error& e) {
            throw Error(ErrorKind::ConfigError, "cell '" + cfg.id + "': " + e.what());
        }
        out.push_back(std::move(cfg));
    }
    return out;
}

std::vector<ScenarioConfig> load_sim_config(const std::string& path) { return parse_sim_config(read_file(path)); }

std::string canonical_config(const ScenarioConfig& c) {
    std::ostringstream o;
    o << "id=" << c.id << "\nn=" << c.n << "\nn_e_multiplier=" << c.n_e_multiplier << "\np_m=" << c.p_m
      << "\np_c=" << c.p_c << "\nrho=" << format_double(c.rho) << "\nalpha_active=" << format_double(c.alpha_active)
      << "\nalpha_active_count=" << c.alpha_active_count << "\nalpha_c_fill=" << format_double(c.alpha_c_fill)
      << "\nbeta_m_pattern=";
    for (const auto& [v, k] : c.beta_m_pattern) o << format_double(v) << "x" << k << ";";
    o << "\nbeta_c_fill=" << format_double(c.beta_c_fill) << "\nr2_ac=" << format_double(c.r2_ac)
      << "\nr2_mac=" << format_double(c.r2_mac) << "\nwithin_block_corr=" << format_double(c.within_block_corr)
      << "\nacross_block_corr=" << format_double(c.across_block_corr) << "\nsigma_m_blocks=";
    for (Index b : c.sigma_m_blocks) o << b << ";";
    o << "\ntheta_i=" << format_double(c.theta_i) << "\ntheta_e=" << theta_label(c.theta_e)
      << "\nreplicates=" << c.replicates << "\nseed=" << c.seed << "\nbootstrap_B=" << c.bootstrap_B
      << "\nlevel=" << format_double(c.level) << "\nexternal_exact_threshold=" << c.external_exact_threshold
      << "\nsoft.s2=" << (c.soft.s2_mode == SoftConfig::S2::EmpiricalBayes ? "eb" : format_double(c.soft.s2_fixed))
      << "\nsoft.eps_s2=" << format_double(c.soft.eps_s2) << "\nsoft.em_tol=" << format_double(c.soft.em_tol)
      << "\nsoft.em_max_iter=" << c.soft.em_max_iter << "\nsoft.inner_ccd_tol=" << format_double(c.soft.inner_ccd_tol)
      << "\nsoft.inner_ccd_max_iter=" << c.soft.inner_ccd_max_iter << "\nhard.ccd_tol=" << format_double(c.hard.ccd_tol)
      << "\nhard.ccd_max_iter=" << c.hard.ccd_max_iter << "\n";
    return o.str();
}

std::string file_stem(const std::string& id) {
    std::string s = id;
    for (char& ch : s) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '.' ||
                        ch == '_' || ch == '-';
        if (!ok) ch = '_';
    }
    return s.empty() ? "scenario" : s;
}

}  // namespace medfuse
