#pragma once

// File formats: subject-level dataset CSV, run configuration JSON, and the
// results / coherence-point CSVs.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "platformtrial/estimators.hpp"
#include "platformtrial/simulator.hpp"
#include "platformtrial/trial_model.hpp"

namespace platformtrial {

inline constexpr std::string_view kToolVersion = "1.0.0";

/// Malformed input file; the message names the line or field.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

inline std::optional<double> parse_double(std::string_view s) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return value;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return value;
}

}  // namespace detail

/// Reads `stage,group,outcome` rows (header required, column order free,
/// extra columns ignored). Stages must be numbered 1..S with both arms present.
inline TrialData read_dataset(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::size_t> col_stage, col_group, col_outcome;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto header = detail::split_csv_line(line);
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == "stage") col_stage = i;
            if (header[i] == "group") col_group = i;
            if (header[i] == "outcome") col_outcome = i;
        }
        break;
    }
    if (!col_stage || !col_group || !col_outcome) {
        throw InputError("dataset header must contain columns stage, group, outcome");
    }
    const std::size_t min_fields = std::max({*col_stage, *col_group, *col_outcome}) + 1;
    std::map<std::int64_t, StageData> stages;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        const auto fields = detail::split_csv_line(line);
        if (fields.size() < min_fields) throw InputError(where + "too few fields");
        const auto stage = detail::parse_int(fields[*col_stage]);
        if (!stage || *stage < 1) {
            throw InputError(where + "unknown stage label '" + std::string(fields[*col_stage]) + "'");
        }
        const auto outcome = detail::parse_double(fields[*col_outcome]);
        if (!outcome || !std::isfinite(*outcome)) {
            throw InputError(where + "outcome is not a finite number");
        }
        const std::string_view group = fields[*col_group];
        if (group == "T") {
            stages[*stage].treatment.push_back(*outcome);
        } else if (group == "P") {
            stages[*stage].placebo.push_back(*outcome);
        } else {
            throw InputError(where + "unknown group label '" + std::string(group) + "' (expected T or P)");
        }
    }
    if (stages.empty()) throw InputError("dataset has no rows");
    TrialData data;
    std::int64_t expected = 1;
    for (auto& [label, st] : stages) {
        if (label != expected) {
            throw InputError("stage labels must be 1..S without gaps; stage " + std::to_string(expected) +
                             " is missing");
        }
        if (st.placebo.empty() || st.treatment.empty()) {
            throw InputError("stage " + std::to_string(label) + " is missing one arm");
        }
        data.stages.push_back(std::move(st));
        ++expected;
    }
    return data;
}

inline void write_dataset(std::ostream& out, const TrialData& data) {
    out << "stage,group,outcome\n";
    char buf[64];
    for (std::size_t s = 0; s < data.stages.size(); ++s) {
        for (double y : data.stages[s].placebo) {
            std::snprintf(buf, sizeof buf, "%.17g", y);
            out << s + 1 << ",P," << buf << '\n';
        }
        for (double y : data.stages[s].treatment) {
            std::snprintf(buf, sizeof buf, "%.17g", y);
            out << s + 1 << ",T," << buf << '\n';
        }
    }
}

/// One design with the effect sizes it is simulated at.
struct NamedScenario {
    std::string name;
    std::vector<StageDesign> stages;
    std::vector<double> thetas;
    double alpha = 0.05;

    [[nodiscard]] Scenario at(double theta) const {
        Scenario sc{stages, theta, alpha};
        sc.validate();
        return sc;
    }

    friend bool operator==(const NamedScenario&, const NamedScenario&) = default;
};

struct RunConfig {
    std::vector<NamedScenario> scenarios;
    std::vector<Method> methods;
    std::int64_t n_iter = 1'000'000;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string output_path;

    [[nodiscard]] const NamedScenario* find(std::string_view name) const {
        for (const auto& s : scenarios) {
            if (s.name == name) return &s;
        }
        return nullptr;
    }

    void validate() const {
        if (scenarios.empty()) throw InputError("config: no scenarios");
        if (n_iter < 1) throw InputError("config: n_iter must be >= 1");
        if (workers < 1) throw InputError("config: workers must be >= 1");
        for (const auto& s : scenarios) {
            if (s.thetas.empty()) throw InputError("config: scenario " + s.name + " has no theta values");
            for (double t : s.thetas) {
                try {
                    (void)s.at(t);
                } catch (const InvalidDesign& e) {
                    throw InputError("config: scenario " + s.name + ": " + e.what());
                }
            }
        }
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object() || !obj.contains(key)) {
        throw InputError("config: missing field " + path + "." + key);
    }
    return obj.at(key);
}

inline double number_at(const json& obj, const char* key, const std::string& path) {
    const json& v = require(obj, key, path);
    if (!v.is_number()) throw InputError("config: field " + path + "." + key + " must be a number");
    return v.get<double>();
}

inline std::int64_t integer_at(const json& obj, const char* key, const std::string& path) {
    const json& v = require(obj, key, path);
    if (!v.is_number_integer()) {
        throw InputError("config: field " + path + "." + key + " must be an integer");
    }
    return v.get<std::int64_t>();
}

inline std::vector<double> theta_list(const json& node, const std::string& path) {
    std::vector<double> out;
    if (node.is_number()) {
        out.push_back(node.get<double>());
    } else if (node.is_array()) {
        for (std::size_t i = 0; i < node.size(); ++i) {
            if (!node[i].is_number()) {
                throw InputError("config: field " + path + ".theta[" + std::to_string(i) + "] must be a number");
            }
            out.push_back(node[i].get<double>());
        }
    } else {
        throw InputError("config: field " + path + ".theta must be a number or list");
    }
    return out;
}

inline NamedScenario parse_scenario(const json& node, const std::string& path, double default_alpha,
                                    std::string default_name) {
    if (!node.is_object()) throw InputError("config: " + path + " must be an object");
    NamedScenario sc;
    sc.name = node.contains("name") ? node.at("name").get<std::string>() : std::move(default_name);
    sc.alpha = node.contains("alpha") ? number_at(node, "alpha", path) : default_alpha;
    sc.thetas = theta_list(require(node, "theta", path), path);
    if (node.contains("stages")) {
        const json& stages = node.at("stages");
        if (!stages.is_array() || stages.empty()) {
            throw InputError("config: field " + path + ".stages must be a nonempty list");
        }
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string sp = path + ".stages[" + std::to_string(s) + "]";
            StageDesign st;
            st.mu = number_at(stages[s], "mu", sp);
            st.ratio = number_at(stages[s], "ratio", sp);
            st.n_placebo = integer_at(stages[s], "n_placebo", sp);
            st.sd_placebo = number_at(stages[s], "sd_placebo", sp);
            st.sd_treatment = number_at(stages[s], "sd_treatment", sp);
            sc.stages.push_back(st);
        }
    } else if (node.contains("case_study_stages")) {
        const json& stages = node.at("case_study_stages");
        if (!stages.is_array() || stages.empty()) {
            throw InputError("config: field " + path + ".case_study_stages must be a nonempty list");
        }
        std::vector<CaseStudyStage> cs;
        for (std::size_t s = 0; s < stages.size(); ++s) {
            const std::string sp = path + ".case_study_stages[" + std::to_string(s) + "]";
            CaseStudyStage st;
            st.duration_months = number_at(stages[s], "duration_months", sp);
            st.enrollment_rate = number_at(stages[s], "enrollment_rate", sp);
            st.active_drug_count = integer_at(stages[s], "active_drug_count", sp);
            st.mu = number_at(stages[s], "mu", sp);
            st.sd_placebo = number_at(stages[s], "sd_placebo", sp);
            st.sd_treatment = number_at(stages[s], "sd_treatment", sp);
            cs.push_back(st);
        }
        try {
            sc.stages = build_case_study(cs, 0.0, sc.alpha).stages;
        } catch (const InvalidDesign& e) {
            throw InputError("config: " + path + ": " + e.what());
        }
    } else {
        throw InputError("config: missing field " + path + ".stages");
    }
    return sc;
}

}  // namespace detail

/// Parses a run configuration. Either a `scenarios` list or a single scenario
/// at top level (`stages` or `case_study_stages`, plus `theta`).
inline RunConfig parse_run_config(std::string_view text) {
    using nlohmann::json;
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    if (!root.is_object()) throw InputError("config: top level must be an object");
    RunConfig cfg;
    try {
        const double alpha = root.contains("alpha") ? detail::number_at(root, "alpha", "$") : 0.05;
        if (root.contains("scenarios")) {
            const json& list = root.at("scenarios");
            if (!list.is_array()) throw InputError("config: field $.scenarios must be a list");
            for (std::size_t i = 0; i < list.size(); ++i) {
                cfg.scenarios.push_back(detail::parse_scenario(
                    list[i], "$.scenarios[" + std::to_string(i) + "]", alpha, "scenario" + std::to_string(i + 1)));
            }
        } else {
            cfg.scenarios.push_back(detail::parse_scenario(root, "$", alpha, "scenario1"));
        }
        if (root.contains("methods")) {
            const json& list = root.at("methods");
            if (!list.is_array()) throw InputError("config: field $.methods must be a list");
            for (std::size_t i = 0; i < list.size(); ++i) {
                const auto name = list[i].is_string() ? list[i].get<std::string>() : std::string();
                const auto m = parse_method(name);
                if (!m) {
                    throw InputError("config: field $.methods[" + std::to_string(i) + "]: unknown method '" +
                                     name + "'");
                }
                cfg.methods.push_back(*m);
            }
        } else {
            cfg.methods.assign(std::begin(kSimulationMethods), std::end(kSimulationMethods));
        }
        if (root.contains("n_iter")) cfg.n_iter = detail::integer_at(root, "n_iter", "$");
        if (root.contains("seed")) {
            const json& v = root.at("seed");
            if (!v.is_number_unsigned()) throw InputError("config: field $.seed must be a nonnegative integer");
            cfg.seed = v.get<std::uint64_t>();
        }
        if (root.contains("workers")) {
            const auto w = detail::integer_at(root, "workers", "$");
            if (w < 1) throw InputError("config: field $.workers must be >= 1");
            cfg.workers = static_cast<unsigned>(w);
        }
        if (root.contains("output")) cfg.output_path = root.at("output").get<std::string>();
    } catch (const json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

/// Canonical JSON form; case-study stages are written out as explicit designs.
inline std::string serialize_run_config(const RunConfig& cfg) {
    using nlohmann::json;
    json root;
    root["methods"] = json::array();
    for (Method m : cfg.methods) root["methods"].push_back(std::string(method_name(m)));
    root["n_iter"] = cfg.n_iter;
    root["seed"] = cfg.seed;
    root["workers"] = cfg.workers;
    if (!cfg.output_path.empty()) root["output"] = cfg.output_path;
    root["scenarios"] = json::array();
    for (const auto& s : cfg.scenarios) {
        json node;
        node["name"] = s.name;
        node["alpha"] = s.alpha;
        node["theta"] = s.thetas;
        node["stages"] = json::array();
        for (const auto& st : s.stages) {
            node["stages"].push_back({{"mu", st.mu},
                                      {"ratio", st.ratio},
                                      {"n_placebo", st.n_placebo},
                                      {"sd_placebo", st.sd_placebo},
                                      {"sd_treatment", st.sd_treatment}});
        }
        root["scenarios"].push_back(std::move(node));
    }
    return root.dump(2);
}

/// 64-bit FNV-1a, used to stamp output files with the config they came from.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string format_number(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", x);
    return buf;
}

inline std::string provenance_line(std::string_view command, std::uint64_t seed, std::int64_t iters,
                                   std::uint64_t config_hash) {
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
    std::ostringstream os;
    os << "# platformtrial " << kToolVersion << " command=" << command << " seed=" << seed
       << " iters=" << iters << " config_fnv1a=" << hash;
    return os.str();
}

inline void write_metrics_header(std::ostream& out) {
    out << "scenario,theta,method,bias,mse,rejection_rate,mc_se_bias,mc_se_rate,n_iter,seed\n";
}

inline void write_metrics_row(std::ostream& out, const MetricsRow& row, std::uint64_t seed) {
    out << row.scenario_id << ',' << format_number(row.theta) << ',' << method_name(row.method) << ','
        << format_number(row.bias) << ',' << format_number(row.mse) << ','
        << format_number(row.rejection_rate) << ',' << format_number(row.mc_se_bias) << ','
        << format_number(row.mc_se_rate) << ',' << row.n_iterations << ',' << seed << '\n';
}

inline void write_coherence_points(std::ostream& out, const CoherenceCounts& counts) {
    out << "iteration,z1,z2,class\n";
    for (const auto& p : counts.points) {
        out << p.stream_id << ',' << format_number(p.z1) << ',' << format_number(p.z2) << ','
            << coherence_class_name(p.cls) << '\n';
    }
}

}  // namespace platformtrial
