// platformtrial: analysis, simulation, power planning and coherence scans for
// platform trials with concurrent controls.
//
// Exit codes: 0 success; 2 invalid arguments, config or dataset; 3 an estimator
// could not be computed (degenerate or insufficient data); 4 output could not
// be written.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "platformtrial/estimators.hpp"
#include "platformtrial/inference.hpp"
#include "platformtrial/io.hpp"
#include "platformtrial/simulator.hpp"

namespace pt = platformtrial;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitCompute = 3;
constexpr int kExitOutput = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ComputeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw pt::InputError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes to `path`, or stdout when it is empty.
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty()) {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) throw std::ios_base::failure("cannot open " + path + " for writing");
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }
    [[nodiscard]] bool to_stdout() const { return !file_.is_open(); }
    void finish() {
        stream().flush();
        if (!stream()) throw std::ios_base::failure("write failed");
    }

private:
    std::ofstream file_;
};

std::vector<pt::Method> parse_methods(const std::vector<std::string>& names) {
    std::vector<pt::Method> out;
    for (const auto& n : names) {
        const auto m = pt::parse_method(n);
        if (!m) throw UsageError("unknown method '" + n + "'");
        out.push_back(*m);
    }
    return out;
}

unsigned default_workers() {
    if (const char* env = std::getenv("PLATFORMTRIAL_WORKERS")) {
        try {
            const long w = std::stol(env);
            if (w >= 1) return static_cast<unsigned>(w);
        } catch (const std::exception&) {
        }
        throw UsageError("PLATFORMTRIAL_WORKERS must be a positive integer");
    }
    return 1;
}

std::vector<const pt::NamedScenario*> select_scenarios(const pt::RunConfig& cfg,
                                                        const std::vector<std::string>& names) {
    std::vector<const pt::NamedScenario*> out;
    if (names.empty()) {
        for (const auto& s : cfg.scenarios) out.push_back(&s);
        return out;
    }
    for (const auto& n : names) {
        const auto* s = cfg.find(n);
        if (s == nullptr) throw UsageError("no scenario named '" + n + "' in config");
        out.push_back(s);
    }
    return out;
}

std::string join_weights(const std::optional<pt::WeightVector>& w) {
    if (!w) return "";
    std::string out;
    for (std::size_t s = 0; s < w->size(); ++s) {
        if (s > 0) out += ';';
        out += pt::format_number((*w)[s]);
    }
    return out;
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
    std::string config;
    std::optional<std::int64_t> iters;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::string out;
    std::optional<double> alpha;
    std::vector<double> thetas;
    std::vector<std::string> methods;
    std::vector<std::string> scenarios;
};

int cmd_simulate(const SimulateArgs& args) {
    const std::string text = read_file(args.config);
    pt::RunConfig cfg = pt::parse_run_config(text);
    if (args.iters) cfg.n_iter = *args.iters;
    if (args.seed) cfg.seed = *args.seed;
    cfg.workers = args.workers ? *args.workers : default_workers();
    if (!args.methods.empty()) cfg.methods = parse_methods(args.methods);
    for (auto& s : cfg.scenarios) {
        if (args.alpha) s.alpha = *args.alpha;
        if (!args.thetas.empty()) s.thetas = args.thetas;
    }
    if (!args.out.empty()) cfg.output_path = args.out;
    cfg.validate();

    Output out(cfg.output_path);
    auto& os = out.stream();
    os << pt::provenance_line("simulate", cfg.seed, cfg.n_iter, pt::fnv1a64(text)) << '\n';
    pt::write_metrics_header(os);
    const pt::SimulationOptions options{cfg.n_iter, cfg.seed, cfg.workers};
    for (const auto* named : select_scenarios(cfg, args.scenarios)) {
        for (double theta : named->thetas) {
            std::vector<pt::MetricsRow> rows;
            try {
                rows = pt::run_scenario(named->name, named->at(theta), cfg.methods, options);
            } catch (const pt::SimulationError& e) {
                throw ComputeError(e.what());
            }
            for (const auto& row : rows) pt::write_metrics_row(os, row, cfg.seed);
            if (!out.to_stdout()) {
                std::cerr << named->name << " theta=" << theta << " done in "
                          << (rows.empty() ? 0.0 : rows.front().wall_time_seconds) << " s\n";
            }
        }
    }
    out.finish();
    return kExitOk;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeArgs {
    std::string data;
    std::vector<std::string> methods;
    double alpha = 0.05;
    std::string config;
    std::string scenario;
    std::vector<double> weights;
    std::string out;
};

int cmd_analyze(const AnalyzeArgs& args) {
    if (!(args.alpha > 0.0 && args.alpha < 0.5)) throw UsageError("--alpha must lie in (0, 0.5)");
    std::ifstream in(args.data, std::ios::binary);
    if (!in) throw pt::InputError("cannot read " + args.data);
    const pt::StageSummary summary = pt::summarize(pt::read_dataset(in));

    std::optional<pt::DesignKnowledge> design;
    if (!args.config.empty()) {
        const pt::RunConfig cfg = pt::parse_run_config(read_file(args.config));
        const pt::NamedScenario* named = args.scenario.empty() ? &cfg.scenarios.front() : cfg.find(args.scenario);
        if (named == nullptr) throw UsageError("no scenario named '" + args.scenario + "' in config");
        if (named->stages.size() != summary.stage_count()) {
            throw UsageError("design has " + std::to_string(named->stages.size()) + " stages but data has " +
                             std::to_string(summary.stage_count()));
        }
        design = pt::DesignKnowledge::from(named->at(named->thetas.front()));
    }

    std::vector<pt::Method> methods;
    if (args.methods.empty()) {
        methods = {pt::Method::direct, pt::Method::iptw, pt::Method::weighted_empirical, pt::Method::ols,
                   pt::Method::wls_practical};
        if (design) {
            methods.insert(methods.begin() + 2, pt::Method::weighted_design);
        }
    } else {
        methods = parse_methods(args.methods);
    }
    for (pt::Method m : methods) {
        if (pt::needs_design(m) && !design) {
            throw UsageError(std::string(pt::method_name(m)) + " needs --config with the trial design");
        }
    }
    std::optional<pt::WeightVector> custom;
    if (!args.weights.empty()) {
        if (args.weights.size() != summary.stage_count()) {
            throw UsageError("--weights needs one weight per stage");
        }
        custom = pt::WeightVector{args.weights, pt::WeightProvenance::custom};
        try {
            custom->validate();
        } catch (const pt::DomainError& e) {
            throw UsageError(std::string("--weights: ") + e.what());
        }
    }

    Output out(args.out);
    auto& os = out.stream();
    os << pt::provenance_line("analyze", 0, 0, pt::fnv1a64(read_file(args.data))) << '\n';
    os << "method,estimate,std_error,statistic,df,p_one_sided,ci_lower,reject,weights\n";
    std::vector<std::string> failures;
    auto emit = [&](const pt::EstimateResult& r) {
        os << pt::method_name(r.method) << ',' << pt::format_number(r.estimate) << ','
           << pt::format_number(r.std_error) << ',' << pt::format_number(r.statistic) << ','
           << (r.df ? pt::format_number(*r.df) : "") << ',' << pt::format_number(r.p_one_sided) << ','
           << pt::format_number(r.ci_lower) << ',' << (r.reject ? "true" : "false") << ','
           << join_weights(r.weights) << '\n';
    };
    // Point estimate only, when inference is unavailable.
    auto emit_point = [&](pt::Method m, const std::optional<double>& estimate,
                          const std::optional<pt::WeightVector>& w) {
        os << pt::method_name(m) << ',' << (estimate ? pt::format_number(*estimate) : "NA")
           << ",NA,NA,,NA,NA,NA," << join_weights(w) << '\n';
    };
    auto run = [&](pt::Method m) {
        try {
            if (m == pt::Method::weighted_custom) {
                emit(pt::weighted_estimate(summary, *custom, summary.contrast_variances(), args.alpha));
            } else {
                emit(pt::estimate(m, summary, args.alpha, design ? &*design : nullptr));
            }
        } catch (const std::exception& e) {
            failures.push_back(std::string(pt::method_name(m)) + ": " + e.what());
            std::optional<double> point;
            std::optional<pt::WeightVector> w;
            try {
                switch (m) {
                    case pt::Method::direct: point = pt::direct_point_estimate(summary); break;
                    case pt::Method::iptw:
                        point = pt::iptw_point_estimate(summary);
                        w = pt::iptw_weights(summary);
                        break;
                    case pt::Method::weighted_custom:
                        point = pt::weighted_point_estimate(summary, *custom);
                        w = custom;
                        break;
                    case pt::Method::weighted_design:
                        point = pt::weighted_point_estimate(summary, design->assumed_weights);
                        w = design->assumed_weights;
                        break;
                    case pt::Method::weighted_oracle:
                        point = pt::weighted_point_estimate(summary, design->oracle_weights);
                        w = design->oracle_weights;
                        break;
                    default: break;
                }
            } catch (const std::exception&) {
            }
            emit_point(m, point, w);
        }
    };
    for (pt::Method m : methods) run(m);
    if (custom) run(pt::Method::weighted_custom);
    out.finish();
    for (const auto& f : failures) std::cerr << "error: " << f << '\n';
    return failures.empty() ? kExitOk : kExitCompute;
}

// ------------------------------------------------------------------- power

struct PowerArgs {
    std::string config;
    std::optional<double> theta;
    std::optional<double> alpha;
    std::optional<double> target;
    std::vector<std::string> methods;
    std::vector<std::string> scenarios;
    std::string out;
};

int cmd_power(const PowerArgs& args) {
    const std::string text = read_file(args.config);
    const pt::RunConfig cfg = pt::parse_run_config(text);
    if (args.theta && !(*args.theta > 0.0)) throw UsageError("--theta must be > 0 for a power calculation");
    if (args.alpha && !(*args.alpha > 0.0 && *args.alpha < 0.5)) throw UsageError("--alpha must lie in (0, 0.5)");
    std::vector<pt::Method> rules = {pt::Method::weighted_oracle};
    if (!args.methods.empty()) {
        rules = parse_methods(args.methods);
        for (pt::Method m : rules) {
            if (m != pt::Method::weighted_oracle && m != pt::Method::weighted_design && m != pt::Method::iptw) {
                throw UsageError("power supports weighted-oracle, weighted-design and iptw weight rules");
            }
        }
    }
    Output out(args.out);
    auto& os = out.stream();
    os << pt::provenance_line("power", 0, 0, pt::fnv1a64(text)) << '\n';
    os << "scenario,theta,alpha,method,weights,planned_power" << (args.target ? ",target,multiplier" : "") << '\n';
    for (const auto* named : select_scenarios(cfg, args.scenarios)) {
        std::vector<double> thetas;
        if (args.theta) {
            thetas.push_back(*args.theta);
        } else {
            for (double t : named->thetas) {
                if (t > 0.0) thetas.push_back(t);
            }
        }
        for (double theta : thetas) {
            pt::Scenario sc = named->at(theta);
            if (args.alpha) sc.alpha = *args.alpha;
            const auto v = pt::design_contrast_variances(sc);
            for (pt::Method rule : rules) {
                pt::WeightVector w;
                if (rule == pt::Method::weighted_oracle) {
                    w = pt::optimal_weights(v);
                } else if (rule == pt::Method::weighted_design) {
                    w = pt::design_weights(sc);
                } else {
                    std::vector<double> totals;
                    for (const auto& st : sc.stages) {
                        totals.push_back(static_cast<double>(st.n_placebo + st.n_treatment()));
                    }
                    w = pt::normalized(totals, pt::WeightProvenance::iptw);
                }
                os << named->name << ',' << pt::format_number(theta) << ',' << pt::format_number(sc.alpha) << ','
                   << pt::method_name(rule) << ',' << join_weights(w) << ','
                   << pt::format_number(pt::planned_power(sc, w, v));
                if (args.target) {
                    // The multiplier always refers to optimal weights.
                    try {
                        os << ',' << pt::format_number(*args.target) << ','
                           << pt::format_number(pt::solve_sample_size(sc, *args.target, theta, sc.alpha));
                    } catch (const pt::UnreachableTarget& e) {
                        throw ComputeError(e.what());
                    } catch (const pt::DomainError& e) {
                        throw UsageError(e.what());
                    }
                }
                os << '\n';
            }
        }
    }
    out.finish();
    return kExitOk;
}

// --------------------------------------------------------------- coherence

struct CoherenceArgs {
    std::string config;
    std::string scenario;
    std::string framework = "weighted";
    std::int64_t iters = 5000;
    std::uint64_t seed = 0;
    std::optional<double> theta;
    std::optional<double> w_tilde;
    std::string out;
};

int cmd_coherence(const CoherenceArgs& args) {
    const std::string text = read_file(args.config);
    const pt::RunConfig cfg = pt::parse_run_config(text);
    const pt::NamedScenario* named = cfg.find(args.scenario);
    if (named == nullptr) throw UsageError("no scenario named '" + args.scenario + "' in config");
    if (named->stages.size() != 2) throw UsageError("coherence scan needs a two-stage scenario");
    double theta = named->thetas.back();
    for (double t : named->thetas) theta = std::max(theta, t);
    if (args.theta) theta = *args.theta;
    const pt::Scenario sc = named->at(theta);
    const double w_tilde = args.w_tilde ? *args.w_tilde : pt::design_weights(sc)[0];
    if (!(w_tilde >= 0.0 && w_tilde <= 1.0)) throw UsageError("--w-tilde must lie in [0, 1]");
    const auto framework = args.framework == "combination" ? pt::Framework::combination : pt::Framework::weighted;

    pt::CoherenceCounts counts;
    try {
        counts = pt::coherence_scan(sc, w_tilde, framework, args.iters, args.seed);
    } catch (const pt::InsufficientData& e) {
        throw ComputeError(e.what());
    } catch (const pt::DomainError& e) {
        throw ComputeError(e.what());
    }
    Output out(args.out);
    out.stream() << pt::provenance_line("coherence", args.seed, args.iters, pt::fnv1a64(text)) << '\n';
    pt::write_coherence_points(out.stream(), counts);
    out.finish();
    std::ostream& summary = out.to_stdout() ? std::cerr : std::cout;
    summary << "scenario=" << named->name << " theta=" << theta << " framework=" << args.framework
            << " w_tilde=" << pt::format_number(w_tilde) << " iterations=" << counts.total()
            << " consistent=" << counts.both_consistent << " estimation_only=" << counts.estimation_only
            << " testing_only=" << counts.testing_only << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Treatment-effect estimation and testing for platform trials with concurrent controls"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pt::kToolVersion));

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo operating characteristics");
    simulate->add_option("--config", sim.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    simulate->add_option("--iters", sim.iters, "Iterations per scenario and theta")->check(CLI::PositiveNumber);
    simulate->add_option("--seed", sim.seed, "Base seed");
    simulate->add_option("--workers", sim.workers, "Worker threads (default $PLATFORMTRIAL_WORKERS or 1)")
        ->check(CLI::PositiveNumber);
    simulate->add_option("--out", sim.out, "Results CSV (default stdout)");
    simulate->add_option("--alpha", sim.alpha, "One-sided level for every scenario");
    simulate->add_option("--theta", sim.thetas, "Effect size(s), replacing the config's list");
    simulate->add_option("--method", sim.methods, "Estimator (repeatable)");
    simulate->add_option("--scenario", sim.scenarios, "Only these scenarios (repeatable)");

    AnalyzeArgs ana;
    auto* analyze = app.add_subcommand("analyze", "Estimate the treatment effect from a subject-level CSV");
    analyze->add_option("--data", ana.data, "CSV with columns stage,group,outcome")->required()->check(CLI::ExistingFile);
    analyze->add_option("--method", ana.methods, "Estimator (repeatable)");
    analyze->add_option("--alpha", ana.alpha, "One-sided level")->capture_default_str();
    analyze->add_option("--config", ana.config, "Design config enabling design-based methods")->check(CLI::ExistingFile);
    analyze->add_option("--scenario", ana.scenario, "Scenario within --config (default first)");
    analyze->add_option("--weights", ana.weights, "Custom stage weights, e.g. 0.5,0.5")->delimiter(',');
    analyze->add_option("--out", ana.out, "Results CSV (default stdout)");

    PowerArgs pow;
    auto* power = app.add_subcommand("power", "Planned power and sample-size multiplier");
    power->add_option("--config", pow.config, "Design configuration (JSON)")->required()->check(CLI::ExistingFile);
    power->add_option("--theta", pow.theta, "Effect size (default: the config's positive values)");
    power->add_option("--alpha", pow.alpha, "One-sided level");
    power->add_option("--target", pow.target, "Target power; reports the arm-size multiplier reaching it");
    power->add_option("--method", pow.methods, "Weight rule: weighted-oracle, weighted-design or iptw");
    power->add_option("--scenario", pow.scenarios, "Only these scenarios (repeatable)");
    power->add_option("--out", pow.out, "Results CSV (default stdout)");

    CoherenceArgs coh;
    auto* coherence = app.add_subcommand("coherence", "Estimation vs testing agreement on two-stage trials");
    coherence->add_option("--config", coh.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    coherence->add_option("--scenario", coh.scenario, "Two-stage scenario name")->required();
    coherence->add_option("--framework", coh.framework, "weighted or combination")
        ->check(CLI::IsMember({"weighted", "combination"}))
        ->capture_default_str();
    coherence->add_option("--iters", coh.iters, "Iterations")->check(CLI::PositiveNumber)->capture_default_str();
    coherence->add_option("--seed", coh.seed, "Seed")->capture_default_str();
    coherence->add_option("--theta", coh.theta, "Effect size (default: the scenario's largest)");
    coherence->add_option("--w-tilde", coh.w_tilde, "First-stage weight (default: design weight)");
    coherence->add_option("--out", coh.out, "Points CSV (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*simulate) return cmd_simulate(sim);
        if (*analyze) return cmd_analyze(ana);
        if (*power) return cmd_power(pow);
        if (*coherence) return cmd_coherence(coh);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const pt::InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const pt::InvalidDesign& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const ComputeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCompute;
    } catch (const pt::InsufficientData& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCompute;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitOutput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCompute;
    }
    return kExitInput;
}
