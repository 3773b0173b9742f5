#include "nonprob/estimate.hpp"
#include "nonprob/simulate.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

int run_estimate_cmd(const nonprob::RunConfig& config) {
    try {
        const nonprob::EstimateReport report = nonprob::run_estimate(config);
        std::cout << nonprob::render_print(report);
        if (config.verbose) {
            std::cout << "\n" << nonprob::render_summary(report);
            for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
        }
        return 0;
    } catch (const nonprob::SchemaError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const nonprob::ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const nonprob::ConvergenceError& e) {
        std::cerr << "estimation failed: " << e.what() << "\n";
        std::cerr << "{\"error\":\"convergence\",\"residual_norm\":" << e.residual_norm << "}\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "estimation failed: " << e.what() << "\n";
        return 3;
    }
}

int run_simulate_cmd(const std::string& config_path, const std::string& out_dir,
                     std::uint64_t seed_override, bool has_seed) {
    try {
        std::ifstream in(config_path);
        if (!in) {
            std::cerr << "configuration error: cannot open " << config_path << "\n";
            return 2;
        }
        std::ostringstream buf;
        buf << in.rdbuf();
        nonprob::SimulationSpec spec = nonprob::parse_simulation_config(buf.str());
        if (has_seed) spec.seed = seed_override;
        const nonprob::SimulationReport report = nonprob::run_simulation(spec);
        std::cout << nonprob::render_simulation_text(report);
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            std::ofstream(out_dir + "/simulation.json") << nonprob::render_simulation_json(report);
            std::ofstream(out_dir + "/simulation.txt") << nonprob::render_simulation_text(report);
        }
        if (report.failure_gate_exceeded) {
            std::cerr << "more than 20% of replicates failed for at least one estimator\n";
            return 3;
        }
        return 0;
    } catch (const nonprob::SchemaError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "simulation failed: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Estimation for nonprobability samples with reference surveys or totals"};
    app.require_subcommand(1);

    nonprob::RunConfig config;
    std::vector<std::string> subset_exprs;
    std::vector<double> start_selection;

    CLI::App* est = app.add_subcommand("estimate", "Point and interval estimation");
    est->set_config("--config", "", "key=value file; command-line flags take precedence");
    est->add_option("--data", config.data_path, "nonprobability sample CSV")->required();
    est->add_option("--prob", config.prob_path, "probability sample CSV");
    est->add_option("--prob-weight", config.prob_weight_col,
                    "design-weight column of the probability sample");
    est->add_option("--prob-strata", config.prob_strata_cols,
                    "stratum columns of the probability sample");
    est->add_option("--weight-col", config.weight_col, "case-weight column (nonprob sample)");
    est->add_option("--pop-totals", config.pop_totals_path, "population totals CSV (name,value)");
    est->add_option("--pop-means", config.pop_means_path, "population means CSV (name,value)");
    est->add_option("--pop-size", config.pop_size, "population size (fixes the size)");
    est->add_option("--subset", subset_exprs, "row filters col=value on the nonprob sample");

    est->add_option("--selection", config.selection, "selection formula, e.g. ~x1+x2");
    est->add_option("--outcome", config.outcome, "outcome formula, e.g. y~x1+x2");
    est->add_option("--target", config.target, "target formula, e.g. ~y1+y2");

    est->add_option("--method-selection", config.control_selection.method,
                    "propensity link: logit|probit|cloglog");
    est->add_option("--est-method", config.control_selection.est_method,
                    "selection fitting: mle|gee");
    est->add_option("--gee-h", config.control_selection.gee_h,
                    "estimating-equation h: 1 = x/pi (calibration), 2 = x");
    est->add_option("--start-selection", start_selection, "selection starting values");

    est->add_option("--method-outcome", config.control_outcome.method,
                    "outcome method: glm|nn|pmm|npar");
    est->add_option("--family-outcome", config.control_outcome.family,
                    "outcome family: gaussian|binomial|poisson");
    est->add_option("--k", config.control_outcome.k, "number of matched neighbours");
    est->add_option("--pmm-match-type", config.control_outcome.pmm_match_type,
                    "1: prediction-to-prediction, 2: prediction-to-observed");
    est->add_option("--eps", config.control_outcome.eps, "matching tie tolerance");
    est->add_option("--npar-span", config.control_outcome.npar_span, "smoothing span");
    est->add_option("--npar-degree", config.control_outcome.npar_degree, "local degree (1|2)");

    std::string penalty = "SCAD";
    int nfolds = 10, nlambda = 50;
    double lambda_min = 0.001, a_scad = 3.7, a_mcp = 3.0;
    est->add_option("--penalty", penalty, "SCAD|lasso|MCP");
    est->add_option("--nfolds", nfolds, "cross-validation folds");
    est->add_option("--nlambda", nlambda, "lambda grid size");
    est->add_option("--lambda-min", lambda_min, "smallest lambda as a fraction of lambda max");
    est->add_option("--a-scad", a_scad, "SCAD tuning parameter");
    est->add_option("--a-mcp", a_mcp, "MCP tuning parameter");

    est->add_option("--var-method", config.control_inference.var_method, "analytic|bootstrap");
    est->add_option("--num-boot", config.control_inference.num_boot,
                    "bootstrap replicates (default 100)");
    est->add_option("--rep-type", config.control_inference.rep_type,
                    "probability-sample replication scheme");
    est->add_flag("--vars-selection", config.control_inference.vars_selection,
                  "penalized variable selection before estimation");
    est->add_flag("--bias-correction", config.control_inference.bias_correction,
                  "joint bias-minimizing doubly robust fit");
    est->add_flag("--vars-combine", config.control_inference.vars_combine,
                  "use the union of selected variables in both models");
    est->add_option("--ci-level", config.control_inference.ci_level, "confidence level");
    est->add_option("--seed", config.control_inference.seed, "seed for folds and bootstrap");
    est->add_flag("--se,!--no-se", config.control_inference.se, "compute standard errors");
    est->add_flag("--verbose", config.verbose, "print the detailed summary");
    est->add_option("--out", config.out_dir, "directory for report.json, summary.txt, comparison.csv");

    std::string sim_config, sim_out;
    std::uint64_t sim_seed = 0;
    CLI::App* sim = app.add_subcommand("simulate", "Monte-Carlo self-checks");
    sim->add_option("--config", sim_config, "simulation configuration file")->required();
    sim->add_option("--out", sim_out, "directory for simulation.json / simulation.txt");
    CLI::Option* seed_opt = sim->add_option("--seed", sim_seed, "override the config seed");

    CLI11_PARSE(app, argc, argv);

    if (est->parsed()) {
        for (const auto& expr : subset_exprs) {
            const auto eq = expr.find('=');
            if (eq == std::string::npos) {
                std::cerr << "configuration error: subset filters use col=value\n";
                return 2;
            }
            config.subset.emplace_back(expr.substr(0, eq), expr.substr(eq + 1));
        }
        config.control_selection.start = start_selection;
        for (auto* pc : {&config.control_selection.penalty, &config.control_outcome.penalty}) {
            pc->penalty = nonprob::penalty_from_string(penalty);
            pc->nfolds = nfolds;
            pc->nlambda = nlambda;
            pc->lambda_min_ratio = lambda_min;
            pc->a_scad = a_scad;
            pc->a_mcp = a_mcp;
        }
        return run_estimate_cmd(config);
    }
    return run_simulate_cmd(sim_config, sim_out, sim_seed, seed_opt->count() > 0);
}
