// stsf: command-line front end for the socio-technical sustainability forecasting pipeline.
//
//   stsf synth    --out DIR            generate a labeled synthetic corpus
//   stsf ingest   MANIFEST --out WORK  parse archives, resolve identities
//   stsf features --out WORK           monthly feature sequences, group stats, Lasso
//   stsf train    --out WORK           repeated LSTM training and evaluation
//   stsf forecast --out WORK [--month M]
//   stsf explain  --out WORK
//   stsf monitor  --out WORK [--threshold T]
//   stsf report   --out WORK
//   stsf run      MANIFEST --out WORK  every stage in order
//
// Log verbosity: STSF_LOG_LEVEL=trace|debug|info|warn|error|off (default info).
// Exit codes: 0 success, 1 internal error, 2 invalid input or missing upstream stage.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "stsf/pipeline.hpp"

namespace {

using namespace stsf::pipeline;
using stsf::format_double;

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required) {
    app->add_option("--config", c.config_path, "key=value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", c.sets, "override one setting: key=value (repeatable)");
    app->add_option("--seed", c.seed, "random seed");
    auto* out = app->add_option("--out", c.out, "output / work directory");
    if (out_required) out->required();
}

Options build_options(const Common& c) {
    Options o;
    if (!c.config_path.empty()) o.merge(load_config_file(c.config_path));
    for (const auto& kv : c.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        o.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) o.set("seed", std::to_string(*c.seed));
    return o;
}

Log make_log() {
    auto logger = spdlog::stderr_color_mt("stsf");
    logger->set_pattern("[%l] %v");
    if (const char* level = std::getenv("STSF_LOG_LEVEL")) logger->set_level(spdlog::level::from_str(level));
    else logger->set_level(spdlog::level::info);
    Log log;
    log.info_sink = [logger](const std::string& s) { logger->info(s); };
    log.warn_sink = [logger](const std::string& s) { logger->warn(s); };
    return log;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Socio-technical sustainability forecasting toolkit"};
    app.require_subcommand(1);

    Common common;
    std::string manifest;
    std::optional<std::size_t> month;
    std::optional<double> threshold, lambda, signal;
    std::optional<int> repeats, projects;
    std::string trajectories;

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
    add_common(synth, common, true);
    synth->add_option("--signal", signal, "signal strength in [0, 1]");
    synth->add_option("--projects", projects, "number of projects");

    auto* ingest = app.add_subcommand("ingest", "parse archives and resolve identities");
    ingest->add_option("manifest", manifest, "corpus manifest JSON")->required();
    add_common(ingest, common, false);

    auto* features = app.add_subcommand("features", "assemble monthly feature sequences");
    add_common(features, common, true);
    features->add_option("--lambda", lambda, "Lasso penalty (default 0.001)");

    auto* train = app.add_subcommand("train", "train and evaluate the sequence model");
    add_common(train, common, true);
    train->add_option("--repeats", repeats, "train/test repeats (default 10)");

    auto* forecast = app.add_subcommand("forecast", "write forecast trajectories");
    add_common(forecast, common, true);
    forecast->add_option("--month", month, "print the evaluation table for this month");

    auto* explain = app.add_subcommand("explain", "explain forecasts with local surrogates");
    add_common(explain, common, true);

    auto* monitor = app.add_subcommand("monitor", "detect downturns and recommend actions");
    add_common(monitor, common, true);
    monitor->add_option("--threshold", threshold, "downturn threshold (default 0.05)");
    monitor->add_option("--trajectories", trajectories, "trajectory CSV (default: forecast output)");

    auto* report = app.add_subcommand("report", "emit plot-ready CSV bundles");
    add_common(report, common, true);

    auto* run = app.add_subcommand("run", "run every stage from ingest to report");
    run->add_option("manifest", manifest, "corpus manifest JSON")->required();
    add_common(run, common, false);
    run->add_option("--month", month, "print the evaluation table for this month");
    run->add_option("--threshold", threshold, "downturn threshold (default 0.05)");
    run->add_option("--repeats", repeats, "train/test repeats (default 10)");
    run->add_option("--lambda", lambda, "Lasso penalty (default 0.001)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    Log log = make_log();
    try {
        Options options = build_options(common);
        if (threshold) options.set("threshold", format_double(*threshold));
        if (lambda) options.set("lambda", format_double(*lambda));
        if (repeats) options.set("repeats", std::to_string(*repeats));
        if (signal) options.set("signal", format_double(*signal));
        if (projects) options.set("n_projects", std::to_string(*projects));
        if (!trajectories.empty()) options.set("trajectories", trajectories);

        auto work_for_manifest = [&]() -> WorkDir {
            if (!common.out.empty()) return {common.out};
            auto m = load_manifest(manifest);
            if (!m.output) throw UsageError("no --out given and the manifest has no \"output\"");
            return {*m.output};
        };

        if (*synth) {
            cmd_synth(options, common.out, log);
        } else if (*ingest) {
            cmd_ingest(manifest, work_for_manifest(), options, log);
        } else if (*features) {
            cmd_features({common.out}, options, log);
        } else if (*train) {
            cmd_train({common.out}, options, log);
        } else if (*forecast) {
            cmd_forecast({common.out}, month, std::cout, log);
        } else if (*explain) {
            cmd_explain({common.out}, options, log);
        } else if (*monitor) {
            cmd_monitor({common.out}, options, log);
        } else if (*report) {
            cmd_report({common.out}, log);
        } else if (*run) {
            WorkDir w = work_for_manifest();
            cmd_ingest(manifest, w, options, log);
            cmd_features(w, options, log);
            cmd_train(w, options, log);
            cmd_forecast(w, month.value_or(8), std::cout, log);
            cmd_explain(w, options, log);
            cmd_monitor(w, options, log);
            cmd_report(w, log);
        }
    } catch (const UsageError& e) {
        spdlog::get("stsf")->error(e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::get("stsf")->error(e.what());
        return 1;
    }
    return 0;
}
