// fedmekt: run, sweep, probe and cost-account federated multimodal
// experiments described by a flat JSON config. Every config key is also a
// flag, applied on top of --config in the order given.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "fedmekt/experiment.hpp"

using namespace fedmekt;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Attaches --config plus one flag per config key to a subcommand. Flag values
// stay raw text here; set_config_text coerces them by declared type later.
void attach_config_flags(CLI::App* sub, std::string& config_path, Overrides& overrides) {
    sub->add_option("--config", config_path, "JSON config file");
    for (const std::string& key : config_keys()) {
        sub->add_option_function<std::string>(
            "--" + key,
            [key, &overrides](const std::string& v) { overrides.emplace_back(key, v); },
            "override config key '" + key + "'");
    }
}

ConfigJson raw_json(const std::string& config_path, const Overrides& overrides) {
    ConfigJson j = ConfigJson::object();
    if (!config_path.empty()) {
        std::ifstream is(config_path);
        if (!is) throw ConfigError("cannot open config file '" + config_path + "'");
        try {
            is >> j;
        } catch (const std::exception& e) {
            throw ConfigError("config file '" + config_path + "' is not valid JSON: " +
                              e.what());
        }
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, value] : overrides) set_config_text(j, key, value);
    return j;
}

void print_result(const ExperimentConfig& cfg, const ExperimentResult& r) {
    std::cout << "strategy        " << cfg.strategy << '\n';
    std::cout << "modalities      " << r.arch.modality_a << " + " << r.arch.modality_b << '\n';
    std::cout << "rounds          " << r.rounds.size() << '\n';
    std::cout << "probe_f1 " << r.arch.modality_a << "     " << r.probe_f1_a << '\n';
    std::cout << "probe_f1 " << r.arch.modality_b << "     " << r.probe_f1_b << '\n';
    std::cout << "classifier_f1   " << r.classifier_f1 << '\n';
    std::cout << "knowledge bytes " << r.ledger.knowledge_up + r.ledger.knowledge_down << '\n';
    std::cout << "param bytes     " << r.ledger.param_up + r.ledger.param_down << '\n';
    std::cout << "proxy bytes     " << r.ledger.proxy_once << " (one-time)" << '\n';
    std::cout << "total exchanged " << r.ledger.exchanged_total() << '\n';
    std::cout << "artifacts in    " << r.out_dir << '\n';
}

// "key=v1,v2,v3" -> one grid axis, values coerced by the key's type.
void add_vary_axis(ConfigJson& grid, const std::string& spec) {
    std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--vary expects key=value[,value...], got '" + spec + "'");
    std::string key = spec.substr(0, eq);
    std::string rest = spec.substr(eq + 1);
    if (rest.empty()) throw ConfigError("--vary axis '" + key + "' lists no values");

    ConfigJson values = ConfigJson::array();
    std::size_t start = 0;
    while (start <= rest.size()) {
        std::size_t comma = rest.find(',', start);
        std::string item =
            comma == std::string::npos ? rest.substr(start) : rest.substr(start, comma - start);
        if (item.empty()) throw ConfigError("--vary axis '" + key + "' has an empty value");
        ConfigJson scratch = ConfigJson::object();
        set_config_text(scratch, key, item);
        values.push_back(scratch.at(key));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    grid[key] = values;
}

int cmd_run(const std::string& config_path, const Overrides& overrides) {
    ExperimentConfig cfg = config_from_json(raw_json(config_path, overrides));
    ExperimentResult r = run_experiment(cfg);
    print_result(cfg, r);
    return 0;
}

int cmd_sweep(const std::string& config_path, const Overrides& overrides,
              const std::string& grid_path, const std::vector<std::string>& vary,
              std::string out_dir) {
    ConfigJson base = raw_json(config_path, overrides);

    ConfigJson grid = ConfigJson::object();
    if (!grid_path.empty()) {
        std::ifstream is(grid_path);
        if (!is) throw ConfigError("cannot open grid file '" + grid_path + "'");
        try {
            is >> grid;
        } catch (const std::exception& e) {
            throw ConfigError("grid file '" + grid_path + "' is not valid JSON: " + e.what());
        }
    }
    for (const std::string& spec : vary) add_vary_axis(grid, spec);

    if (out_dir.empty())
        out_dir = base.contains("out_dir") ? base.at("out_dir").get<std::string>()
                                           : ExperimentConfig{}.out_dir;
    base.erase("out_dir");

    std::vector<SweepPoint> points = run_sweep(base, grid, out_dir);
    std::cout << points.size() << " runs under " << out_dir << '\n';
    for (const SweepPoint& pt : points) {
        std::cout << pt.label << ": probe_f1_a " << pt.result.probe_f1_a << ", probe_f1_b "
                  << pt.result.probe_f1_b << ", classifier_f1 " << pt.result.classifier_f1
                  << ", bytes " << pt.result.ledger.exchanged_total() << '\n';
    }
    std::cout << "merged table: " << out_dir << "/sweep.csv" << '\n';
    return 0;
}

int cmd_probe(const std::string& config_path, const Overrides& overrides,
              const std::string& checkpoint) {
    ExperimentConfig cfg = config_from_json(raw_json(config_path, overrides));
    ProbeReport r = probe_checkpoint(cfg, checkpoint);
    ArchSpec arch = resolve_arch(cfg);
    std::cout << "checkpoint round " << r.round << '\n';
    std::cout << "probe_f1 " << arch.modality_a << "      " << r.probe_f1_a << '\n';
    std::cout << "probe_f1 " << arch.modality_b << "      " << r.probe_f1_b << '\n';
    std::cout << "classifier_f1 " << arch.modality_a << " " << r.classifier_f1_a << '\n';
    std::cout << "classifier_f1 " << arch.modality_b << " " << r.classifier_f1_b << '\n';
    return 0;
}

int cmd_cost(const std::string& config_path, const Overrides& overrides,
             std::int64_t proxy_rows_flag) {
    ExperimentConfig cfg = config_from_json(raw_json(config_path, overrides));
    std::size_t proxy_rows = proxy_rows_flag >= 0
                                 ? static_cast<std::size_t>(proxy_rows_flag)
                                 : prepare_data(cfg).splits.proxy.n;
    CostReport r = comm_cost(cfg, proxy_rows);
    std::cout << "strategy        " << r.strategy << '\n';
    std::cout << "proxy rows      " << r.proxy_rows << '\n';
    std::cout << "up per round    " << r.up_per_round << " bytes\n";
    std::cout << "down per round  " << r.down_per_round << " bytes\n";
    std::cout << "proxy one-time  " << r.proxy_once << " bytes\n";
    std::cout << "total, " << r.rounds << " rounds: " << r.total() << " bytes\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multimodal federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path, grid_path, checkpoint, sweep_out;
    Overrides overrides;
    std::vector<std::string> vary;
    std::int64_t proxy_rows = -1;

    CLI::App* run = app.add_subcommand("run", "train one experiment end to end");
    attach_config_flags(run, config_path, overrides);

    CLI::App* sweep = app.add_subcommand("sweep", "run a config grid, merge one csv");
    attach_config_flags(sweep, config_path, overrides);
    sweep->add_option("--grid", grid_path, "JSON object: key -> array of values");
    sweep->add_option("--vary", vary, "axis as key=value[,value...], repeatable");
    sweep->add_option("--out", sweep_out, "sweep root directory");

    CLI::App* probe = app.add_subcommand("probe", "evaluate a saved checkpoint");
    attach_config_flags(probe, config_path, overrides);
    probe->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    CLI::App* cost = app.add_subcommand("cost", "closed-form traffic accounting, no training");
    attach_config_flags(cost, config_path, overrides);
    cost->add_option("--proxy-rows", proxy_rows,
                     "proxy set size; derived from the data when omitted");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, overrides);
        if (sweep->parsed()) return cmd_sweep(config_path, overrides, grid_path, vary, sweep_out);
        if (probe->parsed()) return cmd_probe(config_path, overrides, checkpoint);
        return cmd_cost(config_path, overrides, proxy_rows);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
