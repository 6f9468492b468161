#include "fedmekt/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "fedmekt/evaluation.hpp"

namespace fs = std::filesystem;

namespace fedmekt {

namespace {

ConfigJson metrics_json(const RoundMetrics& m) {
    ConfigJson j = ConfigJson::object();
    j["round"] = m.round;
    j["probe_f1_a"] = m.probe_f1_a;
    j["probe_f1_b"] = m.probe_f1_b;
    j["classifier_f1"] = m.classifier_f1;
    j["client_loss_mean"] = m.client_loss_mean;
    j["server_loss_mean"] = m.server_loss_mean;
    j["contrib_a"] = m.contrib_a;
    j["contrib_b"] = m.contrib_b;
    j["knowledge_up_bytes"] = m.knowledge_up_bytes;
    j["knowledge_down_bytes"] = m.knowledge_down_bytes;
    j["param_up_bytes"] = m.param_up_bytes;
    j["param_down_bytes"] = m.param_down_bytes;
    j["cumulative_bytes"] = m.cumulative_bytes;
    j["server_private_reads"] = m.server_private_reads;
    return j;
}

// Shortest-round-trip number text, deterministic across runs.
std::string num(double v) { return ConfigJson(v).dump(); }

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
    return os;
}

void write_summary_csv(const fs::path& path, const ExperimentConfig& cfg,
                       const ExperimentResult& r) {
    std::ofstream csv = open_out(path);
    std::string pair = r.arch.modality_a + "-" + r.arch.modality_b;
    std::uint64_t total = r.ledger.exchanged_total();
    csv << "strategy,modality_pair,task_modality,probe_f1,classifier_f1,total_bytes\n";
    csv << cfg.strategy << ',' << pair << ',' << r.arch.modality_a << ',' << num(r.probe_f1_a)
        << ',' << num(r.classifier_f1) << ',' << total << '\n';
    csv << cfg.strategy << ',' << pair << ',' << r.arch.modality_b << ',' << num(r.probe_f1_b)
        << ',' << num(r.classifier_f1) << ',' << total << '\n';
}

std::string label_of(const ConfigJson& v) {
    return v.is_string() ? v.get<std::string>() : v.dump();
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
    ArchSpec arch = resolve_arch(cfg);
    MultimodalDataset data;
    if (cfg.dataset == "synthetic") {
        data = synth_generate(synth_spec_of(cfg), cfg.seed_data);
        data.name_a = arch.modality_a;
        data.name_b = arch.modality_b;
    } else {
        CsvSchema schema = load_schema(cfg.schema_path);
        data = load_csv(cfg.csv_path, schema, arch.t_seq, cfg.stride);
        if (data.d_a != arch.d_a || data.d_b != arch.d_b)
            throw ConfigError("csv data is " + std::to_string(data.d_a) + "+" +
                              std::to_string(data.d_b) + " dimensional but the architecture wants " +
                              std::to_string(arch.d_a) + "+" + std::to_string(arch.d_b));
        if (data.classes != arch.classes)
            throw ConfigError("csv data has " + std::to_string(data.classes) +
                              " classes but the architecture wants " +
                              std::to_string(arch.classes));
        arch.modality_a = data.name_a;
        arch.modality_b = data.name_b;
    }

    Splits splits = make_splits(data, split_spec_of(cfg), mix_seed(cfg.seed_data, 1));
    if (cfg.normalize) {
        NormStats stats = compute_norm_stats(splits.train);
        apply_norm(splits.train, stats);
        apply_norm(splits.proxy, stats);
        apply_norm(splits.labeled, stats);
        apply_norm(splits.test, stats);
    }
    std::vector<ClientAssignment> parts =
        partition(splits.train, partition_spec_of(cfg), mix_seed(cfg.seed_data, 2));
    return {std::move(arch), std::move(splits), std::move(parts)};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    PreparedData prep = prepare_data(cfg);
    Trainer trainer(fed_config_of(cfg), prep.arch, prep.splits.train, prep.parts,
                    prep.splits.proxy, prep.splits.labeled, prep.splits.test, cfg.seed_model,
                    cfg.seed_sampling);

    fs::path out(cfg.out_dir);
    fs::create_directories(out);

    ExperimentResult res;
    res.arch = prep.arch;
    res.out_dir = cfg.out_dir;

    {
        std::ofstream metrics = open_out(out / "metrics.jsonl");
        if (cfg.rounds == 0) {
            RoundMetrics m;
            m.probe_f1_a = trainer.probe(Mod::A);
            m.probe_f1_b = trainer.probe(Mod::B);
            m.classifier_f1 = trainer.classifier_f1();
            metrics << metrics_json(m).dump() << '\n';
            res.probe_f1_a = m.probe_f1_a;
            res.probe_f1_b = m.probe_f1_b;
            res.classifier_f1 = m.classifier_f1;
        } else {
            for (std::size_t t = 0; t < cfg.rounds; ++t) {
                RoundMetrics m = trainer.run_round();
                metrics << metrics_json(m).dump() << '\n';
                res.rounds.push_back(m);
            }
            std::vector<double> pa, pb, cf;
            for (const RoundMetrics& m : res.rounds) {
                pa.push_back(m.probe_f1_a);
                pb.push_back(m.probe_f1_b);
                cf.push_back(m.classifier_f1);
            }
            res.probe_f1_a = avg_last_k(pa, 10);
            res.probe_f1_b = avg_last_k(pb, 10);
            res.classifier_f1 = avg_last_k(cf, 10);
        }
    }
    res.ledger = trainer.ledger();

    write_summary_csv(out / "summary.csv", cfg, res);
    {
        std::ofstream cr = open_out(out / "config.resolved");
        cr << config_to_json(cfg).dump(2) << '\n';
    }
    save_checkpoint(
        (out / ("checkpoint_round_" + std::to_string(trainer.server().round) + ".bin")).string(),
        trainer.server());
    return res;
}

std::vector<SweepPoint> run_sweep(const ConfigJson& base, const ConfigJson& grid,
                                  const std::string& out_dir) {
    if (!base.is_object()) throw ConfigError("sweep base config must be a JSON object");
    if (!grid.is_object() || grid.empty())
        throw ConfigError("sweep grid must be a JSON object with at least one key");

    std::vector<std::pair<std::string, std::vector<ConfigJson>>> axes;
    for (const auto& [key, values] : grid.items()) {
        if (!is_config_key(key))
            throw ConfigError("unknown config key '" + key + "' in sweep grid");
        if (!values.is_array() || values.empty())
            throw ConfigError("sweep grid values for '" + key + "' must be a non-empty array");
        axes.emplace_back(key, std::vector<ConfigJson>(values.begin(), values.end()));
    }

    std::size_t total = 1;
    for (const auto& [key, values] : axes) total *= values.size();

    std::vector<SweepPoint> points;
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t rem = idx;
        std::vector<std::size_t> pick(axes.size(), 0);
        for (std::size_t a = axes.size(); a-- > 0;) {
            pick[a] = rem % axes[a].second.size();
            rem /= axes[a].second.size();
        }

        SweepPoint pt;
        pt.overrides = ConfigJson::object();
        ConfigJson j = base;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            const ConfigJson& value = axes[a].second[pick[a]];
            j[axes[a].first] = value;
            pt.overrides[axes[a].first] = value;
            if (a > 0) pt.label += ',';
            pt.label += axes[a].first + "=" + label_of(value);
        }
        j["out_dir"] = out_dir + "/" + pt.label;
        pt.result = run_experiment(config_from_json(j));
        points.push_back(std::move(pt));
    }

    // Multi-axis labels contain commas and need RFC 4180 quoting.
    auto csv_field = [](const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    };

    bool strategy_is_axis = grid.contains("strategy");
    std::ofstream csv = open_out(fs::path(out_dir) / "sweep.csv");
    csv << "label";
    for (const auto& [key, values] : axes) csv << ',' << key;
    if (!strategy_is_axis) csv << ",strategy";
    csv << ",probe_f1_a,probe_f1_b,classifier_f1,total_bytes\n";
    for (const SweepPoint& pt : points) {
        csv << csv_field(pt.label);
        for (const auto& [key, values] : axes) csv << ',' << label_of(pt.overrides.at(key));
        if (!strategy_is_axis) {
            const ConfigJson& strategy = base.contains("strategy")
                                             ? base.at("strategy")
                                             : ConfigJson(ExperimentConfig{}.strategy);
            csv << ',' << label_of(strategy);
        }
        csv << ',' << num(pt.result.probe_f1_a) << ',' << num(pt.result.probe_f1_b) << ','
            << num(pt.result.classifier_f1) << ',' << pt.result.ledger.exchanged_total() << '\n';
    }
    return points;
}

ProbeReport probe_checkpoint(const ExperimentConfig& cfg, const std::string& path) {
    validate(cfg);
    PreparedData prep = prepare_data(cfg);
    Checkpoint ck = load_checkpoint(path);
    if (!(ck.arch == prep.arch))
        throw ConfigError("checkpoint architecture does not match this config");
    if (!ck.model.a || !ck.model.b)
        throw ConfigError("checkpoint holds a partial model and cannot be evaluated");

    const MultimodalDataset& labeled = prep.splits.labeled;
    const MultimodalDataset& test = prep.splits.test;
    if (labeled.n == 0 || test.n == 0 || !labeled.labels || !test.labels)
        throw ConfigError("probe needs non-empty labeled and test splits");

    ProbeReport r;
    r.round = ck.round;
    for (Mod m : {Mod::A, Mod::B}) {
        const Encoder& enc = m == Mod::A ? ck.model.a->enc : ck.model.b->enc;
        Tensor tr = reps_of(enc, labeled, m);
        Tensor te = reps_of(enc, test, m);
        double probe = linear_probe(tr, *labeled.labels, te, *test.labels, prep.arch.classes);
        double clf = macro_f1(argmax_rows(classifier_scores(ck.classifier, te)), *test.labels);
        if (m == Mod::A) {
            r.probe_f1_a = probe;
            r.classifier_f1_a = clf;
        } else {
            r.probe_f1_b = probe;
            r.classifier_f1_b = clf;
        }
    }
    return r;
}

CostReport comm_cost(const ExperimentConfig& cfg, std::size_t proxy_rows) {
    validate(cfg);
    ArchSpec arch = resolve_arch(cfg);
    Strategy s = strategy_from(cfg.strategy);

    CostReport r;
    r.strategy = cfg.strategy;
    r.proxy_rows = proxy_rows;
    r.rounds = cfg.rounds;

    std::uint64_t wire = cfg.wire_bytes;
    std::uint64_t m = cfg.sample;
    if (exchanges_knowledge(s)) {
        LayerSet ls = layer_set_from(cfg.layers);
        std::uint64_t per_client = knowledge_scalars(arch, ls, true, true, proxy_rows) * wire;
        r.up_per_round = m * per_client;
        r.down_per_round = m * per_client;
        if (cfg.client_mode == "mixed") {
            r.proxy_once = cfg.mixed_mm * proxy_scalars(arch, true, true, proxy_rows) * wire +
                           cfg.mixed_a * proxy_scalars(arch, true, false, proxy_rows) * wire +
                           cfg.mixed_b * proxy_scalars(arch, false, true, proxy_rows) * wire;
        } else {
            r.proxy_once = cfg.clients * proxy_scalars(arch, true, true, proxy_rows) * wire;
        }
    } else {
        std::uint64_t per_client = param_scalars(arch, true, true) * wire;
        r.up_per_round = m * per_client;
        r.down_per_round = m * per_client;
    }
    return r;
}

}  // namespace fedmekt
