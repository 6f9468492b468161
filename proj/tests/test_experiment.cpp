#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "fedmekt/evaluation.hpp"
#include "fedmekt/experiment.hpp"

using namespace fedmekt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const char* stem) {
        path = fs::temp_directory_path() /
               (std::string(stem) + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string sub(const char* name) const { return (path / name).string(); }
};

ExperimentConfig tiny_cfg(const std::string& out_dir) {
    ExperimentConfig c;
    c.synth_classes = 3;
    c.synth_d_a = 3;
    c.synth_d_b = 3;
    c.synth_n = 120;
    c.synth_t_seq = 3;
    c.synth_latent = 3;
    c.h1_a = 2;
    c.h1_b = 2;
    c.h2 = 4;
    c.rounds = 2;
    c.local_epochs = 1;
    c.server_epochs = 1;
    c.classifier_epochs = 1;
    c.clients = 4;
    c.sample = 2;
    c.batch = 16;
    c.proxy_batch = 16;
    c.out_dir = out_dir;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(bool(is));
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// Raw user-style json for tiny_cfg: only the explicitly chosen keys, so
// strategy-conditional weights keep defaulting per sweep point.
ConfigJson raw_base() {
    ConfigJson j = ConfigJson::object();
    j["synth_classes"] = 3;
    j["synth_d_a"] = 3;
    j["synth_d_b"] = 3;
    j["synth_n"] = 120;
    j["synth_t_seq"] = 3;
    j["synth_latent"] = 3;
    j["h1_a"] = 2;
    j["h1_b"] = 2;
    j["h2"] = 4;
    j["rounds"] = 2;
    j["local_epochs"] = 1;
    j["server_epochs"] = 1;
    j["classifier_epochs"] = 1;
    j["clients"] = 4;
    j["sample"] = 2;
    j["batch"] = 16;
    j["proxy_batch"] = 16;
    return j;
}

}  // namespace

TEST_CASE("a run writes its artifacts and reports the final averages") {
    TempDir tmp("exp_artifacts");
    ExperimentConfig cfg = tiny_cfg(tmp.sub("run"));
    ExperimentResult res = run_experiment(cfg);

    CHECK(res.rounds.size() == 2);
    CHECK(res.out_dir == cfg.out_dir);
    CHECK(res.arch.modality_a == "sa");

    fs::path out(cfg.out_dir);
    std::string metrics = slurp(out / "metrics.jsonl");
    CHECK(line_count(metrics) == 2);

    // each line parses and carries the round number
    std::istringstream is(metrics);
    std::string line;
    std::size_t round = 0;
    while (std::getline(is, line)) {
        ConfigJson j = ConfigJson::parse(line);
        CHECK(j.at("round") == round);
        CHECK(j.at("cumulative_bytes").get<std::uint64_t>() > 0);
        CHECK(j.at("server_private_reads") == 0);
        ++round;
    }

    std::string csv = slurp(out / "summary.csv");
    CHECK(line_count(csv) == 3);
    CHECK(csv.find("strategy,modality_pair,task_modality,probe_f1,classifier_f1,total_bytes") ==
          0);
    CHECK(csv.find("fedmekt-c,sa-sb,sa,") != std::string::npos);
    CHECK(csv.find("fedmekt-c,sa-sb,sb,") != std::string::npos);

    ExperimentConfig back = config_from_json(ConfigJson::parse(slurp(out / "config.resolved")));
    CHECK(back == cfg);

    CHECK(fs::exists(out / "checkpoint_round_2.bin"));

    // two rounds only: the "last ten" average covers both
    CHECK(res.probe_f1_a ==
          doctest::Approx((res.rounds[0].probe_f1_a + res.rounds[1].probe_f1_a) / 2));
}

TEST_CASE("identical configs replay byte-identical metrics") {
    TempDir tmp("exp_replay");
    ExperimentConfig a = tiny_cfg(tmp.sub("a"));
    ExperimentConfig b = tiny_cfg(tmp.sub("b"));
    run_experiment(a);
    run_experiment(b);
    CHECK(slurp(fs::path(a.out_dir) / "metrics.jsonl") ==
          slurp(fs::path(b.out_dir) / "metrics.jsonl"));
    CHECK(slurp(fs::path(a.out_dir) / "summary.csv") ==
          slurp(fs::path(b.out_dir) / "summary.csv"));
}

TEST_CASE("zero rounds probes the fresh model only") {
    TempDir tmp("exp_zero");
    ExperimentConfig cfg = tiny_cfg(tmp.sub("zero"));
    cfg.rounds = 0;
    ExperimentResult res = run_experiment(cfg);

    CHECK(res.rounds.empty());
    std::string metrics = slurp(fs::path(cfg.out_dir) / "metrics.jsonl");
    CHECK(line_count(metrics) == 1);
    ConfigJson j = ConfigJson::parse(metrics);
    CHECK(j.at("round") == 0);
    CHECK(j.at("cumulative_bytes") == 0);
    CHECK(j.at("probe_f1_a").get<double>() == res.probe_f1_a);
    CHECK(res.probe_f1_a >= 0.0);
    CHECK(res.probe_f1_a <= 1.0);
    CHECK(fs::exists(fs::path(cfg.out_dir) / "checkpoint_round_0.bin"));
}

TEST_CASE("a sweep expands the grid in order and merges one csv") {
    TempDir tmp("exp_sweep");
    ConfigJson base = raw_base();
    base["rounds"] = 1;

    ConfigJson grid = ConfigJson::object();
    grid["server_epochs"] = ConfigJson::array({1, 2});
    grid["local_epochs"] = ConfigJson::array({1, 2});

    std::vector<SweepPoint> pts = run_sweep(base, grid, tmp.sub("sweep"));
    REQUIRE(pts.size() == 4);
    CHECK(pts[0].label == "server_epochs=1,local_epochs=1");
    CHECK(pts[1].label == "server_epochs=1,local_epochs=2");
    CHECK(pts[2].label == "server_epochs=2,local_epochs=1");
    CHECK(pts[3].label == "server_epochs=2,local_epochs=2");
    for (const SweepPoint& pt : pts) {
        CHECK(fs::exists(fs::path(pt.result.out_dir) / "metrics.jsonl"));
        CHECK(pt.result.rounds.size() == 1);
    }

    std::string csv = slurp(fs::path(tmp.sub("sweep")) / "sweep.csv");
    CHECK(line_count(csv) == 5);
    CHECK(csv.find("label,server_epochs,local_epochs,strategy,probe_f1_a,probe_f1_b,"
                   "classifier_f1,total_bytes") == 0);
    CHECK(csv.find("\"server_epochs=2,local_epochs=1\",2,1,fedmekt-c,") != std::string::npos);

    // Every row parses to the same field count as the header.
    auto field_count = [](const std::string& line) {
        std::size_t n = 1;
        bool quoted = false;
        for (char c : line) {
            if (c == '"') quoted = !quoted;
            else if (c == ',' && !quoted) ++n;
        }
        return n;
    };
    std::istringstream lines(csv);
    std::string header, line;
    std::getline(lines, header);
    while (std::getline(lines, line))
        CHECK(field_count(line) == field_count(header));

    SUBCASE("strategy axes re-resolve conditional defaults per point") {
        ConfigJson sgrid = ConfigJson::object();
        sgrid["strategy"] = ConfigJson::array({"fedmekt-c", "mm-fedavg"});
        std::vector<SweepPoint> spts = run_sweep(base, sgrid, tmp.sub("strategies"));
        REQUIRE(spts.size() == 2);
        CHECK(spts[0].result.ledger.param_up == 0);
        CHECK(spts[0].result.ledger.knowledge_up > 0);
        CHECK(spts[1].result.ledger.knowledge_up == 0);
        CHECK(spts[1].result.ledger.param_up > 0);
    }

    SUBCASE("bad grids are refused") {
        ConfigJson bad = ConfigJson::object();
        bad["roundz"] = ConfigJson::array({1});
        CHECK_THROWS_WITH_AS(run_sweep(base, bad, tmp.sub("bad")),
                             "unknown config key 'roundz' in sweep grid", ConfigError);
        bad = ConfigJson::object();
        bad["rounds"] = ConfigJson::array();
        CHECK_THROWS_AS(run_sweep(base, bad, tmp.sub("bad")), ConfigError);
        CHECK_THROWS_AS(run_sweep(base, ConfigJson::object(), tmp.sub("bad")), ConfigError);
    }
}

TEST_CASE("probing the final checkpoint reproduces the final round metrics") {
    TempDir tmp("exp_probe");
    ExperimentConfig cfg = tiny_cfg(tmp.sub("run"));
    ExperimentResult res = run_experiment(cfg);

    std::string ckpt = (fs::path(cfg.out_dir) / "checkpoint_round_2.bin").string();
    ProbeReport r = probe_checkpoint(cfg, ckpt);
    CHECK(r.round == 2);
    CHECK(r.probe_f1_a == res.rounds.back().probe_f1_a);
    CHECK(r.probe_f1_b == res.rounds.back().probe_f1_b);
    CHECK((r.classifier_f1_a + r.classifier_f1_b) / 2.0 == res.rounds.back().classifier_f1);

    SUBCASE("an architecture mismatch is refused") {
        ExperimentConfig other = cfg;
        other.h2 = 6;
        CHECK_THROWS_WITH_AS(probe_checkpoint(other, ckpt),
                             "checkpoint architecture does not match this config", ConfigError);
    }
}

TEST_CASE("cost accounting matches the scalar-count closed forms") {
    ExperimentConfig cfg = tiny_cfg("unused");
    ArchSpec arch = resolve_arch(cfg);
    std::size_t rows = 12;

    SUBCASE("knowledge strategies ship embeddings and the proxy set") {
        CostReport r = comm_cost(cfg, rows);
        std::uint64_t per_client =
            knowledge_scalars(arch, LayerSet::Both, true, true, rows) * cfg.wire_bytes;
        CHECK(r.up_per_round == cfg.sample * per_client);
        CHECK(r.down_per_round == r.up_per_round);
        CHECK(r.proxy_once ==
              cfg.clients * proxy_scalars(arch, true, true, rows) * cfg.wire_bytes);
        CHECK(r.total() == cfg.rounds * (r.up_per_round + r.down_per_round) + r.proxy_once);
    }

    SUBCASE("parameter baselines ship weights and no proxy") {
        cfg.strategy = "mm-fedavg";
        cfg.gamma = 0.0;
        cfg.beta = 0.0;
        cfg.alpha_mm = 100.0;
        CostReport r = comm_cost(cfg, rows);
        std::uint64_t per_client = param_scalars(arch, true, true) * cfg.wire_bytes;
        CHECK(r.up_per_round == cfg.sample * per_client);
        CHECK(r.down_per_round == r.up_per_round);
        CHECK(r.proxy_once == 0);
    }

    SUBCASE("mixed cohorts pay proxy distribution per covered modality") {
        cfg.client_mode = "mixed";
        cfg.mixed_mm = 2;
        cfg.mixed_a = 1;
        cfg.mixed_b = 1;
        CostReport r = comm_cost(cfg, rows);
        std::uint64_t w = cfg.wire_bytes;
        CHECK(r.proxy_once == 2 * proxy_scalars(arch, true, true, rows) * w +
                                  proxy_scalars(arch, true, false, rows) * w +
                                  proxy_scalars(arch, false, true, rows) * w);
    }
}

TEST_CASE("a run's ledger agrees with the cost tool on per-round traffic") {
    TempDir tmp("exp_cost_agree");
    ExperimentConfig cfg = tiny_cfg(tmp.sub("run"));
    ExperimentResult res = run_experiment(cfg);
    std::size_t proxy_rows = prepare_data(cfg).splits.proxy.n;
    CostReport cost = comm_cost(cfg, proxy_rows);
    CHECK(res.ledger.knowledge_up == cost.rounds * cost.up_per_round);
    CHECK(res.ledger.knowledge_down == cost.rounds * cost.down_per_round);
    CHECK(res.ledger.proxy_once == cost.proxy_once);
    CHECK(res.ledger.param_up == 0);
}
