#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmekt/checkpoint.hpp"
#include "fedmekt/config.hpp"
#include "fedmekt/data.hpp"
#include "fedmekt/federation.hpp"

namespace fedmekt {

// Everything a Trainer needs, derived from the config alone: loaded (or
// generated) data, role splits, normalization, client sharding.
struct PreparedData {
    ArchSpec arch;
    Splits splits;
    std::vector<ClientAssignment> parts;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

struct ExperimentResult {
    ArchSpec arch;
    std::vector<RoundMetrics> rounds;
    double probe_f1_a = 0.0;  // averaged over the last ten rounds
    double probe_f1_b = 0.0;
    double classifier_f1 = 0.0;
    TransferLedger ledger;
    std::string out_dir;
};

// Runs the full protocol and writes metrics.jsonl, summary.csv,
// config.resolved and a final checkpoint under cfg.out_dir. With zero rounds
// only the freshly initialized model is probed.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SweepPoint {
    std::string label;      // "key=value,key=value", also the subdirectory name
    ConfigJson overrides;   // the grid assignment behind this point
    ExperimentResult result;
};

// Cartesian product of the grid (first key varies slowest) applied on top of
// the raw pre-default base json, so strategy-conditional weight defaults
// re-resolve per point. Each point runs in out_dir/<label>; a merged
// sweep.csv lands in out_dir.
std::vector<SweepPoint> run_sweep(const ConfigJson& base, const ConfigJson& grid,
                                  const std::string& out_dir);

struct ProbeReport {
    std::uint64_t round = 0;
    double probe_f1_a = 0.0, probe_f1_b = 0.0;
    double classifier_f1_a = 0.0, classifier_f1_b = 0.0;
};

// Re-derives the data from the config, loads the checkpoint and evaluates it:
// linear probes per modality plus the stored classifier's macro F1.
ProbeReport probe_checkpoint(const ExperimentConfig& cfg, const std::string& path);

struct CostReport {
    std::string strategy;
    std::size_t proxy_rows = 0;
    std::size_t rounds = 0;
    std::uint64_t up_per_round = 0;
    std::uint64_t down_per_round = 0;
    std::uint64_t proxy_once = 0;  // one-time proxy distribution, knowledge strategies only

    std::uint64_t total() const {
        return static_cast<std::uint64_t>(rounds) * (up_per_round + down_per_round) + proxy_once;
    }
};

// Closed-form per-round traffic. Assumes every sampled client covers both
// modalities, which is exact in multimodal mode and an upper bound on upstream
// traffic under mixed cohorts.
CostReport comm_cost(const ExperimentConfig& cfg, std::size_t proxy_rows);

}  // namespace fedmekt
