#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedmekt/adam.hpp"
#include "fedmekt/data.hpp"
#include "fedmekt/losses.hpp"
#include "fedmekt/models.hpp"
#include "fedmekt/rng.hpp"

namespace fedmekt {

// MektC / MektS exchange embedding knowledge over the proxy set (fused or
// per-modality); the Mm* baselines exchange model parameters.
enum class Strategy { MektC, MektS, MmFedAvg, MmFedProx, MmMoon };

std::string strategy_name(Strategy s);
Strategy strategy_from(const std::string& name);
bool exchanges_knowledge(Strategy s);

struct FedConfig {
    Strategy strategy = Strategy::MektC;
    std::size_t rounds = 10;            // communication rounds T
    std::size_t local_epochs = 2;       // N
    std::size_t server_epochs = 2;      // R
    std::size_t classifier_epochs = 2;  // P
    std::size_t sample = 10;            // clients drawn per round m
    std::size_t batch = 64;             // private minibatch rows
    std::size_t proxy_batch = 64;
    double lr_client = 1e-3;
    double lr_server = 1e-3;
    double lr_classifier = 1e-3;
    double gamma = 0.1;      // client-side distillation weight
    double beta = 0.1;       // server-side distillation weight
    double mu = 0.0;         // prox / contrastive weight
    double tau = 0.5;        // contrastive temperature
    double alpha_mm = 100.0; // parameter-averaging boost for multimodal clients
    LayerSet layers = LayerSet::Both;
    bool count_ekd_once = false;
    bool kl_reverse = false;
    std::size_t wire_bytes = 4;  // serialized scalar width for accounting

    EkdOptions ekd_options() const;
};

// One client's embedding knowledge over the full proxy set, one matrix per
// selected layer for each covered modality, rows in canonical proxy order.
struct KnowledgeMessage {
    int client_id = -1;
    bool has_a = false, has_b = false;
    std::vector<Tensor> a, b;

    std::size_t scalar_count() const;
};

// The server's (or the aggregated collaborative) knowledge: per-modality
// layers plus their fused concatenation.
struct GlobalKnowledge {
    std::vector<Tensor> a, b, joint;

    // Scalars actually broadcast under the given strategy.
    std::size_t scalar_count(Strategy s) const;
};

struct ClientState {
    int id = 0;
    bool has_a = true, has_b = true;
    MultimodalDataset data;  // private shard
    SplitAutoencoder model;

    // Instrumented access to private rows; the counter proves the server
    // phase never touches them.
    std::vector<Tensor> private_steps(Mod m, const std::vector<int>& rows) const;
    mutable std::size_t private_reads = 0;

    bool multimodal() const { return has_a && has_b; }
};

struct ServerState {
    SplitAutoencoder model;
    Classifier classifier;
    MultimodalDataset proxy;    // unlabeled, shared with every client
    MultimodalDataset labeled;  // server-side labeled data
    Adam opt_model;
    Adam opt_classifier;
    std::size_t round = 0;
};

// Cumulative byte accounting, split by payload kind.
struct TransferLedger {
    std::size_t wire_bytes = 4;
    std::uint64_t knowledge_up = 0;
    std::uint64_t knowledge_down = 0;
    std::uint64_t param_up = 0;
    std::uint64_t param_down = 0;
    std::uint64_t proxy_once = 0;  // one-time proxy distribution

    std::uint64_t exchanged_total() const {
        return knowledge_up + knowledge_down + param_up + param_down;
    }
};

struct RoundMetrics {
    std::size_t round = 0;
    double probe_f1_a = 0.0, probe_f1_b = 0.0;
    double classifier_f1 = 0.0;
    double client_loss_mean = 0.0;
    double server_loss_mean = 0.0;
    std::size_t contrib_a = 0, contrib_b = 0;
    std::uint64_t knowledge_up_bytes = 0, knowledge_down_bytes = 0;
    std::uint64_t param_up_bytes = 0, param_down_bytes = 0;
    std::uint64_t cumulative_bytes = 0;
    std::size_t server_private_reads = 0;
};

// --- protocol operations ---------------------------------------------------

// Uniform draw of m distinct client indices out of [0, total), ascending.
std::vector<int> sample_clients(std::size_t total, std::size_t m, Rng& rng);

// The server's own embedding knowledge over the full proxy set.
GlobalKnowledge server_knowledge(const ServerState& server, const FedConfig& cfg);

struct LocalUpdateResult {
    KnowledgeMessage message;
    double mean_loss = 0.0;
};

// N epochs of Adam on the local objective over lockstep private/proxy
// minibatches, then a full proxy pass producing the knowledge message.
// broadcast may be null (first contact): the distillation term is skipped.
LocalUpdateResult client_local_update(ClientState& client, const GlobalKnowledge* broadcast,
                                      const MultimodalDataset& proxy, const FedConfig& cfg,
                                      Rng& rng);

struct KnowledgeAggregate {
    GlobalKnowledge collab;
    std::size_t contrib_a = 0, contrib_b = 0;
};

// Per-modality elementwise mean over the clients covering that modality,
// reduced in ascending client-id order, then fused.
KnowledgeAggregate aggregate_knowledge(const std::vector<KnowledgeMessage>& messages);

struct ServerUpdateResult {
    double mean_loss = 0.0;
    GlobalKnowledge knowledge;  // fresh knowledge from the updated encoders
};

// R epochs of Adam on the server objective over proxy minibatches, distilling
// toward the collaborative knowledge.
ServerUpdateResult server_update(ServerState& server, const GlobalKnowledge& collab,
                                 const FedConfig& cfg, Rng& rng);

// P epochs of Adam on the classifier over frozen-encoder representations of
// the labeled set. Returns the mean objective value.
double train_classifier(ServerState& server, const FedConfig& cfg);

// Per-modality weighted parameter mean: weight n_k, multiplied by alpha_mm
// for multimodal clients, renormalized per modality over its holders. A
// modality nobody covers falls back to the provided current model's side.
SplitAutoencoder aggregate_parameters(const std::vector<const ClientState*>& clients,
                                      double alpha_mm, const SplitAutoencoder& current);

// Final-layer representations of every sample in a dataset.
Tensor reps_of(const Encoder& enc, const MultimodalDataset& ds, Mod m);

// Classifier logits over precomputed representations, plain math (no tape).
Tensor classifier_scores(const Classifier& clf, const Tensor& reps);

// --- round orchestration ---------------------------------------------------

class Trainer {
public:
    Trainer(FedConfig cfg, ArchSpec arch, MultimodalDataset train_shards_source,
            std::vector<ClientAssignment> parts, MultimodalDataset proxy,
            MultimodalDataset labeled, MultimodalDataset test, std::uint64_t seed_model,
            std::uint64_t seed_sampling);

    RoundMetrics run_round();
    std::vector<RoundMetrics> run();  // cfg.rounds rounds

    const FedConfig& config() const { return cfg_; }
    const ServerState& server() const { return server_; }
    ServerState& server() { return server_; }
    const std::vector<ClientState>& clients() const { return clients_; }
    const TransferLedger& ledger() const { return ledger_; }
    const MultimodalDataset& test_set() const { return test_; }

    // Linear-probe F1 of the current global encoder for one modality.
    double probe(Mod m) const;
    // Macro F1 of the generalized classifier, averaged over both modalities.
    double classifier_f1() const;

private:
    RoundMetrics knowledge_round(Rng& round_rng);
    RoundMetrics baseline_round(Rng& round_rng);
    void server_phase(RoundMetrics& m, const GlobalKnowledge* collab);
    std::size_t total_private_reads() const;

    FedConfig cfg_;
    ArchSpec arch_;
    std::vector<ClientState> clients_;
    ServerState server_;
    MultimodalDataset test_;
    TransferLedger ledger_;
    std::uint64_t seed_sampling_ = 0;
    std::size_t next_round_ = 0;
};

}  // namespace fedmekt
