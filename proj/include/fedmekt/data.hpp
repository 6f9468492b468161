#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedmekt/tensor.hpp"

namespace fedmekt {

enum class Mod { A, B };

// Windowed two-modality sequence dataset. Samples are [t_seq, d_M] windows
// stored flat per modality; labels are class ids in [0, classes) and may be
// absent (the proxy split drops them). groups carries a participant id per
// sample when the source data had one.
struct MultimodalDataset {
    std::string name_a = "A", name_b = "B";
    std::size_t n = 0, t_seq = 0, d_a = 0, d_b = 0, classes = 0;
    std::vector<double> xa, xb;  // [n][t_seq][d]
    std::optional<std::vector<int>> labels;
    std::optional<std::vector<int>> groups;

    std::size_t dim(Mod m) const { return m == Mod::A ? d_a : d_b; }

    double value(Mod m, std::size_t i, std::size_t t, std::size_t j) const;
    double& value(Mod m, std::size_t i, std::size_t t, std::size_t j);

    // [rows.size(), d_M] matrix of one timestep across the given samples.
    Tensor step_matrix(Mod m, const std::vector<int>& rows, std::size_t t) const;
    // t_seq such matrices, ready to feed an encoder.
    std::vector<Tensor> step_sequence(Mod m, const std::vector<int>& rows) const;

    std::vector<int> labels_of(const std::vector<int>& rows) const;

    MultimodalDataset subset(const std::vector<int>& rows) const;
    std::vector<int> all_rows() const;

    void validate() const;
};

// Column mapping for the CSV loader. Group column is optional ("" = none).
struct CsvSchema {
    std::string name_a, name_b;
    std::vector<std::string> cols_a, cols_b;
    std::string label_col;
    std::string group_col;
};

CsvSchema load_schema(const std::string& path);

// Reads one timestep per row and windows the stream into [t_seq] samples at
// the given stride. Windows never span group boundaries; the window label is
// the majority row label (ties broken toward the smaller class id). Labels
// are remapped to dense ids 0..classes-1 in ascending raw order.
MultimodalDataset load_csv(const std::string& path, const CsvSchema& schema, std::size_t t_seq,
                           std::size_t stride);

// Linear latent generator: per class a latent vector, per modality a fixed
// projection, i.i.d. Gaussian noise per element per timestep. Classes are
// assigned round-robin so counts are balanced.
struct SynthSpec {
    std::size_t classes = 4;
    std::size_t d_a = 6, d_b = 6;
    std::size_t n = 2400;
    std::size_t t_seq = 8;
    std::size_t latent_dim = 6;
    double sigma = 0.3;
};

MultimodalDataset synth_generate(const SynthSpec& spec, std::uint64_t seed);

// Client sharding. Balanced mode deals samples round-robin after a shuffle;
// dirichlet_alpha > 0 skews the per-client label mix instead. Every client
// ends up with at least one sample. Mixed mode additionally assigns modality
// coverage: the first mixed_mm clients hold both modalities, then mixed_a
// hold only A, then mixed_b only B.
enum class ClientMode { Multimodal, Mixed };

struct PartitionSpec {
    std::size_t clients = 30;
    ClientMode mode = ClientMode::Multimodal;
    std::size_t mixed_mm = 0, mixed_a = 0, mixed_b = 0;
    double dirichlet_alpha = 0.0;  // 0 = balanced split
};

struct ClientAssignment {
    std::vector<int> rows;
    bool has_a = true, has_b = true;
};

std::vector<ClientAssignment> partition(const MultimodalDataset& data, const PartitionSpec& spec,
                                        std::uint64_t seed);

// Disjoint splits. When group ids exist, proxy/labeled/test hold out whole
// groups; otherwise rows are shuffled and cut. Proxy labels are dropped and
// the proxy can be sub-sampled to proxy_keep of its size.
struct SplitSpec {
    double proxy = 0.1;
    double labeled = 0.1;
    double test = 0.1;
    double proxy_keep = 1.0;
};

struct Splits {
    MultimodalDataset train, proxy, labeled, test;
};

Splits make_splits(const MultimodalDataset& data, const SplitSpec& spec, std::uint64_t seed);

// Per-feature z-score statistics. Variances below 1e-12 are clamped to 1 and
// reported through the returned flag so callers can warn.
struct NormStats {
    std::vector<double> mean_a, std_a, mean_b, std_b;
    bool clamped = false;
};

NormStats compute_norm_stats(const MultimodalDataset& data);
void apply_norm(MultimodalDataset& data, const NormStats& stats);
void invert_norm(MultimodalDataset& data, const NormStats& stats);

}  // namespace fedmekt
