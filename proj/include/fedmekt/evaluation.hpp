#pragma once

#include <cstddef>
#include <vector>

#include "fedmekt/losses.hpp"
#include "fedmekt/models.hpp"
#include "fedmekt/tensor.hpp"

namespace fedmekt {

// Macro-averaged F1: per-class F1 over every class present in either vector,
// averaged with equal class weight.
double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels);

// Row-wise argmax of a score matrix.
std::vector<int> argmax_rows(const Tensor& scores);

// Mean of the last k entries (all of them when fewer exist).
double avg_last_k(const std::vector<double>& xs, std::size_t k);

struct ProbeConfig {
    double lr = 0.01;
    std::size_t epochs = 100;
};

// Linear evaluation of frozen representations: a zero-initialized affine map
// trained full-batch with Adam on cross-entropy, scored by macro F1 on the
// held-out representations.
double linear_probe(const Tensor& train_reps, const std::vector<int>& train_labels,
                    const Tensor& test_reps, const std::vector<int>& test_labels,
                    std::size_t classes, const ProbeConfig& cfg = {});

// Closed-form message sizes, in scalars. Bytes on the wire are these counts
// times the configured scalar width.

// One knowledge transfer (either direction) for a client holding the given
// modalities: one matrix row per proxy sample per selected layer. The joint
// and per-modality forms move the same number of scalars.
std::size_t knowledge_scalars(const ArchSpec& arch, LayerSet layers, bool has_a, bool has_b,
                              std::size_t proxy_rows);

// One full parameter copy of the held modalities' autoencoders.
std::size_t param_scalars(const ArchSpec& arch, bool has_a, bool has_b);

// One-time cost of shipping the proxy set itself to a client.
std::size_t proxy_scalars(const ArchSpec& arch, bool has_a, bool has_b,
                          std::size_t proxy_rows);

}  // namespace fedmekt
