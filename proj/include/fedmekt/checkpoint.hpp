#pragma once

#include <cstdint>
#include <string>

#include "fedmekt/federation.hpp"

namespace fedmekt {

// Round-tagged snapshot of the server's trainable state. Datasets and
// optimizer moments are rebuilt from the config and seeds, not stored.
struct Checkpoint {
    std::uint64_t round = 0;
    ArchSpec arch;
    SplitAutoencoder model;
    Classifier classifier;
};

// Binary format: magic, version, round, architecture, then every parameter
// tensor in canonical walk order with its name and shape. Little-endian
// regardless of host. Loading verifies all of it and throws std::runtime_error
// with the offending detail on any mismatch or truncation.
void save_checkpoint(const std::string& path, const ServerState& server);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fedmekt
