#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedmekt/data.hpp"
#include "fedmekt/federation.hpp"

namespace fedmekt {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Key order is preserved so serialized configs stay readable and diffable.
using ConfigJson = nlohmann::ordered_json;

// Flat experiment description. Weights that only exist for some strategies
// (gamma/beta for the knowledge strategies, mu/tau/alpha_mm for the parameter
// baselines) default per strategy when their keys are absent and must be zero
// everywhere else.
struct ExperimentConfig {
    std::string strategy = "fedmekt-c";
    std::string dataset = "synthetic";  // or "csv"

    std::string csv_path;
    std::string schema_path;
    std::size_t stride = 5;

    std::size_t synth_classes = 4;
    std::size_t synth_d_a = 6, synth_d_b = 6;
    std::size_t synth_n = 2400;
    std::size_t synth_t_seq = 8;
    std::size_t synth_latent = 6;
    double synth_sigma = 0.3;

    std::string arch;  // preset name; empty = dims below (or the synth dims)
    std::size_t d_a = 0, d_b = 0;
    std::size_t h1_a = 4, h1_b = 4;
    std::size_t h2 = 24;
    std::size_t t_seq = 0;  // 0 = preset / synth default
    std::size_t classes = 0;

    std::size_t rounds = 10;
    std::size_t local_epochs = 2;
    std::size_t server_epochs = 2;
    std::size_t classifier_epochs = 2;
    std::size_t clients = 30;
    std::size_t sample = 10;
    std::size_t batch = 64;
    std::size_t proxy_batch = 64;

    double lr_client = 1e-3;
    double lr_server = 1e-3;
    double lr_classifier = 1e-3;
    double gamma = 0.1;
    double beta = 0.1;
    double mu = 0.0;
    double tau = 0.0;
    double alpha_mm = 0.0;

    std::string layers = "both";  // h1 | h2 | both
    bool count_ekd_once = false;
    bool kl_reverse = false;
    std::size_t wire_bytes = 4;

    std::string client_mode = "multimodal";  // or "mixed"
    std::size_t mixed_mm = 0, mixed_a = 0, mixed_b = 0;
    double dirichlet_alpha = 0.0;

    double proxy_fraction = 0.1;
    double labeled_fraction = 0.1;
    double test_fraction = 0.2;
    double proxy_keep = 1.0;
    bool normalize = true;

    std::uint64_t seed_data = 1;
    std::uint64_t seed_model = 2;
    std::uint64_t seed_sampling = 3;
    std::string out_dir = "out";

    bool operator==(const ExperimentConfig&) const = default;
};

// Parses a flat JSON object. Unknown keys are rejected by name; absent
// strategy-conditional weights get their strategy's default; the result is
// validated. Throws ConfigError naming the offending field.
ExperimentConfig config_from_json(const ConfigJson& j);

// Emits every field explicitly, so parse(serialize(c)) == c.
ConfigJson config_to_json(const ExperimentConfig& c);

ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& c, const std::string& path);

bool is_config_key(const std::string& key);

// Every key, in declaration order. The CLI derives its override flags here.
std::vector<std::string> config_keys();

// Coerces "key" and raw value text into the json by the key's declared type,
// for CLI flag overrides. Unknown keys and unparsable values throw.
void set_config_text(ConfigJson& j, const std::string& key, const std::string& value);

void validate(const ExperimentConfig& c);

LayerSet layer_set_from(const std::string& name);
std::string layer_set_name(LayerSet ls);

ArchSpec resolve_arch(const ExperimentConfig& c);
FedConfig fed_config_of(const ExperimentConfig& c);
SynthSpec synth_spec_of(const ExperimentConfig& c);
PartitionSpec partition_spec_of(const ExperimentConfig& c);
SplitSpec split_spec_of(const ExperimentConfig& c);

}  // namespace fedmekt
