#include "fedmekt/config.hpp"

#include <fstream>
#include <functional>
#include <limits>
#include <vector>

namespace fedmekt {

namespace {

struct Field {
    const char* name;
    std::function<void(ExperimentConfig&, const ConfigJson&)> set;
    std::function<ConfigJson(const ExperimentConfig&)> get;
    std::function<ConfigJson(const std::string&)> coerce;  // raw flag text -> json value
};

void add_str(std::vector<Field>& out, const char* name, std::string ExperimentConfig::* p) {
    out.push_back({name,
                   [p, name](ExperimentConfig& c, const ConfigJson& v) {
                       if (!v.is_string())
                           throw ConfigError(std::string(name) + " must be a string");
                       c.*p = v.get<std::string>();
                   },
                   [p](const ExperimentConfig& c) { return ConfigJson(c.*p); },
                   [](const std::string& s) { return ConfigJson(s); }});
}

template <typename T>
void add_uint(std::vector<Field>& out, const char* name, T ExperimentConfig::* p) {
    out.push_back({name,
                   [p, name](ExperimentConfig& c, const ConfigJson& v) {
                       if (!v.is_number_integer() && !v.is_number_unsigned())
                           throw ConfigError(std::string(name) +
                                             " must be a non-negative integer");
                       if (v.is_number_integer() && v.get<std::int64_t>() < 0)
                           throw ConfigError(std::string(name) +
                                             " must be a non-negative integer");
                       c.*p = v.get<T>();
                   },
                   [p](const ExperimentConfig& c) { return ConfigJson(c.*p); },
                   [name](const std::string& s) {
                       try {
                           std::size_t pos = 0;
                           unsigned long long v = std::stoull(s, &pos);
                           if (pos != s.size()) throw std::invalid_argument(s);
                           return ConfigJson(v);
                       } catch (const std::exception&) {
                           throw ConfigError(std::string(name) + ": '" + s +
                                             "' is not a non-negative integer");
                       }
                   }});
}

void add_f64(std::vector<Field>& out, const char* name, double ExperimentConfig::* p) {
    out.push_back({name,
                   [p, name](ExperimentConfig& c, const ConfigJson& v) {
                       if (!v.is_number())
                           throw ConfigError(std::string(name) + " must be a number");
                       c.*p = v.get<double>();
                   },
                   [p](const ExperimentConfig& c) { return ConfigJson(c.*p); },
                   [name](const std::string& s) {
                       try {
                           std::size_t pos = 0;
                           double v = std::stod(s, &pos);
                           if (pos != s.size()) throw std::invalid_argument(s);
                           return ConfigJson(v);
                       } catch (const std::exception&) {
                           throw ConfigError(std::string(name) + ": '" + s +
                                             "' is not a number");
                       }
                   }});
}

void add_bool(std::vector<Field>& out, const char* name, bool ExperimentConfig::* p) {
    out.push_back({name,
                   [p, name](ExperimentConfig& c, const ConfigJson& v) {
                       if (!v.is_boolean())
                           throw ConfigError(std::string(name) + " must be true or false");
                       c.*p = v.get<bool>();
                   },
                   [p](const ExperimentConfig& c) { return ConfigJson(c.*p); },
                   [name](const std::string& s) {
                       if (s == "true" || s == "1") return ConfigJson(true);
                       if (s == "false" || s == "0") return ConfigJson(false);
                       throw ConfigError(std::string(name) + ": '" + s +
                                         "' is not true or false");
                   }});
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        using C = ExperimentConfig;
        add_str(f, "strategy", &C::strategy);
        add_str(f, "dataset", &C::dataset);
        add_str(f, "csv_path", &C::csv_path);
        add_str(f, "schema_path", &C::schema_path);
        add_uint(f, "stride", &C::stride);
        add_uint(f, "synth_classes", &C::synth_classes);
        add_uint(f, "synth_d_a", &C::synth_d_a);
        add_uint(f, "synth_d_b", &C::synth_d_b);
        add_uint(f, "synth_n", &C::synth_n);
        add_uint(f, "synth_t_seq", &C::synth_t_seq);
        add_uint(f, "synth_latent", &C::synth_latent);
        add_f64(f, "synth_sigma", &C::synth_sigma);
        add_str(f, "arch", &C::arch);
        add_uint(f, "d_a", &C::d_a);
        add_uint(f, "d_b", &C::d_b);
        add_uint(f, "h1_a", &C::h1_a);
        add_uint(f, "h1_b", &C::h1_b);
        add_uint(f, "h2", &C::h2);
        add_uint(f, "t_seq", &C::t_seq);
        add_uint(f, "classes", &C::classes);
        add_uint(f, "rounds", &C::rounds);
        add_uint(f, "local_epochs", &C::local_epochs);
        add_uint(f, "server_epochs", &C::server_epochs);
        add_uint(f, "classifier_epochs", &C::classifier_epochs);
        add_uint(f, "clients", &C::clients);
        add_uint(f, "sample", &C::sample);
        add_uint(f, "batch", &C::batch);
        add_uint(f, "proxy_batch", &C::proxy_batch);
        add_f64(f, "lr_client", &C::lr_client);
        add_f64(f, "lr_server", &C::lr_server);
        add_f64(f, "lr_classifier", &C::lr_classifier);
        add_f64(f, "gamma", &C::gamma);
        add_f64(f, "beta", &C::beta);
        add_f64(f, "mu", &C::mu);
        add_f64(f, "tau", &C::tau);
        add_f64(f, "alpha_mm", &C::alpha_mm);
        add_str(f, "layers", &C::layers);
        add_bool(f, "count_ekd_once", &C::count_ekd_once);
        add_bool(f, "kl_reverse", &C::kl_reverse);
        add_uint(f, "wire_bytes", &C::wire_bytes);
        add_str(f, "client_mode", &C::client_mode);
        add_uint(f, "mixed_mm", &C::mixed_mm);
        add_uint(f, "mixed_a", &C::mixed_a);
        add_uint(f, "mixed_b", &C::mixed_b);
        add_f64(f, "dirichlet_alpha", &C::dirichlet_alpha);
        add_f64(f, "proxy_fraction", &C::proxy_fraction);
        add_f64(f, "labeled_fraction", &C::labeled_fraction);
        add_f64(f, "test_fraction", &C::test_fraction);
        add_f64(f, "proxy_keep", &C::proxy_keep);
        add_bool(f, "normalize", &C::normalize);
        add_uint(f, "seed_data", &C::seed_data);
        add_uint(f, "seed_model", &C::seed_model);
        add_uint(f, "seed_sampling", &C::seed_sampling);
        add_str(f, "out_dir", &C::out_dir);
        return f;
    }();
    return table;
}

const Field* find_field(const std::string& name) {
    for (const Field& f : fields())
        if (name == f.name) return &f;
    return nullptr;
}

Strategy strategy_of(const ExperimentConfig& c) {
    try {
        return strategy_from(c.strategy);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("strategy: ") + e.what());
    }
}

}  // namespace

bool is_config_key(const std::string& key) {
    return find_field(key) != nullptr;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.emplace_back(f.name);
    return out;
}

ExperimentConfig config_from_json(const ConfigJson& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    for (const auto& [key, value] : j.items()) {
        const Field* f = find_field(key);
        if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
        f->set(c, value);
    }

    // Strategy-conditional weights default only when their keys are absent.
    Strategy s = strategy_of(c);
    bool knowledge = exchanges_knowledge(s);
    if (!j.contains("gamma")) c.gamma = knowledge ? 0.1 : 0.0;
    if (!j.contains("beta")) c.beta = knowledge ? 0.1 : 0.0;
    if (!j.contains("tau")) c.tau = s == Strategy::MmMoon ? 0.5 : 0.0;
    if (!j.contains("alpha_mm")) c.alpha_mm = knowledge ? 0.0 : 100.0;

    validate(c);
    return c;
}

ConfigJson config_to_json(const ExperimentConfig& c) {
    ConfigJson j = ConfigJson::object();
    for (const Field& f : fields()) j[f.name] = f.get(c);
    return j;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    ConfigJson j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void save_config(const ExperimentConfig& c, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("cannot write config file '" + path + "'");
    os << config_to_json(c).dump(2) << '\n';
}

void set_config_text(ConfigJson& j, const std::string& key, const std::string& value) {
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError("unknown config key '" + key + "'");
    j[key] = f->coerce(value);
}

void validate(const ExperimentConfig& c) {
    Strategy s = strategy_of(c);

    if (c.dataset != "synthetic" && c.dataset != "csv")
        throw ConfigError("dataset must be 'synthetic' or 'csv'");
    if (c.dataset == "csv") {
        if (c.csv_path.empty())
            throw ConfigError("csv_path is required when dataset is 'csv'");
        if (c.schema_path.empty())
            throw ConfigError("schema_path is required when dataset is 'csv'");
        if (c.stride == 0) throw ConfigError("stride must be at least 1");
    } else {
        if (c.synth_classes < 2) throw ConfigError("synth_classes must be at least 2");
        if (c.synth_d_a == 0 || c.synth_d_b == 0)
            throw ConfigError("synth_d_a and synth_d_b must be at least 1");
        if (c.synth_n == 0) throw ConfigError("synth_n must be at least 1");
        if (c.synth_t_seq == 0) throw ConfigError("synth_t_seq must be at least 1");
        if (c.synth_latent == 0) throw ConfigError("synth_latent must be at least 1");
        if (c.synth_sigma < 0.0) throw ConfigError("synth_sigma must be non-negative");
    }

    layer_set_from(c.layers);

    if (c.client_mode != "multimodal" && c.client_mode != "mixed")
        throw ConfigError("client_mode must be 'multimodal' or 'mixed'");
    if (c.client_mode == "mixed" && c.mixed_mm + c.mixed_a + c.mixed_b != c.clients)
        throw ConfigError("mixed_mm + mixed_a + mixed_b must equal clients");
    if (c.clients == 0) throw ConfigError("clients must be at least 1");
    if (c.sample == 0) throw ConfigError("sample must be at least 1");
    if (c.sample > c.clients) throw ConfigError("sample cannot exceed clients");

    if (c.lr_client <= 0.0) throw ConfigError("lr_client must be positive");
    if (c.lr_server <= 0.0) throw ConfigError("lr_server must be positive");
    if (c.lr_classifier <= 0.0) throw ConfigError("lr_classifier must be positive");
    if (c.gamma < 0.0) throw ConfigError("gamma must be non-negative");
    if (c.beta < 0.0) throw ConfigError("beta must be non-negative");
    if (c.mu < 0.0) throw ConfigError("mu must be non-negative");
    if (c.tau < 0.0) throw ConfigError("tau must be non-negative");
    if (c.dirichlet_alpha < 0.0) throw ConfigError("dirichlet_alpha must be non-negative");

    auto fraction = [](double v, const char* name) {
        if (!(v > 0.0 && v < 1.0))
            throw ConfigError(std::string(name) + " must lie in (0,1)");
    };
    fraction(c.proxy_fraction, "proxy_fraction");
    fraction(c.labeled_fraction, "labeled_fraction");
    fraction(c.test_fraction, "test_fraction");
    if (c.proxy_fraction + c.labeled_fraction + c.test_fraction >= 1.0)
        throw ConfigError(
            "proxy_fraction + labeled_fraction + test_fraction must leave training data");
    if (!(c.proxy_keep > 0.0 && c.proxy_keep <= 1.0))
        throw ConfigError("proxy_keep must lie in (0,1]");
    if (c.wire_bytes == 0) throw ConfigError("wire_bytes must be at least 1");

    auto must_be_zero = [&c](double v, const char* name) {
        if (v != 0.0)
            throw ConfigError(std::string(name) + " does not apply to strategy '" + c.strategy +
                              "'; leave it unset or zero");
    };
    if (exchanges_knowledge(s)) {
        must_be_zero(c.mu, "mu");
        must_be_zero(c.tau, "tau");
        must_be_zero(c.alpha_mm, "alpha_mm");
    } else {
        must_be_zero(c.gamma, "gamma");
        must_be_zero(c.beta, "beta");
        if (c.alpha_mm <= 0.0)
            throw ConfigError("alpha_mm must be positive for parameter-averaging strategies");
        if (s == Strategy::MmFedAvg) {
            must_be_zero(c.mu, "mu");
            must_be_zero(c.tau, "tau");
        }
        if (s == Strategy::MmFedProx) must_be_zero(c.tau, "tau");
        if (s == Strategy::MmMoon && c.tau <= 0.0)
            throw ConfigError("tau must be positive for mm-moon");
    }

    resolve_arch(c);  // surfaces preset typos and missing dims early
}

LayerSet layer_set_from(const std::string& name) {
    if (name == "h1") return LayerSet::H1;
    if (name == "h2") return LayerSet::H2;
    if (name == "both") return LayerSet::Both;
    throw ConfigError("layers must be 'h1', 'h2' or 'both' (got '" + name + "')");
}

std::string layer_set_name(LayerSet ls) {
    switch (ls) {
        case LayerSet::H1: return "h1";
        case LayerSet::H2: return "h2";
        case LayerSet::Both: return "both";
    }
    throw std::logic_error("unknown layer set");
}

ArchSpec resolve_arch(const ExperimentConfig& c) {
    ArchSpec a;
    if (!c.arch.empty()) {
        try {
            a = arch_preset(c.arch);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("arch: ") + e.what());
        }
        if (c.t_seq != 0) a.t_seq = c.t_seq;
        return a;
    }
    if (c.dataset == "synthetic") {
        a.modality_a = "sa";
        a.modality_b = "sb";
        a.d_a = c.synth_d_a;
        a.d_b = c.synth_d_b;
        a.t_seq = c.synth_t_seq;
        a.classes = c.synth_classes;
    } else {
        if (c.d_a == 0 || c.d_b == 0)
            throw ConfigError("d_a and d_b are required without an arch preset");
        if (c.t_seq == 0) throw ConfigError("t_seq is required without an arch preset");
        if (c.classes == 0) throw ConfigError("classes is required without an arch preset");
        a.d_a = c.d_a;
        a.d_b = c.d_b;
        a.t_seq = c.t_seq;
        a.classes = c.classes;
    }
    a.h1_a = c.h1_a;
    a.h1_b = c.h1_b;
    a.h2 = c.h2;
    try {
        a.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("architecture: ") + e.what());
    }
    return a;
}

FedConfig fed_config_of(const ExperimentConfig& c) {
    FedConfig f;
    f.strategy = strategy_from(c.strategy);
    f.rounds = c.rounds;
    f.local_epochs = c.local_epochs;
    f.server_epochs = c.server_epochs;
    f.classifier_epochs = c.classifier_epochs;
    f.sample = c.sample;
    f.batch = c.batch;
    f.proxy_batch = c.proxy_batch;
    f.lr_client = c.lr_client;
    f.lr_server = c.lr_server;
    f.lr_classifier = c.lr_classifier;
    f.gamma = c.gamma;
    f.beta = c.beta;
    f.mu = c.mu;
    f.tau = c.tau;
    f.alpha_mm = c.alpha_mm;
    f.layers = layer_set_from(c.layers);
    f.count_ekd_once = c.count_ekd_once;
    f.kl_reverse = c.kl_reverse;
    f.wire_bytes = c.wire_bytes;
    return f;
}

SynthSpec synth_spec_of(const ExperimentConfig& c) {
    SynthSpec s;
    s.classes = c.synth_classes;
    s.d_a = c.synth_d_a;
    s.d_b = c.synth_d_b;
    s.n = c.synth_n;
    s.t_seq = c.synth_t_seq;
    s.latent_dim = c.synth_latent;
    s.sigma = c.synth_sigma;
    return s;
}

PartitionSpec partition_spec_of(const ExperimentConfig& c) {
    PartitionSpec p;
    p.clients = c.clients;
    p.mode = c.client_mode == "mixed" ? ClientMode::Mixed : ClientMode::Multimodal;
    p.mixed_mm = c.mixed_mm;
    p.mixed_a = c.mixed_a;
    p.mixed_b = c.mixed_b;
    p.dirichlet_alpha = c.dirichlet_alpha;
    return p;
}

SplitSpec split_spec_of(const ExperimentConfig& c) {
    SplitSpec s;
    s.proxy = c.proxy_fraction;
    s.labeled = c.labeled_fraction;
    s.test = c.test_fraction;
    s.proxy_keep = c.proxy_keep;
    return s;
}

}  // namespace fedmekt
