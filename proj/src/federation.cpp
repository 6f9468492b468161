#include "fedmekt/federation.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <utility>

#include "fedmekt/evaluation.hpp"

namespace fedmekt {

namespace {

Tensor take_rows(const Tensor& m, const std::vector<int>& rows) {
    std::size_t c = m.cols();
    Tensor out = Tensor::zeros({rows.size(), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = static_cast<std::size_t>(rows[i]);
        if (r >= m.rows()) throw ShapeError("knowledge row index out of range");
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) = m.at(r, j);
    }
    return out;
}

Tensor take_cols(const Tensor& m, std::size_t c0, std::size_t c1) {
    if (c1 > m.cols() || c0 > c1) throw ShapeError("knowledge column slice out of range");
    Tensor out = Tensor::zeros({m.rows(), c1 - c0});
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = m.at(i, j);
    return out;
}

std::vector<Tensor> pick_layers(Embeddings e, LayerSet ls) {
    switch (ls) {
        case LayerSet::H1: return {std::move(e.e1)};
        case LayerSet::H2: return {std::move(e.e2)};
        case LayerSet::Both: break;
    }
    std::vector<Tensor> out;
    out.push_back(std::move(e.e1));
    out.push_back(std::move(e.e2));
    return out;
}

// Column widths the two modalities occupy in the fused embedding at layer
// index l of the selected set.
std::pair<std::size_t, std::size_t> joint_widths(const ArchSpec& arch, LayerSet ls,
                                                 std::size_t l) {
    bool is_h1 = ls != LayerSet::H2 && l == 0;
    if (is_h1) return {arch.h1_a, arch.h1_b};
    return {arch.h2, arch.h2};
}

std::size_t scalars_in(const std::vector<Tensor>& layers) {
    std::size_t s = 0;
    for (const auto& m : layers) s += m.size();
    return s;
}

std::vector<Tape::Ref> const_steps(Tape& tape, const std::vector<Tensor>& steps) {
    std::vector<Tape::Ref> out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(tape.constant(s));
    return out;
}

std::vector<std::vector<int>> chunks_of(const std::vector<int>& order, std::size_t batch) {
    std::vector<std::vector<int>> out;
    if (order.empty()) return out;
    if (batch == 0) batch = order.size();
    for (std::size_t i = 0; i < order.size(); i += batch) {
        std::size_t end = std::min(order.size(), i + batch);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

// Hands out proxy rows in lockstep with private minibatches, reshuffling each
// time the canonical order is exhausted.
class ProxyCycle {
public:
    ProxyCycle(const MultimodalDataset& proxy, std::size_t batch, Rng& rng)
        : order_(proxy.all_rows()), rng_(rng) {
        batch_ = batch == 0 ? order_.size() : std::min(batch, order_.size());
    }

    std::vector<int> next() {
        std::vector<int> rows;
        rows.reserve(batch_);
        while (rows.size() < batch_) {
            if (cur_ >= order_.size()) {
                rng_.shuffle(order_);
                cur_ = 0;
            }
            rows.push_back(order_[cur_++]);
        }
        return rows;
    }

private:
    std::vector<int> order_;
    Rng& rng_;
    std::size_t batch_ = 0;
    std::size_t cur_ = std::numeric_limits<std::size_t>::max();
};

// Teacher knowledge restricted to the given proxy rows, column-sliced to the
// student's segment when a joint-form student is unimodal (modality A owns
// the leading columns of every fused layer).
TeacherBatch teacher_rows(const GlobalKnowledge& g, const std::vector<int>& rows, bool has_a,
                          bool has_b, const ArchSpec& arch, const EkdOptions& opt) {
    TeacherBatch t;
    if (opt.form == KnowledgeForm::Joint) {
        for (std::size_t l = 0; l < g.joint.size(); ++l) {
            Tensor full = take_rows(g.joint[l], rows);
            if (has_a && has_b) {
                t.joint.push_back(std::move(full));
                continue;
            }
            auto [wa, wb] = joint_widths(arch, opt.layers, l);
            t.joint.push_back(has_a ? take_cols(full, 0, wa) : take_cols(full, wa, wa + wb));
        }
    } else {
        if (has_a)
            for (const auto& m : g.a) t.a.push_back(take_rows(m, rows));
        if (has_b)
            for (const auto& m : g.b) t.b.push_back(take_rows(m, rows));
    }
    return t;
}

GlobalKnowledge knowledge_of(const SplitAutoencoder& model, const MultimodalDataset& proxy,
                             LayerSet layers) {
    if (!model.a || !model.b)
        throw std::invalid_argument("global knowledge requires a model holding both modalities");
    GlobalKnowledge g;
    std::vector<int> rows = proxy.all_rows();
    g.a = pick_layers(encode_nograd(model.a->enc, proxy.step_sequence(Mod::A, rows)), layers);
    g.b = pick_layers(encode_nograd(model.b->enc, proxy.step_sequence(Mod::B, rows)), layers);
    for (std::size_t l = 0; l < g.a.size(); ++l)
        g.joint.push_back(fuse(std::optional<Tensor>(g.a[l]), std::optional<Tensor>(g.b[l])));
    return g;
}

std::vector<Tensor*> side_tensors(ModalityAutoencoder& m) {
    return {&m.enc.l1.wx, &m.enc.l1.wh, &m.enc.l1.b, &m.enc.l2.wx, &m.enc.l2.wh, &m.enc.l2.b,
            &m.dec.l1.wx, &m.dec.l1.wh, &m.dec.l1.b, &m.dec.l2.wx, &m.dec.l2.wh, &m.dec.l2.b};
}

std::vector<const Tensor*> side_tensors(const ModalityAutoencoder& m) {
    return {&m.enc.l1.wx, &m.enc.l1.wh, &m.enc.l1.b, &m.enc.l2.wx, &m.enc.l2.wh, &m.enc.l2.b,
            &m.dec.l1.wx, &m.dec.l1.wh, &m.dec.l1.b, &m.dec.l2.wx, &m.dec.l2.wh, &m.dec.l2.b};
}

double baseline_local_update(ClientState& client, BaselineKind kind,
                             const SplitAutoencoder& global_view, const SplitAutoencoder* prev,
                             const FedConfig& cfg, Rng& rng) {
    if (client.data.n == 0)
        throw std::invalid_argument("client " + std::to_string(client.id) +
                                    " has no private data");
    Adam local_opt{AdamConfig{.lr = cfg.lr_client}};
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::vector<int> order = client.data.all_rows();
        rng.shuffle(order);
        for (const auto& rows : chunks_of(order, cfg.batch)) {
            Tape tape;
            LiftedModel lm = lift(tape, client.model);
            ModalBatch batch;
            if (client.has_a) batch.a = const_steps(tape, client.private_steps(Mod::A, rows));
            if (client.has_b) batch.b = const_steps(tape, client.private_steps(Mod::B, rows));
            Tape::Ref loss =
                baseline_client_loss(tape, lm, batch, kind, cfg.mu, cfg.tau, &global_view, prev);
            tape.backward(loss);
            loss_sum += tape.value(loss).scalar_value();
            ++steps;
            local_opt.step(param_refs(client.model), grads_of(tape, lm.leaves));
        }
    }
    return steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps);
}

}  // namespace

Tensor classifier_scores(const Classifier& clf, const Tensor& reps) {
    std::size_t n = reps.rows(), d = reps.cols();
    std::size_t h = clf.w1.cols(), c = clf.w2.cols();
    if (clf.w1.rows() != d) throw ShapeError("classifier input width mismatch");
    Tensor hidden = Tensor::zeros({n, h});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < h; ++j) {
            double v = clf.b1[j];
            for (std::size_t k = 0; k < d; ++k) v += reps.at(i, k) * clf.w1.at(k, j);
            hidden.at(i, j) = v > 0.0 ? v : 0.0;
        }
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            double v = clf.b2[j];
            for (std::size_t k = 0; k < h; ++k) v += hidden.at(i, k) * clf.w2.at(k, j);
            out.at(i, j) = v;
        }
    return out;
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::MektC: return "fedmekt-c";
        case Strategy::MektS: return "fedmekt-s";
        case Strategy::MmFedAvg: return "mm-fedavg";
        case Strategy::MmFedProx: return "mm-fedprox";
        case Strategy::MmMoon: return "mm-moon";
    }
    throw std::logic_error("unknown strategy tag");
}

Strategy strategy_from(const std::string& name) {
    if (name == "fedmekt-c") return Strategy::MektC;
    if (name == "fedmekt-s") return Strategy::MektS;
    if (name == "mm-fedavg") return Strategy::MmFedAvg;
    if (name == "mm-fedprox") return Strategy::MmFedProx;
    if (name == "mm-moon") return Strategy::MmMoon;
    throw std::invalid_argument("unknown strategy '" + name +
                                "' (expected fedmekt-c, fedmekt-s, mm-fedavg, mm-fedprox or "
                                "mm-moon)");
}

bool exchanges_knowledge(Strategy s) {
    return s == Strategy::MektC || s == Strategy::MektS;
}

EkdOptions FedConfig::ekd_options() const {
    EkdOptions o;
    o.form = strategy == Strategy::MektS ? KnowledgeForm::Split : KnowledgeForm::Joint;
    o.layers = layers;
    o.count_once = count_ekd_once;
    o.kl_reverse = kl_reverse;
    return o;
}

std::size_t KnowledgeMessage::scalar_count() const {
    return scalars_in(a) + scalars_in(b);
}

std::size_t GlobalKnowledge::scalar_count(Strategy s) const {
    switch (s) {
        case Strategy::MektC: return scalars_in(joint);
        case Strategy::MektS: return scalars_in(a) + scalars_in(b);
        default: return 0;
    }
}

std::vector<Tensor> ClientState::private_steps(Mod m, const std::vector<int>& rows) const {
    private_reads += rows.size();
    return data.step_sequence(m, rows);
}

std::vector<int> sample_clients(std::size_t total, std::size_t m, Rng& rng) {
    if (m > total)
        throw std::invalid_argument("cannot sample " + std::to_string(m) + " of " +
                                    std::to_string(total) + " clients");
    std::vector<std::size_t> drawn = rng.sample_without_replacement(total, m);
    std::vector<int> out;
    out.reserve(drawn.size());
    for (std::size_t i : drawn) out.push_back(static_cast<int>(i));
    std::sort(out.begin(), out.end());
    return out;
}

GlobalKnowledge server_knowledge(const ServerState& server, const FedConfig& cfg) {
    return knowledge_of(server.model, server.proxy, cfg.layers);
}

LocalUpdateResult client_local_update(ClientState& client, const GlobalKnowledge* broadcast,
                                      const MultimodalDataset& proxy, const FedConfig& cfg,
                                      Rng& rng) {
    if (client.data.n == 0)
        throw std::invalid_argument("client " + std::to_string(client.id) +
                                    " has no private data");
    if (!client.has_a && !client.has_b)
        throw std::invalid_argument("client " + std::to_string(client.id) +
                                    " covers no modality");

    const EkdOptions opt = cfg.ekd_options();
    const ArchSpec& arch = client.model.arch;
    bool distill = broadcast != nullptr && cfg.gamma != 0.0 && proxy.n > 0;

    Adam local_opt{AdamConfig{.lr = cfg.lr_client}};
    ProxyCycle cycle(proxy, cfg.proxy_batch, rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;

    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::vector<int> order = client.data.all_rows();
        rng.shuffle(order);
        for (const auto& rows : chunks_of(order, cfg.batch)) {
            Tape tape;
            LiftedModel lm = lift(tape, client.model);
            ModalBatch priv;
            if (client.has_a) priv.a = const_steps(tape, client.private_steps(Mod::A, rows));
            if (client.has_b) priv.b = const_steps(tape, client.private_steps(Mod::B, rows));
            ModalBatch prox;
            TeacherBatch teacher;
            if (distill) {
                std::vector<int> prows = cycle.next();
                if (client.has_a) prox.a = const_steps(tape, proxy.step_sequence(Mod::A, prows));
                if (client.has_b) prox.b = const_steps(tape, proxy.step_sequence(Mod::B, prows));
                teacher = teacher_rows(*broadcast, prows, client.has_a, client.has_b, arch, opt);
            }
            Tape::Ref loss = client_loss(tape, lm.taped, priv, prox,
                                         distill ? &teacher : nullptr, cfg.gamma, opt);
            tape.backward(loss);
            loss_sum += tape.value(loss).scalar_value();
            ++steps;
            local_opt.step(param_refs(client.model), grads_of(tape, lm.leaves));
        }
    }

    LocalUpdateResult out;
    out.mean_loss = steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps);
    out.message.client_id = client.id;
    out.message.has_a = client.has_a;
    out.message.has_b = client.has_b;
    if (proxy.n > 0) {
        std::vector<int> all = proxy.all_rows();
        if (client.has_a)
            out.message.a = pick_layers(
                encode_nograd(client.model.a->enc, proxy.step_sequence(Mod::A, all)), cfg.layers);
        if (client.has_b)
            out.message.b = pick_layers(
                encode_nograd(client.model.b->enc, proxy.step_sequence(Mod::B, all)), cfg.layers);
    }
    return out;
}

KnowledgeAggregate aggregate_knowledge(const std::vector<KnowledgeMessage>& messages) {
    std::vector<const KnowledgeMessage*> order;
    order.reserve(messages.size());
    for (const auto& m : messages) order.push_back(&m);
    std::sort(order.begin(), order.end(),
              [](const KnowledgeMessage* x, const KnowledgeMessage* y) {
                  return x->client_id < y->client_id;
              });

    KnowledgeAggregate out;
    auto reduce = [&order](Mod which, std::size_t& contrib) {
        std::vector<Tensor> acc;
        for (const KnowledgeMessage* m : order) {
            bool covered = which == Mod::A ? m->has_a : m->has_b;
            if (!covered) continue;
            const std::vector<Tensor>& layers = which == Mod::A ? m->a : m->b;
            if (layers.empty())
                throw std::invalid_argument("client " + std::to_string(m->client_id) +
                                            " declared a modality but sent no knowledge");
            if (acc.empty()) {
                acc = layers;
            } else {
                if (acc.size() != layers.size())
                    throw ShapeError("knowledge layer count mismatch from client " +
                                     std::to_string(m->client_id));
                for (std::size_t l = 0; l < acc.size(); ++l) {
                    if (!acc[l].same_shape(layers[l]))
                        throw ShapeError("knowledge shape mismatch from client " +
                                         std::to_string(m->client_id));
                    for (std::size_t i = 0; i < acc[l].size(); ++i) acc[l][i] += layers[l][i];
                }
            }
            ++contrib;
        }
        if (contrib > 1) {
            double inv = 1.0 / static_cast<double>(contrib);
            for (auto& layer : acc)
                for (std::size_t i = 0; i < layer.size(); ++i) layer[i] *= inv;
        }
        return acc;
    };

    out.collab.a = reduce(Mod::A, out.contrib_a);
    out.collab.b = reduce(Mod::B, out.contrib_b);
    if (out.contrib_a == 0)
        throw std::runtime_error("knowledge aggregation: modality A has no contributors");
    if (out.contrib_b == 0)
        throw std::runtime_error("knowledge aggregation: modality B has no contributors");
    if (out.collab.a.size() != out.collab.b.size())
        throw ShapeError("knowledge aggregation: layer count differs between modalities");
    for (std::size_t l = 0; l < out.collab.a.size(); ++l)
        out.collab.joint.push_back(fuse(std::optional<Tensor>(out.collab.a[l]),
                                        std::optional<Tensor>(out.collab.b[l])));
    return out;
}

ServerUpdateResult server_update(ServerState& server, const GlobalKnowledge& collab,
                                 const FedConfig& cfg, Rng& rng) {
    if (!server.model.a || !server.model.b)
        throw std::invalid_argument("server model must hold both modalities");
    const EkdOptions opt = cfg.ekd_options();
    const MultimodalDataset& proxy = server.proxy;
    double loss_sum = 0.0;
    std::size_t steps = 0;

    for (std::size_t epoch = 0; epoch < cfg.server_epochs; ++epoch) {
        std::vector<int> order = proxy.all_rows();
        rng.shuffle(order);
        for (const auto& rows : chunks_of(order, cfg.proxy_batch)) {
            Tape tape;
            LiftedModel lm = lift(tape, server.model);
            ModalBatch batch;
            batch.a = const_steps(tape, proxy.step_sequence(Mod::A, rows));
            batch.b = const_steps(tape, proxy.step_sequence(Mod::B, rows));
            TeacherBatch teacher = teacher_rows(collab, rows, true, true, server.model.arch, opt);
            Tape::Ref loss = server_loss(tape, lm.taped, batch, &teacher, cfg.beta, opt);
            tape.backward(loss);
            loss_sum += tape.value(loss).scalar_value();
            ++steps;
            server.opt_model.step(param_refs(server.model), grads_of(tape, lm.leaves));
        }
    }

    ServerUpdateResult out;
    out.mean_loss = steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps);
    out.knowledge = knowledge_of(server.model, proxy, cfg.layers);
    return out;
}

double train_classifier(ServerState& server, const FedConfig& cfg) {
    if (!server.model.a || !server.model.b)
        throw std::invalid_argument("classifier training needs both encoder sides");
    if (server.labeled.n == 0) throw std::invalid_argument("labeled split is empty");
    if (!server.labeled.labels)
        throw std::invalid_argument("labeled split carries no labels");

    Tensor reps_a = reps_of(server.model.a->enc, server.labeled, Mod::A);
    Tensor reps_b = reps_of(server.model.b->enc, server.labeled, Mod::B);
    const std::vector<int>& labels = *server.labeled.labels;

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < cfg.classifier_epochs; ++epoch) {
        Tape tape;
        LiftedClassifier lc = lift(tape, server.classifier);
        Tape::Ref loss = classifier_loss(tape, lc.taped, reps_a, reps_b, labels);
        tape.backward(loss);
        loss_sum += tape.value(loss).scalar_value();
        ++steps;
        server.opt_classifier.step(param_refs(server.classifier), grads_of(tape, lc.leaves));
    }
    return steps == 0 ? 0.0 : loss_sum / static_cast<double>(steps);
}

SplitAutoencoder aggregate_parameters(const std::vector<const ClientState*>& clients,
                                      double alpha_mm, const SplitAutoencoder& current) {
    std::vector<const ClientState*> order = clients;
    std::sort(order.begin(), order.end(),
              [](const ClientState* x, const ClientState* y) { return x->id < y->id; });

    SplitAutoencoder out = current;
    auto blend = [&](Mod which) {
        std::vector<std::pair<const ModalityAutoencoder*, double>> sides;
        double total = 0.0;
        for (const ClientState* c : order) {
            bool covered = which == Mod::A ? c->has_a : c->has_b;
            if (!covered) continue;
            const std::optional<ModalityAutoencoder>& side =
                which == Mod::A ? c->model.a : c->model.b;
            if (!side)
                throw std::invalid_argument("client " + std::to_string(c->id) +
                                            " declares a modality its model lacks");
            double w = static_cast<double>(c->data.n) * (c->multimodal() ? alpha_mm : 1.0);
            sides.emplace_back(&*side, w);
            total += w;
        }
        if (sides.empty()) return;  // nobody covers it, keep the current side
        if (total <= 0.0) throw std::invalid_argument("aggregation weights sum to zero");

        std::optional<ModalityAutoencoder>& dst = which == Mod::A ? out.a : out.b;
        if (!dst) dst = *sides.front().first;
        std::vector<Tensor*> dts = side_tensors(*dst);
        for (Tensor* t : dts) std::fill(t->data().begin(), t->data().end(), 0.0);
        for (const auto& [side, w] : sides) {
            double frac = w / total;
            std::vector<const Tensor*> sts = side_tensors(*side);
            for (std::size_t i = 0; i < dts.size(); ++i) {
                if (!dts[i]->same_shape(*sts[i]))
                    throw ShapeError("parameter aggregation shape mismatch");
                for (std::size_t k = 0; k < dts[i]->size(); ++k)
                    (*dts[i])[k] += frac * (*sts[i])[k];
            }
        }
    };
    blend(Mod::A);
    blend(Mod::B);
    return out;
}

Tensor reps_of(const Encoder& enc, const MultimodalDataset& ds, Mod m) {
    return encode_nograd(enc, ds.step_sequence(m, ds.all_rows())).e2;
}

Trainer::Trainer(FedConfig cfg, ArchSpec arch, MultimodalDataset train_shards_source,
                 std::vector<ClientAssignment> parts, MultimodalDataset proxy,
                 MultimodalDataset labeled, MultimodalDataset test, std::uint64_t seed_model,
                 std::uint64_t seed_sampling)
    : cfg_(cfg), arch_(std::move(arch)), test_(std::move(test)), seed_sampling_(seed_sampling) {
    arch_.validate();
    if (parts.empty()) throw std::invalid_argument("cannot train with zero clients");
    if (exchanges_knowledge(cfg_.strategy) && proxy.n == 0)
        throw std::invalid_argument("knowledge exchange needs a non-empty proxy set");

    auto check_dims = [this](const MultimodalDataset& ds, const char* what) {
        if (ds.n == 0) return;
        if (ds.d_a != arch_.d_a || ds.d_b != arch_.d_b || ds.t_seq != arch_.t_seq)
            throw ShapeError(std::string(what) + " dimensions do not match the architecture");
    };
    check_dims(train_shards_source, "train");
    check_dims(proxy, "proxy");
    check_dims(labeled, "labeled");
    check_dims(test_, "test");

    clients_.reserve(parts.size());
    for (std::size_t k = 0; k < parts.size(); ++k) {
        ClientState c;
        c.id = static_cast<int>(k);
        c.has_a = parts[k].has_a;
        c.has_b = parts[k].has_b;
        c.data = train_shards_source.subset(parts[k].rows);
        c.model = init_model(arch_, mix_seed(seed_model, k + 1), c.has_a, c.has_b);
        clients_.push_back(std::move(c));
    }

    server_.model = init_model(arch_, mix_seed(seed_model, 0));
    server_.classifier = init_classifier(arch_, mix_seed(seed_model, 0, 1));
    server_.proxy = std::move(proxy);
    server_.labeled = std::move(labeled);
    server_.opt_model = Adam{AdamConfig{.lr = cfg_.lr_server}};
    server_.opt_classifier = Adam{AdamConfig{.lr = cfg_.lr_classifier}};

    ledger_.wire_bytes = cfg_.wire_bytes;
    if (exchanges_knowledge(cfg_.strategy)) {
        for (const auto& c : clients_)
            ledger_.proxy_once +=
                static_cast<std::uint64_t>(proxy_scalars(arch_, c.has_a, c.has_b,
                                                         server_.proxy.n)) *
                cfg_.wire_bytes;
    }
}

RoundMetrics Trainer::run_round() {
    Rng round_rng(mix_seed(seed_sampling_, next_round_));
    RoundMetrics m = exchanges_knowledge(cfg_.strategy) ? knowledge_round(round_rng)
                                                        : baseline_round(round_rng);
    m.round = next_round_;
    server_.round = ++next_round_;
    m.cumulative_bytes = ledger_.exchanged_total();
    return m;
}

std::vector<RoundMetrics> Trainer::run() {
    std::vector<RoundMetrics> out;
    out.reserve(cfg_.rounds);
    for (std::size_t t = 0; t < cfg_.rounds; ++t) out.push_back(run_round());
    return out;
}

RoundMetrics Trainer::knowledge_round(Rng& round_rng) {
    RoundMetrics m;
    std::size_t want = std::min(cfg_.sample, clients_.size());
    std::vector<int> picked = sample_clients(clients_.size(), want, round_rng);

    GlobalKnowledge broadcast = server_knowledge(server_, cfg_);
    std::uint64_t down = static_cast<std::uint64_t>(broadcast.scalar_count(cfg_.strategy)) *
                         picked.size() * cfg_.wire_bytes;
    ledger_.knowledge_down += down;
    m.knowledge_down_bytes = down;

    std::vector<KnowledgeMessage> msgs;
    msgs.reserve(picked.size());
    double loss_sum = 0.0;
    std::uint64_t up = 0;
    for (int id : picked) {
        Rng crng(mix_seed(seed_sampling_, next_round_, static_cast<std::uint64_t>(id) + 1));
        LocalUpdateResult res =
            client_local_update(clients_[static_cast<std::size_t>(id)], &broadcast,
                                server_.proxy, cfg_, crng);
        loss_sum += res.mean_loss;
        up += static_cast<std::uint64_t>(res.message.scalar_count()) * cfg_.wire_bytes;
        msgs.push_back(std::move(res.message));
    }
    ledger_.knowledge_up += up;
    m.knowledge_up_bytes = up;
    m.client_loss_mean = picked.empty() ? 0.0 : loss_sum / static_cast<double>(picked.size());

    KnowledgeAggregate agg = aggregate_knowledge(msgs);
    m.contrib_a = agg.contrib_a;
    m.contrib_b = agg.contrib_b;

    server_phase(m, &agg.collab);
    return m;
}

RoundMetrics Trainer::baseline_round(Rng& round_rng) {
    RoundMetrics m;
    std::size_t want = std::min(cfg_.sample, clients_.size());
    std::vector<int> picked = sample_clients(clients_.size(), want, round_rng);

    BaselineKind kind = cfg_.strategy == Strategy::MmFedAvg    ? BaselineKind::FedAvg
                        : cfg_.strategy == Strategy::MmFedProx ? BaselineKind::FedProx
                                                               : BaselineKind::Moon;

    std::uint64_t down = 0, up = 0;
    double loss_sum = 0.0;
    std::vector<const ClientState*> touched;
    touched.reserve(picked.size());
    for (int id : picked) {
        ClientState& c = clients_[static_cast<std::size_t>(id)];
        auto wire = static_cast<std::uint64_t>(param_scalars(arch_, c.has_a, c.has_b)) *
                    cfg_.wire_bytes;
        down += wire;

        SplitAutoencoder prev = c.model;  // last round's local model, MOON's negative
        if (c.has_a) c.model.a = server_.model.a;
        if (c.has_b) c.model.b = server_.model.b;
        SplitAutoencoder global_view = c.model;  // the received copy, held sides only

        Rng crng(mix_seed(seed_sampling_, next_round_, static_cast<std::uint64_t>(id) + 1));
        loss_sum += baseline_local_update(c, kind, global_view,
                                          kind == BaselineKind::Moon ? &prev : nullptr, cfg_,
                                          crng);
        up += wire;
        touched.push_back(&c);
        if (c.has_a) ++m.contrib_a;
        if (c.has_b) ++m.contrib_b;
    }
    ledger_.param_down += down;
    m.param_down_bytes = down;
    ledger_.param_up += up;
    m.param_up_bytes = up;
    m.client_loss_mean = picked.empty() ? 0.0 : loss_sum / static_cast<double>(picked.size());

    if (!touched.empty())
        server_.model = aggregate_parameters(touched, cfg_.alpha_mm, server_.model);

    server_phase(m, nullptr);
    return m;
}

void Trainer::server_phase(RoundMetrics& m, const GlobalKnowledge* collab) {
    std::size_t before = total_private_reads();
    if (collab != nullptr) {
        Rng srng(mix_seed(seed_sampling_, next_round_, 0));
        ServerUpdateResult res = server_update(server_, *collab, cfg_, srng);
        m.server_loss_mean = res.mean_loss;
    }
    if (cfg_.classifier_epochs > 0 && server_.labeled.n > 0) train_classifier(server_, cfg_);
    m.probe_f1_a = probe(Mod::A);
    m.probe_f1_b = probe(Mod::B);
    m.classifier_f1 = classifier_f1();
    m.server_private_reads = total_private_reads() - before;
}

double Trainer::probe(Mod m) const {
    if (server_.labeled.n == 0 || test_.n == 0) return 0.0;
    if (!server_.labeled.labels || !test_.labels) return 0.0;
    const Encoder& enc = m == Mod::A ? server_.model.a->enc : server_.model.b->enc;
    Tensor tr = reps_of(enc, server_.labeled, m);
    Tensor te = reps_of(enc, test_, m);
    return linear_probe(tr, *server_.labeled.labels, te, *test_.labels, arch_.classes);
}

double Trainer::classifier_f1() const {
    if (test_.n == 0 || !test_.labels) return 0.0;
    double total = 0.0;
    for (Mod m : {Mod::A, Mod::B}) {
        const Encoder& enc = m == Mod::A ? server_.model.a->enc : server_.model.b->enc;
        Tensor scores = classifier_scores(server_.classifier, reps_of(enc, test_, m));
        total += macro_f1(argmax_rows(scores), *test_.labels);
    }
    return total / 2.0;
}

std::size_t Trainer::total_private_reads() const {
    std::size_t s = 0;
    for (const auto& c : clients_) s += c.private_reads;
    return s;
}

}  // namespace fedmekt
