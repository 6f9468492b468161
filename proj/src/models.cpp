#include "fedmekt/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace fedmekt {

void ArchSpec::validate() const {
    auto req = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("arch: ") + name + " must be positive");
    };
    req(d_a, "d_a");
    req(d_b, "d_b");
    req(h1_a, "h1_a");
    req(h1_b, "h1_b");
    req(h2, "h2");
    req(t_seq, "t_seq");
    req(classes, "classes");
    req(classifier_hidden, "classifier_hidden");
}

namespace {

struct DatasetPreset {
    std::map<std::string, std::size_t> dims;
    std::size_t h1 = 0;   // 0 means "2 for the narrow modality, 4 for the wide"
    std::size_t h2 = 0;
    std::size_t classes = 0;
};

const std::map<std::string, DatasetPreset>& preset_table() {
    static const std::map<std::string, DatasetPreset> table = {
        {"mhealth", {{{"acce", 9}, {"gyro", 6}, {"mage", 6}}, 4, 24, 13}},
        {"urfall", {{{"acce", 3}, {"rgb", 512}, {"depth", 8}}, 0, 32, 3}},
        {"opp", {{{"acce", 24}, {"gyro", 15}}, 10, 24, 18}},
    };
    return table;
}

}  // namespace

ArchSpec arch_preset(const std::string& name) {
    auto colon = name.find(':');
    auto dash = name.find('-', colon == std::string::npos ? 0 : colon + 1);
    if (colon == std::string::npos || dash == std::string::npos)
        throw std::invalid_argument("arch preset '" + name +
                                    "' is not of the form dataset:modality-modality");
    std::string ds = name.substr(0, colon);
    std::string ma = name.substr(colon + 1, dash - colon - 1);
    std::string mb = name.substr(dash + 1);

    auto it = preset_table().find(ds);
    if (it == preset_table().end())
        throw std::invalid_argument("unknown dataset preset '" + ds + "'");
    const DatasetPreset& p = it->second;
    auto da = p.dims.find(ma);
    auto db = p.dims.find(mb);
    if (da == p.dims.end() || db == p.dims.end() || ma == mb)
        throw std::invalid_argument("dataset '" + ds + "' has no modality pair '" + ma + "-" +
                                    mb + "'");

    ArchSpec a;
    a.modality_a = ma;
    a.modality_b = mb;
    a.d_a = da->second;
    a.d_b = db->second;
    if (p.h1 != 0) {
        a.h1_a = a.h1_b = p.h1;
    } else {
        // narrow modality gets the smaller first hidden layer
        a.h1_a = a.d_a <= a.d_b ? 2 : 4;
        a.h1_b = a.d_a <= a.d_b ? 4 : 2;
    }
    a.h2 = p.h2;
    a.classes = p.classes;
    a.t_seq = 10;
    return a;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    t.requires_grad = true;
    return t;
}

}  // namespace

LstmLayer init_lstm(std::size_t in, std::size_t hidden, Rng& rng) {
    LstmLayer l;
    l.wx = uniform_init({in, 4 * hidden}, in, rng);
    l.wh = uniform_init({hidden, 4 * hidden}, hidden, rng);
    l.b = uniform_init({4 * hidden}, hidden, rng);
    return l;
}

std::size_t lstm_param_count(std::size_t in, std::size_t hidden) {
    return 4 * (in + hidden) * hidden + 4 * hidden;
}

ModalityAutoencoder init_autoencoder(std::size_t d, std::size_t h1, std::size_t h2, Rng& rng) {
    ModalityAutoencoder m;
    m.enc.l1 = init_lstm(d, h1, rng);
    m.enc.l2 = init_lstm(h1, h2, rng);
    m.dec.l1 = init_lstm(h2, h1, rng);
    m.dec.l2 = init_lstm(h1, d, rng);
    return m;
}

SplitAutoencoder init_model(const ArchSpec& arch, std::uint64_t seed, bool with_a, bool with_b) {
    arch.validate();
    if (!with_a && !with_b)
        throw std::invalid_argument("init_model: at least one modality required");
    SplitAutoencoder m;
    m.arch = arch;
    // Each modality draws from its own derived stream so a unimodal holder
    // initializes identically to the matching side of a multimodal one.
    if (with_a) {
        Rng rng(mix_seed(seed, 1));
        m.a = init_autoencoder(arch.d_a, arch.h1_a, arch.h2, rng);
    }
    if (with_b) {
        Rng rng(mix_seed(seed, 2));
        m.b = init_autoencoder(arch.d_b, arch.h1_b, arch.h2, rng);
    }
    return m;
}

Classifier init_classifier(const ArchSpec& arch, std::uint64_t seed) {
    Rng rng(seed);
    Classifier c;
    c.w1 = uniform_init({arch.h2, arch.classifier_hidden}, arch.h2, rng);
    c.b1 = uniform_init({arch.classifier_hidden}, arch.h2, rng);
    c.w2 = uniform_init({arch.classifier_hidden, arch.classes}, arch.classifier_hidden, rng);
    c.b2 = uniform_init({arch.classes}, arch.classifier_hidden, rng);
    return c;
}

// ---------------------------------------------------------------------------
// Parameter enumeration
// ---------------------------------------------------------------------------

namespace {

template <typename AE, typename Fn>
void walk_autoencoder(const std::string& prefix, AE& ae, const Fn& fn) {
    auto layer = [&](const std::string& lp, auto& l) {
        fn(lp + ".wx", l.wx);
        fn(lp + ".wh", l.wh);
        fn(lp + ".b", l.b);
    };
    layer(prefix + ".enc.l1", ae.enc.l1);
    layer(prefix + ".enc.l2", ae.enc.l2);
    layer(prefix + ".dec.l1", ae.dec.l1);
    layer(prefix + ".dec.l2", ae.dec.l2);
}

}  // namespace

void for_each_param(SplitAutoencoder& m,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
    if (m.a) walk_autoencoder("a", *m.a, fn);
    if (m.b) walk_autoencoder("b", *m.b, fn);
}

void for_each_param(const SplitAutoencoder& m,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    if (m.a) walk_autoencoder("a", *m.a, fn);
    if (m.b) walk_autoencoder("b", *m.b, fn);
}

void for_each_param(Classifier& c, const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("clf.w1", c.w1);
    fn("clf.b1", c.b1);
    fn("clf.w2", c.w2);
    fn("clf.b2", c.b2);
}

void for_each_param(const Classifier& c,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
    fn("clf.w1", c.w1);
    fn("clf.b1", c.b1);
    fn("clf.w2", c.w2);
    fn("clf.b2", c.b2);
}

ParamRefs param_refs(SplitAutoencoder& m) {
    ParamRefs out;
    for_each_param(m, [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
    return out;
}

ParamRefs param_refs(Classifier& c) {
    ParamRefs out;
    for_each_param(c, [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
    return out;
}

std::size_t param_count(const SplitAutoencoder& m) {
    std::size_t n = 0;
    for_each_param(m, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

std::size_t param_count(const Classifier& c) {
    std::size_t n = 0;
    for_each_param(c, [&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

// ---------------------------------------------------------------------------
// Taped forwards
// ---------------------------------------------------------------------------

namespace {

TapedLstm lift_layer(Tape& tape, LstmLayer& l, std::vector<Tape::Ref>* leaves) {
    TapedLstm t{tape.leaf(l.wx), tape.leaf(l.wh), tape.leaf(l.b)};
    if (leaves) {
        leaves->push_back(t.wx);
        leaves->push_back(t.wh);
        leaves->push_back(t.b);
    }
    return t;
}

TapedLstm lift_layer_const(Tape& tape, const LstmLayer& l) {
    return {tape.constant(l.wx), tape.constant(l.wh), tape.constant(l.b)};
}

TapedAutoencoder lift_ae(Tape& tape, ModalityAutoencoder& ae, std::vector<Tape::Ref>* leaves) {
    TapedAutoencoder t;
    t.enc.l1 = lift_layer(tape, ae.enc.l1, leaves);
    t.enc.l2 = lift_layer(tape, ae.enc.l2, leaves);
    t.dec.l1 = lift_layer(tape, ae.dec.l1, leaves);
    t.dec.l2 = lift_layer(tape, ae.dec.l2, leaves);
    return t;
}

TapedAutoencoder lift_ae_const(Tape& tape, const ModalityAutoencoder& ae) {
    TapedAutoencoder t;
    t.enc.l1 = lift_layer_const(tape, ae.enc.l1);
    t.enc.l2 = lift_layer_const(tape, ae.enc.l2);
    t.dec.l1 = lift_layer_const(tape, ae.dec.l1);
    t.dec.l2 = lift_layer_const(tape, ae.dec.l2);
    return t;
}

}  // namespace

LiftedModel lift(Tape& tape, SplitAutoencoder& m) {
    LiftedModel out;
    if (m.a) out.taped.a = lift_ae(tape, *m.a, &out.leaves);
    if (m.b) out.taped.b = lift_ae(tape, *m.b, &out.leaves);
    return out;
}

TapedModel lift_const(Tape& tape, const SplitAutoencoder& m) {
    TapedModel out;
    if (m.a) out.a = lift_ae_const(tape, *m.a);
    if (m.b) out.b = lift_ae_const(tape, *m.b);
    return out;
}

LiftedClassifier lift(Tape& tape, Classifier& c) {
    LiftedClassifier out;
    out.taped = {tape.leaf(c.w1), tape.leaf(c.b1), tape.leaf(c.w2), tape.leaf(c.b2)};
    out.leaves = {out.taped.w1, out.taped.b1, out.taped.w2, out.taped.b2};
    return out;
}

TapedClassifier lift_const(Tape& tape, const Classifier& c) {
    return {tape.constant(c.w1), tape.constant(c.b1), tape.constant(c.w2), tape.constant(c.b2)};
}

std::vector<Tensor> grads_of(const Tape& tape, const std::vector<Tape::Ref>& leaves) {
    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (auto l : leaves) out.push_back(tape.grad(l));
    return out;
}

namespace {

// Runs one LSTM layer over the whole sequence, returning the per-timestep
// hidden states. in_steps: t refs of [n, in].
std::vector<Tape::Ref> lstm_layer_seq(Tape& tape, const TapedLstm& l,
                                      const std::vector<Tape::Ref>& in_steps) {
    if (in_steps.empty()) throw ShapeError("lstm layer: empty sequence");
    std::size_t n = tape.value(in_steps[0]).rows();
    std::size_t h = tape.value(l.wh).rows();
    Tape::Ref hstate = tape.constant(Tensor::zeros({n, h}));
    Tape::Ref cstate = tape.constant(Tensor::zeros({n, h}));
    std::vector<Tape::Ref> hs;
    hs.reserve(in_steps.size());
    for (Tape::Ref x : in_steps) {
        Tape::Ref hc = tape.lstm_cell(x, hstate, cstate, l.wx, l.wh, l.b);
        hstate = tape.slice_cols(hc, 0, h);
        cstate = tape.slice_cols(hc, h, 2 * h);
        hs.push_back(hstate);
    }
    return hs;
}

}  // namespace

EncOut encode_seq(Tape& tape, const TapedEncoder& enc, const std::vector<Tape::Ref>& x_steps) {
    std::vector<Tape::Ref> h1_seq = lstm_layer_seq(tape, enc.l1, x_steps);
    std::vector<Tape::Ref> h2_seq = lstm_layer_seq(tape, enc.l2, h1_seq);
    return {h1_seq.back(), h2_seq.back()};
}

std::vector<Tape::Ref> decode_seq(Tape& tape, const TapedDecoder& dec, Tape::Ref h,
                                  std::size_t t_seq) {
    std::vector<Tape::Ref> in_steps(t_seq, h);  // code replicated at every step
    std::vector<Tape::Ref> h1_seq = lstm_layer_seq(tape, dec.l1, in_steps);
    return lstm_layer_seq(tape, dec.l2, h1_seq);
}

Tape::Ref classify(Tape& tape, const TapedClassifier& clf, Tape::Ref h) {
    Tape::Ref z1 = tape.relu(tape.add(tape.matmul(h, clf.w1), clf.b1));
    return tape.add(tape.matmul(z1, clf.w2), clf.b2);
}

Embeddings encode_nograd(const Encoder& enc, const std::vector<Tensor>& x_steps) {
    Tape tape;
    TapedEncoder te;
    te.l1 = {tape.constant(enc.l1.wx), tape.constant(enc.l1.wh), tape.constant(enc.l1.b)};
    te.l2 = {tape.constant(enc.l2.wx), tape.constant(enc.l2.wh), tape.constant(enc.l2.b)};
    std::vector<Tape::Ref> steps;
    steps.reserve(x_steps.size());
    for (const Tensor& x : x_steps) steps.push_back(tape.constant(x));
    EncOut out = encode_seq(tape, te, steps);
    return {tape.value(out.e1), tape.value(out.e2)};
}

Tensor fuse(const std::optional<Tensor>& e_a, const std::optional<Tensor>& e_b) {
    if (e_a && e_b) {
        if (e_a->rows() != e_b->rows())
            throw ShapeError("fuse: row counts differ, " + shape_str(e_a->shape()) + " vs " +
                             shape_str(e_b->shape()));
        std::size_t n = e_a->rows(), p = e_a->cols(), q = e_b->cols();
        Tensor out = Tensor::zeros({n, p + q});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < p; ++j) out.at(i, j) = e_a->at(i, j);
            for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = e_b->at(i, j);
        }
        return out;
    }
    if (e_a) return *e_a;
    if (e_b) return *e_b;
    throw ShapeError("fuse: both embeddings absent");
}

Tape::Ref fuse(Tape& tape, std::optional<Tape::Ref> e_a, std::optional<Tape::Ref> e_b) {
    if (e_a && e_b) return tape.concat(*e_a, *e_b);
    if (e_a) return *e_a;
    if (e_b) return *e_b;
    throw ShapeError("fuse: both embeddings absent");
}

}  // namespace fedmekt
