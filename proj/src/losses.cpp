#include "fedmekt/losses.hpp"

#include <cmath>

namespace fedmekt {

std::size_t layer_count(LayerSet ls) { return ls == LayerSet::Both ? 2 : 1; }

Tape::Ref mse(Tape& tape, Tape::Ref a, Tape::Ref b) {
    return tape.mean(tape.sq_diff(a, b));
}

Tape::Ref seq_mse(Tape& tape, const std::vector<Tape::Ref>& x,
                  const std::vector<Tape::Ref>& xr) {
    if (x.size() != xr.size() || x.empty())
        throw ShapeError("seq_mse: sequence lengths differ (" + std::to_string(x.size()) +
                         " vs " + std::to_string(xr.size()) + ")");
    Tape::Ref total = tape.sum(tape.sq_diff(x[0], xr[0]));
    std::size_t elems = tape.value(x[0]).size();
    for (std::size_t t = 1; t < x.size(); ++t) {
        total = tape.add(total, tape.sum(tape.sq_diff(x[t], xr[t])));
        elems += tape.value(x[t]).size();
    }
    return tape.scale(total, 1.0 / static_cast<double>(elems));
}

Tape::Ref ekd_loss(Tape& tape, Tape::Ref student, const Tensor& teacher, bool kl_reverse) {
    const Tensor& S = tape.value(student);
    if (S.shape() != teacher.shape())
        throw ShapeError("ekd_loss: student " + shape_str(S.shape()) + " vs teacher " +
                         shape_str(teacher.shape()));
    std::size_t n = S.rank() == 2 ? S.rows() : 1;
    std::size_t d = S.rank() == 2 ? S.cols() : S.shape().at(0);

    // Teacher log-probabilities, computed off-tape: no gradient ever flows into
    // the broadcast knowledge. Must use the same arithmetic as log_softmax so
    // that an identical student cancels to exactly zero divergence.
    Tensor lp = teacher;
    Tensor p = teacher;
    double plogp = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double* lrow = lp.data().data() + i * d;
        double* prow = p.data().data() + i * d;
        double mx = lrow[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, lrow[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(lrow[j] - mx);
        double lse = mx + std::log(z);
        for (std::size_t j = 0; j < d; ++j) {
            lrow[j] -= lse;
            prow[j] = std::exp(lrow[j]);
            plogp += lrow[j] * prow[j];
        }
    }

    double inv_n = 1.0 / static_cast<double>(n);
    if (!kl_reverse) {
        // KL(p || q) = sum p log p - sum p log q, averaged over rows.
        Tape::Ref ls = tape.log_softmax(student);
        Tape::Ref cross = tape.sum(tape.mul(ls, tape.constant(p)));
        return tape.shift(tape.scale(cross, -inv_n), plogp * inv_n);
    }
    // KL(q || p) with q = softmax(student).
    Tape::Ref ls = tape.log_softmax(student);
    Tape::Ref q = tape.softmax(student);
    Tape::Ref diff = tape.sub(ls, tape.constant(lp));
    return tape.scale(tape.sum(tape.mul(q, diff)), inv_n);
}

Tape::Ref ce_loss(Tape& tape, Tape::Ref logits, const std::vector<int>& labels) {
    const Tensor& L = tape.value(logits);
    if (L.rank() != 2 || L.rows() != labels.size())
        throw ShapeError("ce_loss: logits " + shape_str(L.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    Tape::Ref picked = tape.gather_cols(tape.log_softmax(logits), labels);
    return tape.scale(tape.mean(picked), -1.0);
}

double prox_value(const SplitAutoencoder& w, const SplitAutoencoder& w_ref) {
    std::vector<const Tensor*> mine, theirs;
    for_each_param(w, [&](const std::string&, const Tensor& t) { mine.push_back(&t); });
    for_each_param(w_ref, [&](const std::string&, const Tensor& t) { theirs.push_back(&t); });
    if (mine.size() != theirs.size())
        throw ShapeError("prox_value: models have different parameter lists");
    double total = 0.0;
    for (std::size_t i = 0; i < mine.size(); ++i) {
        if (!mine[i]->same_shape(*theirs[i]))
            throw ShapeError("prox_value: parameter shape mismatch at index " +
                             std::to_string(i));
        for (std::size_t k = 0; k < mine[i]->size(); ++k) {
            double diff = (*mine[i])[k] - (*theirs[i])[k];
            total += diff * diff;
        }
    }
    return total;
}

Tape::Ref prox_penalty(Tape& tape, const std::vector<Tape::Ref>& leaves,
                       const SplitAutoencoder& w_ref) {
    std::vector<const Tensor*> refs;
    for_each_param(w_ref, [&](const std::string&, const Tensor& t) { refs.push_back(&t); });
    if (leaves.size() != refs.size())
        throw ShapeError("prox_penalty: " + std::to_string(leaves.size()) + " leaves vs " +
                         std::to_string(refs.size()) + " reference parameters");
    Tape::Ref total = tape.constant_scalar(0.0);
    for (std::size_t i = 0; i < leaves.size(); ++i)
        total = tape.add(total, tape.sum(tape.sq_diff(leaves[i], tape.constant(*refs[i]))));
    return total;
}

namespace {

// Row-wise cosine similarity between a taped matrix and a constant one.
Tape::Ref cosine_rows(Tape& tape, Tape::Ref z, const Tensor& other) {
    const Tensor& Z = tape.value(z);
    if (Z.shape() != other.shape())
        throw ShapeError("contrastive: representation " + shape_str(Z.shape()) + " vs " +
                         shape_str(other.shape()));
    std::size_t n = Z.rows(), d = Z.cols();
    Tensor norms = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += other.at(i, j) * other.at(i, j);
        norms[i] = std::sqrt(s);
    }
    Tape::Ref dot = tape.sum_last(tape.mul(z, tape.constant(other)));
    Tape::Ref zn = tape.sqrt_(tape.shift(tape.sum_last(tape.mul(z, z)), 1e-24));
    Tape::Ref denom = tape.shift(tape.mul(zn, tape.constant(norms)), 1e-12);
    return tape.div(dot, denom);
}

}  // namespace

Tape::Ref contrastive_loss(Tape& tape, Tape::Ref z, const Tensor& z_glob,
                           const std::vector<Tensor>& z_prev, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("contrastive: tau must be positive");
    // With no negatives every row scores log(exp(s)) - s, identically zero;
    // return the exact value instead of its rounding noise.
    if (z_prev.empty()) return tape.constant_scalar(0.0);
    Tape::Ref s_pos = tape.scale(cosine_rows(tape, z, z_glob), 1.0 / tau);
    Tape::Ref denom = tape.exp_(s_pos);
    for (const Tensor& prev : z_prev) {
        Tape::Ref s_neg = tape.scale(cosine_rows(tape, z, prev), 1.0 / tau);
        denom = tape.add(denom, tape.exp_(s_neg));
    }
    Tape::Ref per_row = tape.sub(tape.log(denom), s_pos);
    return tape.mean(per_row);
}

// ---------------------------------------------------------------------------
// Composite objectives
// ---------------------------------------------------------------------------

namespace {

std::vector<Tape::Ref> selected_layers(const EncOut& e, LayerSet ls) {
    switch (ls) {
        case LayerSet::H1: return {e.e1};
        case LayerSet::H2: return {e.e2};
        case LayerSet::Both: return {e.e1, e.e2};
    }
    return {};
}

void check_teacher_layers(const std::vector<Tensor>& layers, LayerSet ls, const char* what) {
    if (layers.size() != layer_count(ls))
        throw ShapeError(std::string("teacher knowledge '") + what + "' has " +
                         std::to_string(layers.size()) + " layers, expected " +
                         std::to_string(layer_count(ls)));
}

// Sum of per-layer distillation terms against a joint or per-modality teacher.
Tape::Ref ekd_terms(Tape& tape, const std::optional<EncOut>& ea, const std::optional<EncOut>& eb,
                    const TeacherBatch& teacher, const EkdOptions& opt, std::size_t n_sources) {
    if (opt.form == KnowledgeForm::Joint) {
        check_teacher_layers(teacher.joint, opt.layers, "joint");
        std::vector<Tape::Ref> la = ea ? selected_layers(*ea, opt.layers) : std::vector<Tape::Ref>{};
        std::vector<Tape::Ref> lb = eb ? selected_layers(*eb, opt.layers) : std::vector<Tape::Ref>{};
        Tape::Ref total = tape.constant_scalar(0.0);
        for (std::size_t l = 0; l < layer_count(opt.layers); ++l) {
            std::optional<Tape::Ref> sa = ea ? std::optional<Tape::Ref>(la[l]) : std::nullopt;
            std::optional<Tape::Ref> sb = eb ? std::optional<Tape::Ref>(lb[l]) : std::nullopt;
            Tape::Ref joint = fuse(tape, sa, sb);
            total = tape.add(total, ekd_loss(tape, joint, teacher.joint[l], opt.kl_reverse));
        }
        if (!opt.count_once && n_sources > 1)
            total = tape.scale(total, static_cast<double>(n_sources));
        return total;
    }
    // Split form: each modality distills against its own share.
    Tape::Ref total = tape.constant_scalar(0.0);
    if (ea) {
        check_teacher_layers(teacher.a, opt.layers, "a");
        auto la = selected_layers(*ea, opt.layers);
        for (std::size_t l = 0; l < la.size(); ++l)
            total = tape.add(total, ekd_loss(tape, la[l], teacher.a[l], opt.kl_reverse));
    }
    if (eb) {
        check_teacher_layers(teacher.b, opt.layers, "b");
        auto lb = selected_layers(*eb, opt.layers);
        for (std::size_t l = 0; l < lb.size(); ++l)
            total = tape.add(total, ekd_loss(tape, lb[l], teacher.b[l], opt.kl_reverse));
    }
    return total;
}

// Cross-reconstruction of every present target modality from every present
// source code. recon batch supplies both the encoder inputs and the targets.
Tape::Ref cross_recon(Tape& tape, const TapedModel& model, const ModalBatch& batch,
                      std::optional<EncOut>& ea_out, std::optional<EncOut>& eb_out) {
    if (batch.a && !model.a) throw ShapeError("loss: batch has modality a but model does not");
    if (batch.b && !model.b) throw ShapeError("loss: batch has modality b but model does not");
    if (!batch.a && !batch.b) throw ShapeError("loss: batch carries no modality");

    if (batch.a) ea_out = encode_seq(tape, model.a->enc, *batch.a);
    if (batch.b) eb_out = encode_seq(tape, model.b->enc, *batch.b);

    std::vector<Tape::Ref> codes;
    if (ea_out) codes.push_back(ea_out->e2);
    if (eb_out) codes.push_back(eb_out->e2);

    Tape::Ref total = tape.constant_scalar(0.0);
    for (Tape::Ref h : codes) {
        if (batch.a) {
            auto xr = decode_seq(tape, model.a->dec, h, batch.a->size());
            total = tape.add(total, seq_mse(tape, *batch.a, xr));
        }
        if (batch.b) {
            auto xr = decode_seq(tape, model.b->dec, h, batch.b->size());
            total = tape.add(total, seq_mse(tape, *batch.b, xr));
        }
    }
    return total;
}

}  // namespace

Tape::Ref client_loss(Tape& tape, const TapedModel& model, const ModalBatch& priv,
                      const ModalBatch& proxy, const TeacherBatch* teacher, double gamma,
                      const EkdOptions& opt) {
    std::optional<EncOut> ea, eb;
    Tape::Ref total = cross_recon(tape, model, priv, ea, eb);
    std::size_t n_sources = (ea ? 1u : 0u) + (eb ? 1u : 0u);

    if (teacher && gamma != 0.0) {
        if ((proxy.a && !model.a) || (proxy.b && !model.b))
            throw ShapeError("client_loss: proxy modality without matching encoder");
        std::optional<EncOut> pa, pb;
        if (proxy.a) pa = encode_seq(tape, model.a->enc, *proxy.a);
        if (proxy.b) pb = encode_seq(tape, model.b->enc, *proxy.b);
        if (!pa && !pb) throw ShapeError("client_loss: teacher given but proxy batch empty");
        Tape::Ref ekd = ekd_terms(tape, pa, pb, *teacher, opt, n_sources);
        total = tape.add(total, tape.scale(ekd, gamma));
    }
    return total;
}

Tape::Ref server_loss(Tape& tape, const TapedModel& model, const ModalBatch& proxy,
                      const TeacherBatch* collab, double beta, const EkdOptions& opt) {
    if (!model.a || !model.b)
        throw ShapeError("server_loss: server model must hold both modalities");
    std::optional<EncOut> ea, eb;
    Tape::Ref total = cross_recon(tape, model, proxy, ea, eb);
    if (collab && beta != 0.0) {
        Tape::Ref ekd = ekd_terms(tape, ea, eb, *collab, opt, 2);
        total = tape.add(total, tape.scale(ekd, beta));
    }
    return total;
}

Tape::Ref baseline_client_loss(Tape& tape, const LiftedModel& lifted, const ModalBatch& batch,
                               BaselineKind kind, double mu, double tau,
                               const SplitAutoencoder* global_model,
                               const SplitAutoencoder* prev_model) {
    const TapedModel& model = lifted.taped;
    if ((batch.a && !model.a) || (batch.b && !model.b))
        throw ShapeError("baseline loss: batch modality without matching autoencoder");
    if (!batch.a && !batch.b) throw ShapeError("baseline loss: batch carries no modality");

    // Per-modality self-reconstruction.
    Tape::Ref total = tape.constant_scalar(0.0);
    std::optional<EncOut> ea, eb;
    if (batch.a) {
        ea = encode_seq(tape, model.a->enc, *batch.a);
        auto xr = decode_seq(tape, model.a->dec, ea->e2, batch.a->size());
        total = tape.add(total, seq_mse(tape, *batch.a, xr));
    }
    if (batch.b) {
        eb = encode_seq(tape, model.b->enc, *batch.b);
        auto xr = decode_seq(tape, model.b->dec, eb->e2, batch.b->size());
        total = tape.add(total, seq_mse(tape, *batch.b, xr));
    }

    if (kind == BaselineKind::FedProx && mu != 0.0) {
        if (!global_model) throw ShapeError("fedprox loss: missing global model");
        total = tape.add(total, tape.scale(prox_penalty(tape, lifted.leaves, *global_model), mu));
    }

    if (kind == BaselineKind::Moon && mu != 0.0) {
        if (!global_model) throw ShapeError("moon loss: missing global model");
        auto term_for = [&](const std::vector<Tape::Ref>& steps, Tape::Ref z,
                            const Encoder& genc, const Encoder* penc) {
            std::vector<Tensor> vals;
            vals.reserve(steps.size());
            for (auto s : steps) vals.push_back(tape.value(s));
            Tensor zg = encode_nograd(genc, vals).e2;
            std::vector<Tensor> prevs;
            if (penc) prevs.push_back(encode_nograd(*penc, vals).e2);
            return contrastive_loss(tape, z, zg, prevs, tau);
        };
        if (batch.a) {
            if (!global_model->a) throw ShapeError("moon loss: global model lacks modality a");
            const Encoder* pe = prev_model && prev_model->a ? &prev_model->a->enc : nullptr;
            total = tape.add(total, tape.scale(term_for(*batch.a, ea->e2,
                                                        global_model->a->enc, pe), mu));
        }
        if (batch.b) {
            if (!global_model->b) throw ShapeError("moon loss: global model lacks modality b");
            const Encoder* pe = prev_model && prev_model->b ? &prev_model->b->enc : nullptr;
            total = tape.add(total, tape.scale(term_for(*batch.b, eb->e2,
                                                        global_model->b->enc, pe), mu));
        }
    }
    return total;
}

Tape::Ref classifier_loss(Tape& tape, const TapedClassifier& clf, const Tensor& reps_a,
                          const Tensor& reps_b, const std::vector<int>& labels) {
    Tape::Ref la = ce_loss(tape, classify(tape, clf, tape.constant(reps_a)), labels);
    Tape::Ref lb = ce_loss(tape, classify(tape, clf, tape.constant(reps_b)), labels);
    return tape.add(la, lb);
}

}  // namespace fedmekt
