#include "fedmekt/evaluation.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "fedmekt/adam.hpp"
#include "fedmekt/tape.hpp"

namespace fedmekt {

double macro_f1(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("macro_f1: prediction and label counts differ");
    if (preds.empty()) return 0.0;
    std::set<int> classes(preds.begin(), preds.end());
    classes.insert(labels.begin(), labels.end());

    double total = 0.0;
    for (int c : classes) {
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c && labels[i] == c)
                ++tp;
            else if (preds[i] == c)
                ++fp;
            else if (labels[i] == c)
                ++fn;
        }
        if (2 * tp + fp + fn > 0)
            total += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
    return total / static_cast<double>(classes.size());
}

std::vector<int> argmax_rows(const Tensor& scores) {
    if (scores.rank() != 2) throw ShapeError("argmax_rows: need a rank-2 score matrix");
    std::vector<int> out(scores.rows());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < scores.cols(); ++j)
            if (scores.at(i, j) > scores.at(i, best)) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

double avg_last_k(const std::vector<double>& xs, std::size_t k) {
    if (xs.empty() || k == 0) return 0.0;
    std::size_t take = std::min(k, xs.size());
    double total = 0.0;
    for (std::size_t i = xs.size() - take; i < xs.size(); ++i) total += xs[i];
    return total / static_cast<double>(take);
}

double linear_probe(const Tensor& train_reps, const std::vector<int>& train_labels,
                    const Tensor& test_reps, const std::vector<int>& test_labels,
                    std::size_t classes, const ProbeConfig& cfg) {
    if (train_reps.rank() != 2 || test_reps.rank() != 2)
        throw ShapeError("linear_probe: representations must be rank 2");
    if (train_reps.cols() != test_reps.cols())
        throw ShapeError("linear_probe: train and test widths differ");
    if (train_reps.rows() != train_labels.size() || test_reps.rows() != test_labels.size())
        throw ShapeError("linear_probe: representation and label counts differ");
    if (classes < 2) throw std::invalid_argument("linear_probe: need at least two classes");

    std::size_t d = train_reps.cols();
    Tensor w = Tensor::zeros({d, classes});
    Tensor b = Tensor::zeros({classes});
    w.requires_grad = true;
    b.requires_grad = true;

    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam opt(ac);
    ParamRefs params = {{"probe.w", &w}, {"probe.b", &b}};

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape tape;
        Tape::Ref wr = tape.leaf(w), br = tape.leaf(b);
        Tape::Ref logits = tape.add(tape.matmul(tape.constant(train_reps), wr), br);
        tape.backward(ce_loss(tape, logits, train_labels));
        std::vector<Tensor> grads = {tape.grad(wr), tape.grad(br)};
        opt.step(params, grads);
    }

    Tensor scores = Tensor::zeros({test_reps.rows(), classes});
    for (std::size_t i = 0; i < test_reps.rows(); ++i)
        for (std::size_t j = 0; j < classes; ++j) {
            double s = b[j];
            for (std::size_t k = 0; k < d; ++k) s += test_reps.at(i, k) * w.at(k, j);
            scores.at(i, j) = s;
        }
    return macro_f1(argmax_rows(scores), test_labels);
}

std::size_t knowledge_scalars(const ArchSpec& arch, LayerSet layers, bool has_a, bool has_b,
                              std::size_t proxy_rows) {
    std::size_t width = 0;
    if (layers == LayerSet::H1 || layers == LayerSet::Both)
        width += (has_a ? arch.h1_a : 0) + (has_b ? arch.h1_b : 0);
    if (layers == LayerSet::H2 || layers == LayerSet::Both)
        width += (has_a ? arch.h2 : 0) + (has_b ? arch.h2 : 0);
    return proxy_rows * width;
}

std::size_t param_scalars(const ArchSpec& arch, bool has_a, bool has_b) {
    auto side = [&](std::size_t d, std::size_t h1) {
        return lstm_param_count(d, h1) + lstm_param_count(h1, arch.h2) +
               lstm_param_count(arch.h2, h1) + lstm_param_count(h1, d);
    };
    std::size_t total = 0;
    if (has_a) total += side(arch.d_a, arch.h1_a);
    if (has_b) total += side(arch.d_b, arch.h1_b);
    return total;
}

std::size_t proxy_scalars(const ArchSpec& arch, bool has_a, bool has_b,
                          std::size_t proxy_rows) {
    std::size_t width = (has_a ? arch.d_a : 0) + (has_b ? arch.d_b : 0);
    return proxy_rows * arch.t_seq * width;
}

}  // namespace fedmekt
