#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedmekt/tensor.hpp"

namespace fedmekt {

// Reverse-mode autodiff over a linear tape of recorded operations.
//
// Usage: lift inputs with leaf()/constant(), build the computation with the
// op methods, call backward() on a scalar result, then read grad() for every
// leaf created with requires_grad set. The tape owns all intermediate values;
// gradients are only materialized along paths that reach a trainable leaf.
class Tape {
public:
    struct Ref {
        std::uint32_t i = 0;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. leaf() honours t.requires_grad; constant() never tracks grads.
    Ref leaf(const Tensor& t);
    Ref constant(const Tensor& t);
    Ref constant_scalar(double v);

    // Matrix product: [n,k]x[k,m] -> [n,m], [n,k]x[k] -> [n], [k]x[k,m] -> [m].
    Ref matmul(Ref a, Ref b);

    // Elementwise with limited broadcasting: same shape, matrix + bias row,
    // or tensor with rank-0 scalar.
    Ref add(Ref a, Ref b);
    Ref sub(Ref a, Ref b);
    Ref mul(Ref a, Ref b);
    Ref div(Ref a, Ref b);

    // Squared difference (a - b)^2, same shape only.
    Ref sq_diff(Ref a, Ref b);

    // Affine with compile-time constants (not differentiated through c).
    Ref scale(Ref a, double c);
    Ref shift(Ref a, double c);

    Ref sigmoid(Ref a);
    Ref tanh_(Ref a);
    Ref relu(Ref a);
    Ref log(Ref a);   // raises NumericError on non-positive input
    Ref exp_(Ref a);
    Ref sqrt_(Ref a);  // raises NumericError on negative input

    // Row-wise softmax / log-softmax over the last axis (rank 1 or 2).
    Ref softmax(Ref a);
    Ref log_softmax(Ref a);

    // Reductions.
    Ref mean(Ref a);      // -> rank-0
    Ref sum(Ref a);       // -> rank-0
    Ref sum_last(Ref a);  // [n,d] -> [n]

    // Column concat: [n,p]|[n,q] -> [n,p+q] or [p]|[q] -> [p+q].
    Ref concat(Ref a, Ref b);
    // Column slice [c0,c1) of a rank-2 tensor.
    Ref slice_cols(Ref a, std::size_t c0, std::size_t c1);
    // out[i] = a[i, idx[i]] for rank-2 a.
    Ref gather_cols(Ref a, std::vector<int> idx);

    // One LSTM step. x:[n,d], h_prev/c_prev:[n,h], wx:[d,4h], wh:[h,4h],
    // b:[4h]. Gate order along the 4h axis is input|forget|cell|output.
    // Returns [n,2h] holding h_t in columns [0,h) and c_t in [h,2h).
    Ref lstm_cell(Ref x, Ref h_prev, Ref c_prev, Ref wx, Ref wh, Ref b);

    const Tensor& value(Ref r) const { return nodes_[r.i].value; }

    // Accumulates d(loss)/d(node) for every node on a trainable path.
    // loss must be scalar (one element).
    void backward(Ref loss);

    // Gradient of the last backward() w.r.t. r; zeros if r was not reached.
    Tensor grad(Ref r) const;
    bool grad_live(Ref r) const { return nodes_[r.i].grad_live; }

    std::size_t size() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Tensor saved;  // op-specific stash (e.g. LSTM gate activations)
        std::function<void(Tape&)> back;
        bool grad_live = false;
        bool needs = false;  // true when some trainable leaf is reachable
    };

    Ref push(Tensor value, bool needs, std::function<void(Tape&)> back);
    Tensor& grad_buf(std::uint32_t i);
    void accumulate(std::uint32_t i, const Tensor& contribution);
    bool needs(Ref r) const { return nodes_[r.i].needs; }

    std::vector<Node> nodes_;

    friend struct TapeOps;
};

// Max relative error between analytic (tape) and central finite-difference
// gradients, taken over every element of every parameter.
struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_elem = 0;
};

// fn must deterministically map the lifted parameter leaves to a scalar loss.
// eps is the central-difference step.
GradCheckReport grad_check(
    const std::function<Tape::Ref(Tape&, const std::vector<Tape::Ref>&)>& fn,
    const std::vector<Tensor>& params, double eps);

}  // namespace fedmekt
