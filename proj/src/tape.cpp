#include "fedmekt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace fedmekt {

namespace {

void check_rank2(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2, got " + shape_str(t.shape()));
}

// Broadcasting classes accepted by the elementwise ops.
enum class Bcast { Same, Row, Scalar };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
    if (a.same_shape(b)) return Bcast::Same;
    if (b.is_scalar()) return Bcast::Scalar;
    if (a.rank() == 2 && b.rank() == 1 && b.shape()[0] == a.cols()) return Bcast::Row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
}

}  // namespace

Tape::Ref Tape::push(Tensor value, bool needs, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs = needs;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Ref{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tape::Ref Tape::leaf(const Tensor& t) { return push(t, t.requires_grad, nullptr); }

Tape::Ref Tape::constant(const Tensor& t) { return push(t, false, nullptr); }

Tape::Ref Tape::constant_scalar(double v) { return push(Tensor::scalar(v), false, nullptr); }

Tensor& Tape::grad_buf(std::uint32_t i) {
    Node& n = nodes_[i];
    if (!n.grad_live) {
        n.grad = Tensor::zeros(n.value.shape());
        n.grad_live = true;
    }
    return n.grad;
}

void Tape::accumulate(std::uint32_t i, const Tensor& contribution) {
    if (!nodes_[i].needs) return;
    Tensor& g = grad_buf(i);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += contribution[k];
}

void Tape::clear() { nodes_.clear(); }

Tensor Tape::grad(Ref r) const {
    const Node& n = nodes_[r.i];
    if (!n.grad_live) return Tensor::zeros(n.value.shape());
    return n.grad;
}

void Tape::backward(Ref loss) {
    Node& top = nodes_[loss.i];
    if (top.value.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(top.value.shape()));
    grad_buf(loss.i)[0] = 1.0;
    for (std::uint32_t i = loss.i + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad_live && n.back) n.back(*this);
    }
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

Tape::Ref Tape::matmul(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);

    if (A.rank() == 2 && B.rank() == 2) {
        if (A.cols() != B.rows())
            throw ShapeError("matmul: inner dims differ, " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
        std::size_t n = A.rows(), k = A.cols(), m = B.cols();
        Tensor out = Tensor::zeros({n, m});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = A.at(i, p);
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < m; ++j) out.at(i, j) += av * B.at(p, j);
            }
        Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
        std::uint32_t si = r.i;
        nodes_[r.i].back = [a, b, si](Tape& t) {
            const Tensor& G = t.nodes_[si].grad;
            const Tensor& Av = t.value(a);
            const Tensor& Bv = t.value(b);
            std::size_t n = Av.rows(), k = Av.cols(), m = Bv.cols();
            if (t.needs(a)) {
                Tensor& ga = t.grad_buf(a.i);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) {
                        double gv = G.at(i, j);
                        if (gv == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p) ga.at(i, p) += gv * Bv.at(p, j);
                    }
            }
            if (t.needs(b)) {
                Tensor& gb = t.grad_buf(b.i);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t i = 0; i < n; ++i) {
                        double av = Av.at(i, p);
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) gb.at(p, j) += av * G.at(i, j);
                    }
            }
        };
        return r;
    }

    if (A.rank() == 2 && B.rank() == 1) {
        if (A.cols() != B.shape()[0])
            throw ShapeError("matmul: inner dims differ, " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
        std::size_t n = A.rows(), k = A.cols();
        Tensor out = Tensor::zeros({n});
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += A.at(i, p) * B[p];
            out[i] = acc;
        }
        Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
        std::uint32_t si = r.i;
        nodes_[r.i].back = [a, b, si](Tape& t) {
            const Tensor& G = t.nodes_[si].grad;
            const Tensor& Av = t.value(a);
            const Tensor& Bv = t.value(b);
            std::size_t n = Av.rows(), k = Av.cols();
            if (t.needs(a)) {
                Tensor& ga = t.grad_buf(a.i);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) ga.at(i, p) += G[i] * Bv[p];
            }
            if (t.needs(b)) {
                Tensor& gb = t.grad_buf(b.i);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) gb[p] += G[i] * Av.at(i, p);
            }
        };
        return r;
    }

    if (A.rank() == 1 && B.rank() == 2) {
        if (A.shape()[0] != B.rows())
            throw ShapeError("matmul: inner dims differ, " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
        std::size_t k = B.rows(), m = B.cols();
        Tensor out = Tensor::zeros({m});
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < m; ++j) out[j] += A[p] * B.at(p, j);
        Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
        std::uint32_t si = r.i;
        nodes_[r.i].back = [a, b, si](Tape& t) {
            const Tensor& G = t.nodes_[si].grad;
            const Tensor& Av = t.value(a);
            const Tensor& Bv = t.value(b);
            std::size_t k = Bv.rows(), m = Bv.cols();
            if (t.needs(a)) {
                Tensor& ga = t.grad_buf(a.i);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < m; ++j) ga[p] += G[j] * Bv.at(p, j);
            }
            if (t.needs(b)) {
                Tensor& gb = t.grad_buf(b.i);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < m; ++j) gb.at(p, j) += Av[p] * G[j];
            }
        };
        return r;
    }

    throw ShapeError("matmul: unsupported ranks " + shape_str(A.shape()) + " and " +
                     shape_str(B.shape()));
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

Tape::Ref Tape::add(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Bcast bc = classify(A, B, "add");
    Tensor out = A;
    switch (bc) {
        case Bcast::Same:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
            break;
        case Bcast::Scalar:
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[0];
            break;
        case Bcast::Row: {
            std::size_t n = A.rows(), m = A.cols();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) out.at(i, j) += B[j];
            break;
        }
    }
    Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, b, bc, si](Tape& t) {
        const Tensor& G = t.nodes_[si].grad;
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a.i);
            for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b.i);
            switch (bc) {
                case Bcast::Same:
                    for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i];
                    break;
                case Bcast::Scalar: {
                    double s = 0.0;
                    for (std::size_t i = 0; i < G.size(); ++i) s += G[i];
                    gb[0] += s;
                    break;
                }
                case Bcast::Row: {
                    std::size_t n = G.rows(), m = G.cols();
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < m; ++j) gb[j] += G.at(i, j);
                    break;
                }
            }
        }
    };
    return r;
}

Tape::Ref Tape::sub(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Bcast bc = classify(A, B, "sub");
    if (bc == Bcast::Row) throw ShapeError("sub: row broadcast not supported");
    Tensor out = A;
    if (bc == Bcast::Same)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    else
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[0];
    Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, b, bc, si](Tape& t) {
        const Tensor& G = t.nodes_[si].grad;
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a.i);
            for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b.i);
            if (bc == Bcast::Same)
                for (std::size_t i = 0; i < G.size(); ++i) gb[i] -= G[i];
            else {
                double s = 0.0;
                for (std::size_t i = 0; i < G.size(); ++i) s += G[i];
                gb[0] -= s;
            }
        }
    };
    return r;
}

Tape::Ref Tape::mul(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Bcast bc = classify(A, B, "mul");
    if (bc == Bcast::Row) throw ShapeError("mul: row broadcast not supported");
    Tensor out = A;
    if (bc == Bcast::Same)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    else
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[0];
    Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, b, bc, si](Tape& t) {
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Av = t.value(a);
        const Tensor& Bv = t.value(b);
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a.i);
            if (bc == Bcast::Same)
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * Bv[i];
            else
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * Bv[0];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b.i);
            if (bc == Bcast::Same)
                for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * Av[i];
            else {
                double s = 0.0;
                for (std::size_t i = 0; i < G.size(); ++i) s += G[i] * Av[i];
                gb[0] += s;
            }
        }
    };
    return r;
}

Tape::Ref Tape::div(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Bcast bc = classify(A, B, "div");
    if (bc == Bcast::Row) throw ShapeError("div: row broadcast not supported");
    for (double v : B.data())
        if (v == 0.0) throw NumericError("div: zero denominator");
    Tensor out = A;
    if (bc == Bcast::Same)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= B[i];
    else
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= B[0];
    Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, b, bc, si](Tape& t) {
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Av = t.value(a);
        const Tensor& Bv = t.value(b);
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a.i);
            if (bc == Bcast::Same)
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] / Bv[i];
            else
                for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] / Bv[0];
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b.i);
            if (bc == Bcast::Same)
                for (std::size_t i = 0; i < G.size(); ++i)
                    gb[i] -= G[i] * Av[i] / (Bv[i] * Bv[i]);
            else {
                double s = 0.0;
                for (std::size_t i = 0; i < G.size(); ++i) s += G[i] * Av[i];
                gb[0] -= s / (Bv[0] * Bv[0]);
            }
        }
    };
    return r;
}

Tape::Ref Tape::sq_diff(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B))
        throw ShapeError("sq_diff: shapes differ, " + shape_str(A.shape()) + " vs " +
                         shape_str(B.shape()));
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double d = A[i] - B[i];
        out[i] = d * d;
    }
    Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, b, si](Tape& t) {
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Av = t.value(a);
        const Tensor& Bv = t.value(b);
        if (t.needs(a)) {
            Tensor& ga = t.grad_buf(a.i);
            for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * 2.0 * (Av[i] - Bv[i]);
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b.i);
            for (std::size_t i = 0; i < G.size(); ++i) gb[i] -= G[i] * 2.0 * (Av[i] - Bv[i]);
        }
    };
    return r;
}

Tape::Ref Tape::scale(Ref a, double c) {
    Tensor out = value(a);
    for (double& v : out.data()) v *= c;
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, c, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += c * G[i];
    };
    return r;
}

Tape::Ref Tape::shift(Ref a, double c) {
    Tensor out = value(a);
    for (double& v : out.data()) v += c;
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
    };
    return r;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities
// ---------------------------------------------------------------------------

Tape::Ref Tape::sigmoid(Ref a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * Y[i] * (1.0 - Y[i]);
    };
    return r;
}

Tape::Ref Tape::tanh_(Ref a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = std::tanh(v);
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * (1.0 - Y[i] * Y[i]);
    };
    return r;
}

Tape::Ref Tape::relu(Ref a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& X = t.value(a);
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i)
            if (X[i] > 0.0) ga[i] += G[i];
    };
    return r;
}

Tape::Ref Tape::log(Ref a) {
    const Tensor& A = value(a);
    for (double v : A.data())
        if (v <= 0.0) throw NumericError("log: non-positive input " + std::to_string(v));
    Tensor out = A;
    for (double& v : out.data()) v = std::log(v);
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& X = t.value(a);
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] / X[i];
    };
    return r;
}

Tape::Ref Tape::exp_(Ref a) {
    Tensor out = value(a);
    for (double& v : out.data()) v = std::exp(v);
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * Y[i];
    };
    return r;
}

Tape::Ref Tape::sqrt_(Ref a) {
    const Tensor& A = value(a);
    for (double v : A.data())
        if (v < 0.0) throw NumericError("sqrt: negative input " + std::to_string(v));
    Tensor out = A;
    for (double& v : out.data()) v = std::sqrt(v);
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * 0.5 / Y[i];
    };
    return r;
}

// ---------------------------------------------------------------------------
// Softmax family (last axis)
// ---------------------------------------------------------------------------

namespace {

// Treat rank-1 [d] as a single row; rank-2 as [rows, cols].
std::pair<std::size_t, std::size_t> row_layout(const Tensor& t, const char* op) {
    if (t.rank() == 1) return {1, t.shape()[0]};
    if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
    throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace

Tape::Ref Tape::softmax(Ref a) {
    const Tensor& A = value(a);
    auto [n, d] = row_layout(A, "softmax");
    Tensor out = A;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.data().data() + i * d;
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::size_t j = 0; j < d; ++j) row[j] /= z;
    }
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si, n = n, d = d](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += G[i * d + j] * Y[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                ga[i * d + j] += Y[i * d + j] * (G[i * d + j] - dot);
        }
    };
    return r;
}

Tape::Ref Tape::log_softmax(Ref a) {
    const Tensor& A = value(a);
    auto [n, d] = row_layout(A, "log_softmax");
    Tensor out = A;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.data().data() + i * d;
        double mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
        double lse = mx + std::log(z);
        for (std::size_t j = 0; j < d; ++j) row[j] -= lse;
    }
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si, n = n, d = d](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;  // log-probabilities
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < n; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < d; ++j) gsum += G[i * d + j];
            for (std::size_t j = 0; j < d; ++j)
                ga[i * d + j] += G[i * d + j] - std::exp(Y[i * d + j]) * gsum;
        }
    };
    return r;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tape::Ref Tape::mean(Ref a) {
    const Tensor& A = value(a);
    if (A.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : A.data()) s += v;
    Ref r = push(Tensor::scalar(s / static_cast<double>(A.size())), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        double g = t.nodes_[si].grad[0];
        Tensor& ga = t.grad_buf(a.i);
        double inv = 1.0 / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * inv;
    };
    return r;
}

Tape::Ref Tape::sum(Ref a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double v : A.data()) s += v;
    Ref r = push(Tensor::scalar(s), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si](Tape& t) {
        if (!t.needs(a)) return;
        double g = t.nodes_[si].grad[0];
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    };
    return r;
}

Tape::Ref Tape::sum_last(Ref a) {
    const Tensor& A = value(a);
    check_rank2(A, "sum_last");
    std::size_t n = A.rows(), d = A.cols();
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i] += A.at(i, j);
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si, n, d](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) ga[i * d + j] += G[i];
    };
    return r;
}

// ---------------------------------------------------------------------------
// Concat / slicing / gather
// ---------------------------------------------------------------------------

Tape::Ref Tape::concat(Ref a, Ref b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() == 1 && B.rank() == 1) {
        std::size_t p = A.shape()[0], q = B.shape()[0];
        Tensor out = Tensor::zeros({p + q});
        for (std::size_t i = 0; i < p; ++i) out[i] = A[i];
        for (std::size_t i = 0; i < q; ++i) out[p + i] = B[i];
        Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
        std::uint32_t si = r.i;
        nodes_[r.i].back = [a, b, si, p, q](Tape& t) {
            const Tensor& G = t.nodes_[si].grad;
            if (t.needs(a)) {
                Tensor& ga = t.grad_buf(a.i);
                for (std::size_t i = 0; i < p; ++i) ga[i] += G[i];
            }
            if (t.needs(b)) {
                Tensor& gb = t.grad_buf(b.i);
                for (std::size_t i = 0; i < q; ++i) gb[i] += G[p + i];
            }
        };
        return r;
    }
    if (A.rank() == 2 && B.rank() == 2) {
        if (A.rows() != B.rows())
            throw ShapeError("concat: row counts differ, " + shape_str(A.shape()) + " vs " +
                             shape_str(B.shape()));
        std::size_t n = A.rows(), p = A.cols(), q = B.cols();
        Tensor out = Tensor::zeros({n, p + q});
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < p; ++j) out.at(i, j) = A.at(i, j);
            for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = B.at(i, j);
        }
        Ref r = push(std::move(out), needs(a) || needs(b), nullptr);
        std::uint32_t si = r.i;
        nodes_[r.i].back = [a, b, si, n, p, q](Tape& t) {
            const Tensor& G = t.nodes_[si].grad;
            if (t.needs(a)) {
                Tensor& ga = t.grad_buf(a.i);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < p; ++j) ga.at(i, j) += G.at(i, j);
            }
            if (t.needs(b)) {
                Tensor& gb = t.grad_buf(b.i);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < q; ++j) gb.at(i, j) += G.at(i, p + j);
            }
        };
        return r;
    }
    throw ShapeError("concat: unsupported ranks " + shape_str(A.shape()) + " and " +
                     shape_str(B.shape()));
}

Tape::Ref Tape::slice_cols(Ref a, std::size_t c0, std::size_t c1) {
    const Tensor& A = value(a);
    check_rank2(A, "slice_cols");
    if (c0 >= c1 || c1 > A.cols())
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") outside " + shape_str(A.shape()));
    std::size_t n = A.rows(), w = c1 - c0;
    Tensor out = Tensor::zeros({n, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = A.at(i, c0 + j);
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si, n, w, c0](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) ga.at(i, c0 + j) += G.at(i, j);
    };
    return r;
}

Tape::Ref Tape::gather_cols(Ref a, std::vector<int> idx) {
    const Tensor& A = value(a);
    check_rank2(A, "gather_cols");
    if (idx.size() != A.rows())
        throw ShapeError("gather_cols: " + std::to_string(idx.size()) + " indices for " +
                         shape_str(A.shape()));
    std::size_t n = A.rows();
    Tensor out = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
        int j = idx[i];
        if (j < 0 || static_cast<std::size_t>(j) >= A.cols())
            throw ShapeError("gather_cols: index " + std::to_string(j) + " outside " +
                             shape_str(A.shape()));
        out[i] = A.at(i, static_cast<std::size_t>(j));
    }
    Ref r = push(std::move(out), needs(a), nullptr);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [a, si, idx = std::move(idx)](Tape& t) {
        if (!t.needs(a)) return;
        const Tensor& G = t.nodes_[si].grad;
        Tensor& ga = t.grad_buf(a.i);
        for (std::size_t i = 0; i < idx.size(); ++i)
            ga.at(i, static_cast<std::size_t>(idx[i])) += G[i];
    };
    return r;
}

// ---------------------------------------------------------------------------
// Fused LSTM step
// ---------------------------------------------------------------------------

Tape::Ref Tape::lstm_cell(Ref x, Ref h_prev, Ref c_prev, Ref wx, Ref wh, Ref b) {
    const Tensor& X = value(x);
    const Tensor& Hp = value(h_prev);
    const Tensor& Cp = value(c_prev);
    const Tensor& Wx = value(wx);
    const Tensor& Wh = value(wh);
    const Tensor& B = value(b);
    check_rank2(X, "lstm_cell");
    check_rank2(Hp, "lstm_cell");
    std::size_t n = X.rows(), d = X.cols(), h = Hp.cols();
    if (Wx.rank() != 2 || Wx.rows() != d || Wx.cols() != 4 * h || Wh.rank() != 2 ||
        Wh.rows() != h || Wh.cols() != 4 * h || B.rank() != 1 || B.shape()[0] != 4 * h ||
        Cp.rows() != n || Cp.cols() != h || Hp.rows() != n)
        throw ShapeError("lstm_cell: inconsistent shapes x" + shape_str(X.shape()) + " h" +
                         shape_str(Hp.shape()) + " c" + shape_str(Cp.shape()) + " wx" +
                         shape_str(Wx.shape()) + " wh" + shape_str(Wh.shape()) + " b" +
                         shape_str(B.shape()));

    // pre-activations, then gates (input | forget | cell | output).
    Tensor gates = Tensor::zeros({n, 4 * h});
    for (std::size_t i = 0; i < n; ++i) {
        double* row = gates.data().data() + i * 4 * h;
        for (std::size_t j = 0; j < 4 * h; ++j) row[j] = B[j];
        for (std::size_t p = 0; p < d; ++p) {
            double xv = X.at(i, p);
            if (xv == 0.0) continue;
            const double* wrow = Wx.data().data() + p * 4 * h;
            for (std::size_t j = 0; j < 4 * h; ++j) row[j] += xv * wrow[j];
        }
        for (std::size_t p = 0; p < h; ++p) {
            double hv = Hp.at(i, p);
            if (hv == 0.0) continue;
            const double* wrow = Wh.data().data() + p * 4 * h;
            for (std::size_t j = 0; j < 4 * h; ++j) row[j] += hv * wrow[j];
        }
        for (std::size_t j = 0; j < h; ++j) row[j] = 1.0 / (1.0 + std::exp(-row[j]));
        for (std::size_t j = h; j < 2 * h; ++j) row[j] = 1.0 / (1.0 + std::exp(-row[j]));
        for (std::size_t j = 2 * h; j < 3 * h; ++j) row[j] = std::tanh(row[j]);
        for (std::size_t j = 3 * h; j < 4 * h; ++j) row[j] = 1.0 / (1.0 + std::exp(-row[j]));
    }

    Tensor out = Tensor::zeros({n, 2 * h});  // [h_t | c_t]
    for (std::size_t i = 0; i < n; ++i) {
        const double* g = gates.data().data() + i * 4 * h;
        for (std::size_t j = 0; j < h; ++j) {
            double c = g[h + j] * Cp.at(i, j) + g[j] * g[2 * h + j];
            out.at(i, h + j) = c;
            out.at(i, j) = g[3 * h + j] * std::tanh(c);
        }
    }

    bool need = needs(x) || needs(h_prev) || needs(c_prev) || needs(wx) || needs(wh) || needs(b);
    Ref r = push(std::move(out), need, nullptr);
    nodes_[r.i].saved = std::move(gates);
    std::uint32_t si = r.i;
    nodes_[r.i].back = [x, h_prev, c_prev, wx, wh, b, si, n, d, h](Tape& t) {
        const Tensor& G = t.nodes_[si].grad;
        const Tensor& Y = t.nodes_[si].value;
        const Tensor& gates = t.nodes_[si].saved;
        const Tensor& X = t.value(x);
        const Tensor& Hp = t.value(h_prev);
        const Tensor& Cp = t.value(c_prev);
        const Tensor& Wx = t.value(wx);
        const Tensor& Wh = t.value(wh);

        Tensor dpre = Tensor::zeros({n, 4 * h});
        for (std::size_t i = 0; i < n; ++i) {
            const double* g = gates.data().data() + i * 4 * h;
            double* dp = dpre.data().data() + i * 4 * h;
            for (std::size_t j = 0; j < h; ++j) {
                double gi = g[j], gf = g[h + j], gc = g[2 * h + j], go = g[3 * h + j];
                double c = Y.at(i, h + j);
                double tc = std::tanh(c);
                double dh = G.at(i, j);
                double dc = G.at(i, h + j) + dh * go * (1.0 - tc * tc);
                dp[j] = dc * gc * gi * (1.0 - gi);
                dp[h + j] = dc * Cp.at(i, j) * gf * (1.0 - gf);
                dp[2 * h + j] = dc * gi * (1.0 - gc * gc);
                dp[3 * h + j] = dh * tc * go * (1.0 - go);
                if (t.needs(c_prev)) t.grad_buf(c_prev.i).at(i, j) += dc * gf;
            }
        }

        if (t.needs(x)) {
            Tensor& gx = t.grad_buf(x.i);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < d; ++p) {
                    double acc = 0.0;
                    const double* wrow = Wx.data().data() + p * 4 * h;
                    const double* dp = dpre.data().data() + i * 4 * h;
                    for (std::size_t j = 0; j < 4 * h; ++j) acc += dp[j] * wrow[j];
                    gx.at(i, p) += acc;
                }
        }
        if (t.needs(h_prev)) {
            Tensor& gh = t.grad_buf(h_prev.i);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < h; ++p) {
                    double acc = 0.0;
                    const double* wrow = Wh.data().data() + p * 4 * h;
                    const double* dp = dpre.data().data() + i * 4 * h;
                    for (std::size_t j = 0; j < 4 * h; ++j) acc += dp[j] * wrow[j];
                    gh.at(i, p) += acc;
                }
        }
        if (t.needs(wx)) {
            Tensor& gw = t.grad_buf(wx.i);
            for (std::size_t i = 0; i < n; ++i) {
                const double* dp = dpre.data().data() + i * 4 * h;
                for (std::size_t p = 0; p < d; ++p) {
                    double xv = X.at(i, p);
                    if (xv == 0.0) continue;
                    double* wrow = gw.data().data() + p * 4 * h;
                    for (std::size_t j = 0; j < 4 * h; ++j) wrow[j] += xv * dp[j];
                }
            }
        }
        if (t.needs(wh)) {
            Tensor& gw = t.grad_buf(wh.i);
            for (std::size_t i = 0; i < n; ++i) {
                const double* dp = dpre.data().data() + i * 4 * h;
                for (std::size_t p = 0; p < h; ++p) {
                    double hv = Hp.at(i, p);
                    if (hv == 0.0) continue;
                    double* wrow = gw.data().data() + p * 4 * h;
                    for (std::size_t j = 0; j < 4 * h; ++j) wrow[j] += hv * dp[j];
                }
            }
        }
        if (t.needs(b)) {
            Tensor& gb = t.grad_buf(b.i);
            for (std::size_t i = 0; i < n; ++i) {
                const double* dp = dpre.data().data() + i * 4 * h;
                for (std::size_t j = 0; j < 4 * h; ++j) gb[j] += dp[j];
            }
        }
    };
    return r;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(
    const std::function<Tape::Ref(Tape&, const std::vector<Tape::Ref>&)>& fn,
    const std::vector<Tensor>& params, double eps) {
    // Analytic pass.
    std::vector<Tensor> work = params;
    for (auto& p : work) p.requires_grad = true;

    Tape tape;
    std::vector<Tape::Ref> leaves;
    leaves.reserve(work.size());
    for (const auto& p : work) leaves.push_back(tape.leaf(p));
    Tape::Ref loss = fn(tape, leaves);
    tape.backward(loss);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (auto l : leaves) analytic.push_back(tape.grad(l));

    // Value-only evaluation used for the central differences.
    auto eval = [&](const std::vector<Tensor>& ps) {
        Tape t2;
        std::vector<Tape::Ref> ls;
        ls.reserve(ps.size());
        for (const auto& p : ps) ls.push_back(t2.constant(p));
        return t2.value(fn(t2, ls)).scalar_value();
    };

    GradCheckReport rep;
    std::vector<Tensor> probe = params;
    for (std::size_t pi = 0; pi < probe.size(); ++pi) {
        for (std::size_t k = 0; k < probe[pi].size(); ++k) {
            double orig = probe[pi][k];
            probe[pi][k] = orig + eps;
            double up = eval(probe);
            probe[pi][k] = orig - eps;
            double down = eval(probe);
            probe[pi][k] = orig;
            double numeric = (up - down) / (2.0 * eps);
            double a = analytic[pi][k];
            double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = pi;
                rep.worst_elem = k;
            }
        }
    }
    return rep;
}

}  // namespace fedmekt
