#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "fedmekt/models.hpp"
#include "support/model_oracle.hpp"

using namespace fedmekt;

namespace {

ArchSpec tiny_arch() {
    ArchSpec a;
    a.d_a = 2;
    a.d_b = 3;
    a.h1_a = 2;
    a.h1_b = 2;
    a.h2 = 3;
    a.t_seq = 3;
    a.classes = 4;
    return a;
}

std::vector<Tensor> random_steps(Rng& rng, std::size_t t, std::size_t n, std::size_t d) {
    std::vector<Tensor> out;
    for (std::size_t s = 0; s < t; ++s) {
        Tensor m = Tensor::zeros({n, d});
        for (double& v : m.data()) v = rng.normal();
        out.push_back(m);
    }
    return out;
}

}  // namespace

TEST_CASE("architecture presets carry the published dimensions") {
    ArchSpec m = arch_preset("mhealth:acce-gyro");
    CHECK(m.modality_a == "acce");
    CHECK(m.modality_b == "gyro");
    CHECK(m.d_a == 9);
    CHECK(m.d_b == 6);
    CHECK(m.h1_a == 4);
    CHECK(m.h1_b == 4);
    CHECK(m.h2 == 24);
    CHECK(m.classes == 13);
    CHECK(m.t_seq == 10);

    ArchSpec u = arch_preset("urfall:acce-rgb");
    CHECK(u.d_a == 3);
    CHECK(u.d_b == 512);
    CHECK(u.h1_a == 2);
    CHECK(u.h1_b == 4);
    CHECK(u.h2 == 32);
    CHECK(u.classes == 3);

    ArchSpec ud = arch_preset("urfall:depth-acce");
    CHECK(ud.d_a == 8);
    CHECK(ud.d_b == 3);
    CHECK(ud.h1_a == 4);
    CHECK(ud.h1_b == 2);

    ArchSpec o = arch_preset("opp:acce-gyro");
    CHECK(o.d_a == 24);
    CHECK(o.d_b == 15);
    CHECK(o.h1_a == 10);
    CHECK(o.h2 == 24);
    CHECK(o.classes == 18);

    CHECK_THROWS_AS(arch_preset("mhealth"), std::invalid_argument);
    CHECK_THROWS_AS(arch_preset("nosuch:acce-gyro"), std::invalid_argument);
    CHECK_THROWS_AS(arch_preset("mhealth:acce-acce"), std::invalid_argument);
    CHECK_THROWS_AS(arch_preset("urfall:acce-gyro"), std::invalid_argument);
}

TEST_CASE("parameter counts follow the gate arithmetic") {
    CHECK(lstm_param_count(9, 4) == 4 * (9 + 4) * 4 + 4 * 4);

    ArchSpec a = arch_preset("mhealth:acce-gyro");
    SplitAutoencoder m = init_model(a, 1);
    std::size_t expect_a = lstm_param_count(9, 4) + lstm_param_count(4, 24) +
                           lstm_param_count(24, 4) + lstm_param_count(4, 9);
    std::size_t expect_b = lstm_param_count(6, 4) + lstm_param_count(4, 24) +
                           lstm_param_count(24, 4) + lstm_param_count(4, 6);
    CHECK(param_count(m) == expect_a + expect_b);

    std::size_t walked = 0;
    for_each_param(m, [&](const std::string&, const Tensor& t) { walked += t.size(); });
    CHECK(walked == expect_a + expect_b);

    SplitAutoencoder only_a = init_model(a, 1, true, false);
    CHECK(param_count(only_a) == expect_a);
    CHECK_FALSE(only_a.b.has_value());
}

TEST_CASE("initialization is deterministic and bounded") {
    ArchSpec a = tiny_arch();
    SplitAutoencoder m1 = init_model(a, 42);
    SplitAutoencoder m2 = init_model(a, 42);
    SplitAutoencoder m3 = init_model(a, 43);

    bool identical = true, differs = false;
    ParamRefs r1 = param_refs(m1), r2 = param_refs(m2), r3 = param_refs(m3);
    for (std::size_t i = 0; i < r1.size(); ++i) {
        CHECK(r1[i].first == r2[i].first);
        for (std::size_t k = 0; k < r1[i].second->size(); ++k) {
            if ((*r1[i].second)[k] != (*r2[i].second)[k]) identical = false;
            if ((*r1[i].second)[k] != (*r3[i].second)[k]) differs = true;
        }
        CHECK(r1[i].second->requires_grad);
    }
    CHECK(identical);
    CHECK(differs);

    // A unimodal holder of modality b draws the same values for that side as
    // the multimodal holder with the same seed.
    SplitAutoencoder only_b = init_model(a, 42, false, true);
    ParamRefs rb = param_refs(only_b);
    std::size_t off = r1.size() - rb.size();
    for (std::size_t i = 0; i < rb.size(); ++i) {
        CHECK(rb[i].first == r1[off + i].first);
        for (std::size_t k = 0; k < rb[i].second->size(); ++k)
            CHECK((*rb[i].second)[k] == (*r1[off + i].second)[k]);
    }

    double bound = 1.0 / std::sqrt(2.0);  // widest layer has fan-in 2
    for (auto& [name, t] : r1)
        for (std::size_t k = 0; k < t->size(); ++k) CHECK(std::abs((*t)[k]) <= bound);
}

TEST_CASE("parameter walk names are canonical and unique") {
    SplitAutoencoder m = init_model(tiny_arch(), 7);
    std::vector<std::string> names;
    for_each_param(m, [&](const std::string& n, const Tensor&) { names.push_back(n); });
    REQUIRE(names.size() == 24);
    CHECK(names.front() == "a.enc.l1.wx");
    CHECK(names[11] == "a.dec.l2.b");
    CHECK(names[12] == "b.enc.l1.wx");
    CHECK(names.back() == "b.dec.l2.b");
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());

    Classifier c = init_classifier(tiny_arch(), 7);
    std::vector<std::string> cn;
    for_each_param(c, [&](const std::string& n, const Tensor&) { cn.push_back(n); });
    CHECK(cn == std::vector<std::string>{"clf.w1", "clf.b1", "clf.w2", "clf.b2"});
    CHECK(param_count(c) == 3 * 64 + 64 + 64 * 4 + 4);
}

TEST_CASE("batched encode agrees with the scalar reference") {
    ArchSpec a = tiny_arch();
    SplitAutoencoder m = init_model(a, 5);
    Rng rng(99);
    std::size_t n = 4;
    auto steps = random_steps(rng, a.t_seq, n, a.d_a);

    Tape tape;
    std::vector<Tape::Ref> refs;
    for (const auto& s : steps) refs.push_back(tape.constant(s));
    TapedModel tm = lift_const(tape, m);
    EncOut e = encode_seq(tape, tm.a->enc, refs);

    CHECK(tape.value(e.e1).shape() == Shape{n, a.h1_a});
    CHECK(tape.value(e.e2).shape() == Shape{n, a.h2});

    for (std::size_t i = 0; i < n; ++i) {
        oracle::EncodePair sc = oracle::scalar_encode(m.a->enc, oracle::sample_steps(steps, i));
        for (std::size_t j = 0; j < a.h1_a; ++j)
            CHECK(tape.value(e.e1).at(i, j) == doctest::Approx(sc.e1[j]).epsilon(1e-12));
        for (std::size_t j = 0; j < a.h2; ++j)
            CHECK(tape.value(e.e2).at(i, j) == doctest::Approx(sc.e2[j]).epsilon(1e-12));
    }

    // Grad-free encode returns the same values.
    Embeddings emb = encode_nograd(m.a->enc, steps);
    for (std::size_t k = 0; k < emb.e2.size(); ++k)
        CHECK(emb.e2[k] == tape.value(e.e2)[k]);
    for (std::size_t k = 0; k < emb.e1.size(); ++k)
        CHECK(emb.e1[k] == tape.value(e.e1)[k]);
}

TEST_CASE("decode shapes and all-zero behaviour") {
    ArchSpec a = tiny_arch();
    SplitAutoencoder m = init_model(a, 5);
    Tape tape;
    TapedModel tm = lift_const(tape, m);
    Tensor h = Tensor::zeros({4, a.h2});
    auto xr = decode_seq(tape, tm.a->dec, tape.constant(h), a.t_seq);
    REQUIRE(xr.size() == a.t_seq);
    for (auto r : xr) CHECK(tape.value(r).shape() == Shape{4ul, a.d_a});

    // With every weight and input zero the LSTM emits zeros at every step.
    SplitAutoencoder z = init_model(a, 5);
    for_each_param(z, [](const std::string&, Tensor& t) {
        for (double& v : t.data()) v = 0.0;
    });
    Rng rng(3);
    auto steps = random_steps(rng, a.t_seq, 2, a.d_a);
    Embeddings e = encode_nograd(z.a->enc, steps);
    for (std::size_t k = 0; k < e.e2.size(); ++k) CHECK(e.e2[k] == 0.0);
}

TEST_CASE("fusion concatenates and passes single modalities through") {
    Tensor ea = Tensor::zeros({2, 3});
    Tensor eb = Tensor::zeros({2, 2});
    for (std::size_t k = 0; k < ea.size(); ++k) ea[k] = static_cast<double>(k + 1);
    for (std::size_t k = 0; k < eb.size(); ++k) eb[k] = -static_cast<double>(k + 1);

    Tensor j = fuse(std::optional<Tensor>(ea), std::optional<Tensor>(eb));
    REQUIRE(j.shape() == Shape{2, 5});
    CHECK(j.at(0, 0) == 1.0);
    CHECK(j.at(0, 3) == -1.0);
    CHECK(j.at(1, 2) == 6.0);
    CHECK(j.at(1, 4) == -4.0);

    Tensor only = fuse(std::optional<Tensor>(ea), std::nullopt);
    CHECK(only.same_shape(ea));
    for (std::size_t k = 0; k < ea.size(); ++k) CHECK(only[k] == ea[k]);
    CHECK_THROWS_AS(fuse(std::optional<Tensor>(), std::optional<Tensor>()), ShapeError);

    Tape tape;
    Tape::Ref jr = fuse(tape, tape.constant(ea), tape.constant(eb));
    CHECK(tape.value(jr).shape() == Shape{2, 5});
    for (std::size_t k = 0; k < j.size(); ++k) CHECK(tape.value(jr)[k] == j[k]);
}

TEST_CASE("classifier forward matches a scalar multilayer perceptron") {
    ArchSpec a = tiny_arch();
    Classifier c = init_classifier(a, 11);
    Rng rng(12);
    Tensor h = Tensor::zeros({3, a.h2});
    for (double& v : h.data()) v = rng.normal();

    Tape tape;
    TapedClassifier tc = lift_const(tape, c);
    Tape::Ref logits = classify(tape, tc, tape.constant(h));
    REQUIRE(tape.value(logits).shape() == Shape{3ul, a.classes});

    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<double> hid(64, 0.0);
        for (std::size_t u = 0; u < 64; ++u) {
            double s = c.b1[u];
            for (std::size_t j = 0; j < a.h2; ++j) s += h.at(i, j) * c.w1.at(j, u);
            hid[u] = std::max(0.0, s);
        }
        for (std::size_t o = 0; o < a.classes; ++o) {
            double s = c.b2[o];
            for (std::size_t u = 0; u < 64; ++u) s += hid[u] * c.w2.at(u, o);
            CHECK(tape.value(logits).at(i, o) == doctest::Approx(s).epsilon(1e-12));
        }
    }
}

TEST_CASE("lifting aligns leaves with the canonical walk") {
    SplitAutoencoder m = init_model(tiny_arch(), 21);
    ParamRefs refs = param_refs(m);
    Tape tape;
    LiftedModel lm = lift(tape, m);
    REQUIRE(lm.leaves.size() == refs.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const Tensor& v = tape.value(lm.leaves[i]);
        REQUIRE(v.same_shape(*refs[i].second));
        for (std::size_t k = 0; k < v.size(); ++k) CHECK(v[k] == (*refs[i].second)[k]);
    }

    // A loss that only touches modality a leaves modality b's grads dead.
    Rng rng(2);
    auto steps = random_steps(rng, 3, 2, 2);
    std::vector<Tape::Ref> srefs;
    for (const auto& s : steps) srefs.push_back(tape.constant(s));
    EncOut e = encode_seq(tape, lm.taped.a->enc, srefs);
    tape.backward(tape.mean(e.e2));
    std::vector<Tensor> grads = grads_of(tape, lm.leaves);
    bool a_live = false, b_live = false;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        bool nonzero = false;
        for (std::size_t k = 0; k < grads[i].size(); ++k)
            if (grads[i][k] != 0.0) nonzero = true;
        if (refs[i].first.starts_with("a.enc") && nonzero) a_live = true;
        if (refs[i].first.starts_with("b.") && nonzero) b_live = true;
    }
    CHECK(a_live);
    CHECK_FALSE(b_live);
}
