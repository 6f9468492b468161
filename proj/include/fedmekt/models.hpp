#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedmekt/adam.hpp"
#include "fedmekt/rng.hpp"
#include "fedmekt/tape.hpp"
#include "fedmekt/tensor.hpp"

namespace fedmekt {

// Dimensions for one modality pair. h1 can differ per modality (the UR-Fall
// presets give the low-dimensional sensor a narrower first hidden layer).
struct ArchSpec {
    std::string modality_a = "A";
    std::string modality_b = "B";
    std::size_t d_a = 0, d_b = 0;
    std::size_t h1_a = 0, h1_b = 0;
    std::size_t h2 = 0;
    std::size_t t_seq = 0;
    std::size_t classes = 0;
    std::size_t classifier_hidden = 64;

    void validate() const;
    bool operator==(const ArchSpec&) const = default;
};

// Named presets, e.g. "mhealth:acce-gyro", "urfall:acce-rgb", "opp:acce-gyro".
// t_seq is filled with the dataset default (10) and can be overridden after.
ArchSpec arch_preset(const std::string& name);

struct LstmLayer {
    Tensor wx;  // [in, 4*hidden]
    Tensor wh;  // [hidden, 4*hidden]
    Tensor b;   // [4*hidden]

    std::size_t in() const { return wx.rows(); }
    std::size_t hidden() const { return wh.rows(); }
};

LstmLayer init_lstm(std::size_t in, std::size_t hidden, Rng& rng);
std::size_t lstm_param_count(std::size_t in, std::size_t hidden);

struct Encoder {
    LstmLayer l1;  // d -> h1
    LstmLayer l2;  // h1 -> h2
};

struct Decoder {
    LstmLayer l1;  // h2 -> h1
    LstmLayer l2;  // h1 -> d
};

struct ModalityAutoencoder {
    Encoder enc;
    Decoder dec;
};

// The split multimodal autoencoder. Unimodal holders simply leave the other
// side empty; the server always carries both.
struct SplitAutoencoder {
    ArchSpec arch;
    std::optional<ModalityAutoencoder> a;
    std::optional<ModalityAutoencoder> b;
};

struct Classifier {
    Tensor w1, b1;  // h2 -> hidden
    Tensor w2, b2;  // hidden -> classes
};

ModalityAutoencoder init_autoencoder(std::size_t d, std::size_t h1, std::size_t h2, Rng& rng);
SplitAutoencoder init_model(const ArchSpec& arch, std::uint64_t seed, bool with_a = true,
                            bool with_b = true);
Classifier init_classifier(const ArchSpec& arch, std::uint64_t seed);

// Canonical parameter walk: modality a (enc.l1, enc.l2, dec.l1, dec.l2 with
// wx/wh/b each), then modality b. Every consumer of parameter order
// (optimizer, aggregation, serialization, prox) goes through these.
void for_each_param(SplitAutoencoder& m,
                    const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const SplitAutoencoder& m,
                    const std::function<void(const std::string&, const Tensor&)>& fn);
void for_each_param(Classifier& c, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_param(const Classifier& c,
                    const std::function<void(const std::string&, const Tensor&)>& fn);

ParamRefs param_refs(SplitAutoencoder& m);
ParamRefs param_refs(Classifier& c);
std::size_t param_count(const SplitAutoencoder& m);
std::size_t param_count(const Classifier& c);

// --- taped forwards -------------------------------------------------------

struct TapedLstm {
    Tape::Ref wx, wh, b;
};
struct TapedEncoder {
    TapedLstm l1, l2;
};
struct TapedDecoder {
    TapedLstm l1, l2;
};
struct TapedAutoencoder {
    TapedEncoder enc;
    TapedDecoder dec;
};
struct TapedModel {
    std::optional<TapedAutoencoder> a, b;
};
struct TapedClassifier {
    Tape::Ref w1, b1, w2, b2;
};

// Lifts model parameters onto the tape. leaves lines up with param_refs()
// order so gradients can be read back after backward().
struct LiftedModel {
    TapedModel taped;
    std::vector<Tape::Ref> leaves;
};
LiftedModel lift(Tape& tape, SplitAutoencoder& m);
TapedModel lift_const(Tape& tape, const SplitAutoencoder& m);

struct LiftedClassifier {
    TapedClassifier taped;
    std::vector<Tape::Ref> leaves;
};
LiftedClassifier lift(Tape& tape, Classifier& c);
TapedClassifier lift_const(Tape& tape, const Classifier& c);

std::vector<Tensor> grads_of(const Tape& tape, const std::vector<Tape::Ref>& leaves);

// Final-timestep hidden state of both encoder layers over a sequence batch.
// x_steps holds t_seq refs of shape [n, d].
struct EncOut {
    Tape::Ref e1;  // [n, h1]
    Tape::Ref e2;  // [n, h2]  (the representation h)
};
EncOut encode_seq(Tape& tape, const TapedEncoder& enc, const std::vector<Tape::Ref>& x_steps);

// Reconstruction: the code h is fed at every timestep; returns t_seq refs of
// shape [n, d] (the second layer's hidden sequence).
std::vector<Tape::Ref> decode_seq(Tape& tape, const TapedDecoder& dec, Tape::Ref h,
                                  std::size_t t_seq);

Tape::Ref classify(Tape& tape, const TapedClassifier& clf, Tape::Ref h);

// Grad-free encode for knowledge production and probes.
struct Embeddings {
    Tensor e1, e2;
};
Embeddings encode_nograd(const Encoder& enc, const std::vector<Tensor>& x_steps);

// Joint embedding: concat along columns; with one side absent the present
// embedding passes through unchanged.
Tensor fuse(const std::optional<Tensor>& e_a, const std::optional<Tensor>& e_b);
Tape::Ref fuse(Tape& tape, std::optional<Tape::Ref> e_a, std::optional<Tape::Ref> e_b);

}  // namespace fedmekt
