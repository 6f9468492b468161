#pragma once

#include <optional>
#include <vector>

#include "fedmekt/models.hpp"
#include "fedmekt/tape.hpp"

namespace fedmekt {

// Which encoder layers contribute exchanged knowledge.
enum class LayerSet { H1, H2, Both };
std::size_t layer_count(LayerSet ls);

// Joint: one KL per layer over the fused (concatenated) embedding.
// Split: one KL per layer per modality over that modality's embedding.
enum class KnowledgeForm { Joint, Split };

struct EkdOptions {
    KnowledgeForm form = KnowledgeForm::Joint;
    LayerSet layers = LayerSet::Both;
    // With the joint form the same distillation term belongs to both
    // per-modality objectives; by default it is therefore counted once per
    // present modality when the two objectives are summed.
    bool count_once = false;
    // Swap the roles of teacher and student inside the KL.
    bool kl_reverse = false;
};

// Mean squared error between two equally-shaped refs.
Tape::Ref mse(Tape& tape, Tape::Ref a, Tape::Ref b);

// MSE over a whole sequence: mean over every element of every timestep.
Tape::Ref seq_mse(Tape& tape, const std::vector<Tape::Ref>& x,
                  const std::vector<Tape::Ref>& xr);

// Distillation term: KL(softmax(teacher) || softmax(student)) per row, mean
// over rows. The teacher is plain data and never receives gradients.
Tape::Ref ekd_loss(Tape& tape, Tape::Ref student, const Tensor& teacher,
                   bool kl_reverse = false);

// Mean cross-entropy of logit rows against integer labels.
Tape::Ref ce_loss(Tape& tape, Tape::Ref logits, const std::vector<int>& labels);

// Squared L2 distance between a model's parameters and a reference model's.
double prox_value(const SplitAutoencoder& w, const SplitAutoencoder& w_ref);
// Same, on the tape: leaves must line up with param_refs(w_ref).
Tape::Ref prox_penalty(Tape& tape, const std::vector<Tape::Ref>& leaves,
                       const SplitAutoencoder& w_ref);

// Model-contrastive term. z holds one representation per row; z_glob and each
// z_prev are constants with matching shape. Cosine similarities are pushed
// through a temperature-scaled softmax over {global, previous...}; an empty
// z_prev list makes the term vanish.
Tape::Ref contrastive_loss(Tape& tape, Tape::Ref z, const Tensor& z_glob,
                           const std::vector<Tensor>& z_prev, double tau);

// Per-timestep input refs for each present modality, [n, d_M] each.
struct ModalBatch {
    std::optional<std::vector<Tape::Ref>> a;
    std::optional<std::vector<Tape::Ref>> b;
};

// Teacher knowledge restricted to the proxy rows of the current batch.
// joint is used with KnowledgeForm::Joint and must already be column-matched
// to the student's fused layout (a unimodal student sees only its segment);
// a/b are used with KnowledgeForm::Split.
struct TeacherBatch {
    std::vector<Tensor> joint;
    std::vector<Tensor> a, b;
};

// Local objective: cross-reconstruction of every present modality from every
// present code, plus the weighted distillation term against the broadcast
// knowledge. teacher may be null (or gamma zero) to drop distillation.
Tape::Ref client_loss(Tape& tape, const TapedModel& model, const ModalBatch& priv,
                      const ModalBatch& proxy, const TeacherBatch* teacher, double gamma,
                      const EkdOptions& opt);

// Server objective on a proxy batch: the same cross-reconstruction structure
// plus distillation toward the collaborative (client-averaged) knowledge.
Tape::Ref server_loss(Tape& tape, const TapedModel& model, const ModalBatch& proxy,
                      const TeacherBatch* collab, double beta, const EkdOptions& opt);

enum class BaselineKind { FedAvg, FedProx, Moon };

// Parameter-exchange baseline objective: per-modality self-reconstruction,
// plus the prox pull toward the received global model or the model-contrastive
// term against global/previous representations.
Tape::Ref baseline_client_loss(Tape& tape, const LiftedModel& lifted, const ModalBatch& batch,
                               BaselineKind kind, double mu, double tau,
                               const SplitAutoencoder* global_model,
                               const SplitAutoencoder* prev_model);

// Cross-entropy of the frozen-encoder classifier over both modality streams.
// reps_* are precomputed h2 representations of the labeled batch.
Tape::Ref classifier_loss(Tape& tape, const TapedClassifier& clf, const Tensor& reps_a,
                          const Tensor& reps_b, const std::vector<int>& labels);

}  // namespace fedmekt
