#pragma once

#include <cstdint>
#include <vector>

#include "tensor.hpp"

namespace mdkt {

// Every scalar the combined objective needs. The margin and the mutual-KD
// weight are separate parameters even though the source formulation reuses
// one symbol for both roles.
struct LossConfig {
  double tau1 = 10.0;        // logits-distillation temperature
  double tau2 = 4.0;         // triplet-probability temperature
  double margin = 0.3;       // triplet margin
  double weight_mkd = 0.1;   // alpha_w
  double weight_pd = 1e-4;   // beta
  double weight_mtcl = 1000.0;  // gamma
  bool use_tr = true;
  bool use_mkd = true;
  bool use_pd = true;
  bool use_mtcl = true;
  bool use_ce = false;
  bool mutual = true;

  void validate() const;
};

// Per-anchor hardest-positive / hardest-negative selections.
struct TripletIndices {
  struct Triplet {
    std::size_t anchor;
    std::size_t positive;
    std::size_t negative;
  };
  std::vector<Triplet> triplets;
};

// Two-point distribution [p, 1-p] over "anchor closer to positive" vs
// "anchor closer to negative". complement is constructed as 1 - p.
struct TripletProbabilityPair {
  Tensor p;
  Tensor complement;
};

// Mean over the batch of -ln softmax(logits)[label], temperature 1.
Tensor ce_loss(Tape* tape, const Tensor& logits, const std::vector<std::uint32_t>& labels);

// For each anchor: positive = farthest same-label sample, negative = nearest
// different-label sample; ties broken by smallest index. Requires >= 2
// distinct labels and >= 2 members per label.
TripletIndices batch_hard_triplets(const Tensor& dist, const std::vector<std::uint32_t>& labels);

// Mean over anchors of max(0, d[a,p] - d[a,n] + margin).
Tensor triplet_loss(Tape* tape, const Tensor& dist, const TripletIndices& triplets, double margin);

// tau1^2 * KL(softmax(target/tau1) || softmax(learner/tau1)); the target
// distribution is a constant (no gradient into target_logits).
Tensor kd_directed(Tape* tape, const Tensor& target_logits, const Tensor& learner_logits,
                   double tau1);

// Both directed terms; with mutual=false only teacher->student.
Tensor mutual_kd(Tape* tape, const Tensor& teacher_logits, const Tensor& student_logits,
                 double tau1, bool mutual);

// Sum over unordered pairs of (D_t[i,j] - D_s[i,j])^2 with D the non-squared
// Euclidean distance; gradient reaches both embeddings.
Tensor pd_loss(Tape* tape, const Tensor& teacher_emb, const Tensor& student_emb);

// p = exp(-d_ap/tau2) / (exp(-d_ap/tau2) + exp(-d_an/tau2)), stable for
// arbitrarily large squared distances.
TripletProbabilityPair triplet_probability(Tape* tape, const Tensor& d_ap, const Tensor& d_an,
                                           double tau2);

// Triplet contrast loss: triplets mined batch-hard in the student embedding,
// same index triplets scored by both networks, summed KL between the
// two-point distributions (teacher side detached in t2s, student side in
// s2t; s2t present only when mutual).
Tensor mutual_tcl(Tape* tape, const Tensor& teacher_emb, const Tensor& student_emb,
                  const std::vector<std::uint32_t>& labels, double tau2, bool mutual);

struct NetworkOutput {
  Tensor embeddings;  // [B x d]
  Tensor logits;      // [B x n_classes]
};

// Weighted term values as doubles plus the differentiable total.
struct ObjectiveResult {
  Tensor total;
  double tr = 0.0;    // unweighted L_TR (teacher + student)
  double mkd = 0.0;   // unweighted L_MKD
  double pd = 0.0;    // unweighted L_PD
  double mtcl = 0.0;  // unweighted L_MTCL
  double ce = 0.0;    // unweighted CE sum (ablation only)
  double weighted_total = 0.0;
};

// L = L_TR + alpha_w L_MKD + beta L_PD + gamma L_MTCL (+ CE when enabled for
// the ablation); triplet terms are mined per network on its own embedding.
ObjectiveResult total_objective(Tape* tape, const NetworkOutput& teacher,
                                const NetworkOutput& student,
                                const std::vector<std::uint32_t>& labels, const LossConfig& cfg);

}  // namespace mdkt
