#include "losses.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace mdkt {

void LossConfig::validate() const {
  if (!(tau1 > 0.0)) throw ConfigError("loss: tau1 must be positive");
  if (!(tau2 > 0.0)) throw ConfigError("loss: tau2 must be positive");
  if (margin < 0.0) throw ConfigError("loss: margin must be non-negative");
  if (!use_tr && !use_mkd && !use_pd && !use_mtcl && !use_ce) {
    throw ConfigError("loss: at least one loss term must be enabled");
  }
}

Tensor ce_loss(Tape* tape, const Tensor& logits, const std::vector<std::uint32_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("ce_loss: logits must be [b x c]");
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b) throw ShapeError("ce_loss: label count mismatch");
  std::vector<std::size_t> picks(b);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= c) {
      throw UsageError("ce_loss: label " + std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(c) + ")");
    }
    picks[i] = i * c + labels[i];
  }
  Tensor probs = softmax_rows(tape, logits, 1.0);
  Tensor log_probs = log(tape, clamp_min(tape, probs, 1e-12));
  return scale(tape, mean(tape, select(tape, log_probs, picks)), -1.0);
}

TripletIndices batch_hard_triplets(const Tensor& dist, const std::vector<std::uint32_t>& labels) {
  if (dist.rank() != 2 || dist.rows() != dist.cols()) {
    throw ShapeError("batch_hard_triplets: distance matrix must be square");
  }
  const std::size_t b = dist.rows();
  if (labels.size() != b) throw ShapeError("batch_hard_triplets: label count mismatch");

  std::map<std::uint32_t, std::size_t> label_counts;
  for (std::uint32_t l : labels) ++label_counts[l];
  if (label_counts.size() < 2) {
    throw UsageError("batch_hard_triplets: need at least two distinct labels");
  }
  for (const auto& [label, count] : label_counts) {
    if (count < 2) {
      throw UsageError("batch_hard_triplets: label " + std::to_string(label) +
                       " has a single member");
    }
  }

  TripletIndices out;
  out.triplets.reserve(b);
  for (std::size_t a = 0; a < b; ++a) {
    std::size_t best_pos = b;
    double worst_pos_dist = -std::numeric_limits<double>::infinity();
    std::size_t best_neg = b;
    double best_neg_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      const double d = dist.at(a, j);
      if (labels[j] == labels[a]) {
        if (d > worst_pos_dist) {
          worst_pos_dist = d;
          best_pos = j;
        }
      } else {
        if (d < best_neg_dist) {
          best_neg_dist = d;
          best_neg = j;
        }
      }
    }
    out.triplets.push_back({a, best_pos, best_neg});
  }
  return out;
}

Tensor triplet_loss(Tape* tape, const Tensor& dist, const TripletIndices& triplets,
                    double margin) {
  if (margin < 0.0) throw ConfigError("triplet_loss: margin must be non-negative");
  if (triplets.triplets.empty()) throw UsageError("triplet_loss: no triplets");
  const std::size_t b = dist.rows();
  std::vector<std::size_t> ap(triplets.triplets.size()), an(triplets.triplets.size());
  for (std::size_t i = 0; i < triplets.triplets.size(); ++i) {
    const auto& t = triplets.triplets[i];
    if (t.anchor >= b || t.positive >= b || t.negative >= b) {
      throw ShapeError("triplet_loss: triplet index out of range");
    }
    ap[i] = t.anchor * b + t.positive;
    an[i] = t.anchor * b + t.negative;
  }
  Tensor d_ap = select(tape, dist, ap);
  Tensor d_an = select(tape, dist, an);
  Tensor hinge = relu(tape, add_scalar(tape, sub(tape, d_ap, d_an), margin));
  return mean(tape, hinge);
}

Tensor kd_directed(Tape* tape, const Tensor& target_logits, const Tensor& learner_logits,
                   double tau1) {
  if (target_logits.shape() != learner_logits.shape()) {
    throw ShapeError("kd_directed: logits shapes disagree");
  }
  if (!(tau1 > 0.0)) throw ConfigError("kd_directed: tau1 must be positive");
  Tensor target = softmax_rows(tape, target_logits.detach(), tau1);
  Tensor learner = softmax_rows(tape, learner_logits, tau1);
  return scale(tape, kl_divergence(tape, target, learner), tau1 * tau1);
}

Tensor mutual_kd(Tape* tape, const Tensor& teacher_logits, const Tensor& student_logits,
                 double tau1, bool mutual) {
  Tensor t2s = kd_directed(tape, teacher_logits, student_logits, tau1);
  if (!mutual) return t2s;
  Tensor s2t = kd_directed(tape, student_logits, teacher_logits, tau1);
  return add(tape, t2s, s2t);
}

Tensor pd_loss(Tape* tape, const Tensor& teacher_emb, const Tensor& student_emb) {
  if (teacher_emb.rank() != 2 || student_emb.rank() != 2 ||
      teacher_emb.rows() != student_emb.rows()) {
    throw ShapeError("pd_loss: embeddings must share the batch dimension");
  }
  const std::size_t b = teacher_emb.rows();
  if (b < 2) throw UsageError("pd_loss: batch must hold at least two samples");

  std::vector<std::size_t> upper;
  upper.reserve(b * (b - 1) / 2);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = i + 1; j < b; ++j) upper.push_back(i * b + j);
  }
  Tensor dt = sqrt(tape, select(tape, pairwise_sq_euclidean(tape, teacher_emb), upper));
  Tensor ds = sqrt(tape, select(tape, pairwise_sq_euclidean(tape, student_emb), upper));
  Tensor diff = sub(tape, dt, ds);
  return sum(tape, mul(tape, diff, diff));
}

namespace {

// Column of p values for a set of (d_ap, d_an) pairs, shared by the scalar
// triplet_probability and the vectorized TCL path.
Tensor probability_column(Tape* tape, const Tensor& d_ap, const Tensor& d_an, double tau2) {
  if (!(tau2 > 0.0)) throw ConfigError("triplet_probability: tau2 must be positive");
  if (d_ap.rank() != 1 || d_an.rank() != 1 || d_ap.numel() != d_an.numel()) {
    throw ShapeError("triplet_probability: distance vectors must be rank-1 and equal length");
  }
  for (double v : d_ap.data()) {
    if (v < 0.0) throw UsageError("triplet_probability: squared distances must be >= 0");
  }
  for (double v : d_an.data()) {
    if (v < 0.0) throw UsageError("triplet_probability: squared distances must be >= 0");
  }
  const Tensor cols[2] = {scale(tape, d_ap, -1.0), scale(tape, d_an, -1.0)};
  Tensor probs = softmax_rows(tape, stack_cols(tape, cols), tau2);
  std::vector<std::size_t> first_col(d_ap.numel());
  for (std::size_t i = 0; i < first_col.size(); ++i) first_col[i] = i * 2;
  return select(tape, probs, first_col);
}

Tensor two_point_rows(Tape* tape, const Tensor& p) {
  Tensor complement = add_scalar(tape, scale(tape, p, -1.0), 1.0);
  const Tensor cols[2] = {p, complement};
  return stack_cols(tape, cols);
}

}  // namespace

TripletProbabilityPair triplet_probability(Tape* tape, const Tensor& d_ap, const Tensor& d_an,
                                           double tau2) {
  Tensor ap = d_ap.rank() == 1 ? d_ap : reshape(tape, d_ap, {d_ap.numel()});
  Tensor an = d_an.rank() == 1 ? d_an : reshape(tape, d_an, {d_an.numel()});
  Tensor p = probability_column(tape, ap, an, tau2);
  Tensor complement = add_scalar(tape, scale(tape, p, -1.0), 1.0);
  return {p, complement};
}

Tensor mutual_tcl(Tape* tape, const Tensor& teacher_emb, const Tensor& student_emb,
                  const std::vector<std::uint32_t>& labels, double tau2, bool mutual) {
  if (teacher_emb.rank() != 2 || student_emb.rank() != 2 ||
      teacher_emb.rows() != student_emb.rows()) {
    throw ShapeError("mutual_tcl: embeddings must share the batch dimension");
  }
  const std::size_t b = student_emb.rows();

  Tensor dist_s = pairwise_sq_euclidean(tape, student_emb);
  Tensor dist_t = pairwise_sq_euclidean(tape, teacher_emb);
  // hard triplets come from the student embedding
  const TripletIndices mined = batch_hard_triplets(dist_s, labels);

  std::vector<std::size_t> ap(mined.triplets.size()), an(mined.triplets.size());
  for (std::size_t i = 0; i < mined.triplets.size(); ++i) {
    const auto& t = mined.triplets[i];
    ap[i] = t.anchor * b + t.positive;
    an[i] = t.anchor * b + t.negative;
  }

  Tensor p_t = probability_column(tape, select(tape, dist_t, ap), select(tape, dist_t, an), tau2);
  Tensor p_s = probability_column(tape, select(tape, dist_s, ap), select(tape, dist_s, an), tau2);

  Tensor rows_t = two_point_rows(tape, p_t);
  Tensor rows_s = two_point_rows(tape, p_s);

  Tensor t2s = kl_divergence(tape, rows_t.detach(), rows_s);
  if (!mutual) return t2s;
  Tensor s2t = kl_divergence(tape, rows_s.detach(), rows_t);
  return add(tape, t2s, s2t);
}

namespace {

template <typename Fn>
Tensor guarded_term(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " (in term " + name + ")");
  }
}

}  // namespace

ObjectiveResult total_objective(Tape* tape, const NetworkOutput& teacher,
                                const NetworkOutput& student,
                                const std::vector<std::uint32_t>& labels, const LossConfig& cfg) {
  cfg.validate();
  if (teacher.embeddings.rows() != student.embeddings.rows()) {
    throw ShapeError("total_objective: batch sizes disagree");
  }

  ObjectiveResult result;
  Tensor total;
  auto accumulate = [&](const Tensor& weighted) {
    total = total.defined() ? add(tape, total, weighted) : weighted;
  };

  if (cfg.use_tr) {
    Tensor term = guarded_term("L_TR", [&] {
      Tensor dt = pairwise_sq_euclidean(tape, teacher.embeddings);
      Tensor ds = pairwise_sq_euclidean(tape, student.embeddings);
      Tensor lt = triplet_loss(tape, dt, batch_hard_triplets(dt, labels), cfg.margin);
      Tensor ls = triplet_loss(tape, ds, batch_hard_triplets(ds, labels), cfg.margin);
      return add(tape, lt, ls);
    });
    result.tr = term.value();
    accumulate(term);
  }
  if (cfg.use_mkd) {
    Tensor term = guarded_term("L_MKD", [&] {
      return mutual_kd(tape, teacher.logits, student.logits, cfg.tau1, cfg.mutual);
    });
    result.mkd = term.value();
    accumulate(scale(tape, term, cfg.weight_mkd));
  }
  if (cfg.use_pd) {
    Tensor term =
        guarded_term("L_PD", [&] { return pd_loss(tape, teacher.embeddings, student.embeddings); });
    result.pd = term.value();
    accumulate(scale(tape, term, cfg.weight_pd));
  }
  if (cfg.use_mtcl) {
    Tensor term = guarded_term("L_MTCL", [&] {
      return mutual_tcl(tape, teacher.embeddings, student.embeddings, labels, cfg.tau2,
                        cfg.mutual);
    });
    result.mtcl = term.value();
    accumulate(scale(tape, term, cfg.weight_mtcl));
  }
  if (cfg.use_ce) {
    Tensor term = guarded_term("L_CE", [&] {
      return add(tape, ce_loss(tape, teacher.logits, labels),
                 ce_loss(tape, student.logits, labels));
    });
    result.ce = term.value();
    accumulate(term);
  }

  result.total = total;
  result.weighted_total = total.value();
  return result;
}

}  // namespace mdkt
