#pragma once

#include "xda/tape.hpp"
#include "xda/tensor.hpp"

namespace xda {

enum class DistanceMode { Euclidean, SquaredEuclidean };

/// Which cross-domain terms participate in the objective. Masked terms
/// contribute neither value nor gradient and are reported as 0.
struct LossMask {
  bool use_cp = true;
  bool use_cd = true;
  bool any() const { return use_cp || use_cd; }
};

/// Values of one optimization step's objective. The identity
/// l_overall == l_c + alpha * (l_cp - l_cd) holds exactly whenever the
/// detaching term runs unhinged (detach_margin == 0, the default).
struct LossBreakdown {
  double l_c = 0.0;
  double l_cp = 0.0;
  double l_cd = 0.0;
  double l_overall = 0.0;
  double alpha = 0.0;
};

/// One staggered batch viewed through the graph: embeddings grouped by
/// domain and label, plus the source predictions that feed the
/// classification term.
struct BatchSplit {
  Var fs_pos, fs_neg, ft_pos, ft_neg;
  Var source_probs;
  Tensor source_labels;
};

/// Mean binary cross entropy of the source predictions (probabilities are
/// clamped to [1e-12, 1-1e-12] before the logs).
Var classification_loss(Tape& t, Var probs, const Tensor& labels);

/// Average pairwise distance between two embedding sets:
/// (1/MN) * sum_ij ||A_i - B_j||. Squared mode averages the squares instead.
Var set_distance(Tape& t, Var a, Var b,
                 DistanceMode mode = DistanceMode::Euclidean);

/// Pulls same-class groups of the two domains together:
/// D(fs_pos, ft_pos) + D(fs_neg, ft_neg).
Var pairing_loss(Tape& t, const BatchSplit& split,
                 DistanceMode mode = DistanceMode::Euclidean);

/// Distance between cross-class groups of the two domains, maximized via its
/// negative sign in the overall objective:
/// D(fs_pos, ft_neg) + D(fs_neg, ft_pos).
Var detaching_loss(Tape& t, const BatchSplit& split,
                   DistanceMode mode = DistanceMode::Euclidean);

/// Hinged alternative to maximizing an unbounded detaching distance:
/// sum of max(0, margin - D) over the two cross-class group pairs; minimized.
Var hinged_detaching_loss(Tape& t, const BatchSplit& split, double margin,
                          DistanceMode mode = DistanceMode::Euclidean);

/// l_c + alpha * (l_cp - l_cd). May be negative. alpha must be >= 0.
double overall_loss(double l_c, double l_cp, double l_cd, double alpha);
Var overall_loss(Tape& t, Var l_c, Var l_cp, Var l_cd, double alpha);

}  // namespace xda
