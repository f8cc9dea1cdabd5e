#include "xda/losses.hpp"

#include "xda/error.hpp"

namespace xda {

namespace {

void check_split(const BatchSplit& split) {
  const struct {
    const char* name;
    Var var;
  } groups[] = {{"fs_pos", split.fs_pos},
                {"fs_neg", split.fs_neg},
                {"ft_pos", split.ft_pos},
                {"ft_neg", split.ft_neg}};
  for (const auto& g : groups)
    if (!g.var.valid())
      throw ContractError(std::string("batch split group ") + g.name +
                          " is empty");
}

}  // namespace

Var classification_loss(Tape& t, Var probs, const Tensor& labels) {
  return bce_mean(t, probs, labels);
}

Var set_distance(Tape& t, Var a, Var b, DistanceMode mode) {
  if (!a.valid() || !b.valid())
    throw ContractError("set_distance over an empty embedding set");
  Var d = pairwise_euclidean(t, a, b);
  if (mode == DistanceMode::SquaredEuclidean) d = mul(t, d, d);
  return mean_all(t, d);
}

Var pairing_loss(Tape& t, const BatchSplit& split, DistanceMode mode) {
  check_split(split);
  return add(t, set_distance(t, split.fs_pos, split.ft_pos, mode),
             set_distance(t, split.fs_neg, split.ft_neg, mode));
}

Var detaching_loss(Tape& t, const BatchSplit& split, DistanceMode mode) {
  check_split(split);
  return add(t, set_distance(t, split.fs_pos, split.ft_neg, mode),
             set_distance(t, split.fs_neg, split.ft_pos, mode));
}

Var hinged_detaching_loss(Tape& t, const BatchSplit& split, double margin,
                          DistanceMode mode) {
  check_split(split);
  if (margin <= 0.0)
    throw ConfigError("hinged detaching loss requires margin > 0");
  Var d1 = set_distance(t, split.fs_pos, split.ft_neg, mode);
  Var d2 = set_distance(t, split.fs_neg, split.ft_pos, mode);
  Var h1 = relu(t, add_const(t, scale(t, d1, -1.0), margin));
  Var h2 = relu(t, add_const(t, scale(t, d2, -1.0), margin));
  return add(t, h1, h2);
}

double overall_loss(double l_c, double l_cp, double l_cd, double alpha) {
  if (alpha < 0.0)
    throw ConfigError("cross-domain weight alpha must be >= 0, got " +
                      std::to_string(alpha));
  return l_c + alpha * (l_cp - l_cd);
}

Var overall_loss(Tape& t, Var l_c, Var l_cp, Var l_cd, double alpha) {
  if (alpha < 0.0)
    throw ConfigError("cross-domain weight alpha must be >= 0, got " +
                      std::to_string(alpha));
  return add(t, l_c, scale(t, sub(t, l_cp, l_cd), alpha));
}

}  // namespace xda
