#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xda/tape.hpp"
#include "xda/tensor.hpp"

namespace xda {

/// Architecture of the shared embedding network f and the prediction head g.
/// The default is small enough for finite-difference checks over every
/// parameter while keeping a three-layer head.
struct ModelConfig {
  enum class Extractor { Mlp, Conv };

  Extractor extractor = Extractor::Mlp;
  int64_t input_h = 16;
  int64_t input_w = 16;
  /// Hidden widths of f, one relu after each; f ends with a linear layer to
  /// embed_dim.
  std::vector<int64_t> extractor_hidden = {256, 64, 32};
  int64_t embed_dim = 16;
  /// First two layers of the head; the third is the single sigmoid unit.
  std::array<int64_t, 2> head_hidden = {8, 4};
  int64_t conv_filters = 4;
  int64_t conv_kernel = 3;
  uint64_t seed = 0;

  int64_t flat_input() const { return input_h * input_w; }
  void validate() const;  // throws ConfigError
};

/// One shared parameter set realizing f and g. Source and target batches are
/// embedded through the very same tensors; weight sharing is structural,
/// there is no second copy to sync.
struct SiameseModel {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;

  int64_t param_count() const;
  /// Closed-form parameter count for a config, to guard architecture drift.
  static int64_t expected_param_count(const ModelConfig&);
};

/// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
/// fully determined by config.seed.
SiameseModel init_params(const ModelConfig& config);

/// Binds the model's parameters onto a tape once and builds forward graphs.
/// embed() is one function regardless of the domain tag of the batch;
/// predict() applies the head to embeddings only.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, SiameseModel& model);

  Var embed(Var batch);                  // f: [B, input] -> [B, embed_dim]
  Var embed(const Tensor& batch);
  Var predict(Var features);             // g: [B, embed_dim] -> [B, 1]

  const std::vector<Var>& param_vars() const { return vars_; }

 private:
  Tape* tape_;
  SiameseModel* model_;
  std::vector<Var> vars_;
};

/// Forward-only conveniences (fresh throwaway graph per call).
Tensor embed_values(SiameseModel& model, const Tensor& batch);
Tensor predict_values(SiameseModel& model, const Tensor& batch);

/// Binary checkpoint: header with format version and config echo, then named
/// parameter blocks as little-endian 64-bit floats. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const SiameseModel& model);
SiameseModel load_checkpoint(const std::string& path);

}  // namespace xda
