#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xda/tensor.hpp"

namespace xda {

enum class Domain { Source, Target };
enum class Split { Train, Test };

std::string to_string(Domain d);
std::string to_string(Split s);

/// One labeled grayscale image. Pixels are [H,W] in [0,1].
struct Sample {
  Tensor pixels;
  int label = 0;  // 1 positive, 0 negative
  Domain domain = Domain::Source;
  std::string id;
  std::string patient;  // empty when unknown
};

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::Train;

  int count_label(int label) const;
  /// Throws DataError on duplicate ids.
  void check_ids_unique() const;
};

/// Exactly n positive and n negative target samples, drawn without
/// replacement, deterministic per seed.
std::vector<Sample> select_n_shot(const Dataset& target_train, int n,
                                  uint64_t seed);

/// Uniform subset without replacement, deterministic per seed.
std::vector<Sample> sample_group(const Dataset& from, int count,
                                 uint64_t seed);

struct SourceTargetPair {
  int32_t source;  // index into PairStream::source
  int32_t target;  // index into PairStream::shots
};

/// The full source-group x shots cross product in seed-shuffled order: the
/// staggered sequence for one epoch. Size is always
/// |shots| * |source group| = 2n * group_size.
struct PairStream {
  std::vector<Sample> source;
  std::vector<Sample> shots;
  std::vector<SourceTargetPair> pairs;
  uint64_t seed = 0;
};

PairStream build_pairs(std::vector<Sample> source_group,
                       std::vector<Sample> shots, uint64_t seed);

/// One optimization step's staggered batch: row i of source_x pairs with row
/// i of target_x, i.e. the sequence (s1, t1, s2, t2, ...).
struct Batch {
  Tensor source_x;  // [B, H*W]
  Tensor source_y;  // [B]
  Tensor target_x;  // [B, H*W]; empty tensors for source-only batches
  Tensor target_y;
  std::vector<std::string> source_ids;
  std::vector<std::string> target_ids;

  bool has_target() const { return !target_x.data.empty(); }
};

/// Cuts the stream into batches of `batch_size` pairs. Every batch is
/// guaranteed to hold both labels in both domains (batches are seeded with
/// one positive-positive and one negative-negative pair); a short tail is
/// merged into the final batch instead of being dropped. Throws DataError
/// when the stream cannot satisfy the guarantee.
std::vector<Batch> staggered_batches(const PairStream& stream, int batch_size);

/// Plain single-domain batches for classifier-only training.
std::vector<Batch> plain_batches(const std::vector<Sample>& samples,
                                 int batch_size, uint64_t seed);

/// Synthetic domain-shift benchmark. Class-conditional generators draw
/// filled blobs (negative) and rings (positive); the target domain passes
/// through rotation, an intensity gain/offset, and additive Gaussian noise.
struct ShiftSpec {
  int image_size = 16;
  double gain = 0.6;
  double offset = 0.2;
  double rotation_deg = 25.0;
  double noise_sigma = 0.05;

  void validate() const;
  static ShiftSpec identity();
};

struct DomainShiftData {
  Dataset source;
  Dataset target_train;
  Dataset target_test;
};

DomainShiftData synth_domain_shift(const ShiftSpec& spec, int n_source,
                                   int n_target_train, int n_target_test,
                                   uint64_t seed);

/// Clamp a Hounsfield-unit image to [low, high], rescale to [0,1], and
/// bilinearly resize to out_size x out_size.
Tensor preprocess_ct(const Tensor& hu_image, double window_low = -600.0,
                     double window_high = 1500.0, int out_size = 512);

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);
Tensor rotate_bilinear(const Tensor& image, double degrees);

/// Flattens samples into a [B, H*W] matrix plus a [B] label vector.
void stack_samples(const std::vector<const Sample*>& samples, Tensor* x,
                   Tensor* y);

}  // namespace xda
