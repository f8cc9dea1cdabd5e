#include "xda/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "xda/error.hpp"
#include "xda/rng.hpp"
#include "xda/seed.hpp"

namespace xda {

std::string to_string(Domain d) {
  return d == Domain::Source ? "source" : "target";
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

int Dataset::count_label(int label) const {
  int n = 0;
  for (const Sample& s : samples)
    if (s.label == label) ++n;
  return n;
}

void Dataset::check_ids_unique() const {
  std::unordered_set<std::string> seen;
  for (const Sample& s : samples)
    if (!seen.insert(s.id).second)
      throw DataError("duplicate sample id: " + s.id);
}

std::vector<Sample> select_n_shot(const Dataset& target_train, int n,
                                  uint64_t seed) {
  if (n < 1) throw DataError("n-shot selection requires n >= 1");
  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < target_train.samples.size(); ++i)
    (target_train.samples[i].label == 1 ? pos : neg).push_back(i);
  if (static_cast<int>(pos.size()) < n || static_cast<int>(neg.size()) < n)
    throw DataError("n-shot selection needs " + std::to_string(n) +
                    " samples per label, have " + std::to_string(pos.size()) +
                    " positive and " + std::to_string(neg.size()) +
                    " negative");

  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(2 * n));
  for (int i = 0; i < n; ++i) out.push_back(target_train.samples[pos[i]]);
  for (int i = 0; i < n; ++i) out.push_back(target_train.samples[neg[i]]);
  return out;
}

std::vector<Sample> sample_group(const Dataset& from, int count,
                                 uint64_t seed) {
  if (count < 1 || count > static_cast<int>(from.samples.size()))
    throw DataError("cannot draw a group of " + std::to_string(count) +
                    " from " + std::to_string(from.samples.size()) +
                    " samples");
  std::vector<size_t> idx(from.samples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(from.samples[idx[i]]);
  return out;
}

PairStream build_pairs(std::vector<Sample> source_group,
                       std::vector<Sample> shots, uint64_t seed) {
  if (source_group.empty() || shots.empty())
    throw DataError("build_pairs: source group (" +
                    std::to_string(source_group.size()) + ") and shots (" +
                    std::to_string(shots.size()) + ") must be nonempty");

  PairStream stream;
  stream.seed = seed;
  stream.pairs.reserve(source_group.size() * shots.size());
  for (size_t s = 0; s < source_group.size(); ++s)
    for (size_t t = 0; t < shots.size(); ++t)
      stream.pairs.push_back({static_cast<int32_t>(s),
                              static_cast<int32_t>(t)});
  Rng rng(seed);
  rng.shuffle(stream.pairs);
  stream.source = std::move(source_group);
  stream.shots = std::move(shots);
  return stream;
}

void stack_samples(const std::vector<const Sample*>& samples, Tensor* x,
                   Tensor* y) {
  if (samples.empty()) throw DataError("cannot stack an empty batch");
  const int64_t width = samples.front()->pixels.numel();
  *x = Tensor::zeros({static_cast<int64_t>(samples.size()), width});
  *y = Tensor::zeros({static_cast<int64_t>(samples.size())});
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample* s = samples[i];
    if (s->pixels.numel() != width)
      throw DataError("sample " + s->id + " has " +
                      std::to_string(s->pixels.numel()) +
                      " pixels, batch expects " + std::to_string(width));
    std::copy(s->pixels.data.begin(), s->pixels.data.end(),
              x->data.begin() + static_cast<int64_t>(i) * width);
    (*y)(static_cast<int64_t>(i)) = s->label;
  }
}

std::vector<Batch> staggered_batches(const PairStream& stream,
                                     int batch_size) {
  if (batch_size < 4 || batch_size % 2 != 0)
    throw ContractError("batch_size must be even and >= 4, got " +
                        std::to_string(batch_size));
  const size_t total = stream.pairs.size();
  if (total == 0) throw DataError("empty pair stream");

  // Each batch is seeded with one source-pos/target-pos pair and one
  // source-neg/target-neg pair, which guarantees both labels in both
  // domains; the rest fill in stream order.
  std::vector<size_t> pp, nn, rest;
  for (size_t i = 0; i < total; ++i) {
    const SourceTargetPair& p = stream.pairs[i];
    const int sl = stream.source[static_cast<size_t>(p.source)].label;
    const int tl = stream.shots[static_cast<size_t>(p.target)].label;
    if (sl == 1 && tl == 1)
      pp.push_back(i);
    else if (sl == 0 && tl == 0)
      nn.push_back(i);
    else
      rest.push_back(i);
  }

  size_t n_batches = std::max<size_t>(1, total / static_cast<size_t>(batch_size));
  if (pp.size() < n_batches || nn.size() < n_batches)
    throw DataError(
        "stream cannot guarantee both labels per domain in every batch: " +
        std::to_string(n_batches) + " batches need " +
        std::to_string(n_batches) + " pos/pos and neg/neg pairs, have " +
        std::to_string(pp.size()) + " and " + std::to_string(nn.size()));

  std::vector<std::vector<size_t>> assignment(n_batches);
  for (size_t b = 0; b < n_batches; ++b) {
    assignment[b].push_back(pp[b]);
    assignment[b].push_back(nn[b]);
  }
  // Unused seed-pool entries flow back into the fill, stream order kept.
  std::vector<size_t> fill;
  fill.reserve(total - 2 * n_batches);
  std::copy(pp.begin() + static_cast<int64_t>(n_batches), pp.end(),
            std::back_inserter(fill));
  std::copy(nn.begin() + static_cast<int64_t>(n_batches), nn.end(),
            std::back_inserter(fill));
  std::copy(rest.begin(), rest.end(), std::back_inserter(fill));
  std::sort(fill.begin(), fill.end());

  size_t next = 0;
  for (size_t b = 0; b < n_batches && next < fill.size(); ++b) {
    while (assignment[b].size() < static_cast<size_t>(batch_size) &&
           next < fill.size())
      assignment[b].push_back(fill[next++]);
  }
  // Tail pairs merge into the final batch rather than being dropped.
  while (next < fill.size()) assignment.back().push_back(fill[next++]);

  std::vector<Batch> batches;
  batches.reserve(n_batches);
  for (const std::vector<size_t>& ids : assignment) {
    Batch batch;
    std::vector<const Sample*> src, tgt;
    src.reserve(ids.size());
    tgt.reserve(ids.size());
    for (size_t i : ids) {
      const SourceTargetPair& p = stream.pairs[i];
      src.push_back(&stream.source[static_cast<size_t>(p.source)]);
      tgt.push_back(&stream.shots[static_cast<size_t>(p.target)]);
    }
    stack_samples(src, &batch.source_x, &batch.source_y);
    stack_samples(tgt, &batch.target_x, &batch.target_y);
    for (const Sample* s : src) batch.source_ids.push_back(s->id);
    for (const Sample* s : tgt) batch.target_ids.push_back(s->id);
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<Batch> plain_batches(const std::vector<Sample>& samples,
                                 int batch_size, uint64_t seed) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (samples.empty()) throw DataError("no samples to batch");

  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const size_t n_batches =
      std::max<size_t>(1, order.size() / static_cast<size_t>(batch_size));
  std::vector<Batch> batches;
  batches.reserve(n_batches);
  for (size_t b = 0; b < n_batches; ++b) {
    const size_t lo = b * static_cast<size_t>(batch_size);
    const size_t hi = (b + 1 == n_batches)
                          ? order.size()
                          : lo + static_cast<size_t>(batch_size);
    std::vector<const Sample*> rows;
    rows.reserve(hi - lo);
    for (size_t i = lo; i < hi; ++i) rows.push_back(&samples[order[i]]);
    Batch batch;
    stack_samples(rows, &batch.source_x, &batch.source_y);
    for (const Sample* s : rows) batch.source_ids.push_back(s->id);
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// synthetic benchmark

void ShiftSpec::validate() const {
  if (image_size < 4)
    throw ConfigError("shift spec image_size must be >= 4, got " +
                      std::to_string(image_size));
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
}

ShiftSpec ShiftSpec::identity() {
  ShiftSpec s;
  s.gain = 1.0;
  s.offset = 0.0;
  s.rotation_deg = 0.0;
  s.noise_sigma = 0.0;
  return s;
}

namespace {

double sample_at(const Tensor& img, double r, double c) {
  const int64_t h = img.dim(0), w = img.dim(1);
  if (r < 0.0 || c < 0.0 || r > static_cast<double>(h - 1) ||
      c > static_cast<double>(w - 1))
    return 0.0;
  const int64_t r0 = static_cast<int64_t>(std::floor(r));
  const int64_t c0 = static_cast<int64_t>(std::floor(c));
  const int64_t r1 = std::min(r0 + 1, h - 1);
  const int64_t c1 = std::min(c0 + 1, w - 1);
  const double fr = r - static_cast<double>(r0);
  const double fc = c - static_cast<double>(c0);
  return img(r0, c0) * (1 - fr) * (1 - fc) + img(r0, c1) * (1 - fr) * fc +
         img(r1, c0) * fr * (1 - fc) + img(r1, c1) * fr * fc;
}

double quantize8(double v) {
  return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

// Negative class: filled blob. Positive class: ring. Shape carries the
// class signal; position, size, and brightness vary per sample.
Tensor draw_shape(Rng& rng, int size, int label) {
  const double s = static_cast<double>(size);
  const double cx = rng.uniform(0.38 * s, 0.62 * s);
  const double cy = rng.uniform(0.38 * s, 0.62 * s);
  const double radius = rng.uniform(0.20 * s, 0.30 * s);
  const double amp = rng.uniform(0.7, 1.0);

  Tensor img = Tensor::zeros({size, size});
  for (int64_t r = 0; r < size; ++r)
    for (int64_t c = 0; c < size; ++c) {
      const double dr = static_cast<double>(r) - cy;
      const double dc = static_cast<double>(c) - cx;
      const double d = std::sqrt(dr * dr + dc * dc);
      double v;
      if (label == 1) {
        const double width = 0.22 * radius;
        v = amp * std::exp(-(d - radius) * (d - radius) /
                           (2.0 * width * width));
      } else {
        const double sigma = 0.55 * radius;
        v = amp * std::exp(-d * d / (2.0 * sigma * sigma));
      }
      v += rng.normal(0.0, 0.02);
      img(r, c) = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

Tensor apply_shift(const Tensor& img, const ShiftSpec& spec, Rng& rng) {
  Tensor out = spec.rotation_deg != 0.0
                   ? rotate_bilinear(img, spec.rotation_deg)
                   : img;
  for (double& v : out.data) {
    v = spec.gain * v + spec.offset;
    if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
    v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Dataset make_split(const ShiftSpec& spec, int count, bool shifted,
                   Domain domain, Split split, const std::string& id_prefix,
                   uint64_t seed) {
  Dataset ds;
  ds.split = split;
  ds.samples.reserve(static_cast<size_t>(count));
  Rng rng(seed);
  char id[64];
  for (int i = 0; i < count; ++i) {
    Sample s;
    s.label = i % 2;
    s.domain = domain;
    std::snprintf(id, sizeof(id), "%s-%06d", id_prefix.c_str(), i);
    s.id = id;
    Tensor img = draw_shape(rng, spec.image_size, s.label);
    if (shifted) img = apply_shift(img, spec, rng);
    for (double& v : img.data) v = quantize8(v);
    s.pixels = std::move(img);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

DomainShiftData synth_domain_shift(const ShiftSpec& spec, int n_source,
                                   int n_target_train, int n_target_test,
                                   uint64_t seed) {
  spec.validate();
  if (n_source < 2 || n_target_train < 2 || n_target_test < 2)
    throw ConfigError("each split needs at least 2 samples");

  DomainShiftData data;
  data.source = make_split(spec, n_source, false, Domain::Source, Split::Train,
                           "src", derive_seed(seed, "source"));
  data.target_train =
      make_split(spec, n_target_train, true, Domain::Target, Split::Train,
                 "tgt-tr", derive_seed(seed, "target-train"));
  data.target_test =
      make_split(spec, n_target_test, true, Domain::Target, Split::Test,
                 "tgt-te", derive_seed(seed, "target-test"));
  return data;
}

// ---------------------------------------------------------------------------
// image geometry / preprocessing

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
  if (image.rank() != 2)
    throw DataError("resize expects a [H,W] image, got " + image.shape_str());
  if (out_h < 1 || out_w < 1) throw DataError("resize target must be >= 1x1");
  const int64_t h = image.dim(0), w = image.dim(1);
  Tensor out = Tensor::zeros({out_h, out_w});
  const double sr = static_cast<double>(h) / static_cast<double>(out_h);
  const double sc = static_cast<double>(w) / static_cast<double>(out_w);
  for (int64_t r = 0; r < out_h; ++r) {
    const double src_r =
        std::clamp((static_cast<double>(r) + 0.5) * sr - 0.5, 0.0,
                   static_cast<double>(h - 1));
    for (int64_t c = 0; c < out_w; ++c) {
      const double src_c =
          std::clamp((static_cast<double>(c) + 0.5) * sc - 0.5, 0.0,
                     static_cast<double>(w - 1));
      out(r, c) = sample_at(image, src_r, src_c);
    }
  }
  return out;
}

Tensor rotate_bilinear(const Tensor& image, double degrees) {
  if (image.rank() != 2)
    throw DataError("rotate expects a [H,W] image, got " + image.shape_str());
  const int64_t h = image.dim(0), w = image.dim(1);
  const double rad = degrees * M_PI / 180.0;
  const double cosr = std::cos(rad), sinr = std::sin(rad);
  const double cy = static_cast<double>(h - 1) / 2.0;
  const double cx = static_cast<double>(w - 1) / 2.0;

  Tensor out = Tensor::zeros({h, w});
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const double dr = static_cast<double>(r) - cy;
      const double dc = static_cast<double>(c) - cx;
      // inverse map: rotate the output grid backwards into the source
      const double src_r = cy + dr * cosr - dc * sinr;
      const double src_c = cx + dr * sinr + dc * cosr;
      out(r, c) = sample_at(image, src_r, src_c);
    }
  return out;
}

Tensor preprocess_ct(const Tensor& hu_image, double window_low,
                     double window_high, int out_size) {
  if (hu_image.data.empty() || hu_image.rank() != 2)
    throw DataError("preprocess_ct expects a nonempty [H,W] image");
  if (window_low >= window_high)
    throw ContractError("HU window low must be below high");
  Tensor windowed = Tensor::zeros(hu_image.shape);
  const double span = window_high - window_low;
  for (size_t i = 0; i < hu_image.data.size(); ++i) {
    const double v =
        std::clamp(hu_image.data[i], window_low, window_high);
    windowed.data[i] = (v - window_low) / span;
  }
  return resize_bilinear(windowed, out_size, out_size);
}

}  // namespace xda
