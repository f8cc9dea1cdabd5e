#include "xda/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "xda/error.hpp"
#include "xda/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace xda {

namespace {

struct LayerShape {
  std::string name;
  std::vector<int64_t> shape;
  bool is_weight;  // weights get Glorot init, biases are zero
  int64_t fan_in = 0;
  int64_t fan_out = 0;
};

std::vector<LayerShape> layout(const ModelConfig& c) {
  std::vector<LayerShape> out;
  int64_t width = c.flat_input();

  if (c.extractor == ModelConfig::Extractor::Conv) {
    const int64_t k = c.conv_kernel, f = c.conv_filters;
    out.push_back({"conv.K", {f, k, k}, true, k * k, f * k * k});
    out.push_back({"conv.b", {f}, false, 0, 0});
    width = f * (c.input_h - k + 1) * (c.input_w - k + 1);
  }

  int hidden_idx = 0;
  for (int64_t h : c.extractor_hidden) {
    const std::string base = "f" + std::to_string(hidden_idx++);
    out.push_back({base + ".W", {width, h}, true, width, h});
    out.push_back({base + ".b", {h}, false, 0, 0});
    width = h;
  }
  out.push_back({"f_out.W", {width, c.embed_dim}, true, width, c.embed_dim});
  out.push_back({"f_out.b", {c.embed_dim}, false, 0, 0});

  width = c.embed_dim;
  const int64_t head_widths[3] = {c.head_hidden[0], c.head_hidden[1], 1};
  for (int i = 0; i < 3; ++i) {
    const std::string base = "g" + std::to_string(i);
    out.push_back({base + ".W", {width, head_widths[i]}, true, width,
                   head_widths[i]});
    out.push_back({base + ".b", {head_widths[i]}, false, 0, 0});
    width = head_widths[i];
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_h < 1 || input_w < 1)
    throw ConfigError("model input must be at least 1x1");
  if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  for (int64_t h : extractor_hidden)
    if (h < 1)
      throw ConfigError("extractor hidden widths must be >= 1, got " +
                        std::to_string(h));
  if (head_hidden[0] < 1 || head_hidden[1] < 1)
    throw ConfigError("head widths must be >= 1");
  if (extractor == Extractor::Conv) {
    if (conv_filters < 1 || conv_kernel < 1)
      throw ConfigError("conv extractor needs filters >= 1 and kernel >= 1");
    if (conv_kernel > input_h || conv_kernel > input_w)
      throw ConfigError("conv kernel exceeds the input image");
  }
}

int64_t SiameseModel::param_count() const {
  int64_t n = 0;
  for (const Tensor& p : params) n += p.numel();
  return n;
}

int64_t SiameseModel::expected_param_count(const ModelConfig& c) {
  int64_t n = 0;
  for (const LayerShape& l : layout(c)) n += shape_numel(l.shape);
  return n;
}

SiameseModel init_params(const ModelConfig& config) {
  config.validate();
  SiameseModel m;
  m.config = config;
  Rng rng(config.seed);
  for (const LayerShape& l : layout(config)) {
    Tensor t = Tensor::zeros(l.shape);
    if (l.is_weight) {
      const double a =
          std::sqrt(6.0 / static_cast<double>(l.fan_in + l.fan_out));
      for (double& v : t.data) v = rng.uniform(-a, a);
    }
    t.requires_grad = true;
    m.names.push_back(l.name);
    m.params.push_back(std::move(t));
  }
  return m;
}

ModelGraph::ModelGraph(Tape& tape, SiameseModel& model)
    : tape_(&tape), model_(&model) {
  vars_.reserve(model.params.size());
  for (Tensor& p : model.params) vars_.push_back(tape.leaf(p));
}

Var ModelGraph::embed(const Tensor& batch) {
  return embed(tape_->constant(batch));
}

Var ModelGraph::embed(Var batch) {
  const ModelConfig& c = model_->config;
  const Tensor& bv = tape_->value(batch);
  if (bv.rank() != 2 || bv.dim(1) != c.flat_input())
    throw DimensionError("embed: batch " + bv.shape_str() + " does not match input width " +
                         std::to_string(c.flat_input()));

  Tape& t = *tape_;
  size_t pi = 0;
  Var h = batch;

  if (c.extractor == ModelConfig::Extractor::Conv) {
    // rows are flattened images; give conv its [B,H,W] view
    Tensor img = Tensor::of({bv.dim(0), c.input_h, c.input_w}, bv.data);
    Var x3 = t.constant(std::move(img));
    // route gradient-capable inputs through a reshape instead
    if (t.needs_grad(batch)) {
      const Var ins[] = {batch};
      x3 = t.node(Tensor::of({bv.dim(0), c.input_h, c.input_w}, bv.data), ins,
                  [batch](Tape& tp, const std::vector<double>& dy) {
                    if (!tp.needs_grad(batch)) return;
                    auto& dx = tp.adjoint(batch);
                    for (size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                  });
    }
    Var conv = relu(t, conv2d(t, x3, vars_[pi], vars_[pi + 1]));
    pi += 2;
    h = flatten_rows(t, conv);
  }

  for (size_t i = 0; i < c.extractor_hidden.size(); ++i) {
    h = relu(t, affine(t, h, vars_[pi], vars_[pi + 1]));
    pi += 2;
  }
  h = affine(t, h, vars_[pi], vars_[pi + 1]);
  return h;
}

Var ModelGraph::predict(Var features) {
  const ModelConfig& c = model_->config;
  const Tensor& fv = tape_->value(features);
  if (fv.rank() != 2 || fv.dim(1) != c.embed_dim)
    throw DimensionError("predict: features " + fv.shape_str() +
                         " do not match embed_dim " +
                         std::to_string(c.embed_dim));

  Tape& t = *tape_;
  // head parameters sit at the tail of the layout: g0, g1, g2
  size_t pi = vars_.size() - 6;
  Var h = relu(t, affine(t, features, vars_[pi], vars_[pi + 1]));
  h = relu(t, affine(t, h, vars_[pi + 2], vars_[pi + 3]));
  h = sigmoid(t, affine(t, h, vars_[pi + 4], vars_[pi + 5]));
  return h;
}

Tensor embed_values(SiameseModel& model, const Tensor& batch) {
  Tape t;
  ModelGraph g(t, model);
  return t.value(g.embed(batch));
}

Tensor predict_values(SiameseModel& model, const Tensor& batch) {
  Tape t;
  ModelGraph g(t, model);
  return t.value(g.predict(g.embed(batch)));
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kMagic[4] = {'X', 'D', 'A', 'M'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

template <typename T>
void write_pod(std::FILE* f, const T& v) {
  if (std::fwrite(&v, sizeof(T), 1, f) != 1)
    throw IoError("checkpoint write failed");
}

template <typename T>
T read_pod(std::FILE* f) {
  T v;
  if (std::fread(&v, sizeof(T), 1, f) != 1)
    throw IoError("checkpoint truncated");
  return v;
}

void write_string(std::FILE* f, const std::string& s) {
  write_pod<uint32_t>(f, static_cast<uint32_t>(s.size()));
  if (!s.empty() && std::fwrite(s.data(), 1, s.size(), f) != s.size())
    throw IoError("checkpoint write failed");
}

std::string read_string(std::FILE* f) {
  const uint32_t n = read_pod<uint32_t>(f);
  std::string s(n, '\0');
  if (n && std::fread(s.data(), 1, n, f) != n)
    throw IoError("checkpoint truncated");
  return s;
}

std::string config_echo(const ModelConfig& c) {
  std::string s;
  s += "extractor=" +
       std::string(c.extractor == ModelConfig::Extractor::Mlp ? "mlp"
                                                              : "conv");
  s += ";input=" + std::to_string(c.input_h) + "x" + std::to_string(c.input_w);
  s += ";hidden=";
  for (size_t i = 0; i < c.extractor_hidden.size(); ++i)
    s += (i ? "," : "") + std::to_string(c.extractor_hidden[i]);
  s += ";embed=" + std::to_string(c.embed_dim);
  s += ";head=" + std::to_string(c.head_hidden[0]) + "," +
       std::to_string(c.head_hidden[1]);
  s += ";conv=" + std::to_string(c.conv_filters) + "x" +
       std::to_string(c.conv_kernel);
  s += ";seed=" + std::to_string(c.seed);
  return s;
}

ModelConfig config_from_echo(const std::string& s) {
  ModelConfig c;
  c.extractor_hidden.clear();
  size_t pos = 0;
  auto next_field = [&]() {
    const size_t end = s.find(';', pos);
    std::string field = s.substr(pos, end == std::string::npos
                                           ? std::string::npos
                                           : end - pos);
    pos = end == std::string::npos ? s.size() : end + 1;
    return field;
  };
  auto value_of = [](const std::string& field) {
    const size_t eq = field.find('=');
    if (eq == std::string::npos)
      throw IoError("malformed checkpoint config field: " + field);
    return field.substr(eq + 1);
  };

  while (pos < s.size()) {
    const std::string field = next_field();
    const std::string val = value_of(field);
    if (field.starts_with("extractor=")) {
      c.extractor = val == "conv" ? ModelConfig::Extractor::Conv
                                  : ModelConfig::Extractor::Mlp;
    } else if (field.starts_with("input=")) {
      long h = 0, w = 0;
      if (std::sscanf(val.c_str(), "%ldx%ld", &h, &w) != 2)
        throw IoError("malformed checkpoint input field: " + val);
      c.input_h = h;
      c.input_w = w;
    } else if (field.starts_with("hidden=")) {
      size_t p2 = 0;
      while (p2 < val.size()) {
        const size_t comma = val.find(',', p2);
        c.extractor_hidden.push_back(
            std::stoll(val.substr(p2, comma - p2)));
        p2 = comma == std::string::npos ? val.size() : comma + 1;
      }
    } else if (field.starts_with("embed=")) {
      c.embed_dim = std::stoll(val);
    } else if (field.starts_with("head=")) {
      const size_t comma = val.find(',');
      c.head_hidden[0] = std::stoll(val.substr(0, comma));
      c.head_hidden[1] = std::stoll(val.substr(comma + 1));
    } else if (field.starts_with("conv=")) {
      const size_t x = val.find('x');
      c.conv_filters = std::stoll(val.substr(0, x));
      c.conv_kernel = std::stoll(val.substr(x + 1));
    } else if (field.starts_with("seed=")) {
      c.seed = std::stoull(val);
    } else {
      throw IoError("unknown checkpoint config field: " + field);
    }
  }
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const SiameseModel& model) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);

  if (std::fwrite(kMagic, 1, 4, f.get()) != 4)
    throw IoError("checkpoint write failed");
  write_pod<uint32_t>(f.get(), kVersion);
  write_string(f.get(), config_echo(model.config));
  write_pod<uint32_t>(f.get(), static_cast<uint32_t>(model.params.size()));
  for (size_t i = 0; i < model.params.size(); ++i) {
    const Tensor& p = model.params[i];
    write_string(f.get(), model.names[i]);
    write_pod<uint32_t>(f.get(), static_cast<uint32_t>(p.rank()));
    for (int64_t d : p.shape) write_pod<int64_t>(f.get(), d);
    if (std::fwrite(p.data.data(), sizeof(double), p.data.size(), f.get()) !=
        p.data.size())
      throw IoError("checkpoint write failed");
  }
}

SiameseModel load_checkpoint(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open checkpoint: " + path);

  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 ||
      std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a model checkpoint: " + path);
  const uint32_t version = read_pod<uint32_t>(f.get());
  if (version != kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  SiameseModel m;
  m.config = config_from_echo(read_string(f.get()));
  m.config.validate();
  const uint32_t count = read_pod<uint32_t>(f.get());
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(f.get());
    const uint32_t rank = read_pod<uint32_t>(f.get());
    std::vector<int64_t> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = read_pod<int64_t>(f.get());
    Tensor t = Tensor::zeros(shape);
    if (std::fread(t.data.data(), sizeof(double), t.data.size(), f.get()) !=
        t.data.size())
      throw IoError("checkpoint truncated in block " + name);
    t.requires_grad = true;
    m.names.push_back(name);
    m.params.push_back(std::move(t));
  }

  // Cross-check against the layout the config implies.
  const SiameseModel fresh = init_params(m.config);
  if (fresh.names != m.names)
    throw IoError("checkpoint blocks do not match its config echo");
  for (size_t i = 0; i < m.params.size(); ++i)
    if (fresh.params[i].shape != m.params[i].shape)
      throw IoError("checkpoint block " + m.names[i] + " has shape " +
                    m.params[i].shape_str() + ", config implies " +
                    fresh.params[i].shape_str());
  return m;
}

}  // namespace xda
