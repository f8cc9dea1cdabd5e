#include "xda/image_io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "xda/error.hpp"

namespace xda {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png_gray(const std::string& path, int64_t height, int64_t width,
                    const std::vector<uint8_t>& pixels) {
  if (height < 1 || width < 1 ||
      pixels.size() != static_cast<size_t>(height * width))
    throw IoError("png write: pixel buffer does not match " +
                  std::to_string(height) + "x" + std::to_string(width));

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png_gray(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open: " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 ||
      png_sig_cmp(header, 0, 8) != 0)
    throw IoError("not a PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png read failed: " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // Fold whatever encoding we meet down to 8-bit grayscale.
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  if ((png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) != 0)
    png_set_rgb_to_gray(png, 1, -1.0, -1.0);
  png_read_update_info(png, info);

  const png_uint_32 h = png_get_image_height(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  std::vector<uint8_t> bytes(static_cast<size_t>(h) * w);
  row_ptrs.resize(h);
  for (png_uint_32 r = 0; r < h; ++r)
    row_ptrs[r] = bytes.data() + static_cast<size_t>(r) * w;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor out = Tensor::zeros({static_cast<int64_t>(h), static_cast<int64_t>(w)});
  for (size_t i = 0; i < bytes.size(); ++i)
    out.data[i] = static_cast<double>(bytes[i]) / 255.0;
  return out;
}

// ---------------------------------------------------------------------------
// raw HU arrays

static_assert(std::endian::native == std::endian::little,
              "raw HU format assumes a little-endian host");

namespace {

void write_hu_header(std::FILE* f, const Tensor& hu, const char* dtype) {
  if (hu.rank() != 2 || hu.data.empty())
    throw IoError("raw HU write expects a nonempty [H,W] image");
  std::fprintf(f, "HURAW\n%lld %lld %s\n",
               static_cast<long long>(hu.dim(0)),
               static_cast<long long>(hu.dim(1)), dtype);
}

}  // namespace

void write_hu_raw_f64(const std::string& path, const Tensor& hu) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  write_hu_header(f.get(), hu, "f64");
  if (std::fwrite(hu.data.data(), sizeof(double), hu.data.size(), f.get()) !=
      hu.data.size())
    throw IoError("raw HU write failed: " + path);
}

void write_hu_raw_i16(const std::string& path, const Tensor& hu) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open for writing: " + path);
  write_hu_header(f.get(), hu, "i16");
  std::vector<int16_t> vals(hu.data.size());
  for (size_t i = 0; i < hu.data.size(); ++i)
    vals[i] = static_cast<int16_t>(std::lround(
        std::clamp(hu.data[i], -32768.0, 32767.0)));
  if (std::fwrite(vals.data(), sizeof(int16_t), vals.size(), f.get()) !=
      vals.size())
    throw IoError("raw HU write failed: " + path);
}

Tensor read_hu_raw(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open: " + path);

  char magic[6] = {0};
  if (!std::fgets(magic, sizeof(magic), f.get()) ||
      std::strcmp(magic, "HURAW") != 0)
    throw IoError("not a raw HU file: " + path);
  int c = std::fgetc(f.get());
  if (c != '\n') throw IoError("malformed raw HU header: " + path);

  long long rows = 0, cols = 0;
  char dtype[8] = {0};
  if (std::fscanf(f.get(), "%lld %lld %7s", &rows, &cols, dtype) != 3 ||
      rows < 1 || cols < 1)
    throw IoError("malformed raw HU header: " + path);
  c = std::fgetc(f.get());
  if (c != '\n') throw IoError("malformed raw HU header: " + path);

  Tensor out = Tensor::zeros({rows, cols});
  const size_t n = out.data.size();
  if (std::strcmp(dtype, "f64") == 0) {
    if (std::fread(out.data.data(), sizeof(double), n, f.get()) != n)
      throw IoError("raw HU body truncated: " + path);
  } else if (std::strcmp(dtype, "i16") == 0) {
    std::vector<int16_t> vals(n);
    if (std::fread(vals.data(), sizeof(int16_t), n, f.get()) != n)
      throw IoError("raw HU body truncated: " + path);
    for (size_t i = 0; i < n; ++i) out.data[i] = vals[i];
  } else {
    throw IoError(std::string("unsupported raw HU dtype: ") + dtype);
  }
  return out;
}

// ---------------------------------------------------------------------------
// manifests and dataset directories

namespace {

std::string domain_tag(Domain d) { return to_string(d); }

Domain parse_domain(const std::string& s, const std::string& path) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw DataError("bad domain '" + s + "' in " + path);
}

Split parse_split(const std::string& s, const std::string& path) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw DataError("bad split '" + s + "' in " + path);
}

}  // namespace

void write_manifest(const std::string& path,
                    const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const ManifestRecord& r : records) {
    out << r.id << '\t' << r.path << '\t' << r.label << '\t'
        << domain_tag(r.domain) << '\t'
        << (r.patient.empty() ? "-" : r.patient) << '\t'
        << to_string(r.split) << '\n';
  }
  if (!out) throw IoError("manifest write failed: " + path);
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<ManifestRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestRecord r;
    std::string label, domain, patient, split;
    if (!(std::getline(fields, r.id, '\t') &&
          std::getline(fields, r.path, '\t') &&
          std::getline(fields, label, '\t') &&
          std::getline(fields, domain, '\t') &&
          std::getline(fields, patient, '\t') &&
          std::getline(fields, split)))
      throw DataError("manifest line " + std::to_string(lineno) +
                      " malformed in " + path);
    if (label != "0" && label != "1")
      throw DataError("manifest line " + std::to_string(lineno) +
                      " has label '" + label + "', expected 0 or 1");
    r.label = label == "1" ? 1 : 0;
    r.domain = parse_domain(domain, path);
    r.patient = patient == "-" ? "" : patient;
    r.split = parse_split(split, path);
    records.push_back(std::move(r));
  }
  return records;
}

void save_dataset(const std::string& dir, const Dataset& dataset) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");

  std::vector<ManifestRecord> records;
  records.reserve(dataset.samples.size());
  for (const Sample& s : dataset.samples) {
    const Tensor& img = s.pixels;
    if (img.rank() != 2)
      throw DataError("sample " + s.id + " is not a [H,W] image");
    std::vector<uint8_t> bytes(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i)
      bytes[i] = static_cast<uint8_t>(
          std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
    const std::string rel = "images/" + s.id + ".png";
    write_png_gray((fs::path(dir) / rel).string(), img.dim(0), img.dim(1),
                   bytes);
    records.push_back({s.id, rel, s.label, s.domain, s.patient,
                       dataset.split});
  }
  write_manifest((fs::path(dir) / "manifest.tsv").string(), records);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest = (fs::path(dir) / "manifest.tsv").string();
  const std::vector<ManifestRecord> records = read_manifest(manifest);
  if (records.empty()) throw DataError("empty manifest: " + manifest);

  Dataset ds;
  ds.split = records.front().split;
  ds.samples.reserve(records.size());
  for (const ManifestRecord& r : records) {
    if (r.split != ds.split)
      throw DataError("manifest mixes train and test records: " + manifest);
    Sample s;
    s.id = r.id;
    s.label = r.label;
    s.domain = r.domain;
    s.patient = r.patient;
    s.pixels = read_png_gray((fs::path(dir) / r.path).string());
    ds.samples.push_back(std::move(s));
  }
  ds.check_ids_unique();
  return ds;
}

}  // namespace xda
