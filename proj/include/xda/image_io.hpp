#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xda/data.hpp"
#include "xda/tensor.hpp"

namespace xda {

/// 8-bit grayscale PNG.
void write_png_gray(const std::string& path, int64_t height, int64_t width,
                    const std::vector<uint8_t>& pixels);
Tensor read_png_gray(const std::string& path);  // -> [H,W] in [0,1]

/// Raw Hounsfield-unit array: ASCII header "HURAW\n<rows> <cols> <dtype>\n"
/// with dtype f64 or i16, then little-endian body.
void write_hu_raw_f64(const std::string& path, const Tensor& hu);
void write_hu_raw_i16(const std::string& path, const Tensor& hu);
Tensor read_hu_raw(const std::string& path);

/// One manifest record per sample. Line format (tab-separated):
/// id  relative_path  label  domain  patient  split
/// with "-" standing in for a missing patient id.
struct ManifestRecord {
  std::string id;
  std::string path;
  int label = 0;
  Domain domain = Domain::Source;
  std::string patient;
  Split split = Split::Train;
};

void write_manifest(const std::string& path,
                    const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::string& path);

/// Writes `<dir>/manifest.tsv` plus `<dir>/images/<id>.png` per sample.
void save_dataset(const std::string& dir, const Dataset& dataset);
Dataset load_dataset(const std::string& dir);

}  // namespace xda
