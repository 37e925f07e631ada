#pragma once

// On-disk dataset layout:
//   root/meta.json              format version, class list, units
//   root/splits.json            token lists per split
//   root/samples/<token>/       points.bin, cam_front.ppm, depth.bin, anns.json
//
// Binary payloads carry a 16-byte header (magic "SCFP", u32 version, u32
// rows, u32 cols) followed by little-endian 32-bit floats. Round trips are
// bit-exact.

#include <map>
#include <string>
#include <vector>

#include "scafusion/scenes.hpp"

namespace scafusion {

inline constexpr uint32_t kDatasetVersion = 1;

struct DatasetMeta {
    uint32_t format_version = kDatasetVersion;
    std::vector<std::string> classes;
};

void write_dataset(const std::string& root, const std::vector<SceneSample>& samples,
                   const std::map<std::string, std::vector<std::string>>& splits);

DatasetMeta read_meta(const std::string& root);
std::map<std::string, std::vector<std::string>> read_splits(const std::string& root);
SceneSample read_sample(const std::string& root, const std::string& token);

// Low-level payload helpers, exposed for tests.
void write_float_matrix(const std::string& path, uint32_t rows, uint32_t cols,
                        const std::vector<float>& data);
std::vector<float> read_float_matrix(const std::string& path, uint32_t& rows, uint32_t& cols);

}  // namespace scafusion
