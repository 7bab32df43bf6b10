#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mcnip/common.hpp"

namespace mcnip {

// Checkpoint layout: a magic line, a single-line JSON header, then a flat
// little-endian float64 parameter blob. The header carries "param_count"
// so truncation is detected on read.
struct Checkpoint {
  std::string magic;
  nlohmann::json header;
  std::vector<double> blob;
};

void write_checkpoint(const std::filesystem::path& path,
                      std::string_view magic, nlohmann::json header,
                      const std::vector<double>& blob);

Checkpoint read_checkpoint(const std::filesystem::path& path,
                           std::string_view expected_magic = {});

// FNV-1a over the raw file bytes; recorded in candidate-set metadata so a
// candidate file can be tied back to the model that produced it.
std::string file_checksum(const std::filesystem::path& path);

// Blob (de)serialization helpers. Matrices are stored row by row.
void append_matrix(std::vector<double>& blob, const Mat& m);
void append_vector(std::vector<double>& blob, const Vec& v);
Mat take_matrix(const std::vector<double>& blob, std::size_t& pos, Index rows,
                Index cols);
Vec take_vector(const std::vector<double>& blob, std::size_t& pos, Index n);

}  // namespace mcnip
