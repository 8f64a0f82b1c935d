#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "videostudio/tensor.hpp"

namespace vs {

struct IoError : public std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error("io: " + what) {}
};

// VSTN layout: "VSTN", u32 version (1), u32 rank, rank x u64 dims, then the
// payload as float32. Every integer and float is little-endian.
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace vs
