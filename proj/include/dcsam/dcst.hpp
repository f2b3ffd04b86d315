#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dcsam/tensor.hpp"

namespace dcsam {

// .dcst layout: "DCST", version 0x01, rank byte, rank x u32 LE dims, then
// row-major f32 LE values. Values are rounded to float on disk.

std::vector<unsigned char> encode_dcst(const Tensor& t);
Tensor decode_dcst(const std::vector<unsigned char>& bytes);

void write_dcst(const std::filesystem::path& path, const Tensor& t);
Tensor read_dcst(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace dcsam
