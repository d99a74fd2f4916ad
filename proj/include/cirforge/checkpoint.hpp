#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cirforge/numcore.hpp"

namespace cirforge::nc {

using TensorTable = std::vector<std::pair<std::string, Tensor>>;

/// "CIRCKPT1", u64 entry count, then per entry: u64 name length, name bytes,
/// u64 rank, rank u64 dims, row-major f64 values. All little-endian.
void write_checkpoint(const TensorTable& table, std::ostream& out);
void write_checkpoint(const TensorTable& table, const std::filesystem::path& path);

/// Throws FormatError on bad magic, truncation, trailing bytes or a duplicate name.
TensorTable read_checkpoint(std::istream& in);
TensorTable read_checkpoint(const std::filesystem::path& path);

}  // namespace cirforge::nc
