#include "cirforge/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "cirforge/binary_io.hpp"
#include "cirforge/errors.hpp"

namespace cirforge::nc {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'R', 'C', 'K', 'P', 'T', '1'};
// Guards against absurd allocations from corrupted headers.
constexpr std::uint64_t kMaxNameBytes = 1 << 16;
constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

}  // namespace

void write_checkpoint(const TensorTable& table, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  binio::put_u64(out, table.size());
  for (const auto& [name, t] : table) {
    binio::put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::put_u64(out, t.rank());
    for (auto d : t.shape()) binio::put_u64(out, d);
    for (double x : t.data()) binio::put_f64(out, x);
  }
}

void write_checkpoint(const TensorTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_checkpoint(table, out);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

TensorTable read_checkpoint(std::istream& in) {
  char magic[8];
  binio::read_exact(in, magic, sizeof magic, "checkpoint magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("bad magic (expected CIRCKPT1)");
  const auto count = binio::get_u64(in, "entry count");
  TensorTable table;
  std::set<std::string> seen;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = binio::get_u64(in, "name length");
    if (len > kMaxNameBytes) throw FormatError("entry name length " + std::to_string(len) + " is implausible");
    std::string name(len, '\0');
    binio::read_exact(in, name.data(), len, "entry name");
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint entry '" + name + "'");
    const auto rank = binio::get_u64(in, "rank");
    if (rank == 0 || rank > kMaxRank) throw FormatError("entry '" + name + "' has rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      d = binio::get_u64(in, "shape");
      if (d > kMaxElements || (elements *= d) > kMaxElements) {
        throw FormatError("entry '" + name + "' has an implausible shape");
      }
    }
    Tensor t(shape, 0.0);
    for (auto& x : t.data()) x = binio::get_f64(in, "tensor data");
    table.emplace_back(std::move(name), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after the last checkpoint entry");
  return table;
}

TensorTable read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace cirforge::nc
