#include "cirforge/embed_store.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "cirforge/binary_io.hpp"
#include "cirforge/errors.hpp"
#include "cirforge/rng.hpp"
#include "cirforge/text.hpp"

namespace cirforge::embed {

namespace {

constexpr char kMagic[8] = {'C', 'I', 'R', 'E', 'M', 'B', '0', '1'};

std::string os_context(const std::filesystem::path& path) {
  return path.string() + ": " + std::strerror(errno);
}

}  // namespace

std::vector<ImageRecord> parse_corpus(std::istream& in) {
  std::vector<ImageRecord> records;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!j.contains("id") || !j["id"].is_number_unsigned()) {
      throw ParseError("field 'id' must be a non-negative integer", line_no);
    }
    if (!j.contains("caption") || !j["caption"].is_string()) {
      throw ParseError("field 'caption' must be a string", line_no);
    }
    ImageRecord rec;
    rec.id = j["id"].get<std::uint64_t>();
    rec.caption = j["caption"].get<std::string>();
    if (j.contains("source_url") && !j["source_url"].is_null()) {
      if (!j["source_url"].is_string()) throw ParseError("field 'source_url' must be a string", line_no);
      rec.source_url = j["source_url"].get<std::string>();
    }
    if (trim(rec.caption).empty()) {
      throw ValidationError("line " + std::to_string(line_no) + ": empty caption for id " + std::to_string(rec.id));
    }
    if (auto [it, inserted] = seen.emplace(rec.id, line_no); !inserted) {
      throw ValidationError("duplicate id " + std::to_string(rec.id) + " on lines " + std::to_string(it->second) +
                            " and " + std::to_string(line_no));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ImageRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + os_context(path));
  return parse_corpus(in);
}

void write_corpus(const std::vector<ImageRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + os_context(path));
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["caption"] = r.caption;
    if (r.source_url) j["source_url"] = *r.source_url;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + os_context(path));
}

EmbeddingStore::EmbeddingStore(std::uint32_t dim, StoreKind kind) : dim_(dim), kind_(kind) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
}

void EmbeddingStore::add(std::uint64_t id, std::span<const float> vector) {
  if (vector.size() != dim_) {
    throw ValidationError("vector for id " + std::to_string(id) + " has dim " + std::to_string(vector.size()) +
                          ", store dim is " + std::to_string(dim_));
  }
  if (index_.contains(id)) throw ValidationError("duplicate id " + std::to_string(id));
  double sq = 0.0;
  for (float x : vector) {
    if (!std::isfinite(x)) throw ValidationError("non-finite component in vector for id " + std::to_string(id));
    sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (std::abs(norm - 1.0) > kNormTolerance) {
    std::ostringstream msg;
    msg << "vector for id " << id << " has L2 norm " << norm << ", expected 1 within " << kNormTolerance;
    throw ValidationError(msg.str());
  }
  index_.emplace(id, ids_.size());
  ids_.push_back(id);
  data_.insert(data_.end(), vector.begin(), vector.end());
}

std::span<const float> EmbeddingStore::vector(std::uint64_t id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ValidationError("no embedding for id " + std::to_string(id));
  return row(it->second);
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
  return dim_ == other.dim_ && kind_ == other.kind_ && ids_ == other.ids_ &&
         data_.size() == other.data_.size() &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
}

void write_store(const EmbeddingStore& store, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  binio::put_u32(out, store.dim());
  binio::put_u32(out, static_cast<std::uint32_t>(store.kind()));
  binio::put_u64(out, store.size());
  for (std::size_t r = 0; r < store.size(); ++r) {
    binio::put_u64(out, store.id_at(r));
    for (float x : store.row(r)) binio::put_f32(out, x);
  }
}

void write_store(const EmbeddingStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + os_context(path));
  write_store(store, out);
  out.flush();
  if (!out) throw IoError("write failed for " + os_context(path));
}

EmbeddingStore read_store(std::istream& in) {
  char magic[8];
  binio::read_exact(in, magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw FormatError("not an embedding store: bad magic (expected CIREMB01)");
  }
  const std::uint32_t dim = binio::get_u32(in, "dim");
  const std::uint32_t kind = binio::get_u32(in, "kind");
  const std::uint64_t count = binio::get_u64(in, "count");
  if (dim == 0) throw FormatError("embedding store declares dim 0");
  if (kind > 1) throw FormatError("unknown store kind " + std::to_string(kind));
  EmbeddingStore store(dim, static_cast<StoreKind>(kind));
  std::vector<float> buf(dim);
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint64_t id = binio::get_u64(in, "record id");
    for (auto& x : buf) x = binio::get_f32(in, "vector component");
    store.add(id, buf);
  }
  return store;
}

EmbeddingStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + os_context(path));
  return read_store(in);
}

namespace {

// Unit Gaussian direction for one token; component i comes from counter i.
void add_token_direction(std::string_view token, std::uint64_t seed, std::vector<double>& acc) {
  const std::uint64_t key = derive_seed(seed, fnv1a64(token), token.size());
  const std::size_t dim = acc.size();
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    double u1 = to_unit_interval(mix64(key ^ mix64(2 * i)));
    const double u2 = to_unit_interval(mix64(key ^ mix64(2 * i + 1)));
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    v[i] = r * std::cos(theta);
    if (i + 1 < dim) v[i + 1] = r * std::sin(theta);
  }
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double inv = 1.0 / std::sqrt(sq);
  for (std::size_t i = 0; i < dim; ++i) acc[i] += v[i] * inv;
}

}  // namespace

std::vector<float> synthetic_embed(std::string_view text, std::uint32_t dim, std::uint64_t seed) {
  if (dim < 8) throw ValidationError("synthetic_embed requires dim >= 8, got " + std::to_string(dim));
  auto tokens = tokenize_words(text);
  std::sort(tokens.begin(), tokens.end());
  std::vector<double> acc(dim, 0.0);
  if (tokens.empty()) {
    add_token_direction("", seed, acc);
  } else {
    for (const auto& t : tokens) add_token_direction(t, seed, acc);
  }
  double sq = 0.0;
  for (double x : acc) sq += x * x;
  const double norm = std::sqrt(sq);
  std::vector<float> out(dim);
  if (norm == 0.0) {
    // Only reachable if token directions cancel exactly; fall back to the empty token.
    std::fill(acc.begin(), acc.end(), 0.0);
    add_token_direction("", seed, acc);
    for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i]);
    return out;
  }
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

EmbeddingStore embed_corpus(const std::vector<ImageRecord>& corpus, std::uint32_t dim, std::uint64_t seed) {
  EmbeddingStore store(dim, StoreKind::caption);
  for (const auto& rec : corpus) store.add(rec.id, synthetic_embed(rec.caption, dim, seed));
  return store;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ValidationError("cosine of vectors with different dims");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

}  // namespace cirforge::embed
