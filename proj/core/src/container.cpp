#include "cobra/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace cobra {

namespace {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint64_t offset() const { return pos_; }

  void need(std::uint64_t n, const char* what) const {
    if (n > in_.size() - pos_) {
      throw FormatError(std::string("truncated container: expected ") + what, pos_);
    }
  }
  template <typename U>
  U uint(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::uint64_t pos_ = 0;
};

std::string dims_to_string(const std::vector<std::uint64_t>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

}  // namespace

std::size_t TensorEntry::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

void WeightContainer::put(const std::string& name, std::vector<std::uint64_t> dims,
                          std::vector<double> values) {
  if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw InvalidParameterError("container entry name must be 1..65535 bytes");
  }
  if (dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw InvalidParameterError("container entry rank exceeds 255");
  }
  TensorEntry e{std::move(dims), std::move(values)};
  if (e.element_count() != e.values.size()) {
    throw ShapeError("container entry '" + name + "': dims " + dims_to_string(e.dims) +
                     " do not match " + std::to_string(e.values.size()) + " values");
  }
  if (!index_.contains(name)) order_.push_back(name);
  index_[name] = std::move(e);
}

void WeightContainer::put(const std::string& name, const Matrix& m) {
  put(name, {m.rows(), m.cols()}, m.storage());
}

void WeightContainer::put_vector(const std::string& name, std::span<const double> v) {
  put(name, {v.size()}, std::vector<double>(v.begin(), v.end()));
}

void WeightContainer::put_scalar(const std::string& name, double v) { put(name, {}, {v}); }

const TensorEntry& WeightContainer::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError("container has no entry named '" + name + "'", 0);
  return it->second;
}

Matrix WeightContainer::matrix(const std::string& name) const {
  const auto& e = at(name);
  if (e.dims.size() != 2) {
    throw FormatError("entry '" + name + "' has rank " + std::to_string(e.dims.size()) +
                          ", expected 2",
                      0);
  }
  Matrix m(e.dims[0], e.dims[1]);
  m.storage() = e.values;
  return m;
}

Matrix WeightContainer::matrix(const std::string& name, std::size_t rows, std::size_t cols) const {
  Matrix m = matrix(name);
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError("entry '" + name + "' has shape " +
                          dims_to_string(at(name).dims) + ", expected " +
                          dims_to_string({rows, cols}),
                      0);
  }
  return m;
}

Vector WeightContainer::vector(const std::string& name) const {
  const auto& e = at(name);
  if (e.dims.size() != 1) {
    throw FormatError("entry '" + name + "' has rank " + std::to_string(e.dims.size()) +
                          ", expected 1",
                      0);
  }
  return e.values;
}

Vector WeightContainer::vector(const std::string& name, std::size_t len) const {
  Vector v = vector(name);
  if (v.size() != len) {
    throw FormatError("entry '" + name + "' has length " + std::to_string(v.size()) +
                          ", expected " + std::to_string(len),
                      0);
  }
  return v;
}

double WeightContainer::scalar(const std::string& name) const {
  const auto& e = at(name);
  if (!e.dims.empty()) throw FormatError("entry '" + name + "' is not a scalar", 0);
  return e.values.front();
}

std::vector<std::uint8_t> WeightContainer::serialize() const {
  ByteWriter w;
  w.bytes(kContainerMagic, 4);
  w.uint<std::uint32_t>(kContainerVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(order_.size()));
  for (const auto& name : order_) {
    const auto& e = index_.at(name);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.uint<std::uint64_t>(d);
    for (double v : e.values) w.f64(v);
  }
  return w.take();
}

WeightContainer WeightContainer::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) {
    throw FormatError("bad magic: expected \"CSSM\"", 0);
  }
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version) +
                          " (expected " + std::to_string(kContainerVersion) + ")",
                      4);
  }
  const auto count = r.uint<std::uint32_t>("entry count");
  WeightContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto entry_start = r.offset();
    const auto name_len = r.uint<std::uint16_t>("name length");
    if (name_len == 0) throw FormatError("empty entry name", entry_start);
    std::string name = r.str(name_len, "entry name");
    if (c.contains(name)) throw FormatError("duplicate entry '" + name + "'", entry_start);
    const auto rank = r.uint<std::uint8_t>("rank");
    std::vector<std::uint64_t> dims(rank);
    std::uint64_t count_elems = 1;
    for (auto& d : dims) {
      d = r.uint<std::uint64_t>("dimension");
      if (d != 0 && count_elems > std::numeric_limits<std::uint64_t>::max() / d) {
        throw FormatError("entry '" + name + "' dimensions overflow", r.offset());
      }
      count_elems *= d;
    }
    // Bound the allocation by what the buffer can actually hold.
    if (count_elems > (bytes.size() - r.offset()) / 8) {
      throw FormatError("truncated container: entry '" + name + "' needs " +
                            std::to_string(count_elems) + " values",
                        r.offset());
    }
    std::vector<double> values(count_elems);
    for (auto& v : values) v = r.f64("value");
    c.put(name, std::move(dims), std::move(values));
  }
  if (!r.done()) throw FormatError("trailing bytes after last entry", r.offset());
  return c;
}

void WeightContainer::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

WeightContainer WeightContainer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

}  // namespace cobra
