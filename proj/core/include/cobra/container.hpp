#pragma once

// Flat binary weight container shared by every module.
//
// Layout (all integers little-endian):
//   "CSSM"            4 bytes magic
//   version           u32 (currently 1)
//   entry count       u32
//   entries, each:
//     name length     u16
//     name            UTF-8 bytes
//     rank            u8
//     dims            rank x u64
//     values          prod(dims) x f64 (IEEE-754 binary64)
// A rank-0 entry holds exactly one value.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cobra/tensor.hpp"

namespace cobra {

inline constexpr char kContainerMagic[4] = {'C', 'S', 'S', 'M'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct TensorEntry {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;

  std::size_t element_count() const;
};

class WeightContainer {
 public:
  void put(const std::string& name, std::vector<std::uint64_t> dims, std::vector<double> values);
  void put(const std::string& name, const Matrix& m);
  void put_vector(const std::string& name, std::span<const double> v);
  void put_scalar(const std::string& name, double v);

  bool contains(const std::string& name) const { return index_.contains(name); }
  const TensorEntry& at(const std::string& name) const;

  // Typed accessors validate rank (and shape, when given) and throw
  // FormatError with offset 0 on mismatch, since the data came from a file.
  Matrix matrix(const std::string& name) const;
  Matrix matrix(const std::string& name, std::size_t rows, std::size_t cols) const;
  Vector vector(const std::string& name) const;
  Vector vector(const std::string& name, std::size_t len) const;
  double scalar(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static WeightContainer parse(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static WeightContainer load(const std::filesystem::path& path);

 private:
  std::vector<std::string> order_;
  std::map<std::string, TensorEntry> index_;
};

}  // namespace cobra
