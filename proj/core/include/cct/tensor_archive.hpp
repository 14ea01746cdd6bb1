#pragma once

// Tensor archive: a flat little-endian container for named f32 tensors.
//
//   [u64 LE header length N][N bytes UTF-8 JSON header][data buffer]
//
// The header maps tensor name -> {"dtype": "f32", "shape": [..],
// "data_offsets": [begin, end)}, offsets relative to the start of the data
// buffer. The writer emits a compact header with keys in sorted order and
// packs tensors contiguously in name order, so save(load(bytes)) == bytes
// for any archive it produced.

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace cct {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> values;

  [[nodiscard]] std::size_t element_count() const;
};

class TensorArchive {
 public:
  void put(const std::string& name, Tensor tensor);
  [[nodiscard]] bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  [[nodiscard]] const Tensor& at(const std::string& name) const;
  [[nodiscard]] const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
  [[nodiscard]] std::size_t size() const noexcept { return tensors_.size(); }

  [[nodiscard]] std::vector<std::uint8_t> serialize() const;
  /// Throws ArchiveError on malformed headers, unsupported dtypes, extents
  /// outside the buffer, overlapping regions or shape/size mismatches.
  [[nodiscard]] static TensorArchive deserialize(const std::vector<std::uint8_t>& bytes);

  void save(const std::string& path) const;
  [[nodiscard]] static TensorArchive load(const std::string& path);

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

bool operator==(const Tensor& a, const Tensor& b);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cct
