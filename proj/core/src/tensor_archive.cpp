#include "cct/tensor_archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <utility>

#include <nlohmann/json.hpp>

namespace cct {

namespace {

static_assert(sizeof(float) == 4);

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void append_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void append_f32_le(std::vector<std::uint8_t>& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(&bits);
  out.insert(out.end(), raw, raw + 4);
}

float read_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
  return std::bit_cast<float>(bits);
}

std::size_t shape_elements(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ArchiveError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

std::size_t Tensor::element_count() const { return shape_elements(shape); }

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::equal(a.values.begin(), a.values.end(), b.values.begin(), b.values.end(),
                    [](float x, float y) {
                      return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
                    });
}

void TensorArchive::put(const std::string& name, Tensor tensor) {
  if (name.empty()) throw ArchiveError("tensor name must be non-empty");
  if (tensor.element_count() != tensor.values.size()) {
    throw ArchiveError("tensor " + name + ": shape does not match value count");
  }
  tensors_[name] = std::move(tensor);
}

const Tensor& TensorArchive::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ArchiveError("archive has no tensor named " + name);
  return it->second;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors_) {
    const std::uint64_t bytes = tensor.values.size() * sizeof(float);
    header[name] = {{"dtype", "f32"},
                    {"shape", tensor.shape},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + offset);
  append_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, tensor] : tensors_) {
    for (float v : tensor.values) append_f32_le(out, v);
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw ArchiveError("archive shorter than its 8-byte length prefix");
  const std::uint64_t header_len = read_u64_le(bytes.data());
  if (header_len > bytes.size() - 8) {
    throw ArchiveError("header length " + std::to_string(header_len) + " exceeds file size " +
                       std::to_string(bytes.size()));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8,
                                   bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ArchiveError(std::string("malformed archive header: ") + e.what());
  }
  if (!header.is_object()) throw ArchiveError("archive header must be a JSON object");

  const std::uint8_t* buffer = bytes.data() + 8 + header_len;
  const std::uint64_t buffer_len = bytes.size() - 8 - header_len;

  TensorArchive archive;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& [name, entry] : header.items()) {
    try {
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw ArchiveError("tensor " + name + ": unsupported dtype " +
                           entry.at("dtype").get<std::string>());
      }
      Tensor t;
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1]) {
        throw ArchiveError("tensor " + name + ": invalid data_offsets");
      }
      if (offsets[1] > buffer_len) {
        throw ArchiveError("tensor " + name + ": extent [" + std::to_string(offsets[0]) + ", " +
                           std::to_string(offsets[1]) + ") outside data buffer of " +
                           std::to_string(buffer_len) + " bytes");
      }
      const std::size_t count = shape_elements(t.shape);
      if (offsets[1] - offsets[0] != count * sizeof(float)) {
        throw ArchiveError("tensor " + name + ": byte extent does not match shape");
      }
      t.values.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        t.values[i] = read_f32_le(buffer + offsets[0] + i * sizeof(float));
      }
      extents.emplace_back(offsets[0], offsets[1]);
      archive.tensors_.emplace(name, std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ArchiveError("tensor " + name + ": malformed entry: " + e.what());
    }
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].first < extents[i - 1].second) {
      throw ArchiveError("archive tensors have overlapping data regions");
    }
  }
  return archive;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArchiveError("short write to " + path);
}

void TensorArchive::save(const std::string& path) const { write_file_bytes(path, serialize()); }

TensorArchive TensorArchive::load(const std::string& path) {
  return deserialize(read_file_bytes(path));
}

}  // namespace cct
