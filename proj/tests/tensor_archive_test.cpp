#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

#include <nlohmann/json.hpp>

#include "cct/tensor_archive.hpp"

namespace {

using cct::ArchiveError;
using cct::Tensor;
using cct::TensorArchive;
using Bytes = std::vector<std::uint8_t>;

// Builds an archive by hand: little-endian length, header text, raw buffer.
Bytes assemble(const std::string& header, const Bytes& buffer) {
  Bytes out(8);
  std::uint64_t n = header.size();
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(n >> (8 * i));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), buffer.begin(), buffer.end());
  return out;
}

Bytes floats(std::initializer_list<float> values) {
  Bytes out(values.size() * 4);
  std::memcpy(out.data(), std::data(values), out.size());
  return out;
}

TEST(TensorArchive, LoadsSingleTensor) {
  const auto bytes = assemble(
      R"({"embed.weight":{"data_offsets":[0,24],"dtype":"f32","shape":[3,2]}})",
      floats({1, 2, 3, 4, 5, 6}));
  const auto archive = TensorArchive::deserialize(bytes);
  ASSERT_TRUE(archive.contains("embed.weight"));
  const auto& t = archive.at("embed.weight");
  EXPECT_EQ(t.shape, (std::vector<std::int64_t>{3, 2}));
  EXPECT_EQ(t.values, (std::vector<float>{1, 2, 3, 4, 5, 6}));
  // The writer's canonical form reproduces these exact bytes.
  EXPECT_EQ(archive.serialize(), bytes);
}

TEST(TensorArchive, RoundTripIsByteIdentical) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 1.0f);
  TensorArchive archive;
  for (const char* name : {"b", "a.weight", "layers.0.attn.q.weight", "z"}) {
    Tensor t;
    t.shape = {static_cast<std::int64_t>(1 + rng() % 5), static_cast<std::int64_t>(1 + rng() % 7)};
    t.values.resize(static_cast<std::size_t>(t.shape[0] * t.shape[1]));
    for (auto& v : t.values) v = n(rng);
    archive.put(name, t);
  }
  const auto bytes = archive.serialize();
  const auto loaded = TensorArchive::deserialize(bytes);
  EXPECT_EQ(loaded, archive);
  EXPECT_EQ(loaded.serialize(), bytes);

  const auto path = std::filesystem::temp_directory_path() / "cct_archive_roundtrip.bin";
  archive.save(path.string());
  EXPECT_EQ(cct::read_file_bytes(path.string()), bytes);
  EXPECT_EQ(TensorArchive::load(path.string()), archive);
  std::filesystem::remove(path);
}

TEST(TensorArchive, TruncatedFileFails) {
  TensorArchive archive;
  archive.put("w", {{2, 2}, {1, 2, 3, 4}});
  auto bytes = archive.serialize();
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, bytes.size() - 1}) {
    const Bytes truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW((void)TensorArchive::deserialize(truncated), ArchiveError) << "cut " << cut;
  }
}

TEST(TensorArchive, RejectsOverlapAndOutOfRange) {
  const auto buffer = floats({1, 2, 3, 4});
  EXPECT_THROW((void)TensorArchive::deserialize(assemble(
                   R"({"a":{"data_offsets":[0,8],"dtype":"f32","shape":[2]},)"
                   R"("b":{"data_offsets":[4,12],"dtype":"f32","shape":[2]}})",
                   buffer)),
               ArchiveError);
  EXPECT_THROW((void)TensorArchive::deserialize(assemble(
                   R"({"a":{"data_offsets":[8,24],"dtype":"f32","shape":[4]}})", buffer)),
               ArchiveError);
}

TEST(TensorArchive, RejectsShapeMismatchAndDtype) {
  const auto buffer = floats({1, 2, 3, 4});
  EXPECT_THROW((void)TensorArchive::deserialize(assemble(
                   R"({"a":{"data_offsets":[0,16],"dtype":"f32","shape":[3]}})", buffer)),
               ArchiveError);
  EXPECT_THROW((void)TensorArchive::deserialize(assemble(
                   R"({"a":{"data_offsets":[0,16],"dtype":"f16","shape":[4]}})", buffer)),
               ArchiveError);
  EXPECT_THROW((void)TensorArchive::deserialize(assemble("{not json", buffer)), ArchiveError);
}

TEST(TensorArchive, PutValidatesShape) {
  TensorArchive archive;
  EXPECT_ANY_THROW(archive.put("w", {{2, 3}, {1, 2, 3}}));
  EXPECT_THROW((void)archive.at("missing"), ArchiveError);
}

}  // namespace
