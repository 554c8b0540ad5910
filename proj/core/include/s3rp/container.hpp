#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace s3rp::container {

/// Binary container shared by dataset and checkpoint files:
///
///   magic[4] | u32 version | u64 json_length | json bytes | array payloads
///
/// All integers and floats are little-endian. The JSON block carries a
/// top-level "arrays" list of {name, dtype, shape, offset, count}; offsets
/// are byte offsets from the start of the payload region.
enum class DType { f32, f64 };

struct Array {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  std::vector<double> values;
};

struct Contents {
  std::uint32_t version = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<Array> arrays;

  const Array& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

using Magic = std::array<char, 4>;

/// Throws ErrorCode::io on write failure.
void write(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
           const nlohmann::json& meta, const std::vector<Array>& arrays);

/// Writes arrays whose values arrive in pieces, in declaration order. The
/// `values` of each entry are ignored; shapes fix the layout up front.
class StreamWriter {
 public:
  StreamWriter(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
               const nlohmann::json& meta, std::vector<Array> layout);
  ~StreamWriter();
  StreamWriter(const StreamWriter&) = delete;
  StreamWriter& operator=(const StreamWriter&) = delete;

  void append(std::span<const double> values);
  /// Throws ErrorCode::io unless every declared value has been written.
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Throws ErrorCode::io (cannot open), ErrorCode::corrupt (magic, truncation,
/// malformed JSON) or ErrorCode::version (version != expected_version).
Contents read(const std::filesystem::path& path, const Magic& magic,
              std::uint32_t expected_version);

}  // namespace s3rp::container
