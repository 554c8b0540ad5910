#include "s3rp/container.hpp"

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>

#include "s3rp/error.hpp"

namespace s3rp::container {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container IO assumes a little-endian host");

std::string dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  fail(ErrorCode::corrupt, "unknown dtype '" + s + "'");
}

std::size_t element_size(DType t) { return t == DType::f32 ? 4 : 8; }

std::int64_t product(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

const Array& Contents::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  fail(ErrorCode::corrupt, "missing array '" + name + "'");
}

bool Contents::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

namespace {

std::string header_text(const nlohmann::json& meta, const std::vector<Array>& arrays, bool check) {
  nlohmann::json header = meta;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    const auto count = static_cast<std::uint64_t>(product(a.shape));
    if (check)
      require(a.values.size() == count, ErrorCode::data,
              "array '" + a.name + "' size does not match its shape");
    index.push_back({{"name", a.name},
                     {"dtype", dtype_name(a.dtype)},
                     {"shape", a.shape},
                     {"offset", offset},
                     {"count", count}});
    offset += count * element_size(a.dtype);
  }
  header["arrays"] = index;
  return header.dump();
}

void write_prefix(std::ofstream& os, const std::filesystem::path& path, const Magic& magic,
                  std::uint32_t version, const std::string& text) {
  require(static_cast<bool>(os), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  os.write(magic.data(), 4);
  put(os, version);
  put(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

void write_values(std::ofstream& os, DType dtype, std::span<const double> values,
                  std::vector<char>& buffer) {
  const std::size_t es = element_size(dtype);
  buffer.resize(values.size() * es);
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (dtype == DType::f32) {
      const float f = static_cast<float>(values[k]);
      std::memcpy(buffer.data() + k * es, &f, es);
    } else {
      std::memcpy(buffer.data() + k * es, &values[k], es);
    }
  }
  os.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
}

}  // namespace

void write(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
           const nlohmann::json& meta, const std::vector<Array>& arrays) {
  const std::string text = header_text(meta, arrays, true);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  write_prefix(os, path, magic, version, text);
  std::vector<char> buffer;
  for (const auto& a : arrays) write_values(os, a.dtype, a.values, buffer);
  os.flush();
  require(static_cast<bool>(os), ErrorCode::io, "write failed for '" + path.string() + "'");
}

struct StreamWriter::Impl {
  std::filesystem::path path;
  std::ofstream os;
  std::vector<Array> specs;
  std::size_t current = 0;
  std::uint64_t written = 0;  // values written into specs[current]
  std::vector<char> buffer;
};

StreamWriter::StreamWriter(const std::filesystem::path& path, const Magic& magic,
                           std::uint32_t version, const nlohmann::json& meta,
                           std::vector<Array> specs)
    : impl_(std::make_unique<Impl>()) {
  for (auto& a : specs) a.values.clear();
  const std::string text = header_text(meta, specs, false);
  impl_->path = path;
  impl_->specs = std::move(specs);
  impl_->os.open(path, std::ios::binary | std::ios::trunc);
  write_prefix(impl_->os, path, magic, version, text);
}

StreamWriter::~StreamWriter() = default;

void StreamWriter::append(std::span<const double> values) {
  Impl& s = *impl_;
  while (!values.empty()) {
    require(s.current < s.specs.size(), ErrorCode::data, "StreamWriter: more values than declared");
    const Array& a = s.specs[s.current];
    const auto room = static_cast<std::uint64_t>(product(a.shape)) - s.written;
    const std::size_t take = static_cast<std::size_t>(std::min<std::uint64_t>(room, values.size()));
    write_values(s.os, a.dtype, values.first(take), s.buffer);
    values = values.subspan(take);
    s.written += take;
    if (s.written == static_cast<std::uint64_t>(product(a.shape))) {
      ++s.current;
      s.written = 0;
    }
  }
  require(static_cast<bool>(s.os), ErrorCode::io, "write failed for '" + s.path.string() + "'");
}

void StreamWriter::close() {
  Impl& s = *impl_;
  while (s.current < s.specs.size() && product(s.specs[s.current].shape) == 0) ++s.current;
  require(s.current == s.specs.size(), ErrorCode::io,
          "StreamWriter: '" + s.path.string() + "' closed before all arrays were written");
  s.os.flush();
  require(static_cast<bool>(s.os), ErrorCode::io, "write failed for '" + s.path.string() + "'");
  s.os.close();
}

Contents read(const std::filesystem::path& path, const Magic& magic,
              std::uint32_t expected_version) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorCode::io, "cannot open '" + path.string() + "'");
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0);

  constexpr std::uint64_t kPrefix = 4 + 4 + 8;
  require(file_size >= kPrefix, ErrorCode::corrupt, "file too short for header");
  Magic got{};
  is.read(got.data(), 4);
  require(got == magic, ErrorCode::corrupt, "bad magic in '" + path.string() + "'");

  Contents out;
  std::uint64_t json_len = 0;
  is.read(reinterpret_cast<char*>(&out.version), 4);
  is.read(reinterpret_cast<char*>(&json_len), 8);
  require(out.version == expected_version, ErrorCode::version,
          "container version " + std::to_string(out.version) + ", expected " +
              std::to_string(expected_version));
  require(json_len <= file_size - kPrefix, ErrorCode::corrupt, "truncated metadata block");

  std::string text(json_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(json_len));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt, std::string("malformed metadata: ") + e.what());
  }
  require(header.is_object() && header.contains("arrays") && header["arrays"].is_array(),
          ErrorCode::corrupt, "metadata lacks an array index");

  const std::uint64_t payload_start = kPrefix + json_len;
  const std::uint64_t payload_size = file_size - payload_start;
  std::vector<char> buffer;
  try {
    for (const auto& entry : header["arrays"]) {
      Array a;
      a.name = entry.at("name").get<std::string>();
      a.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      require(static_cast<std::int64_t>(count) == product(a.shape), ErrorCode::corrupt,
              "array '" + a.name + "' count/shape mismatch");
      const std::size_t es = element_size(a.dtype);
      require(offset <= payload_size && count * es <= payload_size - offset, ErrorCode::corrupt,
              "truncated payload for array '" + a.name + "'");
      buffer.resize(count * es);
      is.seekg(static_cast<std::streamoff>(payload_start + offset));
      is.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
      require(static_cast<bool>(is), ErrorCode::corrupt, "short read for '" + a.name + "'");
      a.values.resize(count);
      for (std::size_t k = 0; k < count; ++k) {
        if (a.dtype == DType::f32) {
          float f;
          std::memcpy(&f, buffer.data() + k * es, es);
          a.values[k] = f;
        } else {
          std::memcpy(&a.values[k], buffer.data() + k * es, es);
        }
      }
      out.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt, std::string("malformed array index: ") + e.what());
  }
  header.erase("arrays");
  out.meta = std::move(header);
  return out;
}

}  // namespace s3rp::container
