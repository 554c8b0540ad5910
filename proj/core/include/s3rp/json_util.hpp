#pragma once

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "s3rp/error.hpp"

namespace s3rp::jsonu {

/// Reads optional keys from a JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j_.is_object(), ErrorCode::config, where_ + ": expected a JSON object");
  }

  template <typename T>
  Reader& get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config, where_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.count(it.key()) != 0, ErrorCode::config,
              where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace s3rp::jsonu
