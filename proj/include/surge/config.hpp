#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "surge/common.hpp"

namespace surge::config {

using nlohmann::json;

// Field visitors shared by serialization and strict parsing. A struct opts in
// by providing `template <class V> void visit_fields(V& v, T& obj)` found by
// ADL; nested structs recurse through the same hook.

class Writer {
 public:
  json out = json::object();

  template <class T>
  void operator()(const char* key, T& value) {
    if constexpr (requires(Writer& w, T& t) { visit_fields(w, t); }) {
      Writer sub;
      visit_fields(sub, value);
      out[key] = std::move(sub.out);
    } else {
      out[key] = value;
    }
  }
};

class Reader {
 public:
  Reader(const json& in, std::string pointer) : in_(in), pointer_(std::move(pointer)) {
    if (!in_.is_object()) throw ConfigError(pointer_, "expected an object");
  }

  template <class T>
  void operator()(const char* key, T& value) {
    seen_.insert(key);
    auto it = in_.find(key);
    if (it == in_.end()) return;  // keep default
    const std::string ptr = pointer_ + "/" + key;
    if constexpr (requires(Reader& r, T& t) { visit_fields(r, t); }) {
      Reader sub(*it, ptr);
      visit_fields(sub, value);
      sub.finish();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError(ptr, "expected a boolean");
      value = it->template get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError(ptr, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_unsigned() || it->template get<std::int64_t>() >= 0)
          value = it->template get<T>();
        else
          throw ConfigError(ptr, "expected a non-negative integer");
      } else {
        value = it->template get<T>();
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError(ptr, "expected a number");
      value = it->template get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(ptr, "expected a string");
      value = it->template get<std::string>();
    } else {
      try {
        value = it->template get<T>();
      } catch (const json::exception& e) {
        throw ConfigError(ptr, e.what());
      }
    }
  }

  // Rejects keys that no visitor consumed.
  void finish() const {
    for (auto it = in_.begin(); it != in_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(pointer_ + "/" + it.key(), "unknown key");
  }

 private:
  const json& in_;
  std::string pointer_;
  std::set<std::string> seen_;
};

template <class T>
json to_json(const T& obj) {
  Writer w;
  visit_fields(w, const_cast<T&>(obj));
  return std::move(w.out);
}

template <class T>
T from_json(const json& j, const std::string& pointer = "") {
  T obj{};
  Reader r(j, pointer);
  visit_fields(r, obj);
  r.finish();
  return obj;
}

// Parses into an existing object so defaults set by the caller survive.
template <class T>
void merge_json(const json& j, T& obj, const std::string& pointer = "") {
  Reader r(j, pointer);
  visit_fields(r, obj);
  r.finish();
}

// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace surge::config
