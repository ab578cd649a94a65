#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "sugar/error.hpp"

namespace sugar {

/// Throws InvalidConfig if `j` is not an object or holds a key outside `allowed`.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                               const std::string& context) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, context + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorKind::InvalidConfig, context + ": unknown key '" + key + "'");
  }
}

}  // namespace sugar
