#pragma once

// Flat key/value configuration. Each settings struct publishes a FieldSet
// describing its keys; the same description drives TOML reading, snapshot
// writing and command-line flags (key "beta_dpo" <-> flag "--beta-dpo").

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <toml.hpp>

#include "dfvpo/error.hpp"

namespace dfvpo::config {

namespace fs = std::filesystem;

template <class S>
struct Field {
  std::string key;
  std::string help;
  std::function<void(S&, const toml::node&)> read;
  std::function<void(const S&, toml::table&)> write;
};

template <class S>
using FieldSet = std::vector<Field<S>>;

inline std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  for (char& c : f)
    if (c == '_') c = '-';
  return f;
}

namespace detail {

[[noreturn]] inline void bad_value(const std::string& key, const std::string& want) {
  fail(Errc::InvalidConfig, "config key '" + key + "' expects " + want);
}

template <class T>
T read_scalar(const std::string& key, const toml::node& n) {
  if constexpr (std::is_same_v<T, bool>) {
    if (auto v = n.value_exact<bool>()) return *v;
    bad_value(key, "a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = n.value_exact<std::string>()) return *v;
    bad_value(key, "a string");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (auto v = n.value_exact<double>()) return *v;
    if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
    bad_value(key, "a number");
  } else {
    static_assert(std::is_integral_v<T>);
    if (auto v = n.value_exact<std::int64_t>()) {
      if constexpr (std::is_unsigned_v<T>) {
        if (*v < 0) bad_value(key, "a non-negative integer");
      }
      return static_cast<T>(*v);
    }
    bad_value(key, "an integer");
  }
}

template <class T>
void write_scalar(toml::table& t, const std::string& key, const T& v) {
  if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, std::string> || std::is_floating_point_v<T>) {
    t.insert_or_assign(key, v);
  } else {
    require(static_cast<std::uint64_t>(v) <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()),
            Errc::InvalidConfig, "value of '" + key + "' does not fit a TOML integer");
    t.insert_or_assign(key, static_cast<std::int64_t>(v));
  }
}

}  // namespace detail

/// Field bound to a scalar or vector-of-scalar value reached through
/// `get`, which must accept both `S&` and `const S&`.
template <class S, class Get>
Field<S> ref_field(std::string key, Get get, std::string help = {}) {
  using T = std::remove_cvref_t<decltype(get(std::declval<S&>()))>;
  Field<S> f;
  f.key = key;
  f.help = std::move(help);
  f.read = [key, get](S& s, const toml::node& n) {
    if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>) {
      using E = typename T::value_type;
      const auto* arr = n.as_array();
      if (!arr) detail::bad_value(key, "an array");
      T out;
      for (const auto& e : *arr) out.push_back(detail::read_scalar<E>(key, e));
      get(s) = std::move(out);
    } else {
      get(s) = detail::read_scalar<T>(key, n);
    }
  };
  f.write = [key, get](const S& s, toml::table& t) {
    if constexpr (requires { typename T::value_type; } && !std::is_same_v<T, std::string>) {
      toml::table tmp;
      toml::array arr;
      for (const auto& e : get(s)) {
        detail::write_scalar(tmp, "v", e);
        arr.push_back(*tmp.get("v"));
      }
      t.insert_or_assign(key, std::move(arr));
    } else {
      detail::write_scalar(t, key, get(s));
    }
  };
  return f;
}

template <class S, class T>
Field<S> field(std::string key, T S::*member, std::string help = {}) {
  return ref_field<S>(std::move(key), [member](auto& s) -> auto& { return s.*member; }, std::move(help));
}

/// Field with custom conversion through a string (enums, paths).
template <class S>
Field<S> string_field(std::string key, std::function<std::string(const S&)> get,
                      std::function<void(S&, const std::string&)> set, std::string help = {}) {
  Field<S> f;
  f.key = key;
  f.help = std::move(help);
  f.read = [key, set](S& s, const toml::node& n) { set(s, detail::read_scalar<std::string>(key, n)); };
  f.write = [key, get](const S& s, toml::table& t) { t.insert_or_assign(key, get(s)); };
  return f;
}

template <class S>
const Field<S>* find_field(const FieldSet<S>& fields, const std::string& key) {
  for (const auto& f : fields)
    if (f.key == key) return &f;
  return nullptr;
}

/// Applies every key of `table`; unknown keys are rejected.
template <class S>
void apply(S& s, const FieldSet<S>& fields, const toml::table& table, const std::string& origin) {
  for (const auto& [k, node] : table) {
    const std::string key(k.str());
    const Field<S>* f = find_field(fields, key);
    require(f != nullptr, Errc::InvalidConfig, origin + ": unknown key '" + key + "'");
    f->read(s, node);
  }
}

inline toml::table parse_toml(std::string_view text, const std::string& origin) {
  try {
    return toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << origin << ": " << e.description() << " at line " << e.source().begin.line;
    fail(Errc::InvalidConfig, os.str());
  }
}

template <class S>
void apply_file(S& s, const FieldSet<S>& fields, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::IoError, "cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  apply(s, fields, parse_toml(buf.str(), path.string()), path.string());
}

/// Parses a command-line value for `key`. TOML literals are accepted as-is;
/// a bare comma list becomes an array and anything else a string.
template <class S>
void apply_flag(S& s, const FieldSet<S>& fields, const std::string& key, const std::string& raw) {
  const Field<S>* f = find_field(fields, key);
  require(f != nullptr, Errc::InvalidConfig, "unknown option '" + key + "'");
  auto try_parse = [&](const std::string& literal) -> std::optional<toml::table> {
    try {
      return toml::parse("v = " + literal);
    } catch (const toml::parse_error&) {
      return std::nullopt;
    }
  };
  std::optional<toml::table> t = try_parse(raw);
  if (!t && raw.find(',') != std::string::npos) t = try_parse("[" + raw + "]");
  if (t) {
    // A bare scalar for an array-valued key becomes a one-element array.
    toml::table probe;
    f->write(s, probe);
    if (probe[key].is_array() && !(*t)["v"].is_array()) t = try_parse("[" + raw + "]");
  }
  if (!t) {
    toml::table st;
    st.insert("v", raw);
    t = std::move(st);
  }
  try {
    f->read(s, *(*t)["v"].node());
  } catch (const Error&) {
    // A string-typed key given an unquoted value that parsed as a number.
    toml::table st;
    st.insert("v", raw);
    f->read(s, *st["v"].node());
  }
}

template <class S>
toml::table to_table(const S& s, const FieldSet<S>& fields) {
  toml::table t;
  for (const auto& f : fields) f.write(s, t);
  return t;
}

/// Snapshot text with keys in declaration order.
template <class S>
std::string to_toml(const S& s, const FieldSet<S>& fields) {
  const toml::table all = to_table(s, fields);
  std::ostringstream os;
  for (const auto& f : fields) {
    toml::table one;
    one.insert(f.key, *all.get(f.key));
    os << one << "\n";
  }
  return os.str();
}

}  // namespace dfvpo::config
