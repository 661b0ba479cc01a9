#include "rawdrift/document.hpp"

#include <charconv>
#include <cmath>

#include "rawdrift/error.hpp"

namespace rawdrift::doc {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const YAML::Node& node, std::string_view where) {
  if (!node || !node.IsScalar()) fail(ErrorCode::Schema, std::string(where) + ": expected a number");
  const std::string& s = node.Scalar();
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    fail(ErrorCode::Schema, std::string(where) + ": '" + s + "' is not a number");
  }
  if (!std::isfinite(v)) fail(ErrorCode::NonFinite, std::string(where) + ": non-finite value");
  return v;
}

namespace {

void emit_level(YAML::Emitter& out, const Tensor& t, std::size_t dim, std::size_t& offset) {
  out << YAML::Flow << YAML::BeginSeq;
  const std::size_t n = t.rank() == 0 ? 1 : t.dim(dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (dim + 1 < t.rank()) {
      emit_level(out, t, dim + 1, offset);
    } else {
      out << format_double(t[offset++]);
    }
  }
  out << YAML::EndSeq;
}

void read_level(const YAML::Node& node, const Shape& shape, std::size_t dim, std::vector<double>& values,
                std::string_view where) {
  if (!node.IsSequence() || node.size() != shape[dim]) {
    fail(ErrorCode::Schema, std::string(where) + ": expected shape " + shape_string(shape));
  }
  for (const auto& item : node) {
    if (dim + 1 < shape.size()) {
      read_level(item, shape, dim + 1, values, where);
    } else {
      values.push_back(parse_double(item, where));
    }
  }
}

}  // namespace

void emit_values(YAML::Emitter& out, const Tensor& t) {
  std::size_t offset = 0;
  emit_level(out, t, 0, offset);
}

Tensor read_values(const YAML::Node& node, const Shape& shape, std::string_view where) {
  std::vector<double> values;
  if (shape.empty()) {
    values.push_back(parse_double(node, where));
  } else {
    read_level(node, shape, 0, values, where);
  }
  return Tensor(shape, std::move(values));
}

void require_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!map.IsMap()) fail(ErrorCode::Schema, std::string(where) + ": expected a mapping");
  for (const auto& kv : map) {
    const std::string key = kv.first.as<std::string>();
    bool known = false;
    for (auto a : allowed) known = known || a == key;
    if (!known) fail(ErrorCode::Schema, std::string(where) + ": unknown key '" + key + "'");
  }
}

YAML::Node required(const YAML::Node& map, const std::string& key, std::string_view where) {
  YAML::Node n = map[key];
  if (!n) fail(ErrorCode::Schema, std::string(where) + ": missing key '" + key + "'");
  return n;
}

YAML::Node load(const std::string& text, std::string_view where) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::Schema, std::string(where) + ": " + e.what());
  }
}

}  // namespace rawdrift::doc
