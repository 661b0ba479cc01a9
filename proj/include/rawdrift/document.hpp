#pragma once

#include <yaml-cpp/yaml.h>

#include <initializer_list>
#include <string>
#include <string_view>

#include "rawdrift/tensor.hpp"

// Helpers for the YAML documents written by this library (parameter
// documents, checkpoints, run configs).
namespace rawdrift::doc {

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);
/// Strict parse of a whole scalar; non-numbers and non-finite values throw.
double parse_double(const YAML::Node& node, std::string_view where);

/// Emits values as a flow sequence, nested by the leading dimensions of
/// `shape` (a 3×3 matrix becomes three rows).
void emit_values(YAML::Emitter& out, const Tensor& t);
/// Reads a nested sequence with exactly the given shape.
Tensor read_values(const YAML::Node& node, const Shape& shape, std::string_view where);

/// Rejects keys outside `allowed` and reports the first offender.
void require_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed,
                  std::string_view where);
YAML::Node required(const YAML::Node& map, const std::string& key, std::string_view where);

/// Parses a document, mapping yaml-cpp exceptions to Schema errors.
YAML::Node load(const std::string& text, std::string_view where);

}  // namespace rawdrift::doc
