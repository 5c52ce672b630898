#pragma once

#include "rmpc/model.hpp"

#include <string>

namespace rmpc {

/// Reads and validates a problem file. Throws InputError whose message names
/// the file position (syntax errors) or the offending key path.
UncertainSystem parse_problem(const std::string& path);

/// Same for in-memory text; `source` is used in error messages.
UncertainSystem parse_problem_text(const std::string& text, const std::string& source = "<input>");

/// Pretty-printed JSON using the problem-file schema; matrices are row-major
/// nested arrays and doubles are written with round-trip precision.
std::string serialize_problem(const UncertainSystem& sys);

}  // namespace rmpc
