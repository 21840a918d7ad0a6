#pragma once

#include <map>
#include <set>
#include <string>
#include <string_view>

#include "evoqa/error.hpp"

namespace evoqa {

class TemplateError : public Error {
 public:
  using Error::Error;
};

/// Names of every {{name}} placeholder in the template.
std::set<std::string> placeholders_in(std::string_view tpl);

/// Single-pass {{name}} substitution: substituted values are never rescanned,
/// so document text containing braces is inserted verbatim. Throws
/// TemplateError for a placeholder with no value.
std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values);

}  // namespace evoqa
