#include "evoqa/template_engine.hpp"

namespace evoqa {

namespace {

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Returns the placeholder name when `tpl` has "{{name}}" at `pos`; sets `end`.
std::string_view placeholder_at(std::string_view tpl, std::size_t pos, std::size_t& end) {
  if (tpl.compare(pos, 2, "{{") != 0) {
    return {};
  }
  std::size_t i = pos + 2;
  while (i < tpl.size() && is_name_char(tpl[i])) {
    ++i;
  }
  if (i == pos + 2 || tpl.compare(i, 2, "}}") != 0) {
    return {};
  }
  end = i + 2;
  return tpl.substr(pos + 2, i - pos - 2);
}

}  // namespace

std::set<std::string> placeholders_in(std::string_view tpl) {
  std::set<std::string> names;
  std::size_t pos = 0;
  while ((pos = tpl.find("{{", pos)) != std::string_view::npos) {
    std::size_t end = 0;
    auto name = placeholder_at(tpl, pos, end);
    if (name.empty()) {
      ++pos;
      continue;
    }
    names.emplace(name);
    pos = end;
  }
  return names;
}

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t last = 0;
  std::size_t pos = 0;
  while ((pos = tpl.find("{{", pos)) != std::string_view::npos) {
    std::size_t end = 0;
    auto name = placeholder_at(tpl, pos, end);
    if (name.empty()) {
      ++pos;
      continue;
    }
    auto it = values.find(std::string(name));
    if (it == values.end()) {
      throw TemplateError("template placeholder has no value: {{" + std::string(name) + "}}");
    }
    out.append(tpl.substr(last, pos - last));
    out.append(it->second);
    last = pos = end;
  }
  out.append(tpl.substr(last));
  return out;
}

}  // namespace evoqa
