#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "evoqa/error.hpp"

namespace evoqa {

enum class IngestErrc {
  FileNotReadable,
  NotUtf8,
  EmptyDocument,
  DocumentTooLarge,
};

class IngestError : public Error {
 public:
  IngestError(IngestErrc code, const std::string& message) : Error(message), code_(code) {}
  [[nodiscard]] IngestErrc code() const noexcept { return code_; }

 private:
  IngestErrc code_;
};

enum class DocumentFormat { Plain, Markdown };

/// The context text every prompt is grounded in. Immutable once built.
struct SourceDocument {
  std::string doc_id;
  std::string text;
  std::size_t char_count = 0;
  std::size_t token_estimate = 0;
  std::string origin_path;
};

inline constexpr std::size_t kDefaultMaxDocumentChars = 400'000;

/// Number of Unicode code points in UTF-8 text (continuation bytes are not counted).
std::size_t count_code_points(std::string_view text) noexcept;

/// ceil(code_points / 4); 0 for empty text.
std::size_t estimate_tokens(std::string_view text) noexcept;

/// Lowercase hex SHA-256 of the UTF-8 bytes.
std::string fingerprint(std::string_view text);

bool is_valid_utf8(std::string_view bytes) noexcept;

/// Builds a document from in-memory text, enforcing the same checks as
/// load_document (UTF-8, non-blank, under the char cap).
SourceDocument make_document(std::string text, std::string origin_path = {},
                             std::size_t max_chars = kDefaultMaxDocumentChars);

/// Reads a plain-text or markdown file verbatim. Markdown is not stripped;
/// the format hint only documents intent.
SourceDocument load_document(const std::filesystem::path& path,
                             DocumentFormat format_hint = DocumentFormat::Plain,
                             std::size_t max_chars = kDefaultMaxDocumentChars);

}  // namespace evoqa
