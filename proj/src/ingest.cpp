#include "evoqa/ingest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <memory>
#include <sstream>

namespace evoqa {

std::size_t count_code_points(std::string_view text) noexcept {
  std::size_t count = 0;
  for (unsigned char c : text) {
    if ((c & 0xC0U) != 0x80U) {
      ++count;
    }
  }
  return count;
}

std::size_t estimate_tokens(std::string_view text) noexcept {
  return (count_code_points(text) + 3) / 4;
}

std::string fingerprint(std::string_view text) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), text.data(), text.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest.data(), &length) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(static_cast<std::size_t>(length) * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4U]);
    out.push_back(kHex[digest[i] & 0x0FU]);
  }
  return out;
}

bool is_valid_utf8(std::string_view bytes) noexcept {
  std::size_t i = 0;
  const std::size_t n = bytes.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    if (c < 0x80) {
      ++i;
      continue;
    }
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if ((c & 0xE0U) == 0xC0U) {
      extra = 1;
      cp = c & 0x1FU;
    } else if ((c & 0xF0U) == 0xE0U) {
      extra = 2;
      cp = c & 0x0FU;
    } else if ((c & 0xF8U) == 0xF0U) {
      extra = 3;
      cp = c & 0x07U;
    } else {
      return false;
    }
    if (i + extra >= n) {
      return false;
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cc = static_cast<unsigned char>(bytes[i + k]);
      if ((cc & 0xC0U) != 0x80U) {
        return false;
      }
      cp = (cp << 6U) | (cc & 0x3FU);
    }
    // Overlong forms, surrogates, and values past U+10FFFF.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) ||
        (cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) {
      return false;
    }
    i += extra + 1;
  }
  return true;
}

namespace {

bool is_blank(std::string_view text) {
  return text.find_first_not_of(" \t\r\n\v\f") == std::string_view::npos;
}

}  // namespace

SourceDocument make_document(std::string text, std::string origin_path, std::size_t max_chars) {
  if (!is_valid_utf8(text)) {
    throw IngestError(IngestErrc::NotUtf8, "document is not valid UTF-8: " + origin_path);
  }
  if (is_blank(text)) {
    throw IngestError(IngestErrc::EmptyDocument, "document is empty or whitespace-only: " + origin_path);
  }
  SourceDocument doc;
  doc.char_count = count_code_points(text);
  if (doc.char_count > max_chars) {
    throw IngestError(IngestErrc::DocumentTooLarge,
                      "document has " + std::to_string(doc.char_count) + " characters, cap is " +
                          std::to_string(max_chars));
  }
  doc.token_estimate = (doc.char_count + 3) / 4;
  doc.doc_id = fingerprint(text);
  doc.text = std::move(text);
  doc.origin_path = std::move(origin_path);
  return doc;
}

SourceDocument load_document(const std::filesystem::path& path, DocumentFormat /*format_hint*/,
                             std::size_t max_chars) {
  std::error_code ec;
  std::ifstream in(path, std::ios::binary);
  if (!in || std::filesystem::is_directory(path, ec)) {
    throw IngestError(IngestErrc::FileNotReadable, "cannot read document: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) {
    throw IngestError(IngestErrc::FileNotReadable, "read failed: " + path.string());
  }
  return make_document(std::move(buffer).str(), path.string(), max_chars);
}

}  // namespace evoqa
