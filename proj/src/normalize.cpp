#include "dlm/normalize.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/ustring.h>
#include <unicode/utf8.h>

#include <stdexcept>

namespace dlm {
namespace {

bool is_stripped_mark(UChar32 c) {
  return (c >= 0x064B && c <= 0x065F) || c == 0x0670 || c == 0x0640;
}

UChar32 unify_letter(UChar32 c) {
  switch (c) {
    case 0x0622:
    case 0x0623:
    case 0x0625:
      return 0x0627;
    case 0x0649:
      return 0x064A;
    default:
      return c;
  }
}

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  U8_APPEND_UNSAFE(reinterpret_cast<uint8_t*>(buf), len, c);
  out.append(buf, static_cast<std::size_t>(len));
}

const icu::Normalizer2& nfc() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* instance = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || instance == nullptr) throw std::runtime_error("ICU NFC normalizer unavailable");
  return *instance;
}

}  // namespace

NormalizedText normalize_counted(std::string_view text) {
  NormalizedText result;
  if (text.empty()) return result;

  // Decode with substitution; ICU counts the replaced sequences.
  UErrorCode status = U_ZERO_ERROR;
  int32_t needed = 0;
  int32_t substitutions = 0;
  u_strFromUTF8WithSub(nullptr, 0, &needed, text.data(), static_cast<int32_t>(text.size()), 0xFFFD, nullptr,
                       &status);
  if (status != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(status)) {
    throw std::runtime_error(std::string("UTF-8 decode failed: ") + u_errorName(status));
  }
  status = U_ZERO_ERROR;
  icu::UnicodeString decoded;
  UChar* buffer = decoded.getBuffer(needed + 1);
  u_strFromUTF8WithSub(buffer, needed + 1, &needed, text.data(), static_cast<int32_t>(text.size()), 0xFFFD,
                       &substitutions, &status);
  decoded.releaseBuffer(needed);
  if (U_FAILURE(status)) throw std::runtime_error(std::string("UTF-8 decode failed: ") + u_errorName(status));
  result.repaired = static_cast<std::size_t>(substitutions);

  const icu::UnicodeString composed = nfc().normalize(decoded, status);
  if (U_FAILURE(status)) throw std::runtime_error(std::string("NFC failed: ") + u_errorName(status));

  std::string& out = result.text;
  out.reserve(text.size());
  bool pending_space = false;
  for (int32_t i = 0; i < composed.length();) {
    const UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (is_stripped_mark(c)) continue;
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    append_utf8(out, unify_letter(c));
  }
  return result;
}

std::string normalize(std::string_view text) { return normalize_counted(text).text; }

std::vector<std::size_t> utf8_boundaries(std::string_view text) {
  std::vector<std::size_t> bounds;
  bounds.reserve(text.size() + 1);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto byte = static_cast<unsigned char>(text[i]);
    if ((byte & 0xC0) != 0x80) bounds.push_back(i);
  }
  bounds.push_back(text.size());
  return bounds;
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find(' ', start);
    const std::size_t stop = end == std::string_view::npos ? text.size() : end;
    if (stop > start) words.push_back(text.substr(start, stop - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return words;
}

}  // namespace dlm
