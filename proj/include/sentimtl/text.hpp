#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sentimtl {

/// Lowercases ASCII letters and splits on whitespace and ASCII punctuation.
/// Bytes >= 0x80 are kept inside words so UTF-8 text survives intact.
std::vector<std::string> split_words(std::string_view text);

/// Unicode NFC normalization. Throws DataError on invalid UTF-8.
std::string nfc_normalize(std::string_view text);

std::string trim(std::string_view text);

}  // namespace sentimtl
