#pragma once

#include <string>
#include <string_view>

namespace nluqa {

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

// Revision of the source tree this binary was built from.
std::string code_fingerprint();

}  // namespace nluqa
