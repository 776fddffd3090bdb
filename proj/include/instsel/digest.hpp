#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <string>
#include <string_view>

#include "instsel/error.hpp"

namespace instsel {

// Lowercase hex SHA-256 of a byte string.
inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("digest", "DigestFailed", "EVP_Digest returned an error");
  }
  std::string out;
  out.reserve(len * 2);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    out += buf;
  }
  return out;
}

}  // namespace instsel
