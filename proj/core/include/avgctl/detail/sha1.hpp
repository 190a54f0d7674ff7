#pragma once

#include <string>
#include <string_view>

namespace avgctl::detail {

/// SHA-1 digest as lowercase hex.
std::string sha1_hex(std::string_view data);

/// Git-style blob hash: sha1("blob <size>\0" + content).
std::string git_blob_hash(std::string_view content);

}  // namespace avgctl::detail
