#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace zeroparse::io {

// Whole-file helpers; both throw std::runtime_error naming the path.
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// FNV-1a, used for artifact comparison and config fingerprints. Not
// cryptographic; collisions only matter for accidental divergence.
std::uint64_t fnv1a64(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace zeroparse::io
