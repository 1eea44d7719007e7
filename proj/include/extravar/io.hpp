#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "extravar/matrix.hpp"

namespace extravar {

// Shortest decimal rendering that round-trips a double bit-exactly (%.17g).
std::string format_double(double x);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

// FNV-1a over raw bytes, rendered as 16 hex chars
std::string hash_hex(const std::string& bytes);

// Binary matrix container: 8-byte magic "XVARMAT1", then rows/cols/element
// width as little-endian uint64, then row-major float64 payload.
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

} // namespace extravar
