#include "extravar/io.hpp"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "extravar/rng.hpp"

namespace extravar {

namespace {

constexpr char kMatrixMagic[8] = {'X', 'V', 'A', 'R', 'M', 'A', 'T', '1'};

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

} // namespace

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw std::runtime_error("short write: " + path.string());
}

std::string hash_hex(const std::string& bytes) {
    uint64_t h = fnv1a64(bytes);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::string out;
    out.reserve(32 + m.data.size() * 8);
    out.append(kMatrixMagic, 8);
    put_u64(out, static_cast<uint64_t>(m.rows));
    put_u64(out, static_cast<uint64_t>(m.cols));
    put_u64(out, 8);
    for (double x : m.data) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        put_u64(out, bits);
    }
    write_file_bytes(path, out);
}

Matrix read_matrix(const std::filesystem::path& path) {
    std::string bytes = read_file_bytes(path);
    if (bytes.size() < 32 || std::memcmp(bytes.data(), kMatrixMagic, 8) != 0)
        throw std::runtime_error("not a matrix file: " + path.string());
    uint64_t rows = get_u64(bytes.data() + 8);
    uint64_t cols = get_u64(bytes.data() + 16);
    uint64_t width = get_u64(bytes.data() + 24);
    if (width != 8)
        throw std::runtime_error("unsupported element width in " + path.string());
    if (bytes.size() != 32 + rows * cols * 8)
        throw std::runtime_error("truncated matrix file: " + path.string());
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (size_t i = 0; i < m.data.size(); ++i) {
        uint64_t bits = get_u64(bytes.data() + 32 + i * 8);
        double x;
        std::memcpy(&x, &bits, 8);
        m.data[i] = x;
    }
    return m;
}

} // namespace extravar
