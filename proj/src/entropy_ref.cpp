#include "extravar/entropy_ref.hpp"

#include <bit>
#include <cstdlib>
#include <stdexcept>

#include "extravar/io.hpp"

namespace extravar::refstore {

namespace {

constexpr const char* kVersionLine = "extravar-entropy-ref v1";
constexpr const char* kColumnsLine = "layer,head,step,entropy";

[[noreturn]] void fail(const std::string& origin, size_t line_no, const std::string& what) {
    throw std::runtime_error(origin + ": line " + std::to_string(line_no) + ": " + what);
}

// next line of `text` starting at `pos`; returns false at end of input
bool next_line(const std::string& text, size_t& pos, std::string& line) {
    if (pos >= text.size())
        return false;
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
        line = text.substr(pos);
        pos = text.size();
    } else {
        line = text.substr(pos, nl - pos);
        pos = nl + 1;
    }
    return true;
}

long long parse_int_field(const std::string& origin, size_t line_no, const std::string& s) {
    if (s.empty())
        fail(origin, line_no, "empty integer field");
    char* end = nullptr;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (end != s.c_str() + s.size())
        fail(origin, line_no, "malformed integer '" + s + "'");
    return v;
}

std::string meta_value(const std::string& origin, size_t line_no,
                       const std::string& line, const std::string& key) {
    const std::string prefix = key + " = ";
    if (line.rfind(prefix, 0) != 0)
        fail(origin, line_no, "expected '" + key + " = ...'");
    return line.substr(prefix.size());
}

} // namespace

std::optional<double> ReferenceEntropyStore::lookup(int layer, int head, int step) const {
    auto it = entries.find(Key{layer, head, step});
    if (it == entries.end())
        return std::nullopt;
    return it->second;
}

std::string serialize(const ReferenceEntropyStore& store) {
    std::string out;
    out += kVersionLine;
    out += '\n';
    out += "config_hash = " + store.config_hash + '\n';
    out += "train_side = " + std::to_string(store.train_side) + '\n';
    out += "seed = " + std::to_string(store.seed) + '\n';
    out += "samples = " + std::to_string(store.samples) + '\n';
    out += "records = " + std::to_string(store.entries.size()) + '\n';
    out += kColumnsLine;
    out += '\n';
    for (const auto& [key, entropy] : store.entries) {
        out += std::to_string(key.layer) + ',' + std::to_string(key.head) + ',' +
               std::to_string(key.step) + ',' + format_double(entropy) + '\n';
    }
    return out;
}

void save(const ReferenceEntropyStore& store, const std::filesystem::path& path) {
    write_file_bytes(path, serialize(store));
}

ReferenceEntropyStore parse(const std::string& text, const std::string& origin) {
    ReferenceEntropyStore store;
    size_t pos = 0, line_no = 0;
    std::string line;

    auto need_line = [&](const char* what) {
        ++line_no;
        if (!next_line(text, pos, line))
            fail(origin, line_no, std::string("unexpected end of file, expected ") + what);
    };

    need_line("format version");
    if (line != kVersionLine)
        fail(origin, line_no, "unsupported format version '" + line + "'");

    need_line("config_hash");
    store.config_hash = meta_value(origin, line_no, line, "config_hash");
    need_line("train_side");
    store.train_side = static_cast<int>(
        parse_int_field(origin, line_no, meta_value(origin, line_no, line, "train_side")));
    need_line("seed");
    store.seed = static_cast<uint64_t>(
        parse_int_field(origin, line_no, meta_value(origin, line_no, line, "seed")));
    need_line("samples");
    store.samples = static_cast<int>(
        parse_int_field(origin, line_no, meta_value(origin, line_no, line, "samples")));
    need_line("records");
    long long records =
        parse_int_field(origin, line_no, meta_value(origin, line_no, line, "records"));
    if (records < 0)
        fail(origin, line_no, "negative record count");

    need_line("column header");
    if (line != kColumnsLine)
        fail(origin, line_no, "expected column header '" + std::string(kColumnsLine) + "'");

    for (long long i = 0; i < records; ++i) {
        need_line("record");
        size_t c1 = line.find(',');
        size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        size_t c3 = c2 == std::string::npos ? std::string::npos : line.find(',', c2 + 1);
        if (c3 == std::string::npos || line.find(',', c3 + 1) != std::string::npos)
            fail(origin, line_no, "malformed record '" + line + "'");
        Key key;
        key.layer = static_cast<int>(parse_int_field(origin, line_no, line.substr(0, c1)));
        key.head = static_cast<int>(parse_int_field(origin, line_no, line.substr(c1 + 1, c2 - c1 - 1)));
        key.step = static_cast<int>(parse_int_field(origin, line_no, line.substr(c2 + 1, c3 - c2 - 1)));
        std::string val = line.substr(c3 + 1);
        if (val.empty())
            fail(origin, line_no, "empty entropy field");
        char* end = nullptr;
        double entropy = std::strtod(val.c_str(), &end);
        if (end != val.c_str() + val.size())
            fail(origin, line_no, "malformed entropy '" + val + "'");
        if (!store.entries.emplace(key, entropy).second)
            fail(origin, line_no, "duplicate key in store");
    }

    ++line_no;
    if (next_line(text, pos, line) && !line.empty())
        fail(origin, line_no, "trailing content after last record");
    return store;
}

ReferenceEntropyStore load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw std::runtime_error("reference store not found: " + path.string());
    return parse(read_file_bytes(path), path.string());
}

bool stores_bit_equal(const ReferenceEntropyStore& a, const ReferenceEntropyStore& b) {
    if (a.config_hash != b.config_hash || a.train_side != b.train_side ||
        a.seed != b.seed || a.samples != b.samples || a.entries.size() != b.entries.size())
        return false;
    auto ia = a.entries.begin();
    auto ib = b.entries.begin();
    for (; ia != a.entries.end(); ++ia, ++ib) {
        if (ia->first != ib->first)
            return false;
        if (std::bit_cast<uint64_t>(ia->second) != std::bit_cast<uint64_t>(ib->second))
            return false;
    }
    return true;
}

} // namespace extravar::refstore
