#include <cmath>
#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "sttgcn/error.hpp"
#include "sttgcn/io.hpp"

namespace stt::io {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        std::reverse(b, b + sizeof(T));
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path) : path_(path) {
        ensure_parent_dir(path);
        out_.open(path, std::ios::binary | std::ios::trunc);
        if (!out_) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }
    void u64(std::uint64_t v) {
        v = to_little(v);
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    void f64(double v) {
        auto bits = to_little(std::bit_cast<std::uint64_t>(v));
        out_.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    void close() {
        out_.close();
        if (!out_) throw IoError(fmt::format("write failed for {}", path_.string()));
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path) : path_(path) {
        in_.open(path, std::ios::binary);
        if (!in_) throw IoError(fmt::format("cannot open {}", path.string()));
    }
    void expect_magic(std::string_view m) {
        std::string buf(m.size(), '\0');
        in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!in_ || buf != m) {
            throw FormatError(fmt::format("{}: bad magic, expected {}", path_.string(), m));
        }
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        in_.read(reinterpret_cast<char*>(&v), sizeof v);
        if (!in_) throw FormatError(fmt::format("{}: truncated header", path_.string()));
        return to_little(v);
    }
    double f64(std::size_t index) {
        std::uint64_t bits = 0;
        in_.read(reinterpret_cast<char*>(&bits), sizeof bits);
        if (!in_) throw FormatError(fmt::format("{}: truncated payload at value {}", path_.string(), index));
        double v = std::bit_cast<double>(to_little(bits));
        if (!std::isfinite(v)) {
            throw FormatError(fmt::format("{}: non-finite value at index {}", path_.string(), index));
        }
        return v;
    }
    void expect_eof() {
        if (in_.peek() != std::char_traits<char>::eof()) {
            throw FormatError(fmt::format("{}: trailing bytes after payload", path_.string()));
        }
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

} // namespace

void ensure_parent_dir(const std::filesystem::path& path) {
    auto parent = path.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw IoError(fmt::format("cannot create directory {}: {}", parent.string(), ec.message()));
}

void write_tensor(const std::filesystem::path& path, const DenseTensor3& t) {
    BinaryWriter w(path);
    w.magic("STT1");
    for (auto d : t.dims()) w.u64(d);
    for (double v : t.data()) w.f64(v);
    w.close();
}

DenseTensor3 read_tensor(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("STT1");
    Dims3 dims{};
    for (auto& d : dims) d = r.u64();
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) {
        throw FormatError(fmt::format("{}: zero tensor dimension", path.string()));
    }
    std::vector<double> data(dims[0] * dims[1] * dims[2]);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = r.f64(i);
    r.expect_eof();
    return DenseTensor3(dims, std::move(data));
}

void write_matrix(const std::filesystem::path& path, const DenseMatrix& m) {
    BinaryWriter w(path);
    w.magic("STM1");
    w.u64(static_cast<std::uint64_t>(m.rows()));
    w.u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
    w.close();
}

DenseMatrix read_matrix(const std::filesystem::path& path) {
    BinaryReader r(path);
    r.expect_magic("STM1");
    const auto rows = r.u64();
    const auto cols = r.u64();
    DenseMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t n = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64(n++);
    r.expect_eof();
    return m;
}

void write_tensor_csv(const std::filesystem::path& path, const DenseTensor3& t) {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    out << "i,j,k,value\n";
    const auto [d1, d2, d3] = t.dims();
    for (std::size_t k = 0; k < d3; ++k)
        for (std::size_t j = 0; j < d2; ++j)
            for (std::size_t i = 0; i < d1; ++i)
                out << fmt::format("{},{},{},{}\n", i + 1, j + 1, k + 1, format_double(t(i, j, k)));
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

DenseTensor3 read_tensor_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::getline(in, line);
    if (trim(line) != "i,j,k,value") throw FormatError(fmt::format("{}:1: expected header i,j,k,value", path.string()));

    struct Entry {
        std::uint64_t i, j, k;
        double v;
    };
    std::vector<Entry> entries;
    Dims3 dims{0, 0, 0};
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto cells = split(line, ',');
        Entry e{};
        if (cells.size() != 4 || !parse_u64(cells[0], e.i) || !parse_u64(cells[1], e.j) ||
            !parse_u64(cells[2], e.k) || !parse_double(cells[3], e.v) || e.i == 0 || e.j == 0 || e.k == 0) {
            throw FormatError(fmt::format("{}:{}: malformed tensor entry", path.string(), lineno));
        }
        if (!std::isfinite(e.v)) throw FormatError(fmt::format("{}:{}: non-finite tensor value", path.string(), lineno));
        dims[0] = std::max<std::size_t>(dims[0], e.i);
        dims[1] = std::max<std::size_t>(dims[1], e.j);
        dims[2] = std::max<std::size_t>(dims[2], e.k);
        entries.push_back(e);
    }
    if (entries.empty()) throw FormatError(fmt::format("{}: no tensor entries", path.string()));
    if (entries.size() != dims[0] * dims[1] * dims[2]) {
        throw FormatError(fmt::format("{}: {} entries do not cover dims ({}, {}, {})", path.string(), entries.size(),
                                      dims[0], dims[1], dims[2]));
    }
    DenseTensor3 t(dims);
    std::vector<bool> seen(t.size(), false);
    for (const auto& e : entries) {
        const std::size_t at = (e.i - 1) + dims[0] * ((e.j - 1) + dims[1] * (e.k - 1));
        if (seen[at]) {
            throw FormatError(fmt::format("{}: duplicate entry ({}, {}, {})", path.string(), e.i, e.j, e.k));
        }
        seen[at] = true;
        t(e.i - 1, e.j - 1, e.k - 1) = e.v;
    }
    return t;
}

std::string format_double(double v) { return fmt::format("{}", v); }

bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_u64(std::string_view s, std::uint64_t& out) {
    s = trim(s);
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    const char* ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// --- Manifest ---

void Manifest::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

void Manifest::set(const std::string& key, double value) { set(key, format_double(value)); }

void Manifest::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

void Manifest::set(const std::string& key, const std::vector<double>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ',';
        s += format_double(values[i]);
    }
    set(key, s);
}

bool Manifest::contains(const std::string& key) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

const std::string& Manifest::get(const std::string& key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    throw FormatError(fmt::format("manifest is missing key '{}'", key));
}

double Manifest::get_double(const std::string& key) const {
    double v = 0;
    if (!parse_double(get(key), v)) throw FormatError(fmt::format("manifest key '{}' is not a number", key));
    return v;
}

long long Manifest::get_int(const std::string& key) const {
    long long v = 0;
    const auto& s = get(key);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError(fmt::format("manifest key '{}' is not an integer", key));
    }
    return v;
}

std::vector<double> Manifest::get_doubles(const std::string& key) const {
    std::vector<double> out;
    const auto& s = get(key);
    if (s.empty()) return out;
    for (auto cell : split(s, ',')) {
        double v = 0;
        if (!parse_double(cell, v)) throw FormatError(fmt::format("manifest key '{}' has a bad list entry", key));
        out.push_back(v);
    }
    return out;
}

void Manifest::write(const std::filesystem::path& path) const {
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot open {} for writing", path.string()));
    for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
    if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

Manifest Manifest::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string_view::npos) {
            throw FormatError(fmt::format("{}:{}: expected key=value", path.string(), lineno));
        }
        m.set(std::string(trim(t.substr(0, eq))), std::string(trim(t.substr(eq + 1))));
    }
    return m;
}

} // namespace stt::io
