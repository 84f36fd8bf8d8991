#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sttgcn/tensor_core.hpp"

namespace stt::io {

// Binary containers. All integers are u64 and all values IEEE-754 doubles,
// both little-endian.
//   STT1: "STT1" d1 d2 d3 then d1*d2*d3 values in DenseTensor3 layout order
//   STM1: "STM1" rows cols then rows*cols values, row-major
void write_tensor(const std::filesystem::path& path, const DenseTensor3& t);
DenseTensor3 read_tensor(const std::filesystem::path& path);

void write_matrix(const std::filesystem::path& path, const DenseMatrix& m);
DenseMatrix read_matrix(const std::filesystem::path& path);

// Debug CSV form of a tensor: header `i,j,k,value`, 1-based indices, one line
// per entry in layout order.
void write_tensor_csv(const std::filesystem::path& path, const DenseTensor3& t);
DenseTensor3 read_tensor_csv(const std::filesystem::path& path);

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

// Strict full-token parse; returns false on any trailing garbage.
bool parse_double(std::string_view s, double& out);
bool parse_u64(std::string_view s, std::uint64_t& out);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

// Flat `key=value` text manifest; keys are written in insertion order.
class Manifest {
public:
    void set(const std::string& key, const std::string& value);
    void set(const std::string& key, double value);
    void set(const std::string& key, long long value);
    void set(const std::string& key, const std::vector<double>& values);

    bool contains(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    double get_double(const std::string& key) const;
    long long get_int(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    void write(const std::filesystem::path& path) const;
    static Manifest read(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Opens `path` for writing, creating parent directories; throws IoError.
void ensure_parent_dir(const std::filesystem::path& path);

} // namespace stt::io
