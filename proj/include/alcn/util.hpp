#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace alcn {

/// The project-wide random engine; its state serialises via operator<<.
using Rng = std::mt19937_64;

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(std::string_view text);

/// Warnings go to stderr unless a sink is installed (tests capture them).
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

/// Writes `contents` to `path` via a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Flat `key = value` text used by configs, manifests and summaries. Lines
/// starting with '#' are comments. Keys are emitted in sorted order, so equal
/// maps format to identical bytes.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(std::string_view text, std::string_view source = "<text>");
std::string format_key_values(const KeyValues& kv, std::string_view header_comment = {});

std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, char sep);
std::string trim(std::string_view s);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);
std::uint64_t parse_uint(std::string_view s, std::string_view what);
bool parse_bool(std::string_view s, std::string_view what);

}  // namespace alcn
