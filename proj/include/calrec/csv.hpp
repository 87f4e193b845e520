#pragma once

#include <filesystem>
#include <fstream>
#include <type_traits>
#include <string>
#include <string_view>
#include <vector>

#include "calrec/core.hpp"

namespace calrec::csv {

/// Splits one CSV record. Double-quoted fields may contain the delimiter and
/// `""` escapes; no multi-line fields.
inline std::vector<std::string> split(std::string_view line, char delim = ',') {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delim) {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string escape(std::string_view field, char delim = ',') {
    if (field.find_first_of(std::string{delim, '"', '\n'}) == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    return out;
}

/// Accumulates a row and writes it with '\n' line endings.
class RowWriter {
public:
    explicit RowWriter(std::ostream& out) : out_(out) {}

    RowWriter& operator<<(std::string_view s) {
        sep();
        out_ << escape(s);
        return *this;
    }
    RowWriter& operator<<(const std::string& s) { return *this << std::string_view(s); }
    RowWriter& operator<<(const char* s) { return *this << std::string_view(s); }
    RowWriter& operator<<(double v) {
        sep();
        out_ << format_double(v);
        return *this;
    }
    template <typename Int>
        requires std::is_integral_v<Int>
    RowWriter& operator<<(Int v) {
        sep();
        out_ << v;
        return *this;
    }

    void end() {
        out_ << '\n';
        first_ = true;
    }

private:
    void sep() {
        if (!first_) out_ << ',';
        first_ = false;
    }

    std::ostream& out_;
    bool first_ = true;
};

}  // namespace calrec::csv
