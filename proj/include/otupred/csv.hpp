#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otupred/error.hpp"

namespace otupred {
namespace csv {

// Parses CSV text with quoted fields ("" escapes a quote inside quotes) and
// either \n or \r\n record separators. A trailing newline does not produce an
// empty record.
inline std::vector<std::vector<std::string>> parse(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    auto end_field = [&] {
        row.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_row = [&] {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field_started && field.empty()) {
                    in_quotes = true;
                    field_started = true;
                } else {
                    field.push_back(c);
                }
                break;
            case ',':
                end_field();
                break;
            case '\r':
                if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
                end_row();
                break;
            case '\n':
                end_row();
                break;
            default:
                field.push_back(c);
                field_started = true;
        }
    }
    if (in_quotes) throw DataError("csv: unterminated quoted field");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

inline std::vector<std::vector<std::string>> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("csv: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

inline std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

inline void write_file(const std::string& path,
                       const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("csv: cannot write " + path);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << escape(row[i]);
        }
        out << '\n';
    }
}

// Strict full-string numeric parses; anything else is a data error.
inline double to_double(const std::string& s, const std::string& what) {
    if (s.empty()) throw DataError(what + ": empty numeric field");
    double value = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
        throw DataError(what + ": not a number: '" + s + "'");
    return value;
}

inline std::int64_t to_int(const std::string& s, const std::string& what) {
    if (s.empty()) throw DataError(what + ": empty integer field");
    std::int64_t value = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last)
        throw DataError(what + ": not an integer: '" + s + "'");
    return value;
}

}  // namespace csv
}  // namespace otupred
