#pragma once

// Locale-independent CSV output: comma separated, header row, dot decimal,
// floating-point values with 17 significant digits. Non-finite values are
// written as empty cells.

#include <charconv>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlab {

inline std::string format_double(double x) {
    if (!std::isfinite(x)) return "";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

class CsvWriter {
public:
    CsvWriter(std::ostream& out, const std::vector<std::string>& header) : out_(out), columns_(header.size()) {
        row_ = header;
        end_row();
    }

    CsvWriter& operator<<(double x) { return cell(format_double(x)); }
    CsvWriter& operator<<(int x) { return cell(std::to_string(x)); }
    CsvWriter& operator<<(const std::string& s) { return cell(csv_escape(s)); }
    CsvWriter& operator<<(const char* s) { return cell(csv_escape(s)); }

    // Writes the pending row; the cell count must match the header.
    void end_row() {
        if (row_.size() != columns_) throw std::logic_error("CsvWriter: row has the wrong number of cells");
        for (std::size_t i = 0; i < row_.size(); ++i) out_ << (i ? "," : "") << row_[i];
        out_ << '\n';
        row_.clear();
    }

private:
    CsvWriter& cell(std::string s) {
        row_.push_back(std::move(s));
        return *this;
    }

    std::ostream& out_;
    std::size_t columns_;
    std::vector<std::string> row_;
};

}  // namespace tlab
