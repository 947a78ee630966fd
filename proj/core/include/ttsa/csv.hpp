#pragma once

// Fixed CSV dialect shared by every exporter: UTF-8, '\n' line endings,
// '.' decimal separator, doubles printed with 17 significant digits so a
// round trip through text is exact.

#include <string>
#include <vector>

namespace ttsa::io {

std::string format_double(double v);

// Splits one line on commas; no quoting, fields may not contain commas.
std::vector<std::string> split_csv_line(const std::string& line);

// Reads all rows of a CSV file.  Throws ParseError if the file cannot be
// opened.  Empty trailing line is ignored.
std::vector<std::vector<std::string>> read_csv_file(const std::string& path);

// Parses a double, throwing ParseError with row/column context on failure.
double parse_double(const std::string& field, std::size_t row, std::size_t col);

// Writes `content` to `path` verbatim; throws ParseError when the file
// cannot be created.
void write_file(const std::string& path, const std::string& content);

// Reads a whole file; throws ParseError when it cannot be opened.
std::string read_file(const std::string& path);

}  // namespace ttsa::io
