#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace crs::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// RFC 4180 style reader: quoted fields, doubled quotes, CRLF or LF line ends.
// A leading UTF-8 byte order mark is skipped. Blank trailing lines are ignored.
Table parse(std::string_view text);

// Quotes a field only when it contains a comma, quote or line break.
std::string escape_field(std::string_view field);
std::string format_row(const std::vector<std::string>& fields);

}  // namespace crs::csv
