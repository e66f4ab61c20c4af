#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dysurv::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws E_SCHEMA when the column is absent.
  std::size_t column(std::string_view name) const;
};

/// RFC 4180 subset: comma separator, double-quoted fields, header row.
Table read(const std::filesystem::path& path);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest representation that parses back to the same double.
std::string format(double value);

/// Strict parse of the whole field; nullopt on failure.
std::optional<double> parse_double(std::string_view field);

}  // namespace dysurv::csv
