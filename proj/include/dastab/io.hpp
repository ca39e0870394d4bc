#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dastab/anneal.hpp"

namespace dastab {

/// %.17g, which parses back to the same double.
std::string format_double(double v);

/// Inverse of format_double. Accepts denormals, inf and nan; throws
/// std::invalid_argument on anything else that is not a whole number.
double parse_double(const std::string& text);

/// A CSV table. Lines starting with '#' are comments and are kept in order
/// ahead of the header. Fields never contain commas or quotes.
struct CsvTable {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::size_t column(const std::string& name) const;
};

void write_csv(std::ostream& out, const CsvTable& table);
CsvTable read_csv(std::istream& in);

void write_csv_file(const std::string& path, const CsvTable& table);
CsvTable read_csv_file(const std::string& path);

/// Matrix as a header-less CSV of its rows.
void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix_csv(const std::string& path);

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

nlohmann::json to_json(const IterationRecord& rec);
IterationRecord iteration_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnnealState& state);
AnnealState anneal_state_from_json(const nlohmann::json& j);

/// FNV-1a of the compact JSON dump.
std::uint64_t config_hash(const nlohmann::json& config);
std::string hex64(std::uint64_t v);

/// Writes through a temporary file and renames, so readers never see a
/// partial file.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace dastab
