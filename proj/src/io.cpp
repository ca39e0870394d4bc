#include "dastab/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dastab {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ptr != end || (ec != std::errc() && ec != std::errc::result_out_of_range)) {
    throw std::invalid_argument("not a number: '" + text + "'");
  }
  return v;
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) {
    throw std::invalid_argument("CsvTable: row width does not match header");
  }
  rows.push_back(std::move(row));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw std::out_of_range("CsvTable: no column " + name);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

void write_fields(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].find_first_of(",\"\n") != std::string::npos) {
      throw std::invalid_argument("CSV field contains a separator: " +
                                  fields[i]);
    }
    if (i) out << ',';
    out << fields[i];
  }
  out << '\n';
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table) {
  for (const auto& c : table.comments) out << "# " << c << '\n';
  write_fields(out, table.header);
  for (const auto& row : table.rows) write_fields(out, row);
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!have_header && line.rfind("# ", 0) == 0) {
      table.comments.push_back(line.substr(2));
      continue;
    }
    if (!have_header) {
      table.header = split_fields(line);
      have_header = true;
    } else {
      table.add_row(split_fields(line));
    }
  }
  return table;
}

void write_csv_file(const std::string& path, const CsvTable& table) {
  std::ostringstream os;
  write_csv(os, table);
  write_text_file(path, os.str());
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_csv(in);
}

void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m) {
  std::ostringstream os;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
  write_text_file(path, os.str());
}

Eigen::MatrixXd read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    for (const auto& f : split_fields(line)) row.push_back(parse_double(f));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error(path + ": ragged matrix rows");
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix must be a JSON array");
  if (j.empty()) return Eigen::MatrixXd(0, 0);
  const std::size_t cols = j.front().size();
  Eigen::MatrixXd m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) {
      throw std::invalid_argument("matrix rows must be arrays of equal length");
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json to_json(const IterationRecord& rec) {
  nlohmann::json j;
  j["t"] = rec.t;
  j["gamma"] = rec.gamma;
  j["pg_steps"] = rec.pg_steps;
  j["cost_start"] = rec.cost_start;
  j["cost_end"] = rec.cost_end;
  j["optimal_cost"] = rec.optimal_cost ? nlohmann::json(*rec.optimal_cost)
                                       : nlohmann::json(nullptr);
  j["next_gamma"] = rec.next_gamma;
  j["next_cost"] = rec.next_cost;
  j["search_queries"] = rec.search_queries;
  j["eval_queries"] = rec.eval_queries;
  j["grad_queries"] = rec.grad_queries;
  nlohmann::json transcript = nlohmann::json::array();
  for (const auto& [g, v] : rec.transcript) transcript.push_back({g, v});
  j["transcript"] = std::move(transcript);
  j["gain"] = matrix_to_json(rec.gain);
  return j;
}

IterationRecord iteration_from_json(const nlohmann::json& j) {
  IterationRecord rec;
  rec.t = j.at("t").get<long>();
  rec.gamma = j.at("gamma").get<double>();
  rec.pg_steps = j.at("pg_steps").get<long>();
  rec.cost_start = j.at("cost_start").get<double>();
  rec.cost_end = j.at("cost_end").get<double>();
  if (!j.at("optimal_cost").is_null()) {
    rec.optimal_cost = j.at("optimal_cost").get<double>();
  }
  rec.next_gamma = j.at("next_gamma").get<double>();
  rec.next_cost = j.at("next_cost").get<double>();
  rec.search_queries = j.at("search_queries").get<long>();
  rec.eval_queries = j.at("eval_queries").get<long>();
  rec.grad_queries = j.at("grad_queries").get<long>();
  for (const auto& pair : j.at("transcript")) {
    rec.transcript.emplace_back(pair.at(0).get<double>(),
                                pair.at(1).get<double>());
  }
  rec.gain = matrix_from_json(j.at("gain"));
  return rec;
}

nlohmann::json to_json(const AnnealState& state) {
  nlohmann::json j;
  j["t"] = state.t;
  j["gamma"] = state.gamma;
  j["gain"] = matrix_to_json(state.gain);
  j["finished"] = state.finished;
  j["next_query_index"] = state.next_query_index;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& rec : state.history) history.push_back(to_json(rec));
  j["history"] = std::move(history);
  return j;
}

AnnealState anneal_state_from_json(const nlohmann::json& j) {
  AnnealState state;
  state.t = j.at("t").get<long>();
  state.gamma = j.at("gamma").get<double>();
  state.gain = matrix_from_json(j.at("gain"));
  state.finished = j.at("finished").get<bool>();
  state.next_query_index = j.at("next_query_index").get<std::uint64_t>();
  for (const auto& rec : j.at("history")) {
    state.history.push_back(iteration_from_json(rec));
  }
  return state;
}

std::uint64_t config_hash(const nlohmann::json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) {
    std::filesystem::create_directories(target.parent_path());
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << text;
  }
  std::filesystem::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace dastab
