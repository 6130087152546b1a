#include "mpt/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "mpt/errors.hpp"

namespace mpt {

namespace {

void flatten(const std::string& name, const OrderedJson& v, std::vector<std::pair<std::string, std::string>>& out) {
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) flatten(name + "_" + std::to_string(i), v[i], out);
  } else if (v.is_object()) {
    for (auto it = v.begin(); it != v.end(); ++it) flatten(name + "_" + it.key(), it.value(), out);
  } else {
    out.emplace_back(name, format_csv_value(v));
  }
}

}  // namespace

std::string format_csv_value(const OrderedJson& v) {
  if (v.is_null()) return "";
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  if (v.is_number_integer()) return v.dump();
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v.get<double>());
    return buf;
  }
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  for (char& c : s) {
    if (c == ',' || c == '\n') c = ';';
  }
  return s;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& dir, const std::string& stem)
    : csv_path_(dir / (stem + ".csv")), jsonl_path_(dir / (stem + ".jsonl")) {
  std::filesystem::create_directories(dir);
  csv_.open(csv_path_, std::ios::trunc);
  jsonl_.open(jsonl_path_, std::ios::trunc);
  if (!csv_ || !jsonl_) throw IoError("cannot create metrics files in " + dir.string());
}

void MetricsWriter::write(const std::string& config_hash, std::uint64_t seed, const OrderedJson& fields) {
  OrderedJson row;
  row["config_hash"] = config_hash;
  row["seed"] = seed;
  for (auto it = fields.begin(); it != fields.end(); ++it) row[it.key()] = it.value();

  std::vector<std::pair<std::string, std::string>> cells;
  for (auto it = row.begin(); it != row.end(); ++it) flatten(it.key(), it.value(), cells);
  if (rows_ == 0) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      columns_.push_back(cells[i].first);
      csv_ << (i ? "," : "") << cells[i].first;
    }
    csv_ << '\n';
  } else {
    bool same = cells.size() == columns_.size();
    for (std::size_t i = 0; same && i < cells.size(); ++i) same = cells[i].first == columns_[i];
    if (!same) throw ContractError("metrics row columns differ from the header in " + csv_path_.string());
  }
  for (std::size_t i = 0; i < cells.size(); ++i) csv_ << (i ? "," : "") << cells[i].second;
  csv_ << '\n';
  jsonl_ << row.dump() << '\n';
  csv_.flush();
  jsonl_.flush();
  ++rows_;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    return f;
  };
  std::string line;
  if (std::getline(in, line)) t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty()) t.rows.push_back(split(line));
  }
  return t;
}

}  // namespace mpt
