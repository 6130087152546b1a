#pragma once
// Results rows written twice: CSV for plotting and JSON lines for tools.
// Every row starts with config_hash and seed.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace mpt {

using OrderedJson = nlohmann::ordered_json;

class MetricsWriter {
 public:
  // Creates <dir>/<stem>.csv and <dir>/<stem>.jsonl, truncating existing files.
  MetricsWriter(const std::filesystem::path& dir, const std::string& stem);

  // Scalars become one CSV column each; arrays become name_0, name_1, ...
  // The first row fixes the CSV header; later rows must produce the same columns.
  void write(const std::string& config_hash, std::uint64_t seed, const OrderedJson& fields);
  std::size_t rows() const noexcept { return rows_; }
  std::filesystem::path csv_path() const { return csv_path_; }
  std::filesystem::path jsonl_path() const { return jsonl_path_; }

 private:
  std::filesystem::path csv_path_;
  std::filesystem::path jsonl_path_;
  std::ofstream csv_;
  std::ofstream jsonl_;
  std::vector<std::string> columns_;
  std::size_t rows_ = 0;
};

// %.9g for floats so values survive a text round trip.
std::string format_csv_value(const OrderedJson& v);

// Minimal reader for files this writer produced (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;
};
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace mpt
