#include "saln/csv.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "saln/errors.hpp"

namespace saln {

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : file_(nullptr), columns_(header.size()) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) fail(ErrCode::IoError, "cannot open " + path + " for writing");
  file_ = f;
  row(header);
}

CsvWriter::~CsvWriter() {
  if (file_ != nullptr) std::fclose(static_cast<std::FILE*>(file_));
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) fail(ErrCode::InvalidConfig, "csv row width mismatch");
  std::FILE* f = static_cast<std::FILE*>(file_);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) std::fputc(',', f);
    std::fputs(fields[i].c_str(), f);
  }
  std::fputc('\n', f);
}

std::string fmt_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrCode::IoError, "cannot open " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (ss.eof() && !line.empty() && line.back() == ',') fields.push_back("");
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) fail(ErrCode::IoError, "ragged csv row in " + path);
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) fail(ErrCode::IoError, "empty csv " + path);
  return table;
}

}  // namespace saln
