#ifndef SALN_CSV_HPP
#define SALN_CSV_HPP

#include <string>
#include <vector>

namespace saln {

// Minimal CSV support: comma delimiter, "." decimal point, mandatory header
// row, UTF-8, no quoting (fields never contain commas here).
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<std::string>& fields);

 private:
  void* file_;  // FILE*
  std::size_t columns_;
};

// deterministic, locale-independent float formatting
std::string fmt_double(double v, int precision = 6);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::string& path);

}  // namespace saln

#endif
