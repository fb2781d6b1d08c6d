#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "namlab/harness.hpp"

namespace namlab {

// One row per (model, split); one column per task. Cells are sequence
// accuracies at each run's selected epoch, averaged over runs (seeds).
struct ReportTable {
  std::vector<std::string> tasks;
  struct Row {
    std::string model;
    std::string split;
    std::map<std::string, double> accuracy;  // task -> mean sequence accuracy
    std::map<std::string, std::size_t> runs;
  };
  std::vector<Row> rows;
};

// Groups records into runs by (model, task, seed), picks each run's epoch with
// the best OD-easy sequence accuracy (earliest on ties; latest epoch if no
// OD-easy record exists) and averages over runs.
ReportTable build_report(const std::vector<MetricsRecord>& records);

void write_report_markdown(std::ostream& out, const ReportTable& table);
void write_report_csv(std::ostream& out, const ReportTable& table);

}  // namespace namlab
