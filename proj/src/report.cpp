#include "namlab/report.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <set>
#include <tuple>

namespace namlab {

namespace {

int split_rank(const std::string& s) {
  const auto it = std::find(kSplitNames.begin(), kSplitNames.end(), s);
  return it == kSplitNames.end() ? 100 : static_cast<int>(it - kSplitNames.begin());
}

int task_rank(const std::string& t) {
  static const std::vector<std::string> order = {"palindrome", "fibonacci", "reduce"};
  const auto it = std::find(order.begin(), order.end(), t);
  return it == order.end() ? 100 : static_cast<int>(it - order.begin());
}

}  // namespace

ReportTable build_report(const std::vector<MetricsRecord>& records) {
  using RunKey = std::tuple<std::string, std::string, std::uint64_t>;
  std::map<RunKey, std::vector<const MetricsRecord*>> runs;
  for (const auto& r : records) runs[{r.model, r.task, r.seed}].push_back(&r);

  std::map<std::pair<std::string, std::string>, ReportTable::Row> rows;
  std::set<std::string> tasks;
  for (const auto& [key, recs] : runs) {
    const auto& [model, task, seed] = key;
    std::size_t chosen = 0;
    double best = -1;
    bool have_od_easy = false;
    for (const auto* r : recs) {
      if (r->split != "od_easy") continue;
      have_od_easy = true;
      if (r->sequence_accuracy > best || (r->sequence_accuracy == best && r->epoch < chosen)) {
        best = r->sequence_accuracy;
        chosen = r->epoch;
      }
    }
    if (!have_od_easy)
      for (const auto* r : recs) chosen = std::max(chosen, r->epoch);
    tasks.insert(task);
    for (const auto* r : recs) {
      if (r->epoch != chosen) continue;
      auto& row = rows[{model, r->split}];
      row.model = model;
      row.split = r->split;
      row.accuracy[task] += r->sequence_accuracy;
      row.runs[task] += 1;
    }
  }
  ReportTable table;
  table.tasks.assign(tasks.begin(), tasks.end());
  std::sort(table.tasks.begin(), table.tasks.end(),
            [](const auto& a, const auto& b) { return std::make_pair(task_rank(a), a) < std::make_pair(task_rank(b), b); });
  for (auto& [key, row] : rows) {
    for (auto& [task, acc] : row.accuracy) acc /= static_cast<double>(row.runs[task]);
    table.rows.push_back(row);
  }
  std::sort(table.rows.begin(), table.rows.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(a.model, split_rank(a.split), a.split) < std::make_tuple(b.model, split_rank(b.split), b.split);
  });
  return table;
}

void write_report_markdown(std::ostream& out, const ReportTable& table) {
  out << "| model | split |";
  for (const auto& t : table.tasks) out << ' ' << t << " |";
  out << "\n|---|---|";
  for (std::size_t i = 0; i < table.tasks.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& row : table.rows) {
    out << "| " << row.model << " | " << row.split << " |";
    for (const auto& t : table.tasks) {
      const auto it = row.accuracy.find(t);
      if (it == row.accuracy.end()) out << " - |";
      else out << ' ' << std::fixed << std::setprecision(1) << 100.0 * it->second << "% |";
    }
    out << '\n';
  }
}

void write_report_csv(std::ostream& out, const ReportTable& table) {
  out << "model,split";
  for (const auto& t : table.tasks) out << ',' << t;
  out << '\n';
  for (const auto& row : table.rows) {
    out << row.model << ',' << row.split;
    for (const auto& t : table.tasks) {
      const auto it = row.accuracy.find(t);
      out << ',';
      if (it != row.accuracy.end()) out << it->second;
    }
    out << '\n';
  }
}

}  // namespace namlab
