#include "kdctc/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "kdctc/experiment.hpp"

namespace kdctc {

namespace fs = std::filesystem;

namespace {

// Baselines first, the distillation method last, mirroring the result tables.
int method_rank(const std::string& m) {
  if (m == "vanilla") return 0;
  if (m == "vanilla_plus_sampling") return 1;
  if (m == "kd_ctcnet") return 2;
  return 3;
}

std::string format_cell(const AggregateRow& row) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << row.mean_accuracy * 100.0;
  if (row.n_seeds > 1) os << "±" << std::fixed << std::setprecision(2) << row.std_accuracy * 100.0;
  return os.str();
}

void render_confusion_png(const RunResult& run, const fs::path& file) {
  const int C = static_cast<int>(run.confusion.size());
  if (C == 0) return;
  cv::Mat norm(C, C, CV_8UC1);
  for (int r = 0; r < C; ++r) {
    std::int64_t total = 0;
    for (int c = 0; c < C; ++c) total += run.confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    for (int c = 0; c < C; ++c) {
      const double frac =
          total > 0
              ? static_cast<double>(run.confusion[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) /
                    static_cast<double>(total)
              : 0.0;
      norm.at<unsigned char>(r, c) = static_cast<unsigned char>(frac * 255.0 + 0.5);
    }
  }
  cv::Mat colored;
  cv::applyColorMap(norm, colored, cv::COLORMAP_VIRIDIS);
  cv::Mat big;
  const int cell = 48;
  cv::resize(colored, big, cv::Size(C * cell, C * cell), 0, 0, cv::INTER_NEAREST);
  for (int i = 1; i < C; ++i) {
    cv::line(big, {i * cell, 0}, {i * cell, C * cell}, {32, 32, 32}, 1);
    cv::line(big, {0, i * cell}, {C * cell, i * cell}, {32, 32, 32}, 1);
  }
  if (!cv::imwrite(file.string(), big)) throw IoError("cannot write " + file.string());
}

}  // namespace

void write_report(const fs::path& results_dir, const fs::path& out_dir) {
  const std::vector<RunResult> results = load_results(results_dir);
  if (results.empty())
    throw ValidationError("nothing to report: no run records in " + results_dir.string());

  fs::create_directories(out_dir);
  const std::vector<AggregateRow> rows = aggregate(results);

  std::set<int> pct_set;
  std::vector<std::string> methods;
  std::map<std::pair<std::string, int>, const AggregateRow*> by_key;
  for (const auto& row : rows) {
    pct_set.insert(row.percentage);
    if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) methods.push_back(row.method);
    by_key[{row.method, row.percentage}] = &row;
  }
  std::sort(methods.begin(), methods.end(),
            [](const std::string& a, const std::string& b) { return method_rank(a) < method_rank(b); });
  const std::vector<int> percentages(pct_set.begin(), pct_set.end());

  // Plain-text table: methods as rows, percentages as columns.
  {
    std::ostringstream os;
    os << "Test accuracy (%), mean±std over seeds\n\n";
    os << std::left << std::setw(24) << "method";
    for (int p : percentages) os << std::right << std::setw(14) << (std::to_string(p) + "%");
    os << "\n";
    for (const auto& m : methods) {
      os << std::left << std::setw(24) << m;
      for (int p : percentages) {
        auto it = by_key.find({m, p});
        os << std::right << std::setw(14) << (it != by_key.end() ? format_cell(*it->second) : std::string("-"));
      }
      os << "\n";
    }
    std::ofstream out(out_dir / "accuracy_table.txt", std::ios::binary);
    if (!out) throw IoError("cannot write accuracy_table.txt");
    out << os.str();
  }

  // CSV twin of the table.
  {
    std::ofstream out(out_dir / "accuracy_table.csv", std::ios::binary);
    if (!out) throw IoError("cannot write accuracy_table.csv");
    out << "method,percentage,mean_accuracy,std_accuracy,n_seeds\n";
    for (const auto& m : methods)
      for (int p : percentages) {
        auto it = by_key.find({m, p});
        if (it == by_key.end()) continue;
        out << m << "," << p << "," << std::setprecision(17) << it->second->mean_accuracy << ","
            << it->second->std_accuracy << "," << it->second->n_seeds << "\n";
      }
  }

  // Raw confusion counts + heatmaps, one pair per run.
  for (const auto& run : results) {
    {
      std::ofstream out(out_dir / ("confusion_" + run.run_id + ".txt"), std::ios::binary);
      if (!out) throw IoError("cannot write confusion counts for " + run.run_id);
      out << "# rows = true class, cols = predicted; classes: ";
      for (std::size_t i = 0; i < run.classes.size(); ++i) out << (i ? "," : "") << run.classes[i];
      out << "\n";
      for (const auto& row : run.confusion) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
        out << "\n";
      }
    }
    render_confusion_png(run, out_dir / ("confusion_" + run.run_id + ".png"));
  }
}

}  // namespace kdctc
