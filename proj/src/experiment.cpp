#include "kdctc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "kdctc/trainer.hpp"

namespace kdctc {

namespace fs = std::filesystem;

namespace {

std::string format_real(real v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_csv(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(part);
  return out;
}

// Atomic replacement: write next to the target, then rename over it.
void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

void refresh_index(const fs::path& results_dir) {
  std::vector<std::string> lines;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".run") continue;
    const RunResult r = read_run_result(entry.path());
    std::ostringstream os;
    os << r.run_id << "\t" << to_string(r.method) << "\t" << r.percentage << "\t" << r.seed << "\t"
       << format_real(r.test_accuracy) << "\t" << entry.path().filename().string();
    lines.push_back(os.str());
  }
  std::sort(lines.begin(), lines.end());
  std::string content = "# run_id\tmethod\tpercentage\tseed\ttest_accuracy\tfile\n";
  for (const auto& l : lines) content += l + "\n";
  write_file_atomic(results_dir / "index.txt", content);
}

}  // namespace

std::string make_run_id(Method method, int percentage, std::uint64_t seed) {
  std::ostringstream os;
  os << to_string(method) << "_p" << (percentage < 100 ? "0" : "") << (percentage < 10 ? "0" : "") << percentage
     << "_s" << seed;
  return os.str();
}

void write_run_result(const RunResult& result, const fs::path& results_dir) {
  fs::create_directories(results_dir);
  std::ostringstream os;
  os << "# kdctc run result\n";
  os << "format_version: 1\n";
  os << "run_id: " << result.run_id << "\n";
  os << "method: " << to_string(result.method) << "\n";
  os << "percentage: " << result.percentage << "\n";
  os << "seed: " << result.seed << "\n";
  os << "test_accuracy: " << format_real(result.test_accuracy) << "\n";
  os << "n_test: " << result.n_test << "\n";
  os << "classes: " << join_csv(result.classes) << "\n";
  {
    std::vector<std::string> parts;
    for (real v : result.per_class_accuracy) parts.push_back(format_real(v));
    os << "per_class_accuracy: " << join_csv(parts) << "\n";
  }
  os << "confusion: " << result.confusion.size() << "\n";
  for (const auto& row : result.confusion) {
    std::vector<std::string> parts;
    for (auto v : row) parts.push_back(std::to_string(v));
    os << "row: " << join_csv(parts) << "\n";
  }
  os << "config: " << result.config_snapshot.size() << "\n";
  for (const auto& [k, v] : result.config_snapshot) os << k << " = " << v << "\n";

  write_file_atomic(results_dir / (result.run_id + ".run"), os.str());
  refresh_index(results_dir);
}

RunResult read_run_result(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw PathError("cannot open run record: " + file.string());

  RunResult r;
  std::string line;
  int line_no = 0;
  std::map<std::string, std::string> header;
  int confusion_rows = -1;
  int config_rows = -1;

  auto fail = [&](const std::string& why) {
    throw ParseError(file.string() + ":" + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (confusion_rows > 0) {
      if (line.rfind("row: ", 0) != 0) fail("expected a confusion row");
      std::vector<std::int64_t> row;
      for (const auto& p : split_csv(line.substr(5))) row.push_back(std::stoll(p));
      r.confusion.push_back(std::move(row));
      --confusion_rows;
      continue;
    }
    if (config_rows > 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) fail("expected 'key = value' in config block");
      r.config_snapshot[line.substr(0, eq)] = line.substr(eq + 3);
      --config_rows;
      continue;
    }
    const auto colon = line.find(": ");
    if (colon == std::string::npos) fail("expected 'key: value', got '" + line + "'");
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    if (key == "confusion") {
      confusion_rows = std::stoi(value);
      if (confusion_rows == 0) confusion_rows = -1;
    } else if (key == "config") {
      config_rows = std::stoi(value);
      if (config_rows == 0) config_rows = -1;
    } else {
      header[key] = value;
    }
  }

  for (const char* required : {"format_version", "run_id", "method", "percentage", "seed", "test_accuracy", "n_test",
                               "classes", "per_class_accuracy"})
    if (!header.count(required)) throw ParseError(file.string() + ": missing field '" + std::string(required) + "'");
  if (header["format_version"] != "1")
    throw ParseError(file.string() + ": unsupported format_version '" + header["format_version"] + "'");

  try {
    r.run_id = header["run_id"];
    r.method = method_from_string(header["method"]);
    r.percentage = std::stoi(header["percentage"]);
    r.seed = std::stoull(header["seed"]);
    r.test_accuracy = std::stod(header["test_accuracy"]);
    r.n_test = std::stoll(header["n_test"]);
    r.classes = split_csv(header["classes"]);
    for (const auto& p : split_csv(header["per_class_accuracy"])) r.per_class_accuracy.push_back(std::stod(p));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(file.string() + ": malformed field: " + e.what());
  }
  return r;
}

std::vector<RunResult> load_results(const fs::path& results_dir) {
  if (!fs::is_directory(results_dir)) throw PathError("results directory does not exist: " + results_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(results_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".run") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<RunResult> out;
  for (const auto& f : files) out.push_back(read_run_result(f));
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<RunResult>& results) {
  std::map<std::pair<std::string, int>, std::vector<real>> groups;
  for (const auto& r : results) groups[{to_string(r.method), r.percentage}].push_back(r.test_accuracy);

  std::vector<AggregateRow> rows;
  for (const auto& [key, accs] : groups) {
    AggregateRow row;
    row.method = key.first;
    row.percentage = key.second;
    row.n_seeds = static_cast<int>(accs.size());
    real sum = 0;
    for (real a : accs) sum += a;
    row.mean_accuracy = sum / static_cast<real>(accs.size());
    if (accs.size() > 1) {
      real ss = 0;
      for (real a : accs) ss += (a - row.mean_accuracy) * (a - row.mean_accuracy);
      row.std_accuracy = std::sqrt(ss / static_cast<real>(accs.size() - 1));
    }
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const AggregateRow& a, const AggregateRow& b) {
    if (a.method != b.method) return a.method < b.method;
    return a.percentage < b.percentage;
  });
  return rows;
}

ExperimentOutcome run_experiment(const ExperimentPlan& plan) {
  if (plan.methods.empty() || plan.percentages.empty() || plan.seeds.empty())
    throw ValidationError("experiment plan needs at least one method, percentage and seed");

  fs::create_directories(plan.results_dir);
  const fs::path manifest_dir = plan.results_dir / "manifests";
  fs::create_directories(manifest_dir);

  DatasetIndex index = scan_dataset(plan.dataset_root);
  if (plan.subsample_per_class > 0)
    index = subsample_balanced(index, plan.subsample_per_class, plan.subsample_seed);

  auto [train_full, test] = stratified_split(index, plan.config.split_seed);
  write_manifest(train_full, manifest_dir / "train_p100.manifest");
  write_manifest(test, manifest_dir / "test.manifest");

  // Reuse completed runs.
  std::set<std::string> done;
  if (fs::exists(plan.results_dir)) {
    for (const auto& entry : fs::directory_iterator(plan.results_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".run")
        done.insert(entry.path().stem().string());
  }

  ExperimentOutcome outcome;
  for (const Method method : plan.methods) {
    for (const int pct : plan.percentages) {
      const std::vector<std::uint64_t> run_seeds =
          pct >= 100 ? std::vector<std::uint64_t>{plan.seeds.front()} : plan.seeds;
      for (const std::uint64_t seed : run_seeds) {
        const std::string id = make_run_id(method, pct, seed);
        if (done.count(id)) {
          outcome.results.push_back(read_run_result(plan.results_dir / (id + ".run")));
          continue;
        }
        try {
          SplitManifest train_manifest = sample_low_data(train_full, pct, seed);
          {
            std::ostringstream name;
            name << "train_p" << (pct < 100 ? "0" : "") << (pct < 10 ? "0" : "") << pct << "_s" << seed
                 << ".manifest";
            write_manifest(train_manifest, manifest_dir / name.str());
          }

          RunConfig cfg = plan.config;
          cfg.method = method;
          cfg.train.seed = seed;

          ModelInit init;
          if (cfg.init == "pretrained") {
            if (cfg.pretrained_path.empty()) throw ConfigError("init=pretrained requires pretrained_path");
            init = InitPretrained{cfg.pretrained_path, seed};
          } else {
            init = InitRandom{seed};
          }
          auto model = build_model(cfg.arch, static_cast<int>(train_manifest.classes.size()), init);

          TrainHooks hooks;
          hooks.out_dir = plan.results_dir / "runs" / id;
          hooks.eval_manifest = &test;
          train(*model, train_manifest, plan.dataset_root, method, cfg.train, cfg.pipeline, cfg.disable_local,
                hooks);

          const EvalResult ev = evaluate(*model, test, plan.dataset_root, cfg.pipeline);

          RunResult result;
          result.run_id = id;
          result.method = method;
          result.percentage = pct;
          result.seed = seed;
          result.test_accuracy = ev.accuracy;
          result.per_class_accuracy = ev.per_class_accuracy;
          result.confusion = ev.confusion;
          result.classes = test.classes;
          result.n_test = ev.n_test;
          result.config_snapshot = config_to_kv(cfg);
          write_run_result(result, plan.results_dir);
          outcome.results.push_back(std::move(result));
        } catch (const Error& e) {
          outcome.failures.push_back(id + ": " + e.what());
          std::cerr << "warning: run " << id << " failed: " << e.what() << "\n";
        }
      }
    }
  }
  outcome.aggregates = aggregate(outcome.results);
  {
    std::ostringstream os;
    os << "method,percentage,mean_accuracy,std_accuracy,n_seeds\n";
    for (const auto& row : outcome.aggregates)
      os << row.method << "," << row.percentage << "," << format_real(row.mean_accuracy) << ","
         << format_real(row.std_accuracy) << "," << row.n_seeds << "\n";
    write_file_atomic(plan.results_dir / "aggregates.csv", os.str());
  }
  return outcome;
}

}  // namespace kdctc
