#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "cct/harness.hpp"
#include "cct/metrics.hpp"

namespace cct::harness {

namespace {

void log(const std::string& msg) { std::cerr << "[cct] " << msg << '\n'; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

LabelSet resolve_labels(const std::optional<std::string>& spec, int vocab_size) {
  if (!spec) return LabelSet::digits(std::min(vocab_size, 10));
  if (spec->size() > 5 && spec->substr(spec->size() - 5) == ".json") {
    std::ifstream in(*spec);
    if (!in) throw std::runtime_error("cannot open label file " + *spec);
    return LabelSet::from_json(nlohmann::json::parse(in));
  }
  return LabelSet::parse_inline(*spec);
}

std::vector<std::string> numeric_labels(const LabelSet& labels) {
  std::vector<std::string> out;
  for (const auto& name : labels.names()) {
    if (!name.empty() && std::all_of(name.begin(), name.end(), ::isdigit)) out.push_back(name);
  }
  return out;
}

std::string default_record_id(const RunConfig& c) {
  std::string id = to_string(c.sweep);
  for (const auto& p : c.prompt_paths) id += "_" + std::filesystem::path(p).stem().string();
  return id;
}

}  // namespace

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument("grid entry '" + item + "' is not a number");
    }
  }
  if (grid.empty()) throw std::invalid_argument("grid is empty");
  return grid;
}

SpanSelector parse_selector(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const auto i = static_cast<std::size_t>(std::stoul(text));
      return {i, i};
    }
    return {static_cast<std::size_t>(std::stoul(text.substr(0, colon))),
            static_cast<std::size_t>(std::stoul(text.substr(colon + 1)))};
  } catch (const std::exception&) {
    throw std::invalid_argument("selector '" + text + "' is not START:END");
  }
}

SweepOutcome cmd_sweep(const RunConfig& c) {
  const ModelConfig model_config = c.config_path ? load_model_config(*c.config_path) : ModelConfig{};
  const Model model =
      c.model_path ? Model::load(*c.model_path, model_config) : init_random(c.seed, model_config);
  const LabelSet labels = resolve_labels(c.labels, model_config.vocab_size);

  const std::size_t needed = c.sweep == SweepKind::interpolate ? 2 : 1;
  if (c.prompt_paths.size() != needed) {
    throw std::invalid_argument(to_string(c.sweep) + " sweep needs " + std::to_string(needed) +
                                " prompt file(s)");
  }
  std::vector<StepwiseSentence> prompts;
  for (const auto& p : c.prompt_paths) prompts.push_back(model.resolve(load_prompt(p)));

  SweepOutcome outcome;
  outcome.record_id = c.record_id.value_or(default_record_id(c));
  const SweepContext ctx{model, labels, outcome.record_id, c.workers};

  SweepRecord record;
  RecordMetrics metrics;
  metrics.record_id = outcome.record_id;
  metrics.model = c.model_name;
  metrics.kind = c.sweep;
  switch (c.sweep) {
    case SweepKind::shrink: {
      const auto sel = c.selector.value_or(SpanSelector{0, prompts[0].size() - 1});
      record = run_shrink_sweep(ctx, prompts[0], sel, c.grid.value_or(default_shrink_grid()));
      const auto numeric = numeric_labels(labels);
      if (c.expected_count) {
        metrics.counting = peak_report(record, numeric, *c.expected_count);
      }
      if (c.sum) {
        const auto sl = sum_labels(c.sum->first, c.sum->second, c.shrunk_operand);
        const auto tops = top_labels(record, numeric);
        const auto identity = std::find(record.grid.begin(), record.grid.end(), 1.0);
        if (sl.shrunk_labels.empty()) {
          metrics.skip_reason = "no shrunk label differs from the original label";
        } else if (identity == record.grid.end()) {
          metrics.skip_reason = "grid lacks the unmodified point 1.0";
        } else if (tops[static_cast<std::size_t>(identity - record.grid.begin())] !=
                   std::to_string(sl.original_label)) {
          metrics.skip_reason = "unmodified prompt does not predict the original label";
        } else {
          metrics.sums = std::pair{sl, sums_properties({sl.original_label, sl.shrunk_labels,
                                                        record})};
        }
      }
      break;
    }
    case SweepKind::interpolate:
      record = run_interpolation_sweep(ctx, prompts[0], prompts[1], c.steps);
      if (record.valid()) {
        metrics.interpolation = interpolation_metrics(record);
      } else {
        metrics.skip_reason = record.skip_reason;
      }
      break;
    case SweepKind::shift:
      record = run_shift_sweep(ctx, prompts[0], c.grid.value_or(default_shift_grid()));
      metrics.baseline_deviation = max_deviation_from_baseline(record, 0.0);
      break;
    case SweepKind::scale:
      record = run_scale_sweep(ctx, prompts[0], c.grid.value_or(default_scale_grid()));
      metrics.baseline_deviation = max_deviation_from_baseline(record, 1.0);
      break;
  }
  outcome.skipped = !metrics.valid();
  if (outcome.skipped) log("record " + outcome.record_id + " skipped: " + *metrics.skip_reason);

  const std::filesystem::path dir(c.out_dir);
  std::filesystem::create_directories(dir);
  const auto csv = dir / (outcome.record_id + ".csv");
  const auto sweep_json = dir / (outcome.record_id + ".sweep.json");
  const auto metrics_json = dir / (outcome.record_id + ".metrics.json");
  write_text(csv, record.to_csv());
  write_text(sweep_json, record.to_json().dump(2) + "\n");
  write_text(metrics_json, metrics.to_json().dump(2) + "\n");
  outcome.files = {csv, sweep_json, metrics_json};
  log("wrote " + std::to_string(record.grid.size()) + "-point " + to_string(c.sweep) +
      " sweep to " + dir.string());
  return outcome;
}

Summary cmd_aggregate(const std::vector<std::string>& paths, const std::string& out_dir) {
  if (paths.empty()) throw std::invalid_argument("aggregate needs at least one metrics file");
  std::vector<RecordMetrics> records;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open metrics file " + p);
    try {
      records.push_back(RecordMetrics::from_json(nlohmann::json::parse(in)));
    } catch (const std::exception& e) {
      throw std::runtime_error(p + ": " + e.what());
    }
  }
  const auto summary = aggregate(std::move(records));
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "summary.json", summary.to_json().dump(2) + "\n");
  write_text(dir / "summary.csv", summary.to_csv());
  log("aggregated " + std::to_string(paths.size()) + " metrics file(s) into " + dir.string());
  return summary;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Continuous causal transformer harness"};
  app.require_subcommand(1);

  CheckOptions check;
  auto* check_cmd = app.add_subcommand("check", "Run the attention and model invariant suite");
  check_cmd->add_option("--seed", check.seed, "Seed for generated parameters")->envname("CCT_SEED");
  check_cmd->add_option("--cases", check.cases, "Random cases per invariant")->check(CLI::PositiveNumber);
  check_cmd->add_flag("--corrupt-duration-bias", check.corrupt_duration_bias,
                      "Negative control: drop the duration bias from the masked path");

  RunConfig run;
  std::string sweep_kind = "shrink";
  std::string grid, selector, sum;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run one sweep and write CSV/JSON outputs");
  sweep_cmd->add_option("--model", run.model_path, "Tensor archive")->envname("CCT_MODEL");
  sweep_cmd->add_option("--config", run.config_path, "Model config JSON")->envname("CCT_CONFIG");
  sweep_cmd->add_option("--prompt", run.prompt_paths, "Prompt JSON (twice for interpolate)")
      ->required();
  sweep_cmd->add_option("--sweep", sweep_kind, "shrink|interpolate|shift|scale")
      ->check(CLI::IsMember({"shrink", "interpolate", "shift", "scale"}))
      ->envname("CCT_SWEEP");
  sweep_cmd->add_option("--grid", grid, "Comma-separated sweep values");
  sweep_cmd->add_option("--selector", selector, "Shrunk spans START:END (inclusive)");
  sweep_cmd->add_option("--labels", run.labels, "name=id[+id],... or a labels .json file")
      ->envname("CCT_LABELS");
  sweep_cmd->add_option("--out", run.out_dir, "Output directory")->envname("CCT_OUT");
  sweep_cmd->add_option("--seed", run.seed, "Seed for random init")->envname("CCT_SEED");
  sweep_cmd->add_option("--workers", run.workers, "Worker threads")
      ->check(CLI::PositiveNumber)
      ->envname("CCT_WORKERS");
  sweep_cmd->add_option("--steps", run.steps, "Interpolation steps")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--record-id", run.record_id, "Output file stem");
  sweep_cmd->add_option("--model-name", run.model_name, "Model name in metrics documents")
      ->envname("CCT_MODEL_NAME");
  sweep_cmd->add_option("--expected-count", run.expected_count, "Expected peaks (counting)")
      ->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--sum", sum, "Sum operands LHS+RHS (sums protocol)");
  sweep_cmd->add_option("--shrunk-operand", run.shrunk_operand, "0 = LHS, 1 = RHS")
      ->check(CLI::Range(0, 1));

  std::vector<std::string> metric_files;
  std::string aggregate_out = "out";
  auto* agg_cmd = app.add_subcommand("aggregate", "Summarize per-record metrics documents");
  agg_cmd->add_option("files", metric_files, "Metrics JSON files")->required();
  agg_cmd->add_option("--out", aggregate_out, "Output directory")->envname("CCT_OUT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*check_cmd) {
      const auto report = cmd_check(check);
      print_check_report(report, std::cout);
      return report.all_passed() ? 0 : 1;
    }
    if (*sweep_cmd) {
      run.sweep = parse_sweep_kind(sweep_kind);
      if (!grid.empty()) run.grid = parse_grid(grid);
      if (!selector.empty()) run.selector = parse_selector(selector);
      if (!sum.empty()) {
        const auto plus = sum.find('+');
        if (plus == std::string::npos) throw std::invalid_argument("--sum expects LHS+RHS");
        run.sum = std::pair{std::stoi(sum.substr(0, plus)), std::stoi(sum.substr(plus + 1))};
      }
      cmd_sweep(run);
      return 0;
    }
    if (*agg_cmd) {
      cmd_aggregate(metric_files, aggregate_out);
      return 0;
    }
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 2;
  }
  return 0;
}

}  // namespace cct::harness
