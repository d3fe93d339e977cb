#pragma once

// Application layer behind the `easynlp` command: flag parsing, the app
// registry and the train / evaluate / predict pipelines.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "easynlp/data.hpp"

namespace easynlp {

enum class RunMode { train, evaluate, predict };

struct CliConfig {
  RunMode mode = RunMode::train;
  std::optional<std::string> worker_gpu;  // accepted for compatibility, unused
  std::vector<std::string> tables;
  std::string input_schema;
  std::string first_sequence;
  std::string second_sequence;
  std::string label_name;
  std::vector<std::string> label_enumerate_values;
  std::string checkpoint_dir;
  std::size_t epoch_num = 1;
  std::size_t sequence_length = 128;
  double learning_rate = 3e-5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;
  std::string app_name;
  std::string outputs;  // predict: output TSV path
  std::map<std::string, std::string> user_defined_parameters;
  std::vector<std::string> warnings;
};

/// argv without the program name, `--key=value` style. Unknown flags,
/// malformed values and flags missing for the mode raise UsageError naming
/// the flag.
CliConfig parse_cli(const std::vector<std::string>& args);
CliConfig parse_cli(int argc, const char* const* argv);

/// "a=1 b=2" -> {a: 1, b: 2}
std::map<std::string, std::string> parse_user_parameters(const std::string& text);

enum class AppKind { classify, language_model, prompt, contrastive_prompt, distill };

struct AppInfo {
  std::string name;
  AppKind kind;
  bool labeled;  // needs label_name / label_enumerate_values
  std::string description;
};

const std::vector<AppInfo>& app_registry();
const AppInfo& find_app(const std::string& name);  // UsageError if unknown

struct EpochRecord {
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
};

struct TrainReport {
  std::string app_name;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based
  double best_dev_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint;
  std::size_t train_examples = 0;
  std::size_t dev_examples = 0;

  /// eval_report.json content; wall time is left out so reruns match.
  nlohmann::json to_json() const;
};

struct EvalReport {
  std::string app_name;
  std::string metric;  // "accuracy" or "masked_token_accuracy"
  double accuracy = 0.0;
  std::optional<double> macro_f1;  // labeled apps only
  std::size_t examples = 0;

  nlohmann::json to_json() const;
};

/// Trains, keeps the epoch with the best dev accuracy (earliest on ties) and
/// writes the checkpoint directory in one rename. Progress goes to `log`.
TrainReport run_train(const CliConfig& cfg, std::ostream& log);

/// Scores tables[0] with the checkpoint and writes eval_results.json next
/// to it.
EvalReport run_evaluate(const CliConfig& cfg, std::ostream& log);

/// Input columns, the predicted label and one probability column per class
/// (6 decimals). Returns the output path.
std::filesystem::path run_predict(const CliConfig& cfg, std::ostream& log);

/// Input schema extended by `prediction:str:1` and `prob_<label>:float:1`.
DatasetSchema predict_output_schema(const DatasetSchema& input, const std::vector<std::string>& labels);

/// Full command: parse, dispatch, report. Returns the process exit code
/// (0 ok, 2 usage, 3 data, 4 model/format, 1 anything else).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace easynlp
