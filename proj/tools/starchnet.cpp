// Command-line front end: split, train, eval, predict, report, gradcheck.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error. Every invocation
// ends with one key=value summary line on stderr.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "starchnet/checkpoint.hpp"
#include "starchnet/dataset.hpp"
#include "starchnet/error.hpp"
#include "starchnet/gradcheck.hpp"
#include "starchnet/metrics.hpp"
#include "starchnet/model.hpp"
#include "starchnet/train.hpp"

namespace fs = std::filesystem;
using namespace starchnet;

namespace {

class Summary {
 public:
  explicit Summary(std::string command) { add("command", std::move(command)); }
  void add(const std::string& key, const std::string& value) {
    for (auto& [k, v] : fields_) {
      if (k == key) {
        v = value;
        return;
      }
    }
    fields_.emplace_back(key, value);
  }
  void add(const std::string& key, double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    add(key, std::string(buf));
  }
  void add(const std::string& key, std::size_t value) { add(key, std::to_string(value)); }
  void emit() const {
    std::string line;
    for (const auto& [k, v] : fields_) {
      if (!line.empty()) line += ' ';
      line += k + "=" + v;
    }
    std::cerr << line << '\n';
  }

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

SplitRatios parse_ratios(const std::string& text) {
  std::vector<double> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ArgumentError("--ratios entry '" + item + "' is not a number");
    }
  }
  if (parts.size() != 3) throw ArgumentError("--ratios needs three comma-separated values (train,test,val)");
  SplitRatios r{parts[0], parts[1], parts[2]};
  r.validate();
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> checkpoint_class_names(const Checkpoint& ck, std::size_t num_classes) {
  if (ck.metadata.contains("class_names")) return ck.metadata.at("class_names").get<std::vector<std::string>>();
  std::vector<std::string> names;
  for (std::size_t k = 0; k < num_classes; ++k) names.push_back(std::to_string(k));
  return names;
}

// --- split -----------------------------------------------------------------

struct SplitArgs {
  std::string data_dir;
  std::string ratios = "0.5,0.2,0.3";
  std::uint64_t seed = 0;
  std::string out = "manifest.json";
};

int run_split(const SplitArgs& a, Summary& summary) {
  const SplitRatios ratios = parse_ratios(a.ratios);
  ScanResult scan = scan_dataset(a.data_dir);
  for (const auto& w : scan.warnings) std::cerr << "warning: " << w << '\n';
  DatasetManifest manifest = stratified_split(scan.manifest, ratios, a.seed);
  save_manifest(manifest, a.out);

  const auto counts = manifest.split_counts();
  std::printf("%-20s %6s %6s %6s %6s\n", "class", "train", "test", "val", "total");
  std::array<std::size_t, 3> totals{};
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto& row = counts[c];
    std::printf("%-20s %6zu %6zu %6zu %6zu\n", manifest.class_names[c].c_str(), row[0], row[1], row[2],
                row[0] + row[1] + row[2]);
    for (std::size_t s = 0; s < 3; ++s) totals[s] += row[s];
  }
  std::printf("%-20s %6zu %6zu %6zu %6zu\n", "total", totals[0], totals[1], totals[2],
              totals[0] + totals[1] + totals[2]);

  summary.add("records", manifest.records.size());
  summary.add("classes", manifest.class_names.size());
  summary.add("train", totals[0]);
  summary.add("test", totals[1]);
  summary.add("val", totals[2]);
  summary.add("skipped", scan.warnings.size());
  summary.add("seed", std::to_string(a.seed));
  return 0;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string data_dir;
  std::string config;
  std::string init_checkpoint;
  std::string init_policy = "backbone-only";
  bool freeze_backbone = false;
  std::string out_dir = ".";
  std::string backbone = "resnet18";
  std::optional<std::uint64_t> seed;
  std::size_t workers = 1;
  std::size_t image_size = 224;
};

int run_train(const TrainArgs& a, Summary& summary) {
  TrainConfig config = a.config.empty() ? TrainConfig{} : load_train_config(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.freeze_backbone) config.freeze_backbone = true;
  config.validate();
  const LoadPolicy policy = parse_load_policy(a.init_policy);

  DatasetManifest manifest = load_manifest(a.manifest);
  ModelSpec spec;
  spec.num_classes = manifest.class_names.size();
  spec.backbone = BackboneSpec::named(a.backbone);
  spec.input_size = a.image_size;
  spec.validate();

  Rng init_rng(derive_seed(config.seed, "init"));
  Model model = build_resnet18(spec, init_rng);
  model.dropout_rng() = Rng(derive_seed(config.seed, "dropout"));
  if (!a.init_checkpoint.empty()) {
    const LoadReport report = load_backbone(model, load_checkpoint(a.init_checkpoint), policy);
    summary.add("init_loaded", report.loaded.size());
  }

  BatchOptions train_opts;
  train_opts.batch_size = config.batch_size;
  train_opts.shuffle = true;
  train_opts.augment = true;
  train_opts.seed = config.seed;
  train_opts.image_size = a.image_size;
  train_opts.workers = a.workers;
  BatchOptions val_opts = train_opts;
  val_opts.shuffle = false;
  val_opts.augment = false;
  ManifestBatches train_batches(manifest, a.data_dir, Split::Train, train_opts);
  ManifestBatches val_batches(manifest, a.data_dir, Split::Val, val_opts);

  fs::create_directories(a.out_dir);
  TrainOptions options;
  options.checkpoint_path = fs::path(a.out_dir) / "best.ckpt";
  options.metadata = {{"class_names", manifest.class_names}, {"seed", config.seed}};
  options.on_epoch = [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %zu train_loss=%.6f train_acc=%.4f val_loss=%.6f val_acc=%.4f\n", e.epoch,
                 e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
  };
  TrainResult result = train(model, train_batches, val_batches, config, options);
  write_text(fs::path(a.out_dir) / "history.csv", history_csv(result.history));

  const double best_loss = result.history.epochs.at(result.history.best_epoch - 1).val_loss;
  std::printf("best_epoch %zu val_loss %.6f\n", result.history.best_epoch, best_loss);
  summary.add("epochs", result.history.epochs.size());
  summary.add("best_epoch", result.history.best_epoch);
  summary.add("best_val_loss", best_loss);
  summary.add("early_stopped", std::string(result.history.early_stopped ? "true" : "false"));
  summary.add("seed", std::to_string(config.seed));
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string data_dir;
  std::string split = "val";
  std::string format = "text";
  std::string out;
  std::size_t workers = 1;
};

std::string render_eval(const ConfusionMatrix& cm, const ClassReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json: {
      nlohmann::json j = report_to_json(report);
      j["confusion"] = {{"class_names", cm.class_names}, {"counts", cm.counts}};
      return j.dump(2) + "\n";
    }
    case ReportFormat::Csv:
      return confusion_to_csv(cm) + "\n" + render_report(report, format);
    case ReportFormat::Text:
      return "confusion matrix (rows actual, columns predicted)\n" + confusion_to_csv(cm) + "\n" +
             render_report(report, format);
  }
  return {};
}

int run_eval(const EvalArgs& a, Summary& summary) {
  const ReportFormat format = parse_report_format(a.format);
  const Split split = parse_split(a.split);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  Model model = model_from_checkpoint(ck);
  DatasetManifest manifest = load_manifest(a.manifest);
  const auto names = checkpoint_class_names(ck, model.spec().num_classes);
  if (names.size() != model.spec().num_classes) {
    throw LoadError("checkpoint lists " + std::to_string(names.size()) + " class names for " +
                    std::to_string(model.spec().num_classes) + " outputs");
  }

  BatchOptions opts;
  opts.image_size = model.spec().input_size;
  opts.workers = a.workers;
  ManifestBatches batches(manifest, a.data_dir, split, opts);
  const EvalResult result = evaluate(model, batches);
  const ConfusionMatrix cm = confusion_matrix(result.actual, result.predicted, names.size(), names);
  const ClassReport report = make_report(cm);
  const std::string text = render_eval(cm, report, format);
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  summary.add("split", a.split);
  summary.add("samples", result.actual.size());
  summary.add("loss", result.mean_loss);
  summary.add("accuracy", report.accuracy);
  summary.add("weighted_precision", report.weighted.precision);
  summary.add("weighted_recall", report.weighted.recall);
  summary.add("weighted_f1", report.weighted.f1);
  return 0;
}

// --- predict ---------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::size_t top = 1;
};

int run_predict(const PredictArgs& a, Summary& summary) {
  if (a.top == 0) throw ArgumentError("--top must be at least 1");
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  Model model = model_from_checkpoint(ck);
  const auto names = checkpoint_class_names(ck, model.spec().num_classes);
  const Tensor input = preprocess(decode_image(a.image), model.spec().input_size, nullptr);
  const Shape batch_shape{1, 3, model.spec().input_size, model.spec().input_size};
  Tensor logp;
  {
    NoGradGuard no_grad;
    logp = model.forward(input.reshaped(batch_shape), Mode::Eval);
  }
  std::vector<double> probs(logp.numel());
  for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(logp.at(k));
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return probs[x] > probs[y]; });
  const std::size_t k = std::min(a.top, order.size());
  for (std::size_t i = 0; i < k; ++i) {
    std::printf("%s %.6f\n", names.at(order[i]).c_str(), probs[order[i]]);
  }
  summary.add("top_class", names.at(order[0]));
  summary.add("top_probability", probs[order[0]]);
  summary.add("prob_sum", std::accumulate(probs.begin(), probs.end(), 0.0));
  return 0;
}

// --- report ----------------------------------------------------------------

struct ReportArgs {
  std::string confusion;
  std::string format = "text";
};

int run_report(const ReportArgs& a, Summary& summary) {
  const ReportFormat format = parse_report_format(a.format);
  const ConfusionMatrix cm = confusion_from_csv(read_text(a.confusion));
  const ClassReport report = make_report(cm);
  std::cout << render_report(report, format);
  summary.add("classes", cm.size());
  summary.add("samples", static_cast<std::size_t>(cm.total()));
  summary.add("accuracy", report.accuracy);
  return 0;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::size_t cases = 20;
  std::string mutate;
};

int run_gradcheck(const GradcheckArgs& a, Summary& summary) {
  constexpr double kThreshold = 1e-4;
  if (!a.mutate.empty()) {
    const auto& ops = gradcheck_ops();
    if (std::find(ops.begin(), ops.end(), a.mutate) == ops.end()) {
      throw ArgumentError("--mutate: unknown op '" + a.mutate + "'");
    }
  }
  const auto checks = run_gradcheck_suite(a.seed, a.cases, a.mutate);
  std::vector<std::string> failed;
  double worst = 0.0;
  for (const auto& c : checks) {
    const bool ok = c.max_rel_error < kThreshold;
    std::printf("%-16s cases=%zu max_rel_error=%.3e %s\n", c.op.c_str(), c.cases, c.max_rel_error,
                ok ? "ok" : "FAIL");
    if (!ok) failed.push_back(c.op);
    worst = std::max(worst, c.max_rel_error);
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", worst);
  summary.add("ops", checks.size());
  summary.add("max_rel_error", std::string(buf));
  summary.add("seed", std::to_string(a.seed));
  if (!failed.empty()) {
    std::string list;
    for (const auto& f : failed) list += (list.empty() ? "" : ",") + f;
    std::cerr << "gradient check failed for: " << list << '\n';
    summary.add("failed", list);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"starch granule image classifier toolkit"};
  app.require_subcommand(1);

  SplitArgs split_args;
  auto* split = app.add_subcommand("split", "scan root/<class>/<image> and write a stratified manifest");
  split->add_option("--data-dir", split_args.data_dir, "dataset root")->required();
  split->add_option("--ratios", split_args.ratios, "train,test,val fractions");
  split->add_option("--seed", split_args.seed, "run seed");
  split->add_option("--out", split_args.out, "manifest path");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train on the manifest's train split");
  train_cmd->add_option("--manifest", train_args.manifest)->required();
  train_cmd->add_option("--data-dir", train_args.data_dir)->required();
  train_cmd->add_option("--config", train_args.config, "JSON with TrainConfig keys");
  train_cmd->add_option("--init-checkpoint", train_args.init_checkpoint);
  train_cmd->add_option("--init-policy", train_args.init_policy, "backbone-only|full|strict");
  train_cmd->add_flag("--freeze-backbone", train_args.freeze_backbone);
  train_cmd->add_option("--out-dir", train_args.out_dir);
  train_cmd->add_option("--backbone", train_args.backbone, "resnet18|resnet18-lite");
  train_cmd->add_option("--seed", train_args.seed, "overrides the config seed");
  train_cmd->add_option("--workers", train_args.workers, "decode threads");
  train_cmd->add_option("--image-size", train_args.image_size, "input side length");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "confusion matrix and report for one split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--manifest", eval_args.manifest)->required();
  eval_cmd->add_option("--data-dir", eval_args.data_dir)->required();
  eval_cmd->add_option("--split", eval_args.split, "val|test|train");
  eval_cmd->add_option("--format", eval_args.format, "text|csv|json");
  eval_cmd->add_option("--out", eval_args.out, "write here instead of stdout");
  eval_cmd->add_option("--workers", eval_args.workers, "decode threads");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "top-K classes for one image");
  predict->add_option("--checkpoint", predict_args.checkpoint)->required();
  predict->add_option("--image", predict_args.image)->required();
  predict->add_option("--top", predict_args.top);

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "per-class report from a confusion-matrix CSV");
  report->add_option("--confusion", report_args.confusion)->required();
  report->add_option("--format", report_args.format, "text|csv|json");

  GradcheckArgs grad_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  gradcheck->add_option("--seed", grad_args.seed);
  gradcheck->add_option("--shapes", grad_args.cases, "random shapes per op");
  gradcheck->add_option("--mutate", grad_args.mutate, "corrupt this op's backward (self-test)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    Summary s(app.get_subcommands().empty() ? "none" : app.get_subcommands().front()->get_name());
    s.add("status", std::string("usage_error"));
    s.add("exit", std::string("1"));
    s.emit();
    return 1;
  }

  CLI::App* cmd = app.get_subcommands().front();
  Summary summary(cmd->get_name());
  summary.add("status", std::string("ok"));
  int code = 0;
  try {
    if (cmd == split) code = run_split(split_args, summary);
    if (cmd == train_cmd) code = run_train(train_args, summary);
    if (cmd == eval_cmd) code = run_eval(eval_args, summary);
    if (cmd == predict) code = run_predict(predict_args, summary);
    if (cmd == report) code = run_report(report_args, summary);
    if (cmd == gradcheck) code = run_gradcheck(grad_args, summary);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = 2;
  }
  if (code != 0) summary.add("status", std::string(code == 1 ? "usage_error" : "error"));
  summary.add("exit", std::to_string(code));
  summary.emit();
  return code;
}
