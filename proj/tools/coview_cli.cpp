// coview command-line front end. Talks to the library only through coview.h.
//
//   coview gen   --out D --seed N [--config C]
//   coview train --stage fcn|joint --data D --out DIR --seed N [--init CK] ...
//   coview eval  --data D --report R.json [--ckpt CK | --method copy-first] ...
//   coview plot  --report R.json [--report ...] --out DIR
//
// Exit codes: 0 success, 2 configuration error, 3 data-integrity error,
// 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coview/coview.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitData = 3;

// Carries an exit code up to main.
struct Exit {
  int code;
  std::string message;
};

int exit_code(coview_status s) {
  switch (s) {
    case COVIEW_OK: return kExitOk;
    case COVIEW_E_PARAMETER:
    case COVIEW_E_CONFIG:
    case COVIEW_E_LOOKUP:
    case COVIEW_E_GENERATION: return kExitConfig;
    case COVIEW_E_SHAPE:
    case COVIEW_E_INTEGRITY:
    case COVIEW_E_IO:
    case COVIEW_E_EMPTY_DATA: return kExitData;
    default: return kExitFailure;
  }
}

void check(coview_status s, const std::string& context) {
  if (s != COVIEW_OK)
    throw Exit{exit_code(s), context + ": " + coview_last_error() + " [" + coview_status_name(s) + "]"};
}

[[noreturn]] void config_error(const std::string& msg) { throw Exit{kExitConfig, msg}; }

// Takes ownership of a library string.
std::string take(char* s) {
  std::string out = s ? s : "";
  coview_string_free(s);
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) config_error("cannot read " + path.string());
  json j = json::parse(f, nullptr, false);
  if (j.is_discarded() || !j.is_object()) config_error(path.string() + " is not a JSON object");
  return j;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  if (!f) throw Exit{kExitData, "cannot write " + path.string()};
}

void require_path(const std::string& path, const char* what) {
  if (!fs::exists(path)) config_error(std::string(what) + " does not exist: " + path);
}

// Config file contents for `command`: either a plain section or the matching
// section of a previous run.json.
json config_section(const std::string& file, const std::string& command, const char* section) {
  if (file.empty()) return json::object();
  require_path(file, "config file");
  json j = read_json(file);
  if (!j.contains("command")) return j;
  if (j.at("command") != command)
    config_error(file + " records a '" + j.at("command").get<std::string>() + "' run, not '" +
                 command + "'");
  return j.value(section, json::object());
}

json resolve(const char* kind, const json& j) {
  char* out = nullptr;
  check(coview_resolve_config(kind, j.dump().c_str(), &out), std::string(kind) + " config");
  return json::parse(take(out));
}

// A checkpoint argument may name the file or a training output directory.
std::string checkpoint_file(const std::string& arg) {
  fs::path p = arg;
  if (fs::is_directory(p)) p /= "model.cvck";
  require_path(p.string(), "checkpoint");
  return p.string();
}

// ------------------------------------------------------------------ gen

struct GenArgs {
  std::string config, out;
  std::optional<uint64_t> seed;
};

int run_gen(const GenArgs& a) {
  if (!a.seed) config_error("gen needs --seed");
  json cfg = config_section(a.config, "gen", "dataset");
  cfg["seed"] = *a.seed;
  cfg = resolve("dataset", cfg);
  char* manifest = nullptr;
  check(coview_generate(cfg.dump().c_str(), *a.seed, a.out.c_str(), &manifest), "gen");
  const json m = json::parse(take(manifest));
  write_json(fs::path(a.out) / "run.json",
             {{"command", "gen"}, {"seed", *a.seed}, {"out", a.out}, {"dataset", cfg}});
  std::cout << "wrote " << m.at("scenes").size() << " scenes to " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string stage, problem = "third-third", data, out, preset = "desk", config, model_config,
                     init, init_weights, reweight;
  std::optional<uint64_t> seed;
  std::optional<int> epochs, frozen_epochs, max_pairs, max_samples;
  bool epoch_checkpoints = true;
};

struct TrainContext {
  fs::path out;
  json run;
  json records = json::array();
  bool epoch_checkpoints = true;
};

int save_epoch(const char* record, coview_model* model, TrainContext& ctx) {
  const json r = json::parse(record);
  ctx.records.push_back(r);
  write_json(ctx.out / "train_log.json", {{"run", ctx.run}, {"epochs", ctx.records}});
  if (ctx.epoch_checkpoints) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.cvck", ctx.records.size());
    const json meta{{"stage", ctx.run["train"]["stage"]}, {"epoch", ctx.records.size()},
                    {"phase", r.at("phase")}};
    if (coview_model_save(model, (ctx.out / name).string().c_str(), meta.dump().c_str()) != COVIEW_OK) {
      std::cerr << "checkpoint failed: " << coview_last_error() << '\n';
      return 1;
    }
  }
  std::printf("epoch %3zu %-6s loss %.5f seg %.5f match %.5f samples %d %.1fs\n",
              ctx.records.size(), r.at("phase").get<std::string>().c_str(),
              r.at("loss").get<double>(), r.at("seg_loss").get<double>(),
              r.at("siam_loss").get<double>(), r.at("samples").get<int>(),
              r.at("seconds").get<double>());
  std::fflush(stdout);
  return 0;
}

// Exceptions must not cross the C boundary.
int on_epoch(const char* record, coview_model* model, void* user) {
  try {
    return save_epoch(record, model, *static_cast<TrainContext*>(user));
  } catch (const Exit& x) {
    std::cerr << "error: " << x.message << '\n';
  } catch (const std::exception& x) {
    std::cerr << "error: " << x.what() << '\n';
  }
  return 1;
}

int run_train(const TrainArgs& a) {
  if (!a.seed) config_error("train needs --seed");
  if (a.stage != "fcn" && a.stage != "joint") config_error("--stage must be fcn or joint");
  if (a.stage == "joint" && a.init.empty())
    config_error("the joint stage starts from a segmentation checkpoint: pass --init <stage-fcn checkpoint>");
  require_path(a.data, "dataset");
  if (!a.init_weights.empty()) require_path(a.init_weights, "initial weights");
  const std::string init = a.init.empty() ? "" : checkpoint_file(a.init);

  // Training hyper-parameters: preset, then config file, then flags.
  char* preset = nullptr;
  check(coview_train_preset(a.preset.c_str(), a.stage.c_str(), &preset), "preset");
  json train = json::parse(take(preset));
  train.update(config_section(a.config, "train", "train"));
  train["stage"] = a.stage;
  train["problem"] = a.problem;
  train["seed"] = *a.seed;
  if (a.epochs) train[a.stage == "fcn" ? "fcn_epochs" : "joint_epochs"] = *a.epochs;
  if (a.frozen_epochs) train["frozen_epochs"] = *a.frozen_epochs;
  if (a.max_pairs) train["max_pairs_per_epoch"] = *a.max_pairs;
  if (a.max_samples) train["max_samples_per_epoch"] = *a.max_samples;
  train = resolve("train", train);

  // Model: the stage-(a) network for joint training gains a matching branch.
  json model = json::object();
  if (!init.empty()) {
    char* meta = nullptr;
    check(coview_checkpoint_meta(init.c_str(), &meta), "reading " + init);
    model = json::parse(take(meta)).at("model");
  } else if (!a.config.empty()) {
    model = config_section(a.config, "train", "model");
  }
  if (!a.model_config.empty()) {
    require_path(a.model_config, "model config");
    model.update(read_json(a.model_config));
  }
  if (a.stage == "joint") {
    model["with_match"] = true;
    model["match"]["problem"] = a.problem;
    if (!a.reweight.empty()) model["match"]["reweight"] = a.reweight;
  }
  model = resolve("model", model);

  coview_dataset* data = nullptr;
  check(coview_dataset_open(a.data.c_str(), &data), "loading " + a.data);
  std::unique_ptr<coview_dataset, void (*)(coview_dataset*)> data_guard(data, coview_dataset_free);
  coview_model* m = nullptr;
  check(coview_model_create(model.dump().c_str(), *a.seed, &m), "model");
  std::unique_ptr<coview_model, void (*)(coview_model*)> model_guard(m, coview_model_free);
  if (!init.empty()) check(coview_model_init_weights(m, init.c_str()), "initialising from " + init);
  if (!a.init_weights.empty())
    check(coview_model_init_weights(m, a.init_weights.c_str()), "loading " + a.init_weights);

  TrainContext ctx;
  ctx.out = a.out;
  ctx.epoch_checkpoints = a.epoch_checkpoints;
  ctx.run = {{"command", "train"}, {"seed", *a.seed},       {"data", a.data},
             {"out", a.out},       {"preset", a.preset},    {"init", init},
             {"init_weights", a.init_weights},              {"train", train},
             {"model", model}};
  fs::create_directories(ctx.out);
  write_json(ctx.out / "run.json", ctx.run);

  char* history = nullptr;
  check(coview_train(m, data, train.dump().c_str(), on_epoch, &ctx, &history), "train");
  const json h = json::parse(take(history));
  const json meta{{"stage", a.stage}, {"epoch", h.at("epochs").size()}, {"seed", *a.seed}};
  check(coview_model_save(m, (ctx.out / "model.cvck").string().c_str(), meta.dump().c_str()),
        "saving model");
  write_json(ctx.out / "train_log.json",
             {{"run", ctx.run}, {"epochs", h.at("epochs")},
              {"fcn_checksum_start", h.at("fcn_checksum_start")}});
  std::cout << "wrote " << (ctx.out / "model.cvck").string() << '\n';
  return kExitOk;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, data, problem, report, method, aggregation, split, predictions, config;
  bool no_predictions = false, no_matching = false;
  std::optional<int> threads;
};

fs::path default_predictions(const fs::path& report) {
  return report.parent_path() / (report.stem().string() + "_masks");
}

int run_eval(const EvalArgs& a) {
  require_path(a.data, "dataset");
  json cfg = config_section(a.config, "eval", "eval");
  if (!a.problem.empty()) cfg["problem"] = a.problem;
  if (!a.method.empty()) cfg["method"] = a.method;
  if (!a.aggregation.empty()) cfg["aggregation"] = a.aggregation;
  if (!a.split.empty()) cfg["split"] = a.split;
  if (a.no_matching) cfg["matching"] = false;
  if (a.threads) cfg["threads"] = *a.threads;
  cfg = resolve("eval", cfg);
  const bool copy_first = cfg.at("method") == "copy-first";
  if (!copy_first && a.ckpt.empty()) config_error("eval with the model method needs --ckpt");
  const std::string ckpt = copy_first || a.ckpt.empty() ? "" : checkpoint_file(a.ckpt);

  coview_dataset* data = nullptr;
  check(coview_dataset_open(a.data.c_str(), &data), "loading " + a.data);
  std::unique_ptr<coview_dataset, void (*)(coview_dataset*)> data_guard(data, coview_dataset_free);
  coview_model* m = nullptr;
  if (!ckpt.empty()) check(coview_model_load(ckpt.c_str(), &m), "loading " + ckpt);
  std::unique_ptr<coview_model, void (*)(coview_model*)> model_guard(m, coview_model_free);

  const fs::path report_path = a.report;
  std::string predictions;
  if (!a.no_predictions)
    predictions = a.predictions.empty() ? default_predictions(report_path).string() : a.predictions;
  char* text = nullptr;
  check(coview_evaluate(data, m, cfg.dump().c_str(), predictions.empty() ? nullptr : predictions.c_str(),
                        &text),
        "eval");
  json report = json::parse(take(text));
  report["model"] = ckpt;
  write_json(report_path, report);
  write_json(report_path.parent_path() / (report_path.stem().string() + ".run.json"),
             {{"command", "eval"}, {"data", a.data}, {"ckpt", ckpt}, {"report", a.report},
              {"predictions", predictions}, {"eval", cfg}});

  std::printf("mean IoU %.4f over %zu sequences\n", report.at("mean_iou").get<double>(),
              report.at("sequences").size());
  if (report.value("has_matching", false))
    std::printf("mAP %.4f (%d queries)  ACC %.4f (%d queries, %d excluded)\n",
                report.at("map").get<double>(), report.at("map_queries").get<int>(),
                report.at("acc").get<double>(), report.at("acc_queries").get<int>(),
                report.at("acc_excluded").get<int>());
  return kExitOk;
}

// ----------------------------------------------------------------- plot

struct PlotArgs {
  std::vector<std::string> reports;
  std::string out, data, predictions;
  bool no_overlays = false;
};

int run_plot(const PlotArgs& a) {
  for (const auto& r : a.reports) require_path(r, "report");
  std::string data = a.data, predictions = a.predictions;
  if (!a.no_overlays) {
    const json first = read_json(a.reports.front());
    if (data.empty()) data = first.value("dataset", "");
    if (predictions.empty()) predictions = default_predictions(a.reports.front()).string();
    if (!fs::is_directory(data) || !fs::is_directory(predictions)) {
      std::cerr << "no overlays: dataset or predictions directory not found\n";
      data.clear();
      predictions.clear();
    }
  } else {
    data.clear();
    predictions.clear();
  }
  std::vector<const char*> paths;
  for (const auto& r : a.reports) paths.push_back(r.c_str());
  int overlays = 0;
  check(coview_plot(paths.data(), paths.size(), a.out.c_str(), data.empty() ? nullptr : data.c_str(),
                    predictions.empty() ? nullptr : predictions.c_str(), &overlays),
        "plot");
  write_json(fs::path(a.out) / "run.json", {{"command", "plot"}, {"reports", a.reports},
                                           {"data", data}, {"predictions", predictions}});
  std::cout << "wrote figures to " << a.out << " (" << overlays << " overlays)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coview: joint person segmentation and cross-view identification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", coview_version());

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic multi-view dataset");
  g->add_option("--config", gen.config, "dataset configuration JSON (or a previous run.json)");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--seed", gen.seed, "dataset seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train the segmentation network or the joint model");
  t->add_option("--stage", tr.stage, "fcn or joint")->required();
  t->add_option("--problem", tr.problem, "third-third or third-first");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--seed", tr.seed, "initialisation and shuffling seed");
  t->add_option("--preset", tr.preset, "desk or paper hyper-parameters");
  t->add_option("--config", tr.config, "training configuration JSON (or a previous run.json)");
  t->add_option("--model-config", tr.model_config, "model configuration JSON");
  t->add_option("--init", tr.init, "segmentation checkpoint to start the joint stage from");
  t->add_option("--init-weights", tr.init_weights,
                "checkpoint whose segmentation weights initialise the network");
  t->add_option("--reweight", tr.reweight, "none, soft-attention or bounding-box");
  t->add_option("--epochs", tr.epochs, "epochs of the stage (joint: after the frozen phase)");
  t->add_option("--frozen-epochs", tr.frozen_epochs, "joint stage: epochs with the FCN frozen");
  t->add_option("--max-pairs", tr.max_pairs, "joint stage: pairs per epoch (0 = all)");
  t->add_option("--max-samples", tr.max_samples, "samples per epoch (0 = all)");
  t->add_flag("!--no-epoch-checkpoints", tr.epoch_checkpoints, "only write the final checkpoint");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "propagate masks, match people and score a split");
  e->add_option("--ckpt", ev.ckpt, "checkpoint file or training directory");
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--problem", ev.problem, "third-third or third-first");
  e->add_option("--report", ev.report, "report JSON path")->required();
  e->add_option("--method", ev.method, "model or copy-first");
  e->add_option("--aggregation", ev.aggregation, "mean or per-frame-min");
  e->add_option("--split", ev.split, "test, train or all");
  e->add_option("--predictions", ev.predictions, "directory for predicted masks");
  e->add_flag("--no-predictions", ev.no_predictions, "do not write predicted masks");
  e->add_flag("--no-matching", ev.no_matching, "segmentation metrics only");
  e->add_option("--threads", ev.threads, "worker threads");
  e->add_option("--config", ev.config, "evaluation configuration JSON (or a previous run file)");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "draw IoU/PR figures and mask overlays");
  p->add_option("--report", pl.reports, "report JSON (repeatable)")->required();
  p->add_option("--out", pl.out, "output directory")->required();
  p->add_option("--data", pl.data, "dataset directory for overlays (default: from the report)");
  p->add_option("--predictions", pl.predictions, "predicted masks (default: next to the report)");
  p->add_flag("--no-overlays", pl.no_overlays, "figures only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << coview_version() << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*p) return run_plot(pl);
  } catch (const Exit& x) {
    std::cerr << "error: " << x.message << '\n';
    return x.code;
  } catch (const std::exception& x) {
    std::cerr << "error: " << x.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
