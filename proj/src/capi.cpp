#include "coview/coview.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "coview/dataset.hpp"
#include "coview/model.hpp"
#include "coview/pipeline.hpp"
#include "coview/plot.hpp"
#include "coview/trainer.hpp"

using nlohmann::json;
using namespace coview;

struct coview_dataset {
  Dataset data;
};

struct coview_model {
  explicit coview_model(JointModel m) : model(std::move(m)) {}
  JointModel model;
};

namespace {

thread_local std::string g_last_error;

struct Aborted {};

coview_status status_of(ErrorKind k) {
  switch (k) {
    case ErrorKind::Parameter: return COVIEW_E_PARAMETER;
    case ErrorKind::Shape: return COVIEW_E_SHAPE;
    case ErrorKind::Config: return COVIEW_E_CONFIG;
    case ErrorKind::Integrity: return COVIEW_E_INTEGRITY;
    case ErrorKind::Io: return COVIEW_E_IO;
    case ErrorKind::Lookup: return COVIEW_E_LOOKUP;
    case ErrorKind::EmptyData: return COVIEW_E_EMPTY_DATA;
    case ErrorKind::Generation: return COVIEW_E_GENERATION;
  }
  return COVIEW_E_INTERNAL;
}

// Runs f, translating every exception into a status and a message.
template <typename F>
coview_status guarded(F&& f) {
  try {
    f();
    return COVIEW_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const Aborted&) {
    g_last_error = "stopped by the epoch callback";
    return COVIEW_E_ABORTED;
  } catch (const json::exception& e) {
    g_last_error = std::string("configuration: ") + e.what();
    return COVIEW_E_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return COVIEW_E_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return COVIEW_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return COVIEW_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return COVIEW_E_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void put(char** out, const json& j) {
  if (out) *out = dup(j.dump(2));
}

json parse(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text, nullptr, false);
  require(!j.is_discarded(), ErrorKind::Config, "malformed JSON");
  require(j.is_object(), ErrorKind::Config, "configuration must be a JSON object");
  return j;
}

void need(const void* p, const char* what) {
  require(p != nullptr, ErrorKind::Parameter, std::string(what) + " must not be NULL");
}

DatasetConfig dataset_config(const char* text) {
  DatasetConfig c = parse(text).get<DatasetConfig>();
  c.validate();
  return c;
}

ModelConfig model_config(const char* text) {
  ModelConfig c = parse(text).get<ModelConfig>();
  c.seg.validate();
  if (c.with_match) c.match.validate();
  return c;
}

TrainConfig train_config(const char* text) {
  const json j = parse(text);
  // Unspecified fields follow the desk preset of the requested stage.
  const Stage stage = stage_from_string(j.value("stage", "fcn"));
  json merged = TrainConfig::desk(stage);
  merged.update(j);
  TrainConfig c = merged.get<TrainConfig>();
  c.validate();
  return c;
}

EvalConfig eval_config(const char* text) { return parse(text).get<EvalConfig>(); }

json history_json(const TrainHistory& h) {
  return json{{"epochs", h.epochs}, {"fcn_checksum_start", h.fcn_checksum_start}};
}

}  // namespace

extern "C" {

const char* coview_version(void) { return "0.1.0"; }

const char* coview_status_name(coview_status s) {
  switch (s) {
    case COVIEW_OK: return "ok";
    case COVIEW_E_PARAMETER: return "parameter";
    case COVIEW_E_SHAPE: return "shape";
    case COVIEW_E_CONFIG: return "config";
    case COVIEW_E_INTEGRITY: return "integrity";
    case COVIEW_E_IO: return "io";
    case COVIEW_E_LOOKUP: return "lookup";
    case COVIEW_E_EMPTY_DATA: return "empty-data";
    case COVIEW_E_GENERATION: return "generation";
    case COVIEW_E_ABORTED: return "aborted";
    case COVIEW_E_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* coview_last_error(void) { return g_last_error.c_str(); }

void coview_string_free(char* s) { std::free(s); }

coview_status coview_resolve_config(const char* kind, const char* text, char** out) {
  return guarded([&] {
    need(kind, "kind");
    const std::string k = kind;
    if (k == "dataset") put(out, json(dataset_config(text)));
    else if (k == "model") put(out, json(model_config(text)));
    else if (k == "train") put(out, json(train_config(text)));
    else if (k == "eval") put(out, json(eval_config(text)));
    else fail(ErrorKind::Lookup, "unknown configuration kind '" + k + "'");
  });
}

coview_status coview_train_preset(const char* preset, const char* stage, char** out) {
  return guarded([&] {
    need(preset, "preset");
    need(stage, "stage");
    const Stage s = stage_from_string(stage);
    const std::string p = preset;
    if (p == "desk") put(out, json(TrainConfig::desk(s)));
    else if (p == "paper") put(out, json(TrainConfig::paper(s)));
    else fail(ErrorKind::Config, "unknown preset '" + p + "' (expected desk or paper)");
  });
}

coview_status coview_generate(const char* config, uint64_t seed, const char* out_dir,
                              char** manifest) {
  return guarded([&] {
    need(out_dir, "out_dir");
    DatasetConfig c = dataset_config(config);
    c.seed = seed;
    const auto specs = build_scene_specs(c);
    const auto m = export_dataset(specs, default_splits(c, specs.size()), out_dir, c.seed);
    put(manifest, m.to_json());
  });
}

coview_status coview_dataset_open(const char* dir, coview_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new coview_dataset{import_dataset(dir)};
  });
}

coview_status coview_dataset_manifest(const coview_dataset* data, char** out) {
  return guarded([&] {
    need(data, "data");
    put(out, data->data.manifest.to_json());
  });
}

void coview_dataset_free(coview_dataset* data) { delete data; }

coview_status coview_model_create(const char* config, uint64_t seed, coview_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = new coview_model(JointModel(model_config(config), seed));
  });
}

coview_status coview_model_load(const char* checkpoint, coview_model** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    *out = new coview_model(load_model(checkpoint));
  });
}

coview_status coview_model_init_weights(coview_model* model, const char* checkpoint) {
  return guarded([&] {
    need(model, "model");
    need(checkpoint, "checkpoint");
    load_params(read_checkpoint(checkpoint), model->model.fcn_params(), false);
  });
}

coview_status coview_model_save(coview_model* model, const char* path, const char* meta) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    save_checkpoint(path, model->model, parse(meta));
  });
}

coview_status coview_model_config(const coview_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    put(out, json(model->model.config()));
  });
}

coview_status coview_model_checksum(coview_model* model, uint64_t* fcn, uint64_t* all) {
  return guarded([&] {
    need(model, "model");
    if (fcn) *fcn = nn::checksum(model->model.fcn_params());
    if (all) *all = nn::checksum(model->model.all_params());
  });
}

void coview_model_free(coview_model* model) { delete model; }

coview_status coview_checkpoint_meta(const char* checkpoint, char** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    put(out, read_checkpoint(checkpoint).meta);
  });
}

coview_status coview_train(coview_model* model, const coview_dataset* data, const char* config,
                           coview_epoch_fn on_epoch, void* user, char** history) {
  return guarded([&] {
    need(model, "model");
    need(data, "data");
    const TrainConfig cfg = train_config(config);
    EpochCallback cb;
    if (on_epoch) {
      cb = [&](const EpochRecord& r, JointModel&) {
        const std::string text = json(r).dump();
        if (on_epoch(text.c_str(), model, user) != 0) throw Aborted{};
      };
    }
    TrainHistory h;
    if (cfg.stage == Stage::Fcn) {
      h = train_fcn_stage(model->model, data->data, cfg, cb);
    } else {
      const auto pairs = sample_pairs(data->data, cfg.problem, cfg.neg_ratio, cfg.seed);
      h = train_joint_stage(model->model, data->data, pairs, cfg, cb);
    }
    put(history, history_json(h));
  });
}

coview_status coview_evaluate(const coview_dataset* data, const coview_model* model,
                              const char* config, const char* predictions_dir, char** report) {
  return guarded([&] {
    need(data, "data");
    const EvalConfig cfg = eval_config(config);
    EvalOutputs out = evaluate(data->data, model ? &model->model : nullptr, cfg);
    out.report.dataset = data->data.root.string();
    if (predictions_dir) write_predictions(predictions_dir, out);
    put(report, out.report.to_json());
  });
}

coview_status coview_plot(const char* const* reports, size_t num_reports, const char* out_dir,
                          const char* dataset_dir, const char* predictions_dir,
                          int* overlays_written) {
  return guarded([&] {
    need(out_dir, "out_dir");
    require(num_reports > 0 && reports, ErrorKind::EmptyData, "no reports to plot");
    std::vector<EvalReport> loaded;
    for (size_t i = 0; i < num_reports; ++i) {
      need(reports[i], "report path");
      loaded.push_back(load_report(reports[i]));
    }
    write_report_plots(loaded, out_dir);
    int n = 0;
    if (dataset_dir && predictions_dir) {
      const Dataset data = import_dataset(dataset_dir);
      n = write_overlays(data, loaded[0], predictions_dir, std::filesystem::path(out_dir) / "overlays");
    }
    if (overlays_written) *overlays_written = n;
  });
}

}  // extern "C"
