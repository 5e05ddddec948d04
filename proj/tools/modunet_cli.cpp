// modunet: train, predict, evaluate, baselines and experiments over raw volumes.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "modunet/csv.hpp"
#include "modunet/metrics.hpp"
#include "modunet/serialize.hpp"
#include "modunet/synthetic.hpp"
#include "modunet/tiling.hpp"
#include "modunet/training.hpp"
#include "modunet/volume.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace modunet;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv) : start_(std::chrono::steady_clock::now()) {
    doc_["command"] = std::move(command);
    doc_["argv"] = std::vector<std::string>(argv, argv + argc);
    doc_["version"] = kVersion;
    doc_["started"] = utc_now();
    doc_["config"] = json::object();
    doc_["inputs"] = json::object();
  }
  void config(const std::string& key, json value) { doc_["config"][key] = std::move(value); }
  void seed(std::uint64_t s) { doc_["seed"] = s; }
  void input(const fs::path& p) { doc_["inputs"][p.string()] = "fnv1a64:" + hex64(fnv1a64_file(p)); }
  void output(const std::string& key, json value) { doc_["outputs"][key] = std::move(value); }
  void write(const fs::path& path) {
    doc_["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(path);
    out << doc_.dump(2) << "\n";
    if (!out) throw DataError("cannot write manifest " + path.string());
  }

 private:
  json doc_;
  std::chrono::steady_clock::time_point start_;
};

json keyvalue_json(const KeyValueDoc& doc) {
  json j = json::object();
  for (const auto& [k, v] : doc.entries()) j[k] = v;
  return j;
}

fs::path manifest_path(const fs::path& primary) { return fs::path(primary.string() + ".manifest.json"); }

std::vector<std::string> class_names(std::size_t classes) {
  if (classes == 3) return {"matrix", "fiber", "porosity"};
  std::vector<std::string> n;
  for (std::size_t c = 0; c < classes; ++c) n.push_back("class" + std::to_string(c));
  return n;
}

KeyValueDoc read_keyvalue_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return KeyValueDoc::parse(ss.str());
}

void reject_unknown_keys(const KeyValueDoc& doc, const fs::path& path) {
  static const std::set<std::string> known = {
      "variant", "u_depth", "f0", "num_classes", "dropout_rate", "noise_std", "norm", "residual", "separable",
      "sampling", "kernel", "batchnorm_momentum", "epochs", "batches_per_epoch", "batch_size", "lr_start", "lr_end",
      "decay_start", "crop", "augment", "seed", "split"};
  for (const auto& [k, v] : doc.entries())
    if (!known.count(k)) throw ConfigError(path.string() + ": unknown key '" + k + "'");
}

// Spec and training settings from an optional config file plus flag overrides.
struct RunSetup {
  ModUNetSpec spec;
  TrainConfig cfg;
  std::optional<std::string> split;
};

RunSetup load_setup(const std::string& config_path, const std::string& variant) {
  KeyValueDoc doc;
  if (!config_path.empty()) {
    doc = read_keyvalue_file(config_path);
    reject_unknown_keys(doc, config_path);
  }
  if (!variant.empty()) doc.set("variant", variant);
  RunSetup s;
  s.spec = spec_from_keyvalue(doc);
  s.cfg = train_config_from_keyvalue(doc);
  s.split = doc.get("split");
  return s;
}

struct DataSet {
  RawVolumeMeta meta;
  GrayVolume gray;
  LabelVolume labels;
};

DataSet load_data(const fs::path& data, const fs::path& labels, const fs::path& info, const fs::path& labels_info) {
  DataSet d;
  d.meta = read_info_file(info.empty() ? info_path_for(data) : info);
  d.gray = read_gray(data, d.meta);
  RawVolumeMeta lmeta = d.meta;
  if (!labels_info.empty()) {
    lmeta = read_info_file(labels_info);
    if (!lmeta.same_dims(d.meta)) throw VolumeError("label volume dimensions differ from the data volume");
  }
  d.labels = read_labels(labels, lmeta);
  return d;
}

void check_labels(const LabelVolume& labels, int classes) {
  for (auto v : labels.data)
    if (v >= classes) {
      throw VolumeError("label value " + std::to_string(v) + " outside {0.." + std::to_string(classes - 1) + "}");
    }
}

Split resolve_split(const RunSetup& setup, const std::string& flag, std::size_t depth) {
  const std::string text = !flag.empty() ? flag : setup.split.value_or("");
  if (text.empty()) {
    // 70 / 10 / 20 percent with no margin
    const std::size_t val = depth / 10, test = depth / 5;
    return split_layers(depth, {depth - val - test, val, test, 0});
  }
  return split_layers(depth, parse_split(text));
}

json split_json(const Split& s) {
  auto r = [](LayerRange l) { return json::array({l.begin, l.end}); };
  return {{"train", r(s.train)}, {"val", r(s.val)}, {"test", r(s.test)}};
}

void apply_thread_env() {
  if (const char* env = std::getenv("MODUNET_NUM_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

// --- subcommands -----------------------------------------------------------

struct TrainArgs {
  std::string data, labels, info, labels_info, variant, spec_file, config, split, out_model, history_csv;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  bool no_augment = false;
};

int cmd_train(const TrainArgs& a, int argc, char** argv) {
  RunSetup setup = load_setup(a.spec_file, a.variant);
  if (!a.config.empty()) {
    KeyValueDoc doc = read_keyvalue_file(a.config);
    reject_unknown_keys(doc, a.config);
    setup.cfg = train_config_from_keyvalue(doc, setup.cfg);
    if (auto s = doc.get("split")) setup.split = s;
  }
  if (a.seed) setup.cfg.seed = *a.seed;
  if (a.epochs) setup.cfg.epochs = *a.epochs;
  if (a.no_augment) setup.cfg.augment = false;
  setup.cfg.validate(setup.spec);

  DataSet d = load_data(a.data, a.labels, a.info, a.labels_info);
  check_labels(d.labels, setup.spec.num_classes);
  const Split split = resolve_split(setup, a.split, d.meta.depth);

  Manifest m("train", argc, argv);
  m.config("spec", keyvalue_json(spec_to_keyvalue(setup.spec)));
  m.config("train", keyvalue_json(train_config_to_keyvalue(setup.cfg)));
  m.config("split", split_json(split));
  m.seed(setup.cfg.seed);
  m.input(a.data);
  m.input(a.labels);

  Rng init(setup.cfg.seed, 0);
  Model<float> model = Model<float>::build(setup.spec, init);
  std::cerr << "model: " << model.param_count() << " parameters, " << to_string(setup.spec.variant) << "\n";
  TrainResult r = train(std::move(model), d.gray, d.labels, setup.cfg, split.train, split.val, [](const HistoryRow& h) {
    std::fprintf(stderr, "epoch %4d  train %.4f  val %.4f  lr %.3g\n", h.epoch, h.train_loss, h.val_loss, h.lr);
  });

  if (!a.history_csv.empty()) {
    CsvTable t({"epoch", "train_loss", "val_loss", "lr", "seed"});
    for (const auto& h : r.history) {
      t.add_row({std::to_string(h.epoch), csv_real(h.train_loss, 8), csv_real(h.val_loss, 8), csv_real(h.lr, 10),
                 std::to_string(setup.cfg.seed)});
    }
    t.write(a.history_csv);
  }
  save_model(r.model, a.out_model);
  m.output("model", a.out_model);
  m.output("best_epoch", r.best_epoch);
  m.output("diverged", r.diverged);
  m.write(manifest_path(a.out_model));
  if (r.diverged) {
    std::cerr << "training diverged: " << r.failure << "\n";
    return kNumeric;
  }
  return kOk;
}

struct PredictArgs {
  std::string model, volume, info, out;
  std::vector<std::size_t> tile;
  long long halo = -1;
  std::size_t budget = 0;
  std::size_t slab = 16;
};

int cmd_predict(const PredictArgs& a, int argc, char** argv) {
  Model<float> model;
  try {
    model = load_model(a.model);
  } catch (const ModelFileError& e) {
    throw DataError(e.what());
  }
  const RawVolumeMeta meta = read_info_file(a.info.empty() ? info_path_for(a.volume) : fs::path(a.info));
  TileOptions opts;
  opts.tile = a.tile;
  opts.halo = a.halo;
  opts.memory_budget = a.budget;
  try {
    plan_tiles(meta.width, meta.height, meta.depth, model.spec(), opts, 0, meta.depth);
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }

  Manifest m("predict", argc, argv);
  m.config("spec", keyvalue_json(spec_to_keyvalue(model.spec())));
  m.config("tile", a.tile);
  m.config("halo", a.halo < 0 ? static_cast<long long>(default_halo(model.spec())) : a.halo);
  m.input(a.model);
  m.input(a.volume);
  const TileStats stats = predict_file(model, a.volume, meta, a.out, opts, a.slab);
  std::fprintf(stderr, "predicted %zu voxels in %zu tiles, %.3g s, %.4g voxels/s\n", stats.voxels, stats.tiles,
               stats.seconds, stats.voxels_per_second());
  m.output("labels", a.out);
  m.output("voxels_per_second", stats.voxels_per_second());
  m.write(manifest_path(a.out));
  return kOk;
}

struct EvaluateArgs {
  std::string pred, gt, info, report_csv, confusion_csv, error_volume;
  int classes = 3;
};

int cmd_evaluate(const EvaluateArgs& a, int argc, char** argv) {
  if (a.classes < 2 || a.classes > 255) throw ConfigError("--classes must be in [2, 255]");
  RawVolumeMeta meta = read_info_file(a.info.empty() ? info_path_for(a.gt) : fs::path(a.info));
  const LabelVolume pred = read_labels(a.pred, meta);
  const LabelVolume gt = read_labels(a.gt, meta);
  const std::size_t C = static_cast<std::size_t>(a.classes);
  const ConfusionMatrix cm = confusion(pred.data, gt.data, C);
  const ClassificationReport rep = classification_report(cm);
  const auto names = class_names(C);

  Manifest m("evaluate", argc, argv);
  m.config("classes", a.classes);
  m.input(a.pred);
  m.input(a.gt);

  auto pct = [](double v) { return csv_real(100.0 * v, 4); };
  CsvTable report({"class", "accuracy", "precision", "recall", "f1", "jaccard", "support"});
  for (std::size_t c = 0; c < C; ++c) {
    const auto& s = rep.per_class[c];
    report.add_row({names[c], pct(s.accuracy), pct(s.precision), pct(s.recall), pct(s.f1), pct(s.jaccard),
                    std::to_string(s.support)});
  }
  report.add_row({"macro", pct(rep.macro.accuracy), pct(rep.macro.precision), pct(rep.macro.recall),
                  pct(rep.macro.f1), pct(rep.macro.jaccard), std::to_string(rep.macro.support)});
  report.add_row({"micro", pct(rep.micro.accuracy), pct(rep.micro.precision), pct(rep.micro.recall),
                  pct(rep.micro.f1), "", std::to_string(rep.micro.support)});
  if (!a.report_csv.empty()) report.write(a.report_csv);

  std::printf("%-10s %9s %9s %9s %9s %9s\n", "", "accuracy", "precision", "recall", "f1", "jaccard");
  auto line = [](const std::string& n, const ClassScores& s, bool jac) {
    std::printf("%-10s %9.1f %9.1f %9.1f %9.1f ", n.c_str(), 100 * s.accuracy, 100 * s.precision, 100 * s.recall,
                100 * s.f1);
    if (jac)
      std::printf("%9.1f\n", 100 * s.jaccard);
    else
      std::printf("%9s\n", "-");
  };
  for (std::size_t c = 0; c < C; ++c) line(names[c], rep.per_class[c], true);
  line("macro", rep.macro, true);
  line("micro", rep.micro, false);
  std::printf("mean class-wise jaccard: %.1f\n", 100 * rep.macro.jaccard);

  if (!a.confusion_csv.empty()) {
    std::vector<std::string> header{"normalization", "ground_truth"};
    for (const auto& n : names) header.push_back("pred_" + n);
    CsvTable t(header);
    auto emit = [&](const std::string& label, const std::vector<double>& v, bool counts) {
      for (std::size_t g = 0; g < C; ++g) {
        std::vector<std::string> row{label, names[g]};
        for (std::size_t p = 0; p < C; ++p)
          row.push_back(counts ? std::to_string(cm.at(g, p)) : csv_real(v[g * C + p], 4));
        t.add_row(row);
      }
    };
    emit("counts", {}, true);
    emit("global", normalize_confusion(cm, ConfusionNorm::Global), false);
    emit("by_row", normalize_confusion(cm, ConfusionNorm::ByRow), false);
    emit("by_column", normalize_confusion(cm, ConfusionNorm::ByColumn), false);
    t.write(a.confusion_csv);
  }
  if (!a.error_volume.empty()) {
    LabelVolume err(meta.width, meta.height, meta.depth);
    err.data = error_volume(pred.data, gt.data);
    write_raw(err, a.error_volume);
    RawVolumeMeta em = meta;
    em.dtype = DType::U8;
    em.extra = {};
    write_info_file(info_path_for(a.error_volume), em);
  }
  m.output("mean_jaccard", rep.macro.jaccard);
  m.write(manifest_path(!a.report_csv.empty() ? fs::path(a.report_csv) : fs::path(a.pred)));
  return kOk;
}

struct BaselineArgs {
  std::string data, labels, info, out_csv, histogram_csv;
  int classes = 3;
};

int cmd_baseline(const BaselineArgs& a, int argc, char** argv) {
  if (a.classes < 2 || a.classes > 255) throw ConfigError("--classes must be in [2, 255]");
  const std::size_t C = static_cast<std::size_t>(a.classes);
  DataSet d = load_data(a.data, a.labels, a.info, "");
  const ClassHistogram hist = class_histograms(d.gray.data, d.labels.data, dtype_max(d.meta.dtype) + 1, C);
  const auto fractions = hist.class_fractions();
  const BaselineResult zero = baseline_zerooc(fractions);
  const BaselineResult bin = baseline_bin_zerooc(hist);
  const auto names = class_names(C);

  Manifest m("baseline", argc, argv);
  m.config("classes", a.classes);
  m.input(a.data);
  m.input(a.labels);

  std::vector<std::string> header{"row"};
  for (const auto& n : names) header.push_back(n);
  header.push_back("mean");
  CsvTable t(header);
  auto add = [&](const std::string& label, const std::vector<double>& v, double mean) {
    std::vector<std::string> row{label};
    for (double x : v) row.push_back(csv_real(100.0 * x, 4));
    row.push_back(std::isnan(mean) ? "" : csv_real(100.0 * mean, 4));
    t.add_row(row);
    std::printf("%-12s", label.c_str());
    for (double x : v) std::printf(" %7.1f", 100 * x);
    if (!std::isnan(mean)) std::printf("  mean %5.1f", 100 * mean);
    std::printf("\n");
  };
  add("fraction", fractions, std::nan(""));
  add("zerooc", zero.per_class, zero.mean);
  add("bin_zerooc", bin.per_class, bin.mean);
  t.write(a.out_csv);

  if (!a.histogram_csv.empty()) {
    std::vector<std::string> hh{"gray"};
    for (const auto& n : names) hh.push_back(n);
    CsvTable h(hh);
    for (std::size_t v = 0; v < hist.bins; ++v) {
      std::vector<std::string> row{std::to_string(v)};
      bool any = false;
      for (std::size_t c = 0; c < C; ++c) {
        row.push_back(std::to_string(hist.at(v, c)));
        any = any || hist.at(v, c);
      }
      if (any) h.add_row(row);
    }
    h.write(a.histogram_csv);
  }
  m.output("zerooc_mean", zero.mean);
  m.output("bin_zerooc_mean", bin.mean);
  m.write(manifest_path(a.out_csv));
  return kOk;
}

struct ExperimentArgs {
  std::string data, labels, info, config, variant, split, out_csv;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::vector<std::size_t> sizes;
};

int write_experiment(const std::vector<ExperimentRow>& rows, const std::string& key, const ExperimentArgs& a,
                     const RunSetup& setup, Manifest& m) {
  const auto names = class_names(static_cast<std::size_t>(setup.spec.num_classes));
  std::vector<std::string> header{key, "train_layers", "param_count"};
  for (const auto& n : names) header.push_back("jaccard_" + n);
  for (const auto& h : {"mean_jaccard", "status", "error", "seed"}) header.push_back(h);
  CsvTable t(header);
  std::size_t failures = 0;
  for (const auto& r : rows) {
    std::vector<std::string> row{r.name, std::to_string(r.train_layers), std::to_string(r.param_count)};
    for (std::size_t c = 0; c < names.size(); ++c)
      row.push_back(r.ok ? csv_real(100.0 * r.jaccard[c], 4) : "");
    row.push_back(r.ok ? csv_real(100.0 * r.mean_jaccard, 4) : "");
    row.push_back(r.ok ? "ok" : "failed");
    row.push_back(r.error);
    row.push_back(std::to_string(setup.cfg.seed));
    t.add_row(row);
    failures += !r.ok;
  }
  t.write(a.out_csv);
  m.output("rows", rows.size());
  m.output("failures", failures);
  m.write(manifest_path(a.out_csv));
  return failures == rows.size() ? kNumeric : kOk;
}

RunSetup experiment_setup(const ExperimentArgs& a) {
  RunSetup setup = load_setup(a.config, a.variant);
  if (a.seed) setup.cfg.seed = *a.seed;
  if (a.epochs) setup.cfg.epochs = *a.epochs;
  setup.cfg.validate(setup.spec);
  return setup;
}

void print_row(const ExperimentRow& r) {
  if (r.ok)
    std::fprintf(stderr, "%-16s params %8zu  mean jaccard %.3f\n", r.name.c_str(), r.param_count, r.mean_jaccard);
  else
    std::fprintf(stderr, "%-16s failed: %s\n", r.name.c_str(), r.error.c_str());
}

int cmd_ablate(const ExperimentArgs& a, int argc, char** argv) {
  const RunSetup setup = experiment_setup(a);
  DataSet d = load_data(a.data, a.labels, a.info, "");
  check_labels(d.labels, setup.spec.num_classes);
  const Split split = resolve_split(setup, a.split, d.meta.depth);
  Manifest m("ablate", argc, argv);
  m.config("spec", keyvalue_json(spec_to_keyvalue(setup.spec)));
  m.config("train", keyvalue_json(train_config_to_keyvalue(setup.cfg)));
  m.config("split", split_json(split));
  m.seed(setup.cfg.seed);
  m.input(a.data);
  m.input(a.labels);
  const auto rows = ablation(setup.spec, d.gray, d.labels, setup.cfg, split, print_row);
  return write_experiment(rows, "variant", a, setup, m);
}

int cmd_learning_curve(const ExperimentArgs& a, int argc, char** argv) {
  const RunSetup setup = experiment_setup(a);
  DataSet d = load_data(a.data, a.labels, a.info, "");
  check_labels(d.labels, setup.spec.num_classes);
  const Split split = resolve_split(setup, a.split, d.meta.depth);
  std::vector<std::size_t> sizes = a.sizes;
  if (sizes.empty()) {
    for (auto s : default_learning_curve_sizes())
      if (s <= split.train.size()) sizes.push_back(s);
  }
  Manifest m("learning-curve", argc, argv);
  m.config("spec", keyvalue_json(spec_to_keyvalue(setup.spec)));
  m.config("train", keyvalue_json(train_config_to_keyvalue(setup.cfg)));
  m.config("split", split_json(split));
  m.config("sizes", sizes);
  m.seed(setup.cfg.seed);
  m.input(a.data);
  m.input(a.labels);
  const auto rows = learning_curve(setup.spec, d.gray, d.labels, setup.cfg, split, sizes, print_row);
  return write_experiment(rows, "size", a, setup, m);
}

struct SynthArgs {
  std::string out_data, out_labels;
  std::size_t size = 64;
  std::uint64_t seed = 1;
  bool disjoint = false;
  std::optional<double> noise;
};

int cmd_synth(const SynthArgs& a, int argc, char** argv) {
  SyntheticOptions o = synthetic_cube(a.size);
  o.seed = a.seed;
  o.disjoint = a.disjoint;
  if (a.noise) o.noise_std = *a.noise;
  const SyntheticVolume v = make_synthetic(o);
  write_raw(v.gray, a.out_data);
  write_info_file(info_path_for(a.out_data), v.gray.meta());
  write_raw(v.labels, a.out_labels);
  write_info_file(info_path_for(a.out_labels), v.gray.meta());
  Manifest m("synth", argc, argv);
  m.seed(a.seed);
  m.config("size", a.size);
  m.config("disjoint", a.disjoint);
  m.config("noise_std", o.noise_std);
  m.write(manifest_path(a.out_data));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_env();
  CLI::App app{"Modular U-Net volumetric segmentation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model on a labelled volume");
  train_cmd->add_option("--data", ta.data, "gray-level .raw volume")->required();
  train_cmd->add_option("--labels", ta.labels, "u8 label .raw volume")->required();
  train_cmd->add_option("--info", ta.info, ".raw.info of the data (default: <data>.info)");
  train_cmd->add_option("--labels-info", ta.labels_info, ".raw.info of the labels (default: data dims, u8)");
  train_cmd->add_option("--variant", ta.variant, "2d, 2.5d or 3d (overrides the spec file)");
  train_cmd->add_option("--spec-file", ta.spec_file, "key=value model spec (may carry training keys)");
  train_cmd->add_option("--config", ta.config, "key=value training config");
  train_cmd->add_option("--split", ta.split, "train,val,test,margin layer counts");
  train_cmd->add_option("--out-model", ta.out_model, "model file to write")->required();
  train_cmd->add_option("--history-csv", ta.history_csv, "per-epoch history CSV");
  train_cmd->add_option("--seed", ta.seed, "rng seed");
  train_cmd->add_option("--epochs", ta.epochs, "override the epoch count");
  train_cmd->add_flag("--no-augment", ta.no_augment, "disable geometric augmentation");

  PredictArgs pa;
  auto* predict_cmd = app.add_subcommand("predict", "segment a volume with a trained model");
  predict_cmd->add_option("--model", pa.model)->required();
  predict_cmd->add_option("--volume", pa.volume)->required();
  predict_cmd->add_option("--info", pa.info, ".raw.info of the volume (default: <volume>.info)");
  predict_cmd->add_option("--out", pa.out, "label .raw to write (sidecar written next to it)")->required();
  predict_cmd->add_option("--tile", pa.tile, "tile core extents, H W (2D) or D H W (3D)");
  predict_cmd->add_option("--halo", pa.halo, "halo voxels per side (default 2^u_depth * kernel radius)");
  predict_cmd->add_option("--budget", pa.budget, "max voxels per tile window (0 = unlimited)");
  predict_cmd->add_option("--slab", pa.slab, "layers read per streaming slab");

  EvaluateArgs ea;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "score a prediction against ground truth");
  evaluate_cmd->add_option("--pred", ea.pred)->required();
  evaluate_cmd->add_option("--gt", ea.gt)->required();
  evaluate_cmd->add_option("--info", ea.info, ".raw.info shared by both volumes (default: <gt>.info)");
  evaluate_cmd->add_option("--report-csv", ea.report_csv);
  evaluate_cmd->add_option("--confusion-csv", ea.confusion_csv);
  evaluate_cmd->add_option("--error-volume", ea.error_volume, "u8 .raw marking misclassified voxels");
  evaluate_cmd->add_option("--classes", ea.classes);

  BaselineArgs ba;
  auto* baseline_cmd = app.add_subcommand("baseline", "ZeroOC and Bin-ZeroOC expected Jaccard indices");
  baseline_cmd->add_option("--data", ba.data)->required();
  baseline_cmd->add_option("--labels", ba.labels)->required();
  baseline_cmd->add_option("--info", ba.info);
  baseline_cmd->add_option("--out-csv", ba.out_csv)->required();
  baseline_cmd->add_option("--histogram-csv", ba.histogram_csv, "per-gray-value class counts");
  baseline_cmd->add_option("--classes", ba.classes);

  ExperimentArgs xa;
  auto add_experiment = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--data", xa.data)->required();
    c->add_option("--labels", xa.labels)->required();
    c->add_option("--info", xa.info);
    c->add_option("--config", xa.config, "key=value spec + training config");
    c->add_option("--variant", xa.variant);
    c->add_option("--split", xa.split, "train,val,test,margin layer counts");
    c->add_option("--out-csv", xa.out_csv)->required();
    c->add_option("--seed", xa.seed);
    c->add_option("--epochs", xa.epochs);
    return c;
  };
  auto* ablate_cmd = add_experiment("ablate", "train the ablation variants");
  auto* curve_cmd = add_experiment("learning-curve", "train on shrinking subsets of the train layers");
  curve_cmd->add_option("--sizes", xa.sizes, "train layer counts, descending");

  SynthArgs sa;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic three-phase volume");
  synth_cmd->add_option("--out-data", sa.out_data)->required();
  synth_cmd->add_option("--out-labels", sa.out_labels)->required();
  synth_cmd->add_option("--size", sa.size, "cube edge length");
  synth_cmd->add_option("--seed", sa.seed);
  synth_cmd->add_option("--noise", sa.noise, "gray noise std");
  synth_cmd->add_flag("--disjoint", sa.disjoint, "keep phase gray ranges disjoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, argc, argv);
    if (predict_cmd->parsed()) return cmd_predict(pa, argc, argv);
    if (evaluate_cmd->parsed()) return cmd_evaluate(ea, argc, argv);
    if (baseline_cmd->parsed()) return cmd_baseline(ba, argc, argv);
    if (ablate_cmd->parsed()) return cmd_ablate(xa, argc, argv);
    if (curve_cmd->parsed()) return cmd_learning_curve(xa, argc, argv);
    if (synth_cmd->parsed()) return cmd_synth(sa, argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const SpecError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const KeyValueError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NonFiniteError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    // volumes, shapes, model files, metrics, I/O
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kConfig;
}
