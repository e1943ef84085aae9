// Command-line front end: simulate | bmode | entropy | train | eval | stats.
//
// Conventions shared by every subcommand:
//   - exit 0 on success, 2 on usage/input/config errors, 1 on anything else;
//   - a run_manifest.json is written next to the outputs recording the
//     command, the fully resolved configuration, input/output paths, seeds,
//     the tool version and the wall-clock duration (the duration makes this
//     one file exempt from the byte-identical-rerun guarantee);
//   - configs are JSON objects with flat dotted keys; command-line flags
//     override file values; unknown keys are rejected.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qus/entropy.hpp"
#include "qus/entropy_io.hpp"
#include "qus/errors.hpp"
#include "qus/image_io.hpp"
#include "qus/metrics.hpp"
#include "qus/nn/train.hpp"
#include "qus/nn/unet.hpp"
#include "qus/nn/weights_io.hpp"
#include "qus/phantom.hpp"
#include "qus/pipeline.hpp"
#include "qus/rf.hpp"
#include "qus/rf_io.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using qus::IoError;
using qus::ParameterError;

constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Small helpers

std::pair<std::size_t, std::size_t> parse_pair(const std::string& text,
                                               const char* what) {
  std::size_t a = 0;
  std::size_t b = 0;
  char tail = '\0';
  if (std::sscanf(text.c_str(), "%zux%zu%c", &a, &b, &tail) != 2)
    throw ParameterError(std::string(what) + " must look like AxB, got '" +
                         text + "'");
  return {a, b};
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_ = clock::now();
};

void write_run_manifest(const fs::path& dir, const std::string& command,
                        const json& config,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs,
                        const json& seeds, double duration_seconds) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["seeds"] = seeds;
  m["tool_version"] = kToolVersion;
  m["duration_seconds"] = duration_seconds;
  fs::create_directories(dir);
  write_text_file(dir / "run_manifest.json", m.dump(2) + "\n");
}

// Resolved configuration: defaults < config file < command-line flags.
// Every key that a command consults ends up in resolved(), defaults
// included, so the manifest echoes the complete effective configuration.
class Config {
 public:
  void load_file(const std::string& path) {
    json j = read_json_file(path);
    if (!j.is_object())
      throw ParameterError("config must be a JSON object of dotted keys");
    for (const auto& [key, value] : j.items()) {
      if (!(value.is_number() || value.is_boolean() || value.is_string()))
        throw ParameterError("config value for '" + key +
                             "' must be a scalar");
      values_[key] = value;
    }
  }

  void set(const std::string& key, json value) {
    values_[key] = std::move(value);
  }

  double number(const std::string& key, double fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    if (!it->is_number())
      throw ParameterError("config key '" + key + "' must be a number");
    return it->get<double>();
  }

  std::optional<double> optional_number(const std::string& key) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    if (!it->is_number())
      throw ParameterError("config key '" + key + "' must be a number");
    return it->get<double>();
  }

  std::size_t index(const std::string& key, std::size_t fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    if (!it->is_number_integer() ||
        (it->is_number_integer() && !it->is_number_unsigned() &&
         it->get<long long>() < 0))
      throw ParameterError("config key '" + key +
                           "' must be a nonnegative integer");
    return it->get<std::size_t>();
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    if (!it->is_number_integer() ||
        (!it->is_number_unsigned() && it->get<long long>() < 0))
      throw ParameterError("config key '" + key +
                           "' must be a nonnegative integer");
    return it->get<std::uint64_t>();
  }

  bool flag(const std::string& key, bool fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    if (!it->is_boolean())
      throw ParameterError("config key '" + key + "' must be a boolean");
    return it->get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) {
      values_[key] = fallback;
      return fallback;
    }
    if (!it->is_string())
      throw ParameterError("config key '" + key + "' must be a string");
    return it->get<std::string>();
  }

  // Call after all lookups: any key never consulted is a typo.
  void reject_unknown() const {
    for (const auto& [key, value] : values_.items())
      if (!used_.count(key))
        throw ParameterError("unknown config key: " + key);
  }

  const json& resolved() const { return values_; }

 private:
  json values_ = json::object();
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::size_t cases = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t lines = 256;
  std::size_t axial = 512;
};

void run_simulate(const SimulateArgs& args) {
  Stopwatch timer;
  qus::DatasetRanges ranges;
  ranges.n_lines = args.lines;
  ranges.n_axial = args.axial;
  auto entries = qus::make_dataset(args.cases, ranges, args.seed);
  fs::create_directories(args.out);
  const std::string manifest = qus::write_dataset(args.out, entries);

  json config{{"cases", args.cases},
              {"seed", args.seed},
              {"lines", args.lines},
              {"axial", args.axial}};
  write_run_manifest(args.out, "simulate", config, {}, {manifest},
                     json{{"dataset", args.seed}}, timer.seconds());
  std::printf("simulate: wrote %zu frames (%zu cases) to %s\n",
              entries.size(), args.cases, args.out.c_str());
}

// ---------------------------------------------------------------------------
// bmode

struct BmodeArgs {
  std::string input;
  std::string out;
  double dr = 50.0;
};

void run_bmode(const BmodeArgs& args) {
  Stopwatch timer;
  if (!(args.dr > 0.0)) throw ParameterError("--dr must be positive");
  fs::path out = args.out.empty()
                     ? fs::path(args.input).replace_extension("") +=
                       "_bmode.png"
                     : fs::path(args.out);
  qus::RfFrame frame = qus::read_qrf(args.input);
  qus::BModeImage img = qus::log_compress(qus::envelope(frame), args.dr);

  const std::string ext = out.extension().string();
  if (ext == ".pgm")
    qus::write_pgm(out.string(), img.pixels);
  else if (ext == ".png")
    qus::write_png_gray(out.string(), img.pixels);
  else
    throw ParameterError("output extension must be .pgm or .png, got '" +
                         ext + "'");

  json config{{"input", args.input},
              {"output", out.string()},
              {"dynamic_range_db", args.dr}};
  write_run_manifest(out.parent_path().empty() ? fs::path(".")
                                               : out.parent_path(),
                     "bmode", config, {args.input}, {out.string()},
                     json::object(), timer.seconds());
  std::printf("bmode: %zu lines x %zu samples -> %s (%.0f dB)\n",
              frame.lines(), frame.axial(), out.string().c_str(), args.dr);
}

// ---------------------------------------------------------------------------
// entropy

struct EntropyArgs {
  std::string input;
  std::string out;
  std::string window = "100x14";
  std::string stride = "1x1";
  std::size_t bins = 64;
  double wavelengths = 0.0;
  bool have_wavelengths = false;
  std::size_t lateral = 0;
  bool gray = false;
};

void run_entropy(const EntropyArgs& args) {
  Stopwatch timer;
  qus::RfFrame frame = qus::read_qrf(args.input);

  qus::WindowSpec spec;
  if (args.have_wavelengths) {
    spec = qus::window_from_wavelengths(
        args.wavelengths, frame,
        args.lateral > 0 ? std::optional<std::size_t>(args.lateral)
                         : std::nullopt);
  } else {
    auto [ax, ln] = parse_pair(args.window, "--window");
    spec.axial = ax;
    spec.lines = ln;
  }
  auto [sa, sl] = parse_pair(args.stride, "--stride");
  spec.axial_stride = sa;
  spec.line_stride = sl;
  spec.bins = args.bins;

  qus::EntropyMap map = qus::entropy_map(qus::envelope(frame), spec);

  fs::path out = args.out.empty()
                     ? fs::path(args.input).replace_extension("") +=
                       "_entropy.qem"
                     : fs::path(args.out);
  fs::path png = fs::path(out).replace_extension(".png");
  qus::write_entropy_map(out.string(), map);
  qus::write_entropy_png(png.string(), map, !args.gray);

  json config{{"input", args.input},
              {"window_axial", spec.axial},
              {"window_lines", spec.lines},
              {"axial_stride", spec.axial_stride},
              {"line_stride", spec.line_stride},
              {"bins", spec.bins},
              {"colormap", !args.gray}};
  if (args.have_wavelengths) config["wavelengths"] = args.wavelengths;
  write_run_manifest(out.parent_path().empty() ? fs::path(".")
                                               : out.parent_path(),
                     "entropy", config, {args.input},
                     {out.string(), png.string()}, json::object(),
                     timer.seconds());
  std::printf("entropy: window %zux%zu stride %zux%zu bins %zu -> map %zux%zu"
              " -> %s\n",
              spec.axial, spec.lines, spec.axial_stride, spec.line_stride,
              spec.bins, map.rows(), map.cols(), out.string().c_str());
}

// ---------------------------------------------------------------------------
// shared train/eval plumbing

struct ResolvedSetup {
  qus::pipeline::PrepParams prep;
  qus::nn::NetworkConfig net;
  qus::SplitFractions fractions;
  std::uint64_t split_seed = 0;
};

// Reads the prep/network/split keys out of a Config (train path: the main
// config; eval path: the model sidecar written at training time).
ResolvedSetup resolve_setup(Config& cfg) {
  ResolvedSetup s;
  s.prep.mode = cfg.text("mode", "us");
  s.prep.dynamic_range_db = cfg.number("prep.dr", 50.0);
  s.prep.window.axial = cfg.index("prep.window_axial", 100);
  s.prep.window.lines = cfg.index("prep.window_lines", 14);
  s.prep.window.axial_stride = cfg.index("prep.stride_axial", 1);
  s.prep.window.line_stride = cfg.index("prep.stride_lines", 1);
  s.prep.window.bins = cfg.index("prep.bins", 64);
  s.prep.wavelengths = cfg.optional_number("prep.wavelengths");

  s.net.depth = cfg.index("net.depth", 4);
  s.net.base_channels = cfg.index("net.base_channels", 16);
  s.net.input_h = cfg.index("net.input_h", 224);
  s.net.input_w = cfg.index("net.input_w", 224);
  s.net.use_attention = cfg.flag("net.attention", true);
  s.net.use_matching_layer = cfg.flag("net.matching", true);
  s.net.use_batchnorm = cfg.flag("net.batchnorm", true);
  s.prep.input_h = s.net.input_h;
  s.prep.input_w = s.net.input_w;

  s.fractions.train = cfg.number("split.train", 0.55);
  s.fractions.val = cfg.number("split.val", 0.15);
  s.fractions.test = cfg.number("split.test", 0.30);
  s.split_seed = cfg.seed("split.seed", 0);

  qus::pipeline::validate(s.prep);
  qus::nn::validate(s.net);
  return s;
}

// Unique (case_id, label) list for the split, rejecting contradictions.
std::vector<qus::CaseLabel> case_labels(
    const std::vector<qus::DatasetItem>& items) {
  std::unordered_map<std::size_t, std::string> seen;
  std::vector<qus::CaseLabel> cases;
  for (const auto& item : items) {
    auto [it, inserted] = seen.emplace(item.case_id, item.label);
    if (inserted)
      cases.push_back({item.case_id, item.label});
    else if (it->second != item.label)
      throw qus::InvalidInputError(
          "case " + std::to_string(item.case_id) +
          " appears with conflicting labels in the manifest");
  }
  return cases;
}

std::vector<qus::DatasetItem> items_in(
    const std::vector<qus::DatasetItem>& items,
    const std::vector<std::size_t>& case_ids) {
  std::unordered_set<std::size_t> wanted(case_ids.begin(), case_ids.end());
  std::vector<qus::DatasetItem> out;
  for (const auto& item : items)
    if (wanted.count(item.case_id)) out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string manifest;
  std::string mode;
  std::string config_path;
  std::string out;
  std::string import_weights;
  std::string cache_dir;
  bool no_augment = false;
  bool no_cache = false;

  // Flag overrides; presence is tracked via the bound CLI options.
  int epochs = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::size_t batch = 0;
  std::size_t depth = 0;
  std::size_t base_channels = 0;
  std::string size;
  std::string window;
  std::string stride;
  std::size_t bins = 0;
  double wavelengths = 0.0;
  double dr = 0.0;

  CLI::Option* opt_mode = nullptr;
  CLI::Option* opt_epochs = nullptr;
  CLI::Option* opt_seed = nullptr;
  CLI::Option* opt_lr = nullptr;
  CLI::Option* opt_batch = nullptr;
  CLI::Option* opt_depth = nullptr;
  CLI::Option* opt_base = nullptr;
  CLI::Option* opt_size = nullptr;
  CLI::Option* opt_window = nullptr;
  CLI::Option* opt_stride = nullptr;
  CLI::Option* opt_bins = nullptr;
  CLI::Option* opt_wavelengths = nullptr;
  CLI::Option* opt_dr = nullptr;
};

void apply_train_overrides(const TrainArgs& args, Config& cfg) {
  if (args.opt_mode->count()) cfg.set("mode", args.mode);
  if (args.opt_epochs->count()) cfg.set("train.max_epochs", args.epochs);
  if (args.opt_seed->count()) cfg.set("train.seed", args.seed);
  if (args.opt_lr->count()) cfg.set("train.lr", args.lr);
  if (args.opt_batch->count()) cfg.set("train.batch_size", args.batch);
  if (args.opt_depth->count()) cfg.set("net.depth", args.depth);
  if (args.opt_base->count()) cfg.set("net.base_channels", args.base_channels);
  if (args.opt_size->count()) {
    auto [h, w] = parse_pair(args.size, "--size");
    cfg.set("net.input_h", h);
    cfg.set("net.input_w", w);
  }
  if (args.opt_window->count()) {
    auto [ax, ln] = parse_pair(args.window, "--window");
    cfg.set("prep.window_axial", ax);
    cfg.set("prep.window_lines", ln);
  }
  if (args.opt_stride->count()) {
    auto [sa, sl] = parse_pair(args.stride, "--stride");
    cfg.set("prep.stride_axial", sa);
    cfg.set("prep.stride_lines", sl);
  }
  if (args.opt_bins->count()) cfg.set("prep.bins", args.bins);
  if (args.opt_wavelengths->count())
    cfg.set("prep.wavelengths", args.wavelengths);
  if (args.opt_dr->count()) cfg.set("prep.dr", args.dr);
  if (args.no_augment) cfg.set("train.augment_hflip", false);
}

json model_sidecar(const ResolvedSetup& s) {
  json m;
  m["mode"] = s.prep.mode;
  m["prep.dr"] = s.prep.dynamic_range_db;
  m["prep.window_axial"] = s.prep.window.axial;
  m["prep.window_lines"] = s.prep.window.lines;
  m["prep.stride_axial"] = s.prep.window.axial_stride;
  m["prep.stride_lines"] = s.prep.window.line_stride;
  m["prep.bins"] = s.prep.window.bins;
  if (s.prep.wavelengths) m["prep.wavelengths"] = *s.prep.wavelengths;
  m["net.depth"] = s.net.depth;
  m["net.base_channels"] = s.net.base_channels;
  m["net.input_h"] = s.net.input_h;
  m["net.input_w"] = s.net.input_w;
  m["net.attention"] = s.net.use_attention;
  m["net.matching"] = s.net.use_matching_layer;
  m["net.batchnorm"] = s.net.use_batchnorm;
  m["split.train"] = s.fractions.train;
  m["split.val"] = s.fractions.val;
  m["split.test"] = s.fractions.test;
  m["split.seed"] = s.split_seed;
  m["tool_version"] = kToolVersion;
  return m;
}

void run_train(const TrainArgs& args) {
  Stopwatch timer;
  Config cfg;
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  apply_train_overrides(args, cfg);

  ResolvedSetup setup = resolve_setup(cfg);
  qus::nn::TrainConfig tcfg;
  tcfg.lr = cfg.number("train.lr", tcfg.lr);
  tcfg.beta1 = cfg.number("train.beta1", tcfg.beta1);
  tcfg.batch_size = cfg.index("train.batch_size", tcfg.batch_size);
  tcfg.lr_drop_factor = cfg.number("train.lr_drop_factor", tcfg.lr_drop_factor);
  tcfg.lr_patience_epochs =
      static_cast<int>(cfg.index("train.lr_patience_epochs",
                                 static_cast<std::size_t>(tcfg.lr_patience_epochs)));
  tcfg.early_stop_epochs =
      static_cast<int>(cfg.index("train.early_stop_epochs",
                                 static_cast<std::size_t>(tcfg.early_stop_epochs)));
  tcfg.max_epochs = static_cast<int>(
      cfg.index("train.max_epochs", static_cast<std::size_t>(tcfg.max_epochs)));
  tcfg.rng_seed = cfg.seed("train.seed", 0);
  const bool augment = cfg.flag("train.augment_hflip", true);
  qus::nn::validate(tcfg);
  cfg.reject_unknown();

  const auto items = qus::read_dataset_manifest(args.manifest);
  const std::string base = fs::path(args.manifest).parent_path().string();
  const auto split =
      qus::split_dataset(case_labels(items), setup.fractions, setup.split_seed);

  const std::string cache =
      args.no_cache ? std::string()
                    : (args.cache_dir.empty()
                           ? (fs::path(base) / "cache").string()
                           : args.cache_dir);
  auto train_items = items_in(items, split.train);
  auto val_items = items_in(items, split.val);
  if (train_items.empty())
    throw ParameterError("training split is empty; need more cases");
  auto train_samples =
      qus::pipeline::prepare_samples(train_items, base, setup.prep, cache);
  auto val_samples =
      qus::pipeline::prepare_samples(val_items, base, setup.prep, cache);
  bool val_fallback = false;
  if (val_samples.empty()) {
    val_samples = train_samples;
    val_fallback = true;
    std::fprintf(stderr,
                 "note: validation split is empty; validating on the "
                 "training set\n");
  }
  if (augment) train_samples = qus::augment_hflip(train_samples);

  qus::nn::UNet net(setup.net);
  net.init_params(tcfg.rng_seed);
  if (!args.import_weights.empty()) {
    const auto file_params = qus::nn::read_weights(args.import_weights);
    std::map<std::string, std::string> mapping;
    for (const auto& [name, tensor] : net.params())
      if ((name.rfind("enc0.", 0) == 0 || name.rfind("enc1.", 0) == 0) &&
          file_params.count(name))
        mapping[name] = name;
    if (mapping.empty())
      throw qus::ImportError("no first-two-block tensors found in " +
                             args.import_weights);
    qus::nn::import_weights(net.params(), args.import_weights, mapping);
    std::printf("train: imported %zu tensors from %s\n", mapping.size(),
                args.import_weights.c_str());
  }

  auto result = qus::nn::train(net, train_samples, val_samples, tcfg);

  fs::create_directories(args.out);
  const fs::path weights = fs::path(args.out) / "weights.qwt";
  const fs::path history = fs::path(args.out) / "history.csv";
  const fs::path model = fs::path(args.out) / "model.json";
  qus::nn::export_weights(weights.string(), result.best_params);
  qus::nn::write_history_csv(history.string(), result.history);
  write_text_file(model, model_sidecar(setup).dump(2) + "\n");

  json config = cfg.resolved();
  config["dataset_manifest"] = args.manifest;
  config["cache_dir"] = cache;
  config["augment_hflip"] = augment;
  config["val_fallback_to_train"] = val_fallback;
  if (!args.import_weights.empty())
    config["import_weights"] = args.import_weights;
  std::vector<std::string> inputs{args.manifest};
  if (!args.config_path.empty()) inputs.push_back(args.config_path);
  if (!args.import_weights.empty()) inputs.push_back(args.import_weights);
  write_run_manifest(args.out, "train", config, inputs,
                     {weights.string(), history.string(), model.string()},
                     json{{"train", tcfg.rng_seed}, {"split", setup.split_seed}},
                     timer.seconds());
  std::printf(
      "train: mode=%s cases train/val/test = %zu/%zu/%zu, samples %zu/%zu\n",
      setup.prep.mode.c_str(), split.train.size(), split.val.size(),
      split.test.size(), train_samples.size(), val_samples.size());
  std::printf("train: best validation dice %.4f at epoch %d (%zu epochs run)\n",
              result.best_val_dice, result.best_epoch,
              result.history.size());
  std::printf("train: wrote %s, %s, %s\n", weights.string().c_str(),
              history.string().c_str(), model.string().c_str());
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string weights;
  std::string manifest;
  std::string model;
  std::string split = "test";
  std::string out;
  std::string cache_dir;
  double tau = 0.5;
  int morph_radius = 3;
  bool no_morph = false;
  bool no_cache = false;
  bool oracle = false;
  std::size_t batch = 16;
};

std::vector<qus::RasterU8> predict_masks(qus::nn::UNet& net,
                                         const std::vector<qus::Sample>& samples,
                                         std::size_t batch, double tau,
                                         int morph_radius) {
  std::vector<qus::RasterU8> preds;
  preds.reserve(samples.size());
  const std::size_t h = net.config().input_h;
  const std::size_t w = net.config().input_w;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t stop = std::min(samples.size(), start + batch);
    std::vector<std::size_t> chunk(stop - start);
    std::iota(chunk.begin(), chunk.end(), start);
    auto [x, target] = qus::nn::pack_batch(samples, chunk);
    qus::nn::Tensor4 y = net.forward(x, /*training=*/false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      qus::RasterF64 prob(h, w);
      const double* plane = y.plane(i, 0);
      std::copy(plane, plane + h * w, prob.storage().begin());
      qus::RasterU8 mask = qus::threshold(prob, tau);
      if (morph_radius > 0) mask = qus::morph_close(mask, morph_radius);
      preds.push_back(std::move(mask));
    }
  }
  return preds;
}

void run_eval(const EvalArgs& args) {
  Stopwatch timer;
  const fs::path model_path = args.model.empty()
                                  ? fs::path(args.weights).parent_path() /
                                        "model.json"
                                  : fs::path(args.model);
  Config cfg;
  cfg.load_file(model_path.string());
  ResolvedSetup setup = resolve_setup(cfg);
  cfg.text("tool_version", kToolVersion);
  cfg.reject_unknown();

  const auto items = qus::read_dataset_manifest(args.manifest);
  const std::string base = fs::path(args.manifest).parent_path().string();

  std::vector<qus::DatasetItem> subset;
  if (args.split == "all") {
    subset = items;
  } else {
    const auto split = qus::split_dataset(case_labels(items), setup.fractions,
                                          setup.split_seed);
    const std::vector<std::size_t>* ids = nullptr;
    if (args.split == "train")
      ids = &split.train;
    else if (args.split == "val")
      ids = &split.val;
    else if (args.split == "test")
      ids = &split.test;
    else
      throw ParameterError("--split must be train|val|test|all, got '" +
                           args.split + "'");
    subset = items_in(items, *ids);
  }
  if (subset.empty())
    throw ParameterError("selected split '" + args.split + "' is empty");

  const std::string cache =
      args.no_cache ? std::string()
                    : (args.cache_dir.empty()
                           ? (fs::path(base) / "cache").string()
                           : args.cache_dir);
  auto samples =
      qus::pipeline::prepare_samples(subset, base, setup.prep, cache);

  const int morph_radius = args.no_morph ? 0 : args.morph_radius;
  std::vector<qus::RasterU8> truths;
  truths.reserve(samples.size());
  for (const auto& s : samples) truths.push_back(s.mask);

  std::vector<qus::RasterU8> preds;
  if (args.oracle) {
    preds = truths;
  } else {
    qus::nn::UNet net(setup.net);
    net.init_params(0);
    std::map<std::string, std::string> mapping;
    for (const auto& [name, tensor] : net.params()) mapping[name] = name;
    qus::nn::import_weights(net.params(), args.weights, mapping);
    if (args.batch == 0) throw ParameterError("--batch must be positive");
    preds = predict_masks(net, samples, args.batch, args.tau, morph_radius);
  }

  std::vector<std::string> labels;
  std::vector<std::size_t> case_ids;
  for (const auto& item : subset) {
    labels.push_back(item.label);
    case_ids.push_back(item.case_id);
  }
  const qus::MetricsReport report =
      qus::evaluate(preds, truths, labels, case_ids);

  const fs::path out_dir = args.out.empty()
                               ? fs::path(args.weights).parent_path()
                               : fs::path(args.out);
  fs::create_directories(out_dir);
  const fs::path report_path = out_dir / "report.json";
  write_text_file(report_path, qus::report_to_json(report).dump(2) + "\n");

  json config = cfg.resolved();
  config["weights"] = args.weights;
  config["dataset_manifest"] = args.manifest;
  config["split"] = args.split;
  config["tau"] = args.tau;
  config["morph_radius"] = morph_radius;
  config["oracle"] = args.oracle;
  config["cache_dir"] = cache;
  write_run_manifest(out_dir, "eval", config,
                     {args.weights, args.manifest, model_path.string()},
                     {report_path.string()},
                     json{{"split", setup.split_seed}}, timer.seconds());

  std::printf("eval: %s split, %zu frames, mode=%s%s\n", args.split.c_str(),
              samples.size(), setup.prep.mode.c_str(),
              args.oracle ? " (oracle predictions)" : "");
  std::fputs(qus::render_report_table(report).c_str(), stdout);
  std::printf("eval: wrote %s\n", report_path.string().c_str());
}

// ---------------------------------------------------------------------------
// stats

struct StatsArgs {
  std::string report_a;
  std::string report_b;
  std::string out;
  double alpha = 0.05;
};

std::vector<double> dice_scores(const std::string& path) {
  const qus::MetricsReport report = qus::report_from_json(read_json_file(path));
  if (report.per_case.empty())
    throw qus::InvalidInputError("report has no cases: " + path);
  std::vector<double> dice;
  dice.reserve(report.per_case.size());
  for (const auto& row : report.per_case) dice.push_back(row.dice);
  return dice;
}

void run_stats(const StatsArgs& args) {
  Stopwatch timer;
  if (!(args.alpha > 0.0 && args.alpha < 1.0))
    throw ParameterError("--alpha must lie in (0, 1)");
  const auto a = dice_scores(args.report_a);
  const auto b = dice_scores(args.report_b);
  const auto result = qus::wilcoxon_rank_sum(a, b);
  const double mean_a =
      std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  const double mean_b =
      std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  const bool significant = result.p < args.alpha;

  std::printf("stats: rank-sum comparison of per-case dice\n");
  std::printf("  a: %-3zu cases, mean dice %.4f  (%s)\n", a.size(), mean_a,
              args.report_a.c_str());
  std::printf("  b: %-3zu cases, mean dice %.4f  (%s)\n", b.size(), mean_b,
              args.report_b.c_str());
  std::printf("  U = %.1f, p = %.6g (%s), %s at alpha = %g\n", result.u,
              result.p, result.exact ? "exact" : "normal approximation",
              significant ? "significant" : "not significant", args.alpha);

  if (!args.out.empty()) {
    json stats{{"n_a", a.size()},
               {"n_b", b.size()},
               {"mean_dice_a", mean_a},
               {"mean_dice_b", mean_b},
               {"u", result.u},
               {"p", result.p},
               {"exact", result.exact},
               {"alpha", args.alpha},
               {"significant", significant}};
    fs::create_directories(args.out);
    const fs::path stats_path = fs::path(args.out) / "stats.json";
    write_text_file(stats_path, stats.dump(2) + "\n");
    json config{{"report_a", args.report_a},
                {"report_b", args.report_b},
                {"alpha", args.alpha}};
    write_run_manifest(args.out, "stats", config,
                       {args.report_a, args.report_b}, {stats_path.string()},
                       json::object(), timer.seconds());
    std::printf("stats: wrote %s\n", stats_path.string().c_str());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
  CLI::App app{"quantitative ultrasound toolkit: simulation, B-mode and "
               "entropy imaging, segmentation training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand(
      "simulate", "Generate a labeled point-scatterer phantom dataset");
  sim_cmd->add_option("--cases", sim.cases, "Number of cases (2 frames each)")
      ->required()
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim.seed, "Dataset RNG seed");
  sim_cmd->add_option("-o,--out", sim.out, "Output directory")->required();
  sim_cmd->add_option("--lines", sim.lines, "Scan lines per frame")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--axial", sim.axial, "Axial samples per line")
      ->check(CLI::PositiveNumber);

  BmodeArgs bmode;
  auto* bmode_cmd = app.add_subcommand(
      "bmode", "Reconstruct a grayscale image from a raw RF frame");
  bmode_cmd->add_option("input", bmode.input, "RF container file")->required();
  bmode_cmd->add_option("-o,--out", bmode.out,
                        "Output image (.png or .pgm; default "
                        "<input>_bmode.png)");
  bmode_cmd->add_option("--dr", bmode.dr, "Dynamic range in dB (default 50)");

  EntropyArgs ent;
  auto* ent_cmd = app.add_subcommand(
      "entropy", "Compute a sliding-window entropy map from a raw RF frame");
  ent_cmd->add_option("input", ent.input, "RF container file")->required();
  ent_cmd->add_option("-o,--out", ent.out,
                      "Output map file (default <input>_entropy.qem; a PNG "
                      "preview is written alongside)");
  auto* win_opt = ent_cmd->add_option(
      "--window", ent.window, "Window size as AXIALxLINES (default 100x14)");
  auto* wl_opt =
      ent_cmd->add_option("--wavelengths", ent.wavelengths,
                          "Size the window as a multiple of the transmit "
                          "wavelength instead of --window")
          ->excludes(win_opt);
  ent_cmd->add_option("--lateral", ent.lateral,
                      "Lateral window extent in lines (with --wavelengths "
                      "when the frame has no line pitch)");
  ent_cmd->add_option("--stride", ent.stride,
                      "Window stride as AXIALxLINES (default 1x1)");
  ent_cmd->add_option("--bins", ent.bins, "Histogram bins (default 64)");
  ent_cmd->add_flag("--gray", ent.gray,
                    "Write the PNG preview in grayscale instead of the "
                    "colormap");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand(
      "train", "Train a segmentation network on a simulated dataset");
  tr_cmd->add_option("manifest", tr.manifest, "Dataset manifest JSON")
      ->required();
  tr.opt_mode = tr_cmd->add_option(
      "--mode", tr.mode, "Network input: 'us' (B-mode) or 'entropy'");
  tr_cmd->add_option("--config", tr.config_path,
                     "JSON config with flat dotted keys (flags override)");
  tr_cmd->add_option("-o,--out", tr.out, "Output directory")->required();
  tr_cmd->add_option("--import-weights", tr.import_weights,
                     "Initialize the first two encoder blocks from a "
                     "weights file");
  tr_cmd->add_option("--cache-dir", tr.cache_dir,
                     "Prepared-input cache (default <manifest dir>/cache)");
  tr_cmd->add_flag("--no-cache", tr.no_cache, "Disable the prepared cache");
  tr_cmd->add_flag("--no-augment", tr.no_augment,
                   "Skip horizontal-flip training augmentation");
  tr.opt_epochs = tr_cmd->add_option("--epochs", tr.epochs, "Epoch cap")
                      ->check(CLI::PositiveNumber);
  tr.opt_seed = tr_cmd->add_option("--seed", tr.seed,
                                   "Training seed (init + shuffling)");
  tr.opt_lr = tr_cmd->add_option("--lr", tr.lr, "Initial learning rate");
  tr.opt_batch = tr_cmd->add_option("--batch", tr.batch, "Mini-batch size")
                     ->check(CLI::PositiveNumber);
  tr.opt_depth = tr_cmd->add_option("--depth", tr.depth, "Encoder levels")
                     ->check(CLI::PositiveNumber);
  tr.opt_base = tr_cmd->add_option("--base-channels", tr.base_channels,
                                   "Channels at the first level")
                    ->check(CLI::PositiveNumber);
  tr.opt_size =
      tr_cmd->add_option("--size", tr.size, "Network input dims as HxW");
  tr.opt_window = tr_cmd->add_option("--window", tr.window,
                                     "Entropy window as AXIALxLINES");
  tr.opt_stride = tr_cmd->add_option("--stride", tr.stride,
                                     "Entropy stride as AXIALxLINES");
  tr.opt_bins = tr_cmd->add_option("--bins", tr.bins, "Entropy bins");
  tr.opt_wavelengths = tr_cmd->add_option(
      "--wavelengths", tr.wavelengths, "Entropy window in wavelengths");
  tr.opt_dr = tr_cmd->add_option("--dr", tr.dr, "B-mode dynamic range, dB");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand(
      "eval", "Score a trained network on a dataset split");
  ev_cmd->add_option("--weights", ev.weights, "Weights file from training")
      ->required();
  ev_cmd->add_option("--manifest", ev.manifest, "Dataset manifest JSON")
      ->required();
  ev_cmd->add_option("--model", ev.model,
                     "Model sidecar (default model.json next to weights)");
  ev_cmd->add_option("--split", ev.split, "train|val|test|all (default test)");
  ev_cmd->add_option("-o,--out", ev.out,
                     "Output directory (default: weights directory)");
  ev_cmd->add_option("--cache-dir", ev.cache_dir,
                     "Prepared-input cache (default <manifest dir>/cache)");
  ev_cmd->add_flag("--no-cache", ev.no_cache, "Disable the prepared cache");
  ev_cmd->add_option("--tau", ev.tau, "Probability threshold (default 0.5)");
  ev_cmd->add_option("--morph-radius", ev.morph_radius,
                     "Disk radius for closing predictions (default 3)");
  ev_cmd->add_flag("--no-morph", ev.no_morph,
                   "Skip morphological closing of predictions");
  ev_cmd->add_flag("--oracle", ev.oracle,
                   "Score the ground-truth masks against themselves "
                   "(pipeline check)");
  ev_cmd->add_option("--batch", ev.batch, "Inference batch size");

  StatsArgs st;
  auto* st_cmd = app.add_subcommand(
      "stats", "Rank-sum comparison of two evaluation reports");
  st_cmd->add_option("report_a", st.report_a, "First report JSON")->required();
  st_cmd->add_option("report_b", st.report_b, "Second report JSON")
      ->required();
  st_cmd->add_option("-o,--out", st.out,
                     "Optional output directory for stats.json");
  st_cmd->add_option("--alpha", st.alpha, "Significance level (default 0.05)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ent.have_wavelengths = wl_opt->count() > 0;

  try {
    if (sim_cmd->parsed())
      run_simulate(sim);
    else if (bmode_cmd->parsed())
      run_bmode(bmode);
    else if (ent_cmd->parsed())
      run_entropy(ent);
    else if (tr_cmd->parsed())
      run_train(tr);
    else if (ev_cmd->parsed())
      run_eval(ev);
    else if (st_cmd->parsed())
      run_stats(st);
    return 0;
  } catch (const qus::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
