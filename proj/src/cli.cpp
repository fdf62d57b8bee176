#include "tpower/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tpower/attack.hpp"
#include "tpower/dataset.hpp"
#include "tpower/error.hpp"
#include "tpower/eval.hpp"
#include "tpower/io.hpp"
#include "tpower/layers.hpp"
#include "tpower/model.hpp"
#include "tpower/train.hpp"

namespace tpower {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config schema. Every command declares its keys up front; anything else in
// the document is rejected by name before the command touches the filesystem.

enum class Kind { Int, U64, Num, Str, StrList, NumList, IntList, Obj, Exp };

struct KeySpec {
  const char* name;
  Kind kind;
  bool required = false;
};

const char* kind_name(Kind kind) {
  switch (kind) {
    case Kind::Int: return "an integer";
    case Kind::U64: return "a non-negative integer";
    case Kind::Num: return "a number";
    case Kind::Str: return "a string";
    case Kind::StrList: return "a list of strings";
    case Kind::NumList: return "a list of numbers";
    case Kind::IntList: return "a list of integers";
    case Kind::Obj: return "an object";
    case Kind::Exp: return "a number or \"inf\"";
  }
  return "?";
}

bool kind_ok(const json& v, Kind kind) {
  switch (kind) {
    case Kind::Int:
      return v.is_number_integer();
    case Kind::U64:
      return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::Num:
      return v.is_number();
    case Kind::Str:
      return v.is_string();
    case Kind::StrList:
      return v.is_array() &&
             std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
    case Kind::NumList:
      return v.is_array() &&
             std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    case Kind::IntList:
      return v.is_array() && std::all_of(v.begin(), v.end(),
                                         [](const json& e) { return e.is_number_integer(); });
    case Kind::Obj:
      return v.is_object();
    case Kind::Exp:
      return v.is_number() || (v.is_string() && v.get<std::string>() == "inf");
  }
  return false;
}

void check_schema(const json& cfg, const std::string& command,
                  std::initializer_list<KeySpec> keys) {
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    if (key == "command") continue;
    const auto it = std::find_if(keys.begin(), keys.end(),
                                 [&](const KeySpec& k) { return key == k.name; });
    if (it == keys.end()) {
      throw ConfigError("unknown key '" + key + "' for command '" + command + "'");
    }
    if (!kind_ok(value, it->kind)) {
      throw ConfigError("key '" + key + "' must be " + kind_name(it->kind));
    }
  }
  for (const KeySpec& k : keys) {
    if (k.required && !cfg.contains(k.name)) {
      throw ConfigError("command '" + command + "' requires key '" + std::string(k.name) + "'");
    }
  }
}

int get_int(const json& cfg, const char* key, int def) {
  return cfg.contains(key) ? cfg[key].get<int>() : def;
}
double get_num(const json& cfg, const char* key, double def) {
  return cfg.contains(key) ? cfg[key].get<double>() : def;
}
std::uint64_t get_u64(const json& cfg, const char* key, std::uint64_t def) {
  return cfg.contains(key) ? cfg[key].get<std::uint64_t>() : def;
}
std::string get_str(const json& cfg, const char* key, std::string def) {
  return cfg.contains(key) ? cfg[key].get<std::string>() : std::move(def);
}

void check_xi(double xi) {
  if (!(xi > 0.0) || xi > 1.0) throw ConfigError("xi must be in (0, 1]");
}

// ---------------------------------------------------------------------------
// Artifact plumbing. No timestamps anywhere: re-running a config must produce
// byte-identical files.

fs::path ensure_out_dir(const std::string& out_dir) {
  const fs::path p = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) {
    throw IoError("cannot create output directory '" + p.string() + "'");
  }
  return p;
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

// Writes the report and echoes it so batch logs carry the numbers.
void emit_report(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

const LabeledDataset& pick_split(const StoredDataset& sd, const std::string& name) {
  if (name == "train") return sd.data.train;
  if (name == "val") return sd.data.val;
  if (name == "test") return sd.data.test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::vector<Tensor> fit_batch(const StoredDataset& sd, int fit_count) {
  if (fit_count < 1) throw ConfigError("fit_count must be >= 1");
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(fit_count),
                                              sd.data.train.size());
  if (n == 0) throw EmptyDataError("dataset has no training samples to fit on");
  return {sd.data.train.samples.begin(),
          sd.data.train.samples.begin() + static_cast<std::ptrdiff_t>(n)};
}

json report_to_json(const EvalReport& r) {
  json j;
  j["fooling_rate"] = r.fooling_rate;
  j["attack_success_rate"] = r.attack_success_rate;
  j["damaged_pixel_fraction"] = r.damaged_pixel_fraction;
  j["clean_accuracy"] = r.clean_accuracy;
  j["attacked_accuracy"] = r.attacked_accuracy;
  j["n_samples"] = r.n_samples;
  j["config_hash"] = r.config_hash;
  return j;
}

// ---------------------------------------------------------------------------
// Commands.

void cmd_gen_data(const json& cfg, const std::string& out_dir) {
  check_schema(cfg, "gen-data",
               {{"num_classes", Kind::Int, true},
                {"height", Kind::Int, true},
                {"width", Kind::Int, true},
                {"channels", Kind::Int, true},
                {"samples_per_class", Kind::Int, true},
                {"seed", Kind::U64},
                {"train_count", Kind::Int},
                {"val_fraction", Kind::Num}});
  const std::uint64_t seed = get_u64(cfg, "seed", 0);
  const int num_classes = cfg["num_classes"].get<int>();
  const LabeledDataset all =
      generate_synthetic(num_classes, cfg["height"].get<int>(), cfg["width"].get<int>(),
                         cfg["channels"].get<int>(), cfg["samples_per_class"].get<int>(), seed);
  const int train_count = get_int(cfg, "train_count", 256);
  if (train_count < 1) throw ConfigError("train_count must be >= 1");
  // Offset split seed so the split shuffle never reuses the image noise stream.
  const Dataset split = split_dataset(all, static_cast<std::size_t>(train_count),
                                      get_num(cfg, "val_fraction", 0.10), seed + 1);
  const fs::path out = ensure_out_dir(out_dir);
  write_dataset((out / "dataset").string(), split, num_classes);
  json summary;
  summary["dataset"] = (out / "dataset").string();
  summary["num_classes"] = num_classes;
  summary["train_samples"] = split.train.size();
  summary["val_samples"] = split.val.size();
  summary["test_samples"] = split.test.size();
  std::cout << summary.dump(2) << "\n";
}

void cmd_train(const json& cfg, const std::string& out_dir) {
  check_schema(cfg, "train",
               {{"dataset", Kind::Str, true},
                {"arch", Kind::Str},
                {"epochs", Kind::Int},
                {"lr", Kind::Num},
                {"batch_size", Kind::Int},
                {"seed", Kind::U64}});
  const std::string arch = get_str(cfg, "arch", "convnet");
  TrainOptions opts;
  opts.epochs = get_int(cfg, "epochs", opts.epochs);
  opts.lr = get_num(cfg, "lr", opts.lr);
  opts.batch_size = get_int(cfg, "batch_size", opts.batch_size);
  opts.seed = get_u64(cfg, "seed", opts.seed);

  const StoredDataset sd = read_dataset(cfg["dataset"].get<std::string>());
  if (sd.data.train.size() == 0) throw EmptyDataError("dataset has no training samples");
  const Model model = build_arch(arch, sd.data.train.samples[0].shape, sd.num_classes, opts.seed);
  const TrainResult res = train_sgd(model, sd.data.train, opts);

  const fs::path out = ensure_out_dir(out_dir);
  write_model((out / "model.bin").string(), res.model);
  json report;
  report["arch"] = arch;
  report["epochs"] = opts.epochs;
  report["lr"] = opts.lr;
  report["batch_size"] = opts.batch_size;
  report["seed"] = opts.seed;
  report["train_loss"] = res.train_loss;
  report["train_accuracy"] = res.train_accuracy;
  if (sd.data.val.size() > 0) {
    report["val_accuracy"] = model_accuracy(res.model, sd.data.val);
  } else {
    report["val_accuracy"] = nullptr;
  }
  emit_report(out / "train_report.json", report);
}

void cmd_attack(const json& cfg, const std::string& out_dir) {
  check_schema(cfg, "attack",
               {{"model", Kind::Str, true},
                {"dataset", Kind::Str, true},
                {"attack", Kind::Obj, true},
                {"mode", Kind::Str},
                {"fit_count", Kind::Int},
                {"xi", Kind::Num},
                {"model_id", Kind::Str},
                {"sgd_lr", Kind::Num}});
  const AttackConfig acfg = config_from_json(cfg["attack"]);
  const std::string mode = get_str(cfg, "mode", "tpower");
  if (mode != "tpower" && mode != "sv" && mode != "sgd") {
    throw ConfigError("unknown mode '" + mode + "' (expected tpower, sv or sgd)");
  }
  const double xi = get_num(cfg, "xi", acfg.magnitude);
  check_xi(xi);

  const std::string model_path = cfg["model"].get<std::string>();
  const Model model = read_model(model_path);
  const StoredDataset sd = read_dataset(cfg["dataset"].get<std::string>());
  const std::vector<Tensor> batch = fit_batch(sd, get_int(cfg, "fit_count", 256));
  const std::string model_id = get_str(cfg, "model_id", model_path);

  Perturbation pert;
  if (mode == "tpower") {
    pert = tpower_attack(model, batch, acfg, model_id);
  } else if (mode == "sv") {
    pert = sv_attack(model, batch, acfg.layer, acfg.q, acfg.p, acfg.n_steps, acfg.seed, model_id);
  } else {
    pert = sgd_layer_max_attack(model, batch, acfg.layer, acfg.q, acfg.p, acfg.magnitude,
                                acfg.n_steps, get_num(cfg, "sgd_lr", 0.01), acfg.seed, model_id);
  }

  const fs::path out = ensure_out_dir(out_dir);
  write_perturbation((out / "perturbation.bin").string(), pert);
  write_text_file(out / "objective_trace.json", json(pert.objective_trace).dump(2) + "\n");

  json report = report_to_json(evaluate(model, sd.data.val, pert, xi));
  report["mode"] = mode;
  report["split"] = "val";
  report["xi"] = xi;
  report["model_id"] = model_id;
  emit_report(out / "attack_report.json", report);
}

void cmd_eval(const json& cfg, const std::string& out_dir, bool debug_dump) {
  check_schema(cfg, "eval",
               {{"model", Kind::Str, true},
                {"dataset", Kind::Str, true},
                {"perturbation", Kind::Str, true},
                {"split", Kind::Str},
                {"xi", Kind::Num}});
  const std::string split = get_str(cfg, "split", "test");

  const Model model = read_model(cfg["model"].get<std::string>());
  const StoredDataset sd = read_dataset(cfg["dataset"].get<std::string>());
  const Perturbation pert = read_perturbation(cfg["perturbation"].get<std::string>());
  const double xi = get_num(cfg, "xi", pert.config.magnitude);
  check_xi(xi);
  const LabeledDataset& data = pick_split(sd, split);

  json report = report_to_json(evaluate(model, data, pert, xi));
  report["split"] = split;
  report["xi"] = xi;
  const fs::path out = ensure_out_dir(out_dir);
  emit_report(out / "eval_report.json", report);

  if (debug_dump) {
    json dump;
    dump["labels"] = data.labels;
    std::vector<int> clean, attacked;
    clean.reserve(data.size());
    attacked.reserve(data.size());
    for (const Tensor& x : data.samples) {
      clean.push_back(model.predict(x));
      attacked.push_back(model.predict(apply_perturbation(x, pert, xi)));
    }
    dump["clean"] = clean;
    dump["attacked"] = attacked;
    write_text_file(out / "predictions.json", dump.dump(2) + "\n");
  }
}

void cmd_transfer(const json& cfg, const std::string& out_dir) {
  check_schema(cfg, "transfer",
               {{"models", Kind::StrList, true},
                {"perturbations", Kind::StrList, true},
                {"model_ids", Kind::StrList},
                {"dataset", Kind::Str, true},
                {"split", Kind::Str},
                {"xi", Kind::Num}});
  const std::vector<std::string> model_paths = cfg["models"].get<std::vector<std::string>>();
  const std::vector<std::string> pert_paths =
      cfg["perturbations"].get<std::vector<std::string>>();
  std::vector<std::string> ids = cfg.contains("model_ids")
                                     ? cfg["model_ids"].get<std::vector<std::string>>()
                                     : model_paths;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      if (ids[i] == ids[j]) throw ConfigError("duplicate model id '" + ids[i] + "'");
    }
  }
  const std::string split = get_str(cfg, "split", "test");
  const double xi = get_num(cfg, "xi", 1.0);
  check_xi(xi);

  std::vector<Model> models;
  models.reserve(model_paths.size());
  for (const std::string& p : model_paths) models.push_back(read_model(p));
  std::vector<Perturbation> perts;
  perts.reserve(pert_paths.size());
  for (const std::string& p : pert_paths) perts.push_back(read_perturbation(p));
  const StoredDataset sd = read_dataset(cfg["dataset"].get<std::string>());

  const TransferMatrix tm = transfer_matrix(perts, models, ids, pick_split(sd, split).samples, xi);

  json rates = json::object();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    json row = json::object();
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (i == j) continue;
      row[ids[j]] = tm.rates[i][j];
    }
    rates[ids[i]] = std::move(row);
  }
  json report;
  report["split"] = split;
  report["xi"] = xi;
  report["model_ids"] = ids;
  report["rates"] = std::move(rates);
  const fs::path out = ensure_out_dir(out_dir);
  emit_report(out / "transfer_matrix.json", report);
}

void cmd_gridsearch(const json& cfg, const std::string& out_dir, bool debug_dump) {
  check_schema(cfg, "gridsearch",
               {{"model", Kind::Str, true},
                {"dataset", Kind::Str, true},
                {"layers", Kind::StrList, true},
                {"qs", Kind::NumList, true},
                {"patch_sizes", Kind::IntList, true},
                {"p", Kind::Exp},
                {"damage_budget", Kind::Num},
                {"n_steps", Kind::Int},
                {"reduction_steps", Kind::Int},
                {"init_truncation", Kind::Num},
                {"seed", Kind::U64},
                {"xi", Kind::Num},
                {"fit_count", Kind::Int},
                {"jobs", Kind::Int}});
  GridSpec spec;
  spec.layers = cfg["layers"].get<std::vector<std::string>>();
  spec.qs = cfg["qs"].get<std::vector<double>>();
  spec.patch_sizes = cfg["patch_sizes"].get<std::vector<int>>();
  if (cfg.contains("p")) spec.p = exponent_from_json(cfg["p"], "p");
  spec.damage_budget = get_num(cfg, "damage_budget", spec.damage_budget);
  spec.n_steps = get_int(cfg, "n_steps", spec.n_steps);
  spec.reduction_steps = get_int(cfg, "reduction_steps", spec.reduction_steps);
  spec.init_truncation = get_num(cfg, "init_truncation", spec.init_truncation);
  spec.seed = get_u64(cfg, "seed", spec.seed);
  spec.xi = get_num(cfg, "xi", spec.xi);
  check_xi(spec.xi);
  const int jobs = get_int(cfg, "jobs", 0);
  if (jobs < 0) throw ConfigError("jobs must be >= 0 (0 = auto)");

  const Model model = read_model(cfg["model"].get<std::string>());
  const StoredDataset sd = read_dataset(cfg["dataset"].get<std::string>());
  const std::vector<Tensor> batch = fit_batch(sd, get_int(cfg, "fit_count", 256));
  const std::vector<Tensor>& val = sd.data.val.samples;
  const fs::path out = ensure_out_dir(out_dir);

  // Points are independent jobs: each writes only its own slot, and the
  // merge below runs after every worker has joined. Results are identical
  // to the sequential library sweep because each point's attack is
  // deterministic in its config alone.
  const std::vector<AttackConfig> configs = grid_configs(model, spec);
  const std::size_t n_points = configs.size();
  std::vector<GridPointReport> points(n_points);
  std::vector<Perturbation> perts(n_points);
  std::vector<std::exception_ptr> failures(n_points);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_points) return;
      try {
        Perturbation pert = tpower_attack(model, batch, configs[i]);
        GridPointReport point;
        point.layer = configs[i].layer;
        point.q = configs[i].q.value();
        point.patch_size = configs[i].patch_size;
        point.top_k = configs[i].top_k;
        point.val_fr = fooling_rate(model, val, pert, spec.xi);
        points[i] = std::move(point);
        perts[i] = std::move(pert);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_jobs =
      std::min<std::size_t>(jobs > 0 ? static_cast<std::size_t>(jobs) : hw, n_points);
  std::vector<std::thread> pool;
  pool.reserve(n_jobs);
  for (std::size_t t = 0; t < n_jobs; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : failures) {
    if (e) std::rethrow_exception(e);
  }

  // Merge step: one CSV row per point in grid order, winner by the library
  // ordering, test fooling rate computed once for the winner only.
  std::string csv = "layer,q,patch_size,top_k,val_fr\n";
  for (const GridPointReport& pt : points) {
    char row[192];
    std::snprintf(row, sizeof(row), "%s,%.17g,%d,%d,%.17g\n", pt.layer.c_str(), pt.q,
                  pt.patch_size, pt.top_k, pt.val_fr);
    csv += row;
  }
  write_text_file(out / "grid_results.csv", csv);

  const std::size_t best = select_grid_winner(model, points);
  const double test_fr = fooling_rate(model, sd.data.test.samples, perts[best], spec.xi);
  write_perturbation((out / "grid_winner.bin").string(), perts[best]);
  if (debug_dump) {
    const fs::path dir = out / "grid_points";
    fs::create_directories(dir);
    for (std::size_t i = 0; i < n_points; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "point_%03zu.bin", i);
      write_perturbation((dir / name).string(), perts[i]);
    }
  }

  json report;
  report["index"] = best;
  report["layer"] = points[best].layer;
  report["q"] = points[best].q;
  report["patch_size"] = points[best].patch_size;
  report["top_k"] = points[best].top_k;
  report["val_fr"] = points[best].val_fr;
  report["test_fr"] = test_fr;
  report["xi"] = spec.xi;
  report["points"] = n_points;
  emit_report(out / "grid_winner.json", report);
}

void cmd_defend(const json& cfg, const std::string& out_dir) {
  check_schema(cfg, "defend",
               {{"model", Kind::Str, true},
                {"dataset", Kind::Str, true},
                {"perturbation", Kind::Str, true},
                {"windows", Kind::IntList, true},
                {"split", Kind::Str},
                {"xi", Kind::Num}});
  const std::vector<int> windows = cfg["windows"].get<std::vector<int>>();
  if (windows.empty()) throw ConfigError("window list is empty");
  const std::string split = get_str(cfg, "split", "test");

  const Model model = read_model(cfg["model"].get<std::string>());
  const StoredDataset sd = read_dataset(cfg["dataset"].get<std::string>());
  const Perturbation pert = read_perturbation(cfg["perturbation"].get<std::string>());
  const double xi = get_num(cfg, "xi", pert.config.magnitude);
  check_xi(xi);
  const LabeledDataset& data = pick_split(sd, split);
  if (data.size() == 0) throw EmptyDataError("split '" + split + "' is empty");

  json report;
  report["split"] = split;
  report["xi"] = xi;
  report["unfiltered_fooling_rate"] = fooling_rate(model, data.samples, pert, xi);
  report["unfiltered_clean_accuracy"] = model_accuracy(model, data);
  json rows = json::array();
  for (int w : windows) {
    std::size_t flipped = 0, correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Tensor& x = data.samples[i];
      const int clean_pred = model.predict(x);
      const Tensor attacked = apply_perturbation(x, pert, xi);
      if (model.predict(median_filter(attacked, w)) != clean_pred) ++flipped;
      if (model.predict(median_filter(x, w)) == data.labels[i]) ++correct;
    }
    json row;
    row["window"] = w;
    row["fooling_rate"] = static_cast<double>(flipped) / static_cast<double>(data.size());
    row["clean_accuracy"] = static_cast<double>(correct) / static_cast<double>(data.size());
    rows.push_back(std::move(row));
  }
  report["filtered"] = std::move(rows);
  const fs::path out = ensure_out_dir(out_dir);
  emit_report(out / "defense_report.json", report);
}

void cmd_export_ppm(const json& cfg, const std::string& out_dir) {
  check_schema(cfg, "export-ppm",
               {{"input", Kind::Str, true},
                {"scale", Kind::Str, true},
                {"output", Kind::Str}});
  const std::string scale_name = cfg["scale"].get<std::string>();
  if (scale_name != "unit" && scale_name != "signed") {
    throw ConfigError("scale must be 'unit' (images) or 'signed' (perturbations)");
  }
  const std::string input = cfg["input"].get<std::string>();

  // A raw TensorFile starts with the tensor magic; anything else is treated
  // as a perturbation file and its eps tensor is exported.
  char magic[5] = {};
  {
    std::ifstream f(input, std::ios::binary);
    if (!f) throw IoError("cannot open '" + input + "'");
    f.read(magic, 5);
  }
  const Tensor t = std::string_view(magic, 5) == std::string_view("TNSR1", 5)
                       ? read_tensor(input)
                       : read_perturbation(input).eps;
  if (t.shape.size() != 3) {
    throw FormatError("export needs a rank-3 HWC tensor, got " + shape_str(t.shape));
  }

  std::string name = get_str(cfg, "output", "");
  if (name.empty()) name = t.shape[2] == 1 ? "export.pgm" : "export.ppm";
  const fs::path out = ensure_out_dir(out_dir);
  write_pnm((out / name).string(), t,
            scale_name == "unit" ? PixelScale::Unit : PixelScale::Signed);
  json summary;
  summary["output"] = (out / name).string();
  summary["height"] = t.shape[0];
  summary["width"] = t.shape[1];
  summary["channels"] = t.shape[2];
  std::cout << summary.dump(2) << "\n";
}

}  // namespace

Model build_arch(const std::string& arch, const Shape& input_shape, int num_classes,
                 std::uint64_t seed) {
  if (input_shape.size() != 3) {
    throw ShapeError("architectures expect HWC image inputs, got " + shape_str(input_shape));
  }
  const int c = input_shape[2];
  std::vector<Layer> layers;
  if (arch == "convnet") {
    layers.emplace_back(make_conv(c, 8, 3, 1, 1));
    layers.emplace_back(ReLU{});
    layers.emplace_back(MaxPool{2});
    layers.emplace_back(make_conv(8, 16, 3, 1, 1));
    layers.emplace_back(ReLU{});
    layers.emplace_back(MaxPool{2});
    layers.emplace_back(Flatten{});
  } else if (arch == "mlp") {
    layers.emplace_back(Flatten{});
  } else {
    throw ConfigError("unknown arch '" + arch + "' (expected convnet or mlp)");
  }
  Shape s = input_shape;
  for (const Layer& l : layers) s = layer_out_shape(l, s);
  if (arch == "mlp") {
    layers.emplace_back(make_dense(static_cast<int>(shape_numel(s)), 32));
    layers.emplace_back(ReLU{});
    layers.emplace_back(make_dense(32, num_classes));
  } else {
    layers.emplace_back(make_dense(static_cast<int>(shape_numel(s)), num_classes));
  }
  Model model(input_shape, std::move(layers), num_classes);
  init_he_uniform(model, seed);
  return model;
}

void run_config(const json& config, const std::string& out_dir, bool debug_dump) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  if (!config.contains("command")) throw ConfigError("config needs a 'command' key");
  if (!config["command"].is_string()) throw ConfigError("'command' must be a string");
  const std::string cmd = config["command"].get<std::string>();
  try {
    if (cmd == "gen-data") {
      cmd_gen_data(config, out_dir);
    } else if (cmd == "train") {
      cmd_train(config, out_dir);
    } else if (cmd == "attack") {
      cmd_attack(config, out_dir);
    } else if (cmd == "eval") {
      cmd_eval(config, out_dir, debug_dump);
    } else if (cmd == "transfer") {
      cmd_transfer(config, out_dir);
    } else if (cmd == "gridsearch") {
      cmd_gridsearch(config, out_dir, debug_dump);
    } else if (cmd == "defend") {
      cmd_defend(config, out_dir);
    } else if (cmd == "export-ppm") {
      cmd_export_ppm(config, out_dir);
    } else {
      throw ConfigError("unknown command '" + cmd + "'");
    }
  } catch (const json::exception& e) {
    // Schema checks make stray type errors unlikely; anything left is still
    // a config problem, not a domain failure.
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Sparse universal adversarial perturbations via truncated power iteration"};
  std::string command, config_path;
  std::string out_dir = ".";
  bool debug_dump = false;
  app.add_option("command", command,
                 "one of: gen-data, train, attack, eval, transfer, gridsearch, defend, "
                 "export-ppm")
      ->required();
  app.add_option("--config", config_path, "JSON experiment config")->required();
  app.add_option("--out", out_dir, "output directory (default: current)");
  app.add_flag("--debug-dump", debug_dump, "write auxiliary debug artifacts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    std::ifstream f(config_path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config '" + config_path + "'");
    json config;
    try {
      config = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (config.is_object() && config.contains("command") && config["command"].is_string() &&
        config["command"].get<std::string>() != command) {
      throw ConfigError("config command '" + config["command"].get<std::string>() +
                        "' does not match CLI command '" + command + "'");
    }
    run_config(config, out_dir, debug_dump);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace tpower
