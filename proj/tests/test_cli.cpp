#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpower/attack.hpp"
#include "tpower/cli.hpp"
#include "tpower/error.hpp"
#include "tpower/eval.hpp"
#include "tpower/io.hpp"
#include "tpower/train.hpp"

using namespace tpower;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir() {
  static const fs::path dir = [] {
    const fs::path p = fs::temp_directory_path() / "tpower_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json slurp_json(const fs::path& path) { return json::parse(slurp(path)); }

bool same_bytes(const fs::path& a, const fs::path& b) { return slurp(a) == slurp(b); }

// Dataset + trained model reused by the read-only command tests.
struct Workspace {
  fs::path root;
  std::string dataset;
  std::string model;
  json train_report;
};

json base_gen_config() {
  return {{"command", "gen-data"}, {"num_classes", 3},       {"height", 10},
          {"width", 10},           {"channels", 1},          {"samples_per_class", 14},
          {"seed", 5},             {"train_count", 24},      {"val_fraction", 0.4}};
}

const Workspace& shared_ws() {
  static const Workspace ws = [] {
    Workspace w;
    w.root = scratch_dir() / "ws";
    run_config(base_gen_config(), w.root.string(), false);
    w.dataset = (w.root / "dataset").string();
    const json train_cfg = {{"command", "train"}, {"dataset", w.dataset}, {"arch", "mlp"},
                            {"epochs", 15},       {"lr", 0.1},            {"batch_size", 8},
                            {"seed", 2}};
    run_config(train_cfg, w.root.string(), false);
    w.model = (w.root / "model.bin").string();
    w.train_report = slurp_json(w.root / "train_report.json");
    return w;
  }();
  return ws;
}

json base_attack_config(const Workspace& w) {
  return {{"command", "attack"},
          {"model", w.model},
          {"dataset", w.dataset},
          {"mode", "tpower"},
          {"fit_count", 24},
          {"xi", 1.0},
          {"model_id", "m"},
          {"attack",
           {{"layer", "dense1"},
            {"q", 2.0},
            {"p", "inf"},
            {"n_steps", 30},
            {"reduction_steps", 3},
            {"top_k", 5},
            {"patch_size", 1},
            {"seed", 4}}}};
}

// Zero perturbation files cannot come out of the attack (renormalization
// forbids a zero iterate), so the defenseless-baseline tests write one
// directly.
std::string write_zero_pert(const fs::path& path, int h, int w, int c) {
  Perturbation z;
  z.eps = Tensor::zeros({h, w, c});
  z.pattern = SparsityPattern::grid(h, w, c, 1);
  z.source_model_id = "zero";
  write_perturbation(path.string(), z);
  return path.string();
}

struct CsvRow {
  std::string layer;
  double q = 0.0;
  int patch_size = 0;
  int top_k = 0;
  double val_fr = 0.0;
};

std::vector<CsvRow> parse_grid_csv(const fs::path& path) {
  std::ifstream f(path);
  REQUIRE(f.good());
  std::string line;
  REQUIRE(std::getline(f, line));
  REQUIRE(line == "layer,q,patch_size,top_k,val_fr");
  std::vector<CsvRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    REQUIRE(fields.size() == 5);
    CsvRow row;
    row.layer = fields[0];
    row.q = std::stod(fields[1]);
    row.patch_size = std::stoi(fields[2]);
    row.top_k = std::stoi(fields[3]);
    row.val_fr = std::stod(fields[4]);
    rows.push_back(std::move(row));
  }
  return rows;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TPOWER_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("gen-data writes a reproducible dataset") {
  json cfg = {{"command", "gen-data"}, {"num_classes", 2}, {"height", 8},
              {"width", 8},            {"channels", 1},    {"samples_per_class", 4},
              {"seed", 21},            {"train_count", 4}, {"val_fraction", 0.34}};
  const fs::path out1 = scratch_dir() / "gen1";
  const fs::path out2 = scratch_dir() / "gen2";
  run_config(cfg, out1.string(), false);
  run_config(cfg, out2.string(), false);

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(out1 / "dataset")) {
    names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  const auto tnsr = std::count_if(names.begin(), names.end(), [](const std::string& n) {
    return n.size() > 5 && n.substr(n.size() - 5) == ".tnsr";
  });
  CHECK(tnsr == 8);  // 2 classes x 4 samples, split but never dropped
  CHECK(std::find(names.begin(), names.end(), "manifest.json") != names.end());
  for (const std::string& n : names) {
    CHECK(same_bytes(out1 / "dataset" / n, out2 / "dataset" / n));
  }

  const StoredDataset sd = read_dataset((out1 / "dataset").string());
  CHECK(sd.num_classes == 2);
  CHECK(sd.data.train.size() + sd.data.val.size() + sd.data.test.size() == 8);
  for (const Tensor& t : sd.data.train.samples) {
    for (double v : t.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("config schema rejections name the offender") {
  json cfg = base_gen_config();
  cfg["samples_per_claas"] = 4;
  try {
    run_config(cfg, (scratch_dir() / "never").string(), false);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("samples_per_claas") != std::string::npos);
  }

  json missing = base_gen_config();
  missing.erase("height");
  try {
    run_config(missing, (scratch_dir() / "never").string(), false);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }

  json bad_type = base_gen_config();
  bad_type["height"] = "eight";
  CHECK_THROWS_AS(run_config(bad_type, (scratch_dir() / "never").string(), false), ConfigError);

  json zero = base_gen_config();
  zero["samples_per_class"] = 0;
  CHECK_THROWS_AS(run_config(zero, (scratch_dir() / "never").string(), false), EmptyDataError);

  CHECK_THROWS_AS(run_config(json{{"command", "mystery"}}, ".", false), ConfigError);
  CHECK_THROWS_AS(run_config(json::array(), ".", false), ConfigError);
  CHECK_THROWS_AS(run_config(json{{"dataset", "x"}}, ".", false), ConfigError);
}

TEST_CASE("train is deterministic and its accuracy survives a recount") {
  const Workspace& ws = shared_ws();
  const json train_cfg = {{"command", "train"}, {"dataset", ws.dataset}, {"arch", "mlp"},
                          {"epochs", 15},       {"lr", 0.1},             {"batch_size", 8},
                          {"seed", 2}};
  const fs::path redo = scratch_dir() / "train_redo";
  run_config(train_cfg, redo.string(), false);
  CHECK(same_bytes(ws.root / "model.bin", redo / "model.bin"));
  CHECK(same_bytes(ws.root / "train_report.json", redo / "train_report.json"));

  // The reported train accuracy must match an eval-command recount on the
  // same split (zero perturbation leaves clean accuracy untouched).
  const StoredDataset sd = read_dataset(ws.dataset);
  const Shape& in = sd.data.train.samples[0].shape;
  const std::string zero =
      write_zero_pert(scratch_dir() / "zero_train.bin", in[0], in[1], in[2]);
  const json eval_cfg = {{"command", "eval"},        {"model", ws.model},
                         {"dataset", ws.dataset},    {"perturbation", zero},
                         {"split", "train"},         {"xi", 1.0}};
  const fs::path out = scratch_dir() / "train_recount";
  run_config(eval_cfg, out.string(), false);
  const json rep = slurp_json(out / "eval_report.json");
  CHECK(rep["clean_accuracy"].get<double>() ==
        ws.train_report["train_accuracy"].get<double>());

  const Model m = read_model(ws.model);
  CHECK(ws.train_report["val_accuracy"].get<double>() == model_accuracy(m, sd.data.val));
}

TEST_CASE("attack: sv mode equals tpower at full cardinality, files and all") {
  const Workspace& ws = shared_ws();
  json tp = base_attack_config(ws);
  tp["attack"]["top_k"] = 100;  // every pixel of the 10x10 input
  tp["attack"]["init_truncation"] = 1.0;
  const fs::path out_tp = scratch_dir() / "atk_tp";
  run_config(tp, out_tp.string(), false);

  json sv = tp;
  sv["mode"] = "sv";
  const fs::path out_sv = scratch_dir() / "atk_sv";
  run_config(sv, out_sv.string(), false);

  CHECK(same_bytes(out_tp / "perturbation.bin", out_sv / "perturbation.bin"));
  CHECK(same_bytes(out_tp / "objective_trace.json", out_sv / "objective_trace.json"));

  // Reports agree on every metric; only the mode tag may differ.
  json rep_tp = slurp_json(out_tp / "attack_report.json");
  json rep_sv = slurp_json(out_sv / "attack_report.json");
  CHECK(rep_tp["mode"] == "tpower");
  CHECK(rep_sv["mode"] == "sv");
  rep_tp.erase("mode");
  rep_sv.erase("mode");
  CHECK(rep_tp == rep_sv);
}

TEST_CASE("attack artifacts respect the sparsity budget") {
  const Workspace& ws = shared_ws();
  json cfg = base_attack_config(ws);
  cfg["attack"]["top_k"] = 3;
  cfg["attack"]["patch_size"] = 2;  // 25 blocks of 4 pixels on 10x10
  const fs::path out = scratch_dir() / "atk_budget";
  run_config(cfg, out.string(), false);

  const Perturbation pert = read_perturbation((out / "perturbation.bin").string());
  CHECK(pert.support.size() <= 3);
  CHECK(pert.source_model_id == "m");
  const json rep = slurp_json(out / "attack_report.json");
  CHECK(rep["damaged_pixel_fraction"].get<double>() <= 3.0 * 4.0 / 100.0 + 1e-12);
  CHECK(rep["config_hash"].get<std::string>() == config_hash(pert.config));
  CHECK(rep["n_samples"].get<int>() > 0);

  // The trace artifact is the attack's objective history (the perturbation
  // file itself deliberately omits it). One entry per constrained iterate.
  const json trace = slurp_json(out / "objective_trace.json");
  REQUIRE(trace.is_array());
  CHECK(trace.size() >= 30);
  for (const json& v : trace) CHECK(v.get<double>() > 0.0);

  // Re-running the identical config reproduces every artifact byte.
  const fs::path redo = scratch_dir() / "atk_budget_redo";
  run_config(cfg, redo.string(), false);
  CHECK(same_bytes(out / "perturbation.bin", redo / "perturbation.bin"));
  CHECK(same_bytes(out / "attack_report.json", redo / "attack_report.json"));
}

TEST_CASE("eval: zero perturbation scores zero, dumps support a recount") {
  const Workspace& ws = shared_ws();
  const std::string zero = write_zero_pert(scratch_dir() / "zero_eval.bin", 10, 10, 1);
  const json zcfg = {{"command", "eval"},     {"model", ws.model},
                     {"dataset", ws.dataset}, {"perturbation", zero},
                     {"split", "test"},       {"xi", 1.0}};
  const fs::path zout = scratch_dir() / "eval_zero";
  run_config(zcfg, zout.string(), false);
  const json zrep = slurp_json(zout / "eval_report.json");
  CHECK(zrep["fooling_rate"].get<double>() == 0.0);
  CHECK(zrep["attack_success_rate"].get<double>() == 0.0);
  CHECK(zrep["damaged_pixel_fraction"].get<double>() == 0.0);
  CHECK(zrep["clean_accuracy"].get<double>() == zrep["attacked_accuracy"].get<double>());

  // Real attack, then recount the fooling rate from the prediction dump.
  json acfg = base_attack_config(ws);
  const fs::path aout = scratch_dir() / "eval_atk";
  run_config(acfg, aout.string(), false);
  const json ecfg = {{"command", "eval"},
                     {"model", ws.model},
                     {"dataset", ws.dataset},
                     {"perturbation", (aout / "perturbation.bin").string()},
                     {"split", "test"},
                     {"xi", 1.0}};
  const fs::path eout = scratch_dir() / "eval_dump";
  run_config(ecfg, eout.string(), true);
  const json rep = slurp_json(eout / "eval_report.json");
  const json dump = slurp_json(eout / "predictions.json");
  const auto labels = dump["labels"].get<std::vector<int>>();
  const auto clean = dump["clean"].get<std::vector<int>>();
  const auto attacked = dump["attacked"].get<std::vector<int>>();
  REQUIRE(labels.size() == clean.size());
  REQUIRE(labels.size() == attacked.size());
  REQUIRE(static_cast<int>(labels.size()) == rep["n_samples"].get<int>());
  const double n = static_cast<double>(labels.size());
  std::size_t flips = 0, clean_ok = 0, att_ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    flips += clean[i] != attacked[i];
    clean_ok += clean[i] == labels[i];
    att_ok += attacked[i] == labels[i];
  }
  CHECK(rep["fooling_rate"].get<double>() == static_cast<double>(flips) / n);
  CHECK(rep["clean_accuracy"].get<double>() == static_cast<double>(clean_ok) / n);
  CHECK(rep["attacked_accuracy"].get<double>() == static_cast<double>(att_ok) / n);

  const json bad_split = {{"command", "eval"},     {"model", ws.model},
                          {"dataset", ws.dataset}, {"perturbation", zero},
                          {"split", "holdout"}};
  CHECK_THROWS_AS(run_config(bad_split, (scratch_dir() / "never").string(), false),
                  ConfigError);
}

TEST_CASE("transfer agrees with standalone eval and names channel mismatches") {
  const Workspace& ws = shared_ws();
  const fs::path root = scratch_dir() / "transfer";

  const json train_b = {{"command", "train"}, {"dataset", ws.dataset}, {"arch", "mlp"},
                        {"epochs", 15},       {"lr", 0.1},             {"batch_size", 8},
                        {"seed", 9}};
  run_config(train_b, (root / "mb").string(), false);
  const std::string model_b = (root / "mb" / "model.bin").string();

  json atk_a = base_attack_config(ws);
  run_config(atk_a, (root / "pa").string(), false);
  json atk_b = base_attack_config(ws);
  atk_b["model"] = model_b;
  atk_b["model_id"] = "mb";
  run_config(atk_b, (root / "pb").string(), false);
  const std::string pert_a = (root / "pa" / "perturbation.bin").string();
  const std::string pert_b = (root / "pb" / "perturbation.bin").string();

  const json tcfg = {{"command", "transfer"},
                     {"models", {ws.model, model_b}},
                     {"perturbations", {pert_a, pert_b}},
                     {"model_ids", {"ma", "mb"}},
                     {"dataset", ws.dataset},
                     {"split", "test"},
                     {"xi", 1.0}};
  run_config(tcfg, (root / "out").string(), false);
  const json rep = slurp_json(root / "out" / "transfer_matrix.json");
  CHECK(rep["rates"]["ma"].size() == 1);
  CHECK_FALSE(rep["rates"]["ma"].contains("ma"));

  // Cross-model entry must equal the standalone eval of that (model, pert).
  const json cross = {{"command", "eval"},     {"model", model_b},
                      {"dataset", ws.dataset}, {"perturbation", pert_a},
                      {"split", "test"},       {"xi", 1.0}};
  run_config(cross, (root / "cross").string(), false);
  const json cross_rep = slurp_json(root / "cross" / "eval_report.json");
  CHECK(rep["rates"]["ma"]["mb"].get<double>() ==
        cross_rep["fooling_rate"].get<double>());

  // Zero perturbations transfer to exactly nothing.
  const std::string za = write_zero_pert(root / "za.bin", 10, 10, 1);
  const std::string zb = write_zero_pert(root / "zb.bin", 10, 10, 1);
  json zcfg = tcfg;
  zcfg["perturbations"] = {za, zb};
  run_config(zcfg, (root / "zout").string(), false);
  const json zrep = slurp_json(root / "zout" / "transfer_matrix.json");
  CHECK(zrep["rates"]["ma"]["mb"].get<double>() == 0.0);
  CHECK(zrep["rates"]["mb"]["ma"].get<double>() == 0.0);

  // Channel mismatch is reported with both parties named.
  const std::string wide = write_zero_pert(root / "wide.bin", 10, 10, 3);
  json mismatch = tcfg;
  mismatch["perturbations"] = {wide, pert_b};
  try {
    run_config(mismatch, (root / "never").string(), false);
    FAIL("expected ChannelMismatchError");
  } catch (const ChannelMismatchError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("ma") != std::string::npos);
    CHECK(msg.find("mb") != std::string::npos);
  }

  json dup = tcfg;
  dup["model_ids"] = {"same", "same"};
  CHECK_THROWS_AS(run_config(dup, (root / "never").string(), false), ConfigError);
}

TEST_CASE("gridsearch emits one row per point and a max winner") {
  const Workspace& ws = shared_ws();
  json cfg = {{"command", "gridsearch"},
              {"model", ws.model},
              {"dataset", ws.dataset},
              {"layers", {"dense1", "dense3"}},
              {"qs", {1.0, 2.0}},
              {"patch_sizes", {1, 2}},
              {"p", "inf"},
              {"damage_budget", 0.08},
              {"n_steps", 24},
              {"reduction_steps", 4},
              {"seed", 6},
              {"fit_count", 24},
              {"jobs", 3}};
  const fs::path out = scratch_dir() / "grid";
  run_config(cfg, out.string(), true);

  const std::vector<CsvRow> rows = parse_grid_csv(out / "grid_results.csv");
  REQUIRE(rows.size() == 8);
  const json winner = slurp_json(out / "grid_winner.json");
  double max_fr = 0.0;
  for (const CsvRow& r : rows) max_fr = std::max(max_fr, r.val_fr);
  CHECK(winner["val_fr"].get<double>() == max_fr);
  CHECK(winner["points"].get<int>() == 8);
  const std::size_t idx = winner["index"].get<std::size_t>();
  REQUIRE(idx < rows.size());
  CHECK(rows[idx].layer == winner["layer"].get<std::string>());
  CHECK(rows[idx].val_fr == winner["val_fr"].get<double>());
  const double test_fr = winner["test_fr"].get<double>();
  CHECK(test_fr >= 0.0);
  CHECK(test_fr <= 1.0);

  // The budget rule: 10x10 inputs give 100 patch-1 blocks and 25 patch-2
  // blocks, so floor(0.08 * blocks) is 8 and 2.
  for (const CsvRow& r : rows) CHECK(r.top_k == (r.patch_size == 1 ? 8 : 2));

  // The winner artifact is the winning point's perturbation, verifiable
  // against the per-point dumps.
  char name[32];
  std::snprintf(name, sizeof(name), "point_%03zu.bin", idx);
  CHECK(same_bytes(out / "grid_winner.bin", out / "grid_points" / name));

  // Worker count must not leak into results.
  json serial = cfg;
  serial["jobs"] = 1;
  const fs::path out1 = scratch_dir() / "grid_serial";
  run_config(serial, out1.string(), false);
  CHECK(same_bytes(out / "grid_results.csv", out1 / "grid_results.csv"));
  CHECK(same_bytes(out / "grid_winner.bin", out1 / "grid_winner.bin"));
  CHECK(same_bytes(out / "grid_winner.json", out1 / "grid_winner.json"));

  // Singleton grid: the only point wins.
  json single = cfg;
  single["layers"] = {"dense3"};
  single["qs"] = {2.0};
  single["patch_sizes"] = {1};
  const fs::path outs = scratch_dir() / "grid_single";
  run_config(single, outs.string(), false);
  const std::vector<CsvRow> srows = parse_grid_csv(outs / "grid_results.csv");
  REQUIRE(srows.size() == 1);
  const json swinner = slurp_json(outs / "grid_winner.json");
  CHECK(swinner["index"].get<int>() == 0);
  CHECK(swinner["layer"].get<std::string>() == "dense3");
  CHECK(swinner["val_fr"].get<double>() == srows[0].val_fr);

  json empty = cfg;
  empty["layers"] = json::array();
  CHECK_THROWS_AS(run_config(empty, (scratch_dir() / "never").string(), false), ConfigError);
}

TEST_CASE("defend sweeps windows and rejects bad ones") {
  const Workspace& ws = shared_ws();
  json acfg = base_attack_config(ws);
  const fs::path aout = scratch_dir() / "def_atk";
  run_config(acfg, aout.string(), false);
  const std::string pert = (aout / "perturbation.bin").string();

  json cfg = {{"command", "defend"},   {"model", ws.model},
              {"dataset", ws.dataset}, {"perturbation", pert},
              {"windows", {3, 5}},     {"split", "test"},
              {"xi", 1.0}};
  const fs::path out = scratch_dir() / "defend";
  run_config(cfg, out.string(), false);
  const json rep = slurp_json(out / "defense_report.json");
  REQUIRE(rep["filtered"].size() == 2);
  CHECK(rep["filtered"][0]["window"].get<int>() == 3);
  for (const json& row : rep["filtered"]) {
    const double fr = row["fooling_rate"].get<double>();
    const double acc = row["clean_accuracy"].get<double>();
    CHECK(fr >= 0.0);
    CHECK(fr <= 1.0);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  CHECK(rep["unfiltered_fooling_rate"].get<double>() >= 0.0);

  json empty = cfg;
  empty["windows"] = json::array();
  CHECK_THROWS_AS(run_config(empty, (scratch_dir() / "never").string(), false), ConfigError);

  json even = cfg;
  even["windows"] = {2};
  CHECK_THROWS_AS(run_config(even, (scratch_dir() / "never").string(), false),
                  InvalidWindowError);
}

TEST_CASE("export-ppm maps scales correctly and rejects odd channel counts") {
  const fs::path root = scratch_dir() / "export";
  fs::create_directories(root);

  // Zero perturbation on the signed scale is uniform mid-gray.
  const std::string zero = write_zero_pert(root / "zero.bin", 4, 6, 1);
  const json zcfg = {{"command", "export-ppm"}, {"input", zero},
                     {"scale", "signed"},       {"output", "zero.pgm"}};
  run_config(zcfg, root.string(), false);
  const std::string pgm = slurp(root / "zero.pgm");
  const std::string header = "P5\n6 4\n255\n";
  REQUIRE(pgm.size() == header.size() + 24);
  CHECK(pgm.substr(0, header.size()) == header);
  for (std::size_t i = header.size(); i < pgm.size(); ++i) {
    CHECK(static_cast<unsigned char>(pgm[i]) == 128);
  }

  // Unit-scale export of an image quantizes by rounding, nothing sneakier.
  const Workspace& ws = shared_ws();
  const StoredDataset sd = read_dataset(ws.dataset);
  const Tensor& img = sd.data.test.samples[0];
  write_tensor((root / "img.tnsr").string(), img);
  const json icfg = {{"command", "export-ppm"}, {"input", (root / "img.tnsr").string()},
                     {"scale", "unit"},         {"output", "img.pgm"}};
  run_config(icfg, root.string(), false);
  const std::string out = slurp(root / "img.pgm");
  const std::string ihdr = "P5\n10 10\n255\n";
  REQUIRE(out.size() == ihdr.size() + img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img[i], 0.0, 1.0);
    const long want = std::lround(v * 255.0);
    CHECK(static_cast<long>(static_cast<unsigned char>(out[ihdr.size() + i])) == want);
  }

  Tensor two = Tensor::zeros({3, 3, 2});
  write_tensor((root / "two.tnsr").string(), two);
  const json tcfg = {{"command", "export-ppm"}, {"input", (root / "two.tnsr").string()},
                     {"scale", "unit"}};
  CHECK_THROWS_AS(run_config(tcfg, root.string(), false), FormatError);

  json scfg = zcfg;
  scfg["scale"] = "loud";
  CHECK_THROWS_AS(run_config(scfg, root.string(), false), ConfigError);

  const json mcfg = {{"command", "export-ppm"}, {"input", (root / "ghost.bin").string()},
                     {"scale", "unit"}};
  CHECK_THROWS_AS(run_config(mcfg, root.string(), false), IoError);
}

TEST_CASE("binary exit codes: 0 success, 1 domain, 2 config") {
  const fs::path root = scratch_dir() / "exit_codes";
  fs::create_directories(root);
  const Workspace& ws = shared_ws();

  auto write_cfg = [&](const char* name, const json& j) {
    std::ofstream f(root / name, std::ios::binary);
    f << j.dump(2) << "\n";
    return (root / name).string();
  };

  json gen = base_gen_config();
  gen["samples_per_class"] = 3;
  const std::string ok = write_cfg("ok.json", gen);
  CHECK(run_cli("gen-data --config " + ok + " --out " + (root / "ok_out").string()) == 0);

  json bad_key = base_gen_config();
  bad_key["heigth"] = 8;
  const std::string bad = write_cfg("bad.json", bad_key);
  CHECK(run_cli("gen-data --config " + bad + " --out " + (root / "x").string()) == 2);

  const json missing = {{"command", "eval"},
                        {"model", (root / "ghost.bin").string()},
                        {"dataset", ws.dataset},
                        {"perturbation", (root / "ghost.bin").string()}};
  const std::string miss = write_cfg("missing.json", missing);
  CHECK(run_cli("eval --config " + miss + " --out " + (root / "x").string()) == 1);

  // Positional command and config discriminator must agree.
  CHECK(run_cli("train --config " + ok + " --out " + (root / "x").string()) == 2);

  std::ofstream(root / "mangled.json") << "{\"command\": ";
  CHECK(run_cli("gen-data --config " + (root / "mangled.json").string()) == 2);

  CHECK(run_cli("gen-data --config " + (root / "ghost.json").string()) == 2);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--help") == 0);
}
