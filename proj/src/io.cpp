#include "tpower/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <variant>

#include "tpower/error.hpp"

namespace tpower {

namespace fs = std::filesystem;
using nlohmann::json;

json exponent_to_json(const NormExponent& e) {
  if (e.is_infinite()) return json("inf");
  return json(e.value());
}

NormExponent exponent_from_json(const json& j, const char* field) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return NormExponent::infinity();
    throw ConfigError(std::string(field) + ": expected a number or \"inf\"");
  }
  if (!j.is_number()) throw ConfigError(std::string(field) + ": expected a number or \"inf\"");
  return NormExponent(j.get<double>());
}

namespace {

constexpr char kTensorMagic[5] = {'T', 'N', 'S', 'R', '1'};
constexpr unsigned char kDtypeF64 = 0x01;
constexpr int kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  Cursor(const std::string& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  unsigned char u8() {
    need(1);
    return static_cast<unsigned char>(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      throw FormatError(path_ + ": " + std::to_string(bytes_.size() - pos_) +
                        " trailing bytes after payload");
    }
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError(path_ + ": truncated file");
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failure on " + path);
  return bytes;
}

void spill(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on " + path);
}

void append_tensor_payload(std::string& out, const Tensor& t) {
  for (double v : t.data) put_f64(out, v);
}

// Splits a header+payload file at the first newline and parses the header.
json parse_header(const std::string& bytes, const std::string& path, std::size_t& payload_at) {
  const std::size_t nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError(path + ": missing header line");
  payload_at = nl + 1;
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header: " + e.what());
  }
  return header;
}

Vec payload_doubles(const std::string& bytes, std::size_t at, std::size_t count,
                    const std::string& path) {
  if (bytes.size() - at != count * 8) {
    throw FormatError(path + ": payload holds " + std::to_string((bytes.size() - at) / 8) +
                      " doubles, header promises " + std::to_string(count));
  }
  Vec out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i * 8 + b]))
           << (8 * b);
    out[i] = std::bit_cast<double>(v);
  }
  return out;
}

json layer_to_json(const Layer& layer) {
  json j;
  std::visit(
      [&j](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Dense>) {
          j = {{"kind", "dense"}, {"in", l.weights.shape[1]}, {"out", l.weights.shape[0]}};
        } else if constexpr (std::is_same_v<T, Conv2d>) {
          j = {{"kind", "conv"},      {"in_channels", l.kernels.shape[3]},
               {"out_channels", l.kernels.shape[0]}, {"kernel", l.kernels.shape[1]},
               {"stride", l.stride},  {"padding", l.padding}};
        } else if constexpr (std::is_same_v<T, ReLU>) {
          j = {{"kind", "relu"}};
        } else if constexpr (std::is_same_v<T, MaxPool>) {
          j = {{"kind", "maxpool"}, {"window", l.window}};
        } else if constexpr (std::is_same_v<T, AvgPool>) {
          j = {{"kind", "avgpool"}, {"window", l.window}};
        } else {
          j = {{"kind", "flatten"}};
        }
      },
      layer);
  return j;
}

Layer layer_from_json(const json& j, const std::string& path) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "dense") return make_dense(j.at("in").get<int>(), j.at("out").get<int>());
  if (kind == "conv") {
    return make_conv(j.at("in_channels").get<int>(), j.at("out_channels").get<int>(),
                     j.at("kernel").get<int>(), j.at("stride").get<int>(),
                     j.at("padding").get<int>());
  }
  if (kind == "relu") return ReLU{};
  if (kind == "maxpool") return MaxPool{j.at("window").get<int>()};
  if (kind == "avgpool") return AvgPool{j.at("window").get<int>()};
  if (kind == "flatten") return Flatten{};
  throw FormatError(path + ": unknown layer kind '" + kind + "'");
}

json pattern_to_json(const SparsityPattern& pattern) {
  if (const auto& g = pattern.descriptor()) {
    return {{"type", "grid"},
            {"height", g->height},
            {"width", g->width},
            {"channels", g->channels},
            {"patch_size", g->patch_size}};
  }
  return {{"type", "singletons"}, {"length", pattern.total_len()}};
}

SparsityPattern pattern_from_json(const json& j, const std::string& path) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "grid") {
    return SparsityPattern::grid(j.at("height").get<int>(), j.at("width").get<int>(),
                                 j.at("channels").get<int>(), j.at("patch_size").get<int>());
  }
  if (type == "singletons") {
    return SparsityPattern::singletons(j.at("length").get<std::size_t>());
  }
  throw FormatError(path + ": unknown pattern type '" + type + "'");
}

}  // namespace

void write_tensor(const std::string& path, const Tensor& t) {
  std::string bytes(kTensorMagic, sizeof kTensorMagic);
  bytes.push_back(static_cast<char>(kDtypeF64));
  bytes.push_back(static_cast<char>(t.shape.size()));
  for (int d : t.shape) put_u32(bytes, static_cast<std::uint32_t>(d));
  append_tensor_payload(bytes, t);
  spill(path, bytes);
}

Tensor read_tensor(const std::string& path) {
  const std::string bytes = slurp(path);
  Cursor cur(bytes, path);
  for (char m : kTensorMagic) {
    if (cur.u8() != static_cast<unsigned char>(m)) {
      throw FormatError(path + ": not a tensor file (bad magic)");
    }
  }
  if (cur.u8() != kDtypeF64) throw FormatError(path + ": unsupported dtype tag");
  const int rank = cur.u8();
  Shape shape(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(cur.u32());
  const std::size_t numel = shape_numel(shape);
  if (cur.remaining() != numel * 8) throw FormatError(path + ": payload size mismatch");
  Vec data(numel);
  for (std::size_t i = 0; i < numel; ++i) data[i] = cur.f64();
  cur.expect_end();
  return Tensor(std::move(shape), std::move(data));
}

void write_model(const std::string& path, const Model& m) {
  json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = "model";
  header["num_classes"] = m.num_classes();
  header["input_shape"] = m.input_shape();
  json layers = json::array();
  for (const Layer& l : m.layers()) layers.push_back(layer_to_json(l));
  header["layers"] = std::move(layers);
  header["cuts"] = m.cut_points();

  std::string bytes = header.dump();
  bytes.push_back('\n');
  for (const Layer& l : m.layers()) {
    if (const auto* d = std::get_if<Dense>(&l)) {
      append_tensor_payload(bytes, d->weights);
      append_tensor_payload(bytes, d->bias);
    } else if (const auto* c = std::get_if<Conv2d>(&l)) {
      append_tensor_payload(bytes, c->kernels);
      append_tensor_payload(bytes, c->bias);
    }
  }
  spill(path, bytes);
}

Model read_model(const std::string& path) {
  const std::string bytes = slurp(path);
  std::size_t at = 0;
  json header = parse_header(bytes, path, at);
  try {
    if (header.at("kind").get<std::string>() != "model") {
      throw FormatError(path + ": not a model file");
    }
    if (header.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError(path + ": unsupported format version");
    }
    Shape input_shape = header.at("input_shape").get<Shape>();
    std::vector<Layer> layers;
    for (const json& lj : header.at("layers")) layers.push_back(layer_from_json(lj, path));

    std::size_t param_count = 0;
    for (const Layer& l : layers) {
      if (const auto* d = std::get_if<Dense>(&l)) {
        param_count += d->weights.data.size() + d->bias.data.size();
      } else if (const auto* c = std::get_if<Conv2d>(&l)) {
        param_count += c->kernels.data.size() + c->bias.data.size();
      }
    }
    Vec params = payload_doubles(bytes, at, param_count, path);
    std::size_t off = 0;
    const auto take = [&params, &off](Tensor& t) {
      std::copy(params.begin() + static_cast<std::ptrdiff_t>(off),
                params.begin() + static_cast<std::ptrdiff_t>(off + t.data.size()),
                t.data.begin());
      off += t.data.size();
    };
    for (Layer& l : layers) {
      if (auto* d = std::get_if<Dense>(&l)) {
        take(d->weights);
        take(d->bias);
      } else if (auto* c = std::get_if<Conv2d>(&l)) {
        take(c->kernels);
        take(c->bias);
      }
    }

    Model model(std::move(input_shape), std::move(layers),
                header.at("num_classes").get<int>());
    if (header.at("cuts").get<std::vector<std::string>>() != model.cut_points()) {
      throw FormatError(path + ": cut names do not match the layer stack");
    }
    return model;
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header: " + e.what());
  }
}

void write_perturbation(const std::string& path, const Perturbation& p) {
  json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = "perturbation";
  header["shape"] = p.eps.shape;
  header["pattern"] = pattern_to_json(p.pattern);
  header["config"] = config_to_json(p.config);
  header["source_model_id"] = p.source_model_id;
  header["support"] = p.support;

  std::string bytes = header.dump();
  bytes.push_back('\n');
  append_tensor_payload(bytes, p.eps);
  spill(path, bytes);
}

Perturbation read_perturbation(const std::string& path) {
  const std::string bytes = slurp(path);
  std::size_t at = 0;
  json header = parse_header(bytes, path, at);
  try {
    if (header.at("kind").get<std::string>() != "perturbation") {
      throw FormatError(path + ": not a perturbation file");
    }
    if (header.at("format_version").get<int>() != kFormatVersion) {
      throw FormatError(path + ": unsupported format version");
    }
    Perturbation p;
    Shape shape = header.at("shape").get<Shape>();
    const std::size_t numel = shape_numel(shape);
    p.eps = Tensor(std::move(shape), payload_doubles(bytes, at, numel, path));
    p.pattern = pattern_from_json(header.at("pattern"), path);
    if (p.pattern.total_len() != numel) {
      throw FormatError(path + ": pattern covers " + std::to_string(p.pattern.total_len()) +
                        " entries, tensor has " + std::to_string(numel));
    }
    p.config = config_from_json(header.at("config"));
    p.source_model_id = header.at("source_model_id").get<std::string>();
    p.support = header.at("support").get<std::vector<std::size_t>>();
    for (std::size_t b : p.support) {
      if (b >= p.pattern.block_count()) {
        throw FormatError(path + ": support block " + std::to_string(b) + " out of range");
      }
    }
    return p;
  } catch (const json::exception& e) {
    throw FormatError(path + ": bad header: " + e.what());
  }
}

void write_dataset(const std::string& dir, const Dataset& data, int num_classes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["kind"] = "dataset";
  manifest["num_classes"] = num_classes;
  const std::pair<const char*, const LabeledDataset*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  for (const auto& [name, split] : splits) {
    json files = json::array();
    for (std::size_t i = 0; i < split->samples.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s_%05zu.tnsr", name, i);
      write_tensor((fs::path(dir) / buf).string(), split->samples[i]);
      files.push_back(buf);
    }
    manifest["splits"][name] = {{"files", std::move(files)}, {"labels", split->labels}};
  }
  spill((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

StoredDataset read_dataset(const std::string& dir) {
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  json manifest;
  try {
    manifest = json::parse(slurp(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path + ": bad manifest: " + e.what());
  }
  try {
    if (manifest.at("kind").get<std::string>() != "dataset") {
      throw FormatError(manifest_path + ": not a dataset manifest");
    }
    StoredDataset out;
    out.num_classes = manifest.at("num_classes").get<int>();
    const std::pair<const char*, LabeledDataset*> splits[] = {
        {"train", &out.data.train}, {"val", &out.data.val}, {"test", &out.data.test}};
    for (const auto& [name, split] : splits) {
      const json& sj = manifest.at("splits").at(name);
      const auto files = sj.at("files").get<std::vector<std::string>>();
      const auto labels = sj.at("labels").get<std::vector<int>>();
      if (files.size() != labels.size()) {
        throw FormatError(manifest_path + ": split '" + std::string(name) +
                          "' has mismatched file and label counts");
      }
      for (std::size_t i = 0; i < files.size(); ++i) {
        split->push(read_tensor((fs::path(dir) / files[i]).string()), labels[i]);
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path + ": bad manifest: " + e.what());
  }
}

void write_pnm(const std::string& path, const Tensor& image, PixelScale scale) {
  if (image.shape.size() != 3) {
    throw FormatError("image export expects a rank-3 tensor, got rank " +
                      std::to_string(image.shape.size()));
  }
  const int h = image.shape[0], w = image.shape[1], c = image.shape[2];
  if (c != 1 && c != 3) {
    throw FormatError("image export supports 1 or 3 channels, got " + std::to_string(c));
  }
  std::string bytes = (c == 1 ? "P5\n" : "P6\n");
  bytes += std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : image.data) {
    double unit = (scale == PixelScale::Unit) ? v : 0.5 * (v + 1.0);
    unit = std::min(1.0, std::max(0.0, unit));
    bytes.push_back(static_cast<char>(static_cast<int>(std::lround(unit * 255.0))));
  }
  spill(path, bytes);
}

json config_to_json(const AttackConfig& cfg) {
  json j;
  j["n_steps"] = cfg.n_steps;
  j["init_truncation"] = cfg.init_truncation;
  j["top_k"] = cfg.top_k;
  j["patch_size"] = cfg.patch_size;
  j["reduction_steps"] = cfg.reduction_steps;
  j["q"] = exponent_to_json(cfg.q);
  j["p"] = exponent_to_json(cfg.p);
  j["layer"] = cfg.layer;
  j["seed"] = cfg.seed;
  j["magnitude"] = cfg.magnitude;
  return j;
}

AttackConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("attack config must be a JSON object");
  static const char* known[] = {"n_steps",   "init_truncation", "top_k", "patch_size",
                                "reduction_steps", "q", "p", "layer", "seed", "magnitude"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown attack config key '" + key + "'");
  }
  AttackConfig cfg;
  try {
    if (j.contains("n_steps")) cfg.n_steps = j["n_steps"].get<int>();
    if (j.contains("init_truncation")) cfg.init_truncation = j["init_truncation"].get<double>();
    if (j.contains("top_k")) cfg.top_k = j["top_k"].get<int>();
    if (j.contains("patch_size")) cfg.patch_size = j["patch_size"].get<int>();
    if (j.contains("reduction_steps")) cfg.reduction_steps = j["reduction_steps"].get<int>();
    if (j.contains("q")) cfg.q = exponent_from_json(j["q"], "q");
    if (j.contains("p")) cfg.p = exponent_from_json(j["p"], "p");
    if (j.contains("layer")) cfg.layer = j["layer"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("magnitude")) cfg.magnitude = j["magnitude"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad attack config: ") + e.what());
  }
  return cfg;
}

}  // namespace tpower
