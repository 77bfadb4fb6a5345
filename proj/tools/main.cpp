// splitlstm command-line tool: one subcommand per workflow stage.
//
// Exit codes: 0 success, 1 usage error (bad flags or flag values), 2 runtime
// failure (I/O, corrupt or mismatched artifacts, network).
#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "splitlstm/binary.hpp"
#include "splitlstm/compression.hpp"
#include "splitlstm/costmodel.hpp"
#include "splitlstm/data.hpp"
#include "splitlstm/error.hpp"
#include "splitlstm/model_io.hpp"
#include "splitlstm/runtime.hpp"
#include "splitlstm/split.hpp"
#include "splitlstm/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace splitlstm;

namespace {

constexpr const char* kToolVersion = "0.1.0";
constexpr const char* kNormFile = "normalization.json";
constexpr const char* kSplitManifestFile = "split.json";
constexpr std::size_t kTeacherTarget = 39951;

// Runtime failure that should exit with code 2 and a one-line message.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Run manifests: "<subcommand>.run.json" in the output directory, listing the
// resolved settings and the CRC-32 of every artifact written.

class RunManifest {
 public:
  explicit RunManifest(std::string subcommand) : subcommand_(std::move(subcommand)) {}

  json& config() { return config_; }
  void input(const fs::path& path) { inputs_[path.filename().string()] = hash_hex(read_file(path)); }

  void write_artifact(const fs::path& path, std::span<const std::uint8_t> bytes) {
    write_file(path, bytes);
    outputs_[path.filename().string()] = hash_hex(bytes);
    spdlog::info("wrote {}", path.string());
  }
  void write_artifact(const fs::path& path, const std::string& text) {
    write_artifact(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  void save(const fs::path& out_dir) const {
    json j;
    j["subcommand"] = subcommand_;
    j["tool_version"] = kToolVersion;
    j["config"] = config_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    write_file(out_dir / (subcommand_ + ".run.json"), j.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  json config_ = json::object();
  json inputs_ = json::object();
  json outputs_ = json::object();
};

// Checks `path` against every run manifest in its directory that lists it.
// Files without a manifest entry (user-written configs, external data) are
// accepted unchecked.
std::vector<std::uint8_t> read_validated(const fs::path& path) {
  if (!fs::exists(path)) throw RuntimeFailure("missing file " + path.string());
  auto bytes = read_file(path);
  const std::string name = path.filename().string();
  const std::string actual = hash_hex(bytes);
  bool listed = false;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fname = entry.path().filename().string();
    if (!fname.ends_with(".run.json")) continue;
    json j;
    try {
      const auto text = read_file(entry.path());
      j = json::parse(text.begin(), text.end());
    } catch (const json::exception&) {
      throw RuntimeFailure("unreadable run manifest " + entry.path().string());
    }
    if (!j.contains("outputs") || !j["outputs"].contains(name)) continue;
    listed = true;
    const std::string expected = j["outputs"][name].get<std::string>();
    if (expected != actual) {
      throw RuntimeFailure("hash mismatch for " + path.string() + ": " + fname + " records " + expected + ", file has " +
                           actual);
    }
  }
  if (!listed) spdlog::debug("{} is not listed in any run manifest; hash not checked", path.string());
  return bytes;
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_validated(path);
  return {bytes.begin(), bytes.end()};
}

fs::path ensure_dir(const fs::path& dir) {
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Models on disk: float (.slm) or quantized (.slmq) containers.

struct AnyModel {
  ModelSpec spec;
  std::optional<Parameters> float_params;
  std::optional<QuantizedParameters> quantized;
  std::string hash;

  bool is_quantized() const { return quantized.has_value(); }
};

AnyModel load_any_model(const fs::path& path) {
  const auto bytes = read_validated(path);
  AnyModel m;
  m.hash = hash_hex(bytes);
  // Both containers share a header, so the type is known only once one decoder
  // accepts the whole file.
  try {
    Model f = decode_model(bytes);
    m.spec = std::move(f.spec);
    m.float_params = std::move(f.params);
    return m;
  } catch (const FormatError& float_error) {
    try {
      QuantizedModel q = decode_quantized_model(bytes);
      m.spec = std::move(q.spec);
      m.quantized = std::move(q.params);
      return m;
    } catch (const FormatError& quantized_error) {
      throw FormatError(float_error.kind(), path.string() + " is neither a float model (" + float_error.what() +
                                                ") nor a quantized one (" + quantized_error.what() + ")");
    }
  }
}

// ---------------------------------------------------------------------------
// Normalization sidecar

std::string norm_to_json(const NormalizationParams& p) {
  json j;
  j["min"] = p.min;
  j["max"] = p.max;
  return j.dump(2) + "\n";
}

NormalizationParams load_norm(const fs::path& path) {
  const json j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded() || !j.contains("min") || !j.contains("max")) {
    throw RuntimeFailure("bad normalization file " + path.string());
  }
  NormalizationParams p{j["min"].get<double>(), j["max"].get<double>()};
  if (!(p.max > p.min)) throw RuntimeFailure("normalization file " + path.string() + " has max <= min");
  return p;
}

fs::path default_norm_path(const fs::path& artifact, const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  return (artifact.has_parent_path() ? artifact.parent_path() : fs::path(".")) / kNormFile;
}

// ---------------------------------------------------------------------------
// Shared flag bundles

struct DataFlags {
  std::string path;
  std::string column = kDefaultColumn;

  void add(CLI::App* app) {
    app->add_option("--data", path, "Series CSV")->required();
    app->add_option("--column", column, "Column holding the series")->capture_default_str();
  }
  TimeSeries load() const {
    const std::string text = read_text(path);
    return parse_csv(text, column, path);
  }
};

TrainConfig resolve_config(const TrainConfig& base, const std::string& config_path, std::optional<std::uint64_t> seed) {
  TrainConfig cfg = base;
  if (!config_path.empty()) cfg = TrainConfig::from_json(read_text(config_path), base);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

std::vector<std::vector<double>> normalized_windows(const TimeSeries& series, const NormalizationParams& norm,
                                                    std::vector<double>* truth) {
  const auto scaled = apply_minmax(series.values, norm);
  std::vector<std::vector<double>> out;
  for (const Window& w : make_windows(scaled)) {
    out.push_back(w.x);
    if (truth) truth->push_back(norm.invert(w.y));
  }
  return out;
}

std::string predictions_csv(const std::vector<double>& truth, const std::vector<double>& predicted) {
  std::ostringstream out;
  out.precision(17);
  out << "index,y_true,y_pred\n";
  for (std::size_t i = 0; i < predicted.size(); ++i) out << i << ',' << truth[i] << ',' << predicted[i] << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataCmd {
  std::uint64_t seed = 42;
  int days = 3264;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    RunManifest rm("gen-data");
    rm.config()["seed"] = seed;
    rm.config()["days"] = days;
    const TimeSeries s = generate_synthetic(seed, days);
    rm.write_artifact(dir / "series.csv", to_csv(s));
    rm.save(dir);
  }
};

struct TrainTeacherCmd {
  DataFlags data;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<int> dims;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    const TrainConfig cfg = resolve_config(TrainConfig::teacher_defaults(), config, seed);
    TeacherDims d = closest_teacher_dims(kTeacherTarget, 128);
    if (!dims.empty()) d = {dims.at(0), dims.at(1), dims.at(2)};
    const ModelSpec spec = build_teacher(d.h1, d.d, d.h2);
    spdlog::info("teacher h1={} d={} h2={} ({} parameters)", d.h1, d.d, d.h2, param_count(spec));

    RunManifest rm("train-teacher");
    rm.input(data.path);
    const PreparedData prepared = prepare(data.load());
    const TrainResult r = train_teacher(spec, prepared, cfg);
    for (const auto& e : r.history) {
      spdlog::debug("epoch {} loss {:.6f} val mse {:.6f}", e.epoch, e.train_loss, e.validation.mse);
    }
    rm.config()["train"] = json::parse(cfg.to_json());
    rm.config()["teacher_dims"] = {d.h1, d.d, d.h2};
    rm.write_artifact(dir / "teacher.slm", encode_model(spec, r.params));
    rm.write_artifact(dir / "teacher_history.csv", history_csv(r.history));
    rm.write_artifact(dir / kNormFile, norm_to_json(prepared.norm));
    rm.save(dir);
  }
};

struct DistillCmd {
  DataFlags data;
  std::string teacher;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    const TrainConfig cfg = resolve_config(TrainConfig::student_defaults(), config, seed);
    RunManifest rm("distill");
    const Model t = decode_model(read_validated(teacher));
    rm.input(teacher);
    rm.input(data.path);
    const PreparedData prepared = prepare(data.load());
    const ModelSpec spec = build_student();
    const TrainResult r = distill(t.spec, t.params, spec, prepared, cfg);
    rm.config()["train"] = json::parse(cfg.to_json());
    rm.config()["teacher"] = teacher;
    rm.write_artifact(dir / "student.slm", encode_model(spec, r.params));
    rm.write_artifact(dir / "student_history.csv", history_csv(r.history));
    rm.write_artifact(dir / kNormFile, norm_to_json(prepared.norm));
    rm.save(dir);
  }
};

struct CompressCmd {
  std::string model;
  double sparsity = 0.7;
  std::string format = "3.5";
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    const FixedPointFormat fmt = FixedPointFormat::parse(format);
    RunManifest rm("compress");
    const Model m = decode_model(read_validated(model));
    rm.input(model);
    const auto [pruned, report] = prune_global_magnitude(m.params, sparsity);
    spdlog::info("pruned {} of {} weights (threshold {:.3g})", report.zeroed, report.total, report.threshold);
    const QuantizedModel q = quantize_model(m.spec, pruned, fmt);

    json pr;
    pr["total"] = report.total;
    pr["zeroed"] = report.zeroed;
    pr["achieved_sparsity"] = report.achieved_sparsity;
    pr["threshold"] = report.threshold;
    pr["format"] = fmt.to_string();
    rm.config()["sparsity"] = sparsity;
    rm.config()["format"] = fmt.to_string();
    rm.write_artifact(dir / "student_pruned.slm", encode_model(m.spec, pruned));
    rm.write_artifact(dir / "student_q.slmq", encode_quantized_model(q));
    rm.write_artifact(dir / "prune_report.json", pr.dump(2) + "\n");
    const fs::path norm = default_norm_path(model, "");
    if (fs::exists(norm)) rm.write_artifact(dir / kNormFile, read_text(norm));
    rm.save(dir);
  }
};

struct SplitCmd {
  std::string model;
  std::string plan = "split-b";
  std::string dtype;
  std::string format = "3.5";
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    AnyModel m = load_any_model(model);
    const SplitPlan p = parse_plan(m.spec, plan);
    const WireDtype wd = dtype.empty() ? (m.is_quantized() ? WireDtype::Q8 : WireDtype::Float32) : parse_dtype(dtype);
    if (wd == WireDtype::Float32 && m.is_quantized()) {
      throw ConfigError("--dtype f32 needs a float model; " + model + " is quantized");
    }
    if (wd == WireDtype::Q8 && !m.is_quantized()) {
      m.quantized = quantize_params(*m.float_params, FixedPointFormat::parse(format), payload_crc32(read_file(model)));
    }

    RunManifest rm("split");
    rm.input(model);
    SplitManifest sm;
    sm.model_hash = m.hash;
    sm.plan = p.name;
    sm.cut_index = p.cut_index;
    sm.intermediate_size = intermediate_size(m.spec, p);
    sm.input_size = input_size(m.spec);
    sm.window_length = m.spec.window_length;
    sm.dtype = wd;

    if (wd == WireDtype::Q8) {
      const auto halves = partition(m.spec, *m.quantized, p);
      sm.format = m.quantized->format;
      sm.edge_hash = half_hash(halves.edge.spec, halves.edge.params);
      sm.server_hash = half_hash(halves.server.spec, halves.server.params);
      rm.write_artifact(dir / "edge.slmq", encode_quantized_model({halves.edge.spec, halves.edge.params}));
      if (!halves.server.spec.layers.empty()) {
        rm.write_artifact(dir / "server.slmq", encode_quantized_model({halves.server.spec, halves.server.params}));
      }
    } else {
      const auto halves = partition(m.spec, m.float_params->cast<float>(), p);
      sm.edge_hash = half_hash(halves.edge.spec, halves.edge.params);
      sm.server_hash = half_hash(halves.server.spec, halves.server.params);
      rm.write_artifact(dir / "edge.slm", encode_model(halves.edge.spec, halves.edge.params.cast<double>()));
      if (!halves.server.spec.layers.empty()) {
        rm.write_artifact(dir / "server.slm", encode_model(halves.server.spec, halves.server.params.cast<double>()));
      }
    }
    spdlog::info("{}: cut {}, {} intermediate values per window", sm.plan, sm.cut_index, sm.intermediate_size);
    rm.config()["plan"] = p.name;
    rm.config()["dtype"] = to_string(wd);
    rm.write_artifact(dir / kSplitManifestFile, sm.to_json());
    const fs::path norm = default_norm_path(model, "");
    if (fs::exists(norm)) rm.write_artifact(dir / kNormFile, read_text(norm));
    rm.save(dir);
  }
};

// Loads one half of a split directory and checks it against the manifest.
struct SplitDir {
  fs::path dir;
  SplitManifest manifest;

  explicit SplitDir(const fs::path& d) : dir(d), manifest(SplitManifest::from_json(read_text(d / kSplitManifestFile))) {}

  fs::path half_path(const std::string& half) const {
    return dir / (half + (manifest.dtype == WireDtype::Q8 ? ".slmq" : ".slm"));
  }

  void check_hash(const std::string& half, const std::string& expected, const std::string& actual) const {
    if (expected != actual) {
      throw RuntimeFailure(half + " half hash " + actual + " does not match the manifest (" + expected + ")");
    }
  }

  EdgeDeployment edge() const {
    const auto bytes = read_validated(half_path("edge"));
    EdgeDeployment d{manifest, {}};
    if (manifest.dtype == WireDtype::Q8) {
      const QuantizedModel q = decode_quantized_model(bytes, manifest.window_length);
      check_hash("edge", manifest.edge_hash, half_hash(q.spec, q.params));
      d.model = EdgeModel<QuantizedParameters>{q.spec, q.params, manifest.intermediate_size};
    } else {
      const Model m = decode_model(bytes, manifest.window_length);
      const FloatParameters pf = m.params.cast<float>();
      check_hash("edge", manifest.edge_hash, half_hash(m.spec, pf));
      d.model = EdgeModel<FloatParameters>{m.spec, pf, manifest.intermediate_size};
    }
    return d;
  }

  ServerDeployment server() const {
    ServerDeployment d{manifest, {}};
    if (manifest.server_hash == "none") {
      const ModelSpec spec = passthrough_server_spec(manifest.intermediate_size, manifest.window_length);
      if (manifest.dtype == WireDtype::Q8) {
        d.model = ServerModel<QuantizedParameters>{spec, QuantizedParameters{{}, *manifest.format, 0}};
      } else {
        d.model = ServerModel<FloatParameters>{spec, {}};
      }
      return d;
    }
    const auto bytes = read_validated(half_path("server"));
    if (manifest.dtype == WireDtype::Q8) {
      const QuantizedModel q = decode_quantized_model(bytes, manifest.window_length);
      check_hash("server", manifest.server_hash, half_hash(q.spec, q.params));
      d.model = ServerModel<QuantizedParameters>{q.spec, q.params};
    } else {
      const Model m = decode_model(bytes, manifest.window_length);
      const FloatParameters pf = m.params.cast<float>();
      check_hash("server", manifest.server_hash, half_hash(m.spec, pf));
      d.model = ServerModel<FloatParameters>{m.spec, pf};
    }
    return d;
  }
};

Server* g_server = nullptr;

extern "C" void on_stop_signal(int) {
  if (g_server) g_server->stop();
}

struct ServeCmd {
  std::string split_dir;
  std::string endpoint = "127.0.0.1:7400";

  void run() const {
    const SplitDir sd(split_dir);
    Server server(sd.server(), Endpoint::parse(endpoint));
    g_server = &server;
    struct sigaction sa{};
    sa.sa_handler = on_stop_signal;
    sigemptyset(&sa.sa_mask);
    sigaction(SIGINT, &sa, nullptr);
    sigaction(SIGTERM, &sa, nullptr);
    // The bound address goes to stdout so scripts can pick up an ephemeral port.
    std::cout << "listening on " << Endpoint{Endpoint::parse(endpoint).host, server.port()}.to_string() << std::endl;
    spdlog::info("serving {} ({}, {})", sd.manifest.plan, to_string(sd.manifest.dtype), split_dir);
    server.serve();
    g_server = nullptr;
    spdlog::info("stopped after {} requests", server.requests_served());
  }
};

struct EdgeInferCmd {
  std::string split_dir;
  DataFlags data;
  std::string norm;
  std::string endpoint = "127.0.0.1:7400";
  int timeout_ms = 5000;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    const SplitDir sd(split_dir);
    const EdgeDeployment edge = sd.edge();
    RunManifest rm("edge-infer");
    rm.input(data.path);
    const NormalizationParams np = load_norm(default_norm_path(sd.dir / kSplitManifestFile, norm));
    std::vector<double> truth;
    const auto windows = normalized_windows(data.load(), np, &truth);
    const EdgeRunResult r =
        run_edge(edge, windows, Endpoint::parse(endpoint), EdgeOptions{std::chrono::milliseconds(timeout_ms)});

    std::vector<double> predicted;
    for (std::size_t i = 0; i < r.windows.size(); ++i) {
      const auto& w = r.windows[i];
      if (!w.prediction) {
        spdlog::error("window {}: {}", i, w.error);
        continue;
      }
      predicted.push_back(np.invert(w.value));
    }
    rm.config()["plan"] = sd.manifest.plan;
    rm.config()["dtype"] = to_string(sd.manifest.dtype);
    rm.config()["windows"] = windows.size();
    rm.config()["failures"] = r.failures();
    rm.config()["bytes_sent"] = r.bytes_sent;
    rm.config()["bytes_received"] = r.bytes_received;
    rm.config()["intermediate_bytes"] = r.intermediate_bytes;
    spdlog::info("{} windows, {} failures, {} intermediate bytes", windows.size(), r.failures(), r.intermediate_bytes);
    if (r.failures() == 0) rm.write_artifact(dir / "predictions.csv", predictions_csv(truth, predicted));
    rm.save(dir);
    if (r.failures() != 0) {
      throw RuntimeFailure(std::to_string(r.failures()) + " of " + std::to_string(windows.size()) +
                           " windows failed: " + r.windows.front().error);
    }
  }
};

struct InferCmd {
  std::string model;
  DataFlags data;
  std::string norm;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    const AnyModel m = load_any_model(model);
    RunManifest rm("infer");
    rm.input(model);
    rm.input(data.path);
    const NormalizationParams np = load_norm(default_norm_path(model, norm));
    std::vector<double> truth;
    const auto windows = normalized_windows(data.load(), np, &truth);
    std::vector<double> predicted;
    predicted.reserve(windows.size());
    if (m.is_quantized()) {
      for (const auto& w : windows) predicted.push_back(np.invert(quantized_forward(m.spec, *m.quantized, w).value));
    } else {
      const FloatParameters pf = m.float_params->cast<float>();
      for (const auto& w : windows) {
        predicted.push_back(np.invert(static_cast<double>(float_forward(m.spec, pf, to_float(w)))));
      }
    }
    rm.config()["model"] = model;
    rm.config()["windows"] = windows.size();
    rm.write_artifact(dir / "predictions.csv", predictions_csv(truth, predicted));
    rm.save(dir);
  }
};

json metrics_json(const Metrics& m) {
  json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["r2"] = m.r2 ? json(*m.r2) : json("undefined");
  return j;
}

struct EvalCmd {
  std::string model;
  DataFlags data;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    const AnyModel m = load_any_model(model);
    RunManifest rm("eval");
    rm.input(model);
    rm.input(data.path);
    const PreparedData prepared = prepare(data.load());
    // Same arithmetic as infer: float models run in float32.
    std::optional<FloatParameters> pf;
    if (!m.is_quantized()) pf = m.float_params->cast<float>();
    std::vector<double> y, yhat;
    for (const auto& w : prepared.test) {
      y.push_back(w.y);
      yhat.push_back(m.is_quantized() ? quantized_forward(m.spec, *m.quantized, w.x).value
                                      : static_cast<double>(float_forward(m.spec, *pf, to_float(w.x))));
    }
    json j;
    j["model"] = fs::path(model).filename().string();
    j["model_hash"] = m.hash;
    j["params"] = param_count(m.spec);
    j["size_kb"] = round_decimals(model_size_kb(param_count(m.spec)), 2);
    j["quantized"] = m.is_quantized();
    j["test_windows"] = prepared.test.size();
    j["metrics_normalized"] = metrics_json(metrics(y, yhat));
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    rm.write_artifact(dir / "eval.json", text);
    rm.save(dir);
  }
};

struct ReportCmd {
  std::string model;
  std::string teacher;
  std::string fixtures;
  std::string out = ".";

  void run() const {
    const fs::path dir = ensure_dir(out);
    RunManifest rm("report");
    ModelSpec student = build_student();
    if (!model.empty()) {
      student = load_any_model(model).spec;
      rm.input(model);
    }
    const TeacherDims d = closest_teacher_dims(kTeacherTarget, 128);
    ModelSpec t = build_teacher(d.h1, d.d, d.h2);
    if (!teacher.empty()) {
      t = load_any_model(teacher).spec;
      rm.input(teacher);
    }
    const fs::path fx = fixtures.empty() ? default_fixtures_path() : fs::path(fixtures);
    const DeploymentReport r = build_report(t, student, load_fixtures(fx));
    rm.config()["fixtures"] = fx.filename().string();
    rm.write_artifact(dir / "report.csv", r.to_csv());
    rm.write_artifact(dir / "report.txt", r.to_text());
    std::cout << r.to_text();
    rm.save(dir);
  }
};

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("splitlstm");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("SPLITLSTM_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to off; only accept it when asked for.
    if (parsed != spdlog::level::off || std::string(level) == "off") {
      spdlog::set_level(parsed);
    } else {
      spdlog::warn("unknown SPLITLSTM_LOG level '{}', using info", level);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();

  CLI::App app{"Split-learning LSTM toolkit: train, distill, compress, split, serve and report"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenDataCmd gen;
  auto* c_gen = app.add_subcommand("gen-data", "Write a seeded synthetic dissolved-oxygen series");
  c_gen->add_option("--seed", gen.seed)->capture_default_str();
  c_gen->add_option("--days", gen.days)->capture_default_str()->check(CLI::Range(16, 1 << 24));
  c_gen->add_option("--out", gen.out)->capture_default_str();

  TrainTeacherCmd tt;
  auto* c_tt = app.add_subcommand("train-teacher", "Train the teacher LSTM");
  tt.data.add(c_tt);
  c_tt->add_option("--config", tt.config, "JSON training config overrides");
  c_tt->add_option("--seed", tt.seed);
  c_tt->add_option("--dims", tt.dims, "Teacher h1 d h2 (default: searched)")->expected(3)->check(CLI::Range(1, 4096));
  c_tt->add_option("--out", tt.out)->capture_default_str();

  DistillCmd ds;
  auto* c_ds = app.add_subcommand("distill", "Distill the student from a trained teacher");
  ds.data.add(c_ds);
  c_ds->add_option("--teacher", ds.teacher, "Teacher model file")->required();
  c_ds->add_option("--config", ds.config, "JSON training config overrides");
  c_ds->add_option("--seed", ds.seed);
  c_ds->add_option("--out", ds.out)->capture_default_str();

  CompressCmd cp;
  auto* c_cp = app.add_subcommand("compress", "Prune and quantize a float model");
  c_cp->add_option("--model", cp.model)->required();
  c_cp->add_option("--sparsity", cp.sparsity)->capture_default_str();
  c_cp->add_option("--format", cp.format, "Fixed-point format I.F")->capture_default_str();
  c_cp->add_option("--out", cp.out)->capture_default_str();

  SplitCmd sp;
  auto* c_sp = app.add_subcommand("split", "Partition a model into edge and server halves");
  c_sp->add_option("--model", sp.model)->required();
  c_sp->add_option("--plan", sp.plan, "lstm-do-s | split-a | split-b | custom:N")->capture_default_str();
  c_sp->add_option("--dtype", sp.dtype, "f32 | q8 (default: from the model)");
  c_sp->add_option("--format", sp.format, "Format used when quantizing a float model for q8")->capture_default_str();
  c_sp->add_option("--out", sp.out)->capture_default_str();

  ServeCmd sv;
  auto* c_sv = app.add_subcommand("serve", "Serve the server half of a split");
  c_sv->add_option("--split", sv.split_dir, "Output directory of `split`")->required();
  c_sv->add_option("--endpoint", sv.endpoint, "host:port (port 0 picks a free one)")->capture_default_str();

  EdgeInferCmd ei;
  auto* c_ei = app.add_subcommand("edge-infer", "Run the edge half and query a server for every window");
  c_ei->add_option("--split", ei.split_dir, "Output directory of `split`")->required();
  ei.data.add(c_ei);
  c_ei->add_option("--norm", ei.norm, "Normalization JSON (default: next to the split manifest)");
  c_ei->add_option("--endpoint", ei.endpoint)->capture_default_str();
  c_ei->add_option("--timeout-ms", ei.timeout_ms)->capture_default_str()->check(CLI::PositiveNumber);
  c_ei->add_option("--out", ei.out)->capture_default_str();

  InferCmd in;
  auto* c_in = app.add_subcommand("infer", "Local inference over every window of a series");
  c_in->add_option("--model", in.model)->required();
  in.data.add(c_in);
  c_in->add_option("--norm", in.norm, "Normalization JSON (default: next to the model)");
  c_in->add_option("--out", in.out)->capture_default_str();

  EvalCmd ev;
  auto* c_ev = app.add_subcommand("eval", "Test-split metrics of a model");
  c_ev->add_option("--model", ev.model)->required();
  ev.data.add(c_ev);
  c_ev->add_option("--out", ev.out)->capture_default_str();

  ReportCmd rp;
  auto* c_rp = app.add_subcommand("report", "Deployment report next to the reference figures");
  c_rp->add_option("--model", rp.model, "Student model (default: the built-in student)");
  c_rp->add_option("--teacher", rp.teacher, "Teacher model (default: the searched teacher)");
  c_rp->add_option("--fixtures", rp.fixtures, "Reference fixtures JSON");
  c_rp->add_option("--out", rp.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*c_gen) gen.run();
    else if (*c_tt) tt.run();
    else if (*c_ds) ds.run();
    else if (*c_cp) cp.run();
    else if (*c_sp) sp.run();
    else if (*c_sv) sv.run();
    else if (*c_ei) ei.run();
    else if (*c_in) in.run();
    else if (*c_ev) ev.run();
    else if (*c_rp) rp.run();
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
