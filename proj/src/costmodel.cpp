// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/costmodel.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Dense>
#include <json.hpp>

#include "splitlstm/binary.hpp"
#include "splitlstm/compression.hpp"
#include "splitlstm/error.hpp"
#include "splitlstm/wire.hpp"

#ifndef SPLITLSTM_DATA_DIR
#define SPLITLSTM_DATA_DIR "data"
#endif

namespace splitlstm {
namespace {

// Absorbs representation error in ratios that are integers in exact arithmetic (17.7 * k).
constexpr double kFloorSlack = 1e-9;

int floor_ratio(double total, double pe) {
  if (!(pe > 0.0)) throw ConfigError("resource usage must be positive");
  if (!(total > 0.0)) throw ConfigError("resource totals must be positive");
  return static_cast<int>(std::floor(total / pe + kFloorSlack));
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

int scalability(const ResourceVector& total, const ResourceVector& pe) {
  return std::min({floor_ratio(total.bram, pe.bram), floor_ratio(total.dsp, pe.dsp), floor_ratio(total.lut, pe.lut),
                   floor_ratio(total.ff, pe.ff)});
}

int scalability_from_design(const ResourceUtilization& u) { return floor_ratio(100.0, u.overall_max); }

void LatencyModelConfig::validate() const {
  // Zero coefficients are allowed so a cost term can be switched off.
  if (!(clock_mhz > 0.0) || !(cycles_per_mac >= 0.0) || !(cycles_per_activation >= 0.0) ||
      !(cycles_per_transferred_element >= 0.0)) {
    throw ConfigError("latency model needs a positive clock and non-negative coefficients");
  }
}

Workload edge_workload(const ModelSpec& spec, const SplitPlan& plan) {
  validate_plan(spec, plan);
  Workload w;
  Shape in = spec.input_shape();
  for (std::size_t k = 0; k < plan.cut_index; ++k) {
    const auto& layer = spec.layers[k];
    const long long steps = in.steps;
    const long long i = layer.input_size;
    const long long o = layer.output_size;
    if (layer.is_lstm()) {
      w.macs += steps * 4 * o * (i + o);
      w.activations += steps * 5 * o;
    } else {
      w.macs += steps * i * o;
      if (layer.activation == Activation::Relu) w.activations += steps * o;
    }
    in = spec.output_shape(k);
  }
  w.transferred = intermediate_size(spec, plan);
  return w;
}

double latency_estimate(const Workload& work, const LatencyModelConfig& cfg) {
  cfg.validate();
  const double cycles = cfg.cycles_per_mac * static_cast<double>(work.macs) +
                        cfg.cycles_per_activation * static_cast<double>(work.activations) +
                        cfg.cycles_per_transferred_element * static_cast<double>(work.transferred);
  return cycles / cfg.clock_mhz;
}

double latency_estimate(const ModelSpec& spec, const SplitPlan& plan, const LatencyModelConfig& cfg) {
  return latency_estimate(edge_workload(spec, plan), cfg);
}

LatencyModelConfig calibrate_latency(std::span<const LatencyTarget> targets, double clock_mhz) {
  if (targets.size() != 3) throw ConfigError("latency calibration needs exactly three targets");
  if (!(clock_mhz > 0.0)) throw ConfigError("clock must be positive");
  Eigen::Matrix3d a;
  Eigen::Vector3d b;
  for (int r = 0; r < 3; ++r) {
    const auto& t = targets[static_cast<std::size_t>(r)];
    a(r, 0) = static_cast<double>(t.work.macs);
    a(r, 1) = static_cast<double>(t.work.activations);
    a(r, 2) = static_cast<double>(t.work.transferred);
    b(r) = t.latency_us * clock_mhz;
  }
  const auto lu = a.fullPivLu();
  if (!lu.isInvertible()) throw ConfigError("latency targets are linearly dependent");
  const Eigen::Vector3d x = lu.solve(b);
  LatencyModelConfig cfg{clock_mhz, x(0), x(1), x(2)};
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

const ReferenceDeployment& ReferenceFixtures::deployment(const std::string& variant) const {
  for (const auto& d : deployments) {
    if (d.variant == variant) return d;
  }
  throw ConfigError("no reference fixture for variant " + variant);
}

ReferenceFixtures parse_fixtures(const std::string& json_text) {
  ReferenceFixtures f;
  try {
    const auto j = nlohmann::json::parse(json_text);
    auto model = [](const nlohmann::json& m) {
      return ReferenceModel{m.at("params").get<std::size_t>(), m.at("size_kb").get<double>(),
                            m.at("mae").get<double>(), m.at("mse").get<double>(), m.at("r2").get<double>()};
    };
    f.teacher = model(j.at("models").at("teacher"));
    f.student = model(j.at("models").at("student"));
    f.compression_ratio = j.at("compression_ratio").get<double>();
    for (const auto& d : j.at("deployments")) {
      ReferenceDeployment r;
      r.variant = d.at("variant").get<std::string>();
      r.utilization.resources = {d.at("bram").get<double>(), d.at("dsp").get<double>(), d.at("lut").get<double>(),
                                 d.at("ff").get<double>()};
      r.utilization.overall_max = d.at("overall_max").get<double>();
      r.latency_us = d.at("latency_us").get<double>();
      r.clock_mhz = d.at("clock_mhz").get<double>();
      r.scalability = d.at("scalability").get<int>();
      r.power_w = d.at("power_w").get<double>();
      f.deployments.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid fixtures: ") + e.what());
  }
  return f;
}

ReferenceFixtures load_fixtures(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("fixtures file not found: " + path.string());
  const auto bytes = read_file(path);
  return parse_fixtures(std::string(bytes.begin(), bytes.end()));
}

std::filesystem::path default_fixtures_path() {
  return std::filesystem::path(SPLITLSTM_DATA_DIR) / "reference_fixtures.json";
}

DeploymentReport build_report(const ModelSpec& teacher, const ModelSpec& student, const ReferenceFixtures& fixtures,
                              const LatencyModelConfig& cfg) {
  DeploymentReport report;
  report.teacher_params = param_count(teacher);
  report.student_params = param_count(student);
  report.teacher_size_kb = round_decimals(model_size_kb(report.teacher_params), 2);
  report.student_size_kb = round_decimals(model_size_kb(report.student_params), 2);
  report.compression_ratio = compression_ratio(report.teacher_params, report.student_params);
  report.reference = fixtures;

  for (Preset preset : {Preset::LstmDoS, Preset::SplitA, Preset::SplitB}) {
    const SplitPlan plan = make_plan(student, preset);
    VariantReport v;
    v.variant = plan.name;
    v.cut_index = plan.cut_index;
    v.edge_params = param_count(student.slice(0, plan.cut_index));
    v.server_params = report.student_params - v.edge_params;
    v.intermediate_size = intermediate_size(student, plan);
    v.frame_bytes_float32 = intermediate_frame_size(v.intermediate_size, WireDtype::Float32);
    v.frame_bytes_q8 = intermediate_frame_size(v.intermediate_size, WireDtype::Q8);
    v.edge_size_kb = round_decimals(model_size_kb(v.edge_params), 2);
    v.workload = edge_workload(student, plan);
    v.latency_us = latency_estimate(v.workload, cfg);
    v.reference = fixtures.deployment(plan.name);
    v.sc_design = scalability_from_design(v.reference.utilization);
    v.sc_raw = scalability({100, 100, 100, 100}, v.reference.utilization.resources);
    report.variants.push_back(v);
  }
  return report;
}

std::string DeploymentReport::to_csv() const {
  std::string out =
      "variant,cut_index,edge_params,server_params,intermediate_size,frame_bytes_float32,frame_bytes_q8,"
      "edge_size_kb,student_size_kb,teacher_size_kb,compression_ratio,macs,activations,latency_us,sc_design,sc_raw,"
      "ref_latency_us,ref_clock_mhz,ref_sc,ref_power_w,ref_bram,ref_dsp,ref_lut,ref_ff,ref_overall_max\n";
  for (const auto& v : variants) {
    const auto& r = v.reference;
    out += v.variant + "," + std::to_string(v.cut_index) + "," + std::to_string(v.edge_params) + "," +
           std::to_string(v.server_params) + "," + std::to_string(v.intermediate_size) + "," +
           std::to_string(v.frame_bytes_float32) + "," + std::to_string(v.frame_bytes_q8) + "," +
           fmt("%.2f", v.edge_size_kb) + "," + fmt("%.2f", student_size_kb) + "," + fmt("%.2f", teacher_size_kb) +
           "," + fmt("%.2f", compression_ratio) + "," + std::to_string(v.workload.macs) + "," +
           std::to_string(v.workload.activations) + "," + fmt("%.4f", v.latency_us) + "," +
           std::to_string(v.sc_design) + "," + std::to_string(v.sc_raw) + "," + fmt("%.2f", r.latency_us) + "," +
           fmt("%g", r.clock_mhz) + "," + std::to_string(r.scalability) + "," + fmt("%.3f", r.power_w) + "," +
           fmt("%g", r.utilization.resources.bram) + "," + fmt("%g", r.utilization.resources.dsp) + "," +
           fmt("%g", r.utilization.resources.lut) + "," + fmt("%g", r.utilization.resources.ff) + "," +
           fmt("%g", r.utilization.overall_max) + "\n";
  }
  return out;
}

std::string DeploymentReport::to_text() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "teacher  %6zu params  %7.2f KB   (reference %zu, %.2f KB)\n", teacher_params,
                teacher_size_kb, reference.teacher.params, reference.teacher.size_kb);
  out += line;
  std::snprintf(line, sizeof line, "student  %6zu params  %7.2f KB   (reference %zu, %.2f KB)\n", student_params,
                student_size_kb, reference.student.params, reference.student.size_kb);
  out += line;
  std::snprintf(line, sizeof line, "compression ratio %.2fx   (reference %.2fx)\n\n", compression_ratio,
                reference.compression_ratio);
  out += line;
  std::snprintf(line, sizeof line, "%-10s %4s %6s %6s %5s %7s %7s %10s %10s %6s %6s %8s %7s\n", "variant", "cut", "edge",
                "server", "z", "B/f32", "B/q8", "lat[us]", "ref[us]", "SC", "SCraw", "ref SC", "ref W");
  out += line;
  for (const auto& v : variants) {
    std::snprintf(line, sizeof line, "%-10s %4zu %6zu %6zu %5d %7zu %7zu %10.3f %10.2f %6d %6d %8d %7.3f\n",
                  v.variant.c_str(), v.cut_index, v.edge_params, v.server_params, v.intermediate_size,
                  v.frame_bytes_float32, v.frame_bytes_q8, v.latency_us, v.reference.latency_us, v.sc_design, v.sc_raw,
                  v.reference.scalability, v.reference.power_w);
    out += line;
  }
  out +=
      "\nSC is floor(100 / overall max utilization); SCraw applies min floor(100 / r) over the per-resource rows.\n"
      "Latency is a calibrated linear model of edge MACs, activations and transferred elements.\n";
  return out;
}

}  // namespace splitlstm
