// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splitlstm/model.hpp"
#include "splitlstm/split.hpp"

namespace splitlstm {

/// Percent of device totals.
struct ResourceVector {
  double bram = 0.0;
  double dsp = 0.0;
  double lut = 0.0;
  double ff = 0.0;
};

struct ResourceUtilization {
  ResourceVector resources;
  /// Utilization of the whole integrated design, infrastructure included.
  double overall_max = 0.0;
};

/// min over resources of floor(total_r / pe_r). Throws ConfigError when a pe
/// component is not positive.
int scalability(const ResourceVector& total, const ResourceVector& pe);
/// floor(100 / overall_max): the whole integrated design counted as the PE.
int scalability_from_design(const ResourceUtilization& u);

// ---------------------------------------------------------------------------
// Latency

/// Defaults are the exact solution of the three reference latencies at 80 MHz
/// for the student presets.
struct LatencyModelConfig {
  double clock_mhz = 80.0;
  double cycles_per_mac = 0.013317365269461246;
  double cycles_per_activation = 0.066970059880237853;
  double cycles_per_transferred_element = 0.96718562874251568;

  void validate() const;
};

/// Edge-side operation counts for one window.
struct Workload {
  long long macs = 0;
  long long activations = 0;  // nonlinear evaluations; linear outputs are free
  int transferred = 0;        // intermediate elements leaving the edge

  bool operator==(const Workload&) const = default;
};

/// LSTM: 4h(in+h) MACs and 5h activations per step; Dense: in*out MACs and
/// out activations (relu only) per step.
Workload edge_workload(const ModelSpec& spec, const SplitPlan& plan);

double latency_estimate(const Workload& work, const LatencyModelConfig& cfg);
double latency_estimate(const ModelSpec& spec, const SplitPlan& plan, const LatencyModelConfig& cfg);

struct LatencyTarget {
  Workload work;
  double latency_us = 0.0;
};

/// Solves for the three cycle coefficients from exactly three targets.
LatencyModelConfig calibrate_latency(std::span<const LatencyTarget> targets, double clock_mhz = 80.0);

// ---------------------------------------------------------------------------
// Reference fixtures and the deployment report

struct ReferenceModel {
  std::size_t params = 0;
  double size_kb = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  double r2 = 0.0;
};

struct ReferenceDeployment {
  std::string variant;
  ResourceUtilization utilization;
  double latency_us = 0.0;
  double clock_mhz = 0.0;
  int scalability = 0;
  double power_w = 0.0;
};

struct ReferenceFixtures {
  ReferenceModel teacher;
  ReferenceModel student;
  double compression_ratio = 0.0;
  std::vector<ReferenceDeployment> deployments;

  /// Throws ConfigError for an unknown variant.
  const ReferenceDeployment& deployment(const std::string& variant) const;
};

ReferenceFixtures parse_fixtures(const std::string& json_text);
ReferenceFixtures load_fixtures(const std::filesystem::path& path);
/// Fixture file shipped with the sources.
std::filesystem::path default_fixtures_path();

struct VariantReport {
  std::string variant;
  std::size_t cut_index = 0;
  std::size_t edge_params = 0;
  std::size_t server_params = 0;
  int intermediate_size = 0;
  std::size_t frame_bytes_float32 = 0;  // one INTERMEDIATE frame
  std::size_t frame_bytes_q8 = 0;
  double edge_size_kb = 0.0;
  Workload workload;
  double latency_us = 0.0;
  int sc_design = 0;
  int sc_raw = 0;
  ReferenceDeployment reference;
};

struct DeploymentReport {
  std::size_t teacher_params = 0;
  std::size_t student_params = 0;
  double teacher_size_kb = 0.0;  // 2 decimals
  double student_size_kb = 0.0;
  double compression_ratio = 0.0;
  ReferenceFixtures reference;
  std::vector<VariantReport> variants;

  std::string to_csv() const;
  std::string to_text() const;
};

/// One row per student preset, measured values next to the reference ones.
DeploymentReport build_report(const ModelSpec& teacher, const ModelSpec& student, const ReferenceFixtures& fixtures,
                              const LatencyModelConfig& cfg = {});

}  // namespace splitlstm
