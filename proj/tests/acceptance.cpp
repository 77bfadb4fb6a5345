// Acceptance checks. Prints one line per criterion:
//   criterion N: PASS|FAIL: details
// and exits 1 if any selected criterion fails. Tolerances are pinned here.
#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "splitlstm/binary.hpp"
#include "splitlstm/compression.hpp"
#include "splitlstm/costmodel.hpp"
#include "splitlstm/data.hpp"
#include "splitlstm/model_io.hpp"
#include "splitlstm/random.hpp"
#include "splitlstm/runtime.hpp"
#include "splitlstm/split.hpp"
#include "splitlstm/training.hpp"
#include "splitlstm/wire.hpp"

using namespace splitlstm;

namespace {

constexpr std::size_t kStudentParams = 871;
constexpr std::size_t kTeacherTarget = 39951;
constexpr double kRatio = 45.90;
constexpr double kRatioTolerance = 0.01;
constexpr double kGradTolerance = 1e-4;
constexpr double kTeacherR2 = 0.95;
constexpr double kStudentR2 = 0.90;
constexpr double kStudentGap = 0.05;
constexpr double kQuantRetention = 0.9;
constexpr double kPipelineBudgetSeconds = 300.0;
constexpr std::uint64_t kDataSeed = 42;
constexpr int kDays = 3264;
constexpr std::uint64_t kTrainSeed = 1;
constexpr double kSparsity = 0.7;
const FixedPointFormat kFormat{3, 5};

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

std::vector<std::vector<double>> random_windows(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(n), std::vector<double>(kWindowLength));
  for (auto& w : out)
    for (double& v : w) v = rng.uniform01();
  return out;
}

constexpr std::array<Preset, 3> kPresets{Preset::LstmDoS, Preset::SplitA, Preset::SplitB};

// ---------------------------------------------------------------------------

Outcome criterion_1() {
  const auto t0 = Clock::now();
  const ModelSpec s = build_student();
  const std::size_t n = param_count(s);
  const double kb = round_decimals(model_size_kb(n), 2);
  std::array<int, 3> sizes{};
  for (std::size_t i = 0; i < 3; ++i) sizes[i] = intermediate_size(s, make_plan(s, kPresets[i]));
  const double t = seconds_since(t0);
  const bool ok = n == kStudentParams && kb == 3.40 && sizes == std::array<int, 3>{1, 5, 150} && t < 1.0;
  return {ok, fmt("params %zu, size %.2f KB, intermediate %d/%d/%d, %.3f s", n, kb, sizes[0], sizes[1], sizes[2], t)};
}

Outcome criterion_2() {
  const auto t0 = Clock::now();
  const auto hits = search_teacher_dims(kTeacherTarget, 128);
  if (hits.empty()) {
    const TeacherDims c = closest_teacher_dims(kTeacherTarget, 128);
    const auto n = param_count(build_teacher(c.h1, c.d, c.h2));
    const double ratio = compression_ratio(n, kStudentParams);
    const bool ok = std::abs(ratio - kRatio) <= 0.02 * kRatio;
    return {ok, fmt("no exact teacher; closest (%d,%d,%d) with %zu params, ratio %.2f", c.h1, c.d, c.h2, n, ratio)};
  }
  const TeacherDims d = hits.front();
  const double kb = round_decimals(model_size_kb(param_count(build_teacher(d.h1, d.d, d.h2))), 2);
  const double ratio = compression_ratio(kTeacherTarget, kStudentParams);
  const double t = seconds_since(t0);
  const bool ok = kb == 156.06 && std::abs(ratio - kRatio) <= kRatioTolerance && t < 10.0;
  return {ok, fmt("%zu exact teachers, chosen (h1=%d, d=%d, h2=%d), size %.2f KB, ratio %.4f, %.2f s", hits.size(),
                  d.h1, d.d, d.h2, kb, ratio, t)};
}

Outcome criterion_3() {
  const auto t0 = Clock::now();
  const ModelSpec student = build_student();
  const TeacherDims d = closest_teacher_dims(kTeacherTarget, 128);
  const ModelSpec teacher = build_teacher(d.h1, d.d, d.h2);
  const auto windows = random_windows(1, 3);
  const Example datum{windows[0], 0.63};

  // MSE and KD are checked on the same parameters, sharing the perturbed passes.
  struct Case {
    const char* name;
    const ModelSpec* spec;
    std::uint64_t seed;
    double l2;
  };
  const std::array<Case, 2> cases{Case{"student", &student, 1, 0.01}, Case{"teacher", &teacher, 3, 0.001}};
  bool ok = true;
  std::string detail;
  for (const Case& c : cases) {
    const std::array<Objective, 2> objectives{Objective{LossKind::Mse, 1.0, c.l2}, Objective{LossKind::Kd, 0.1, c.l2}};
    const auto r = finite_diff_check(*c.spec, init_params(*c.spec, c.seed), datum, objectives, 0.41, 1e-5);
    for (std::size_t i = 0; i < r.size(); ++i) {
      ok = ok && r[i].max_relative_error < kGradTolerance && r[i].checked == param_count(*c.spec);
      detail += fmt("%s %s %.2e over %zu; ", c.name, i == 0 ? "mse" : "kd", r[i].max_relative_error, r[i].checked);
    }
  }
  const double t = seconds_since(t0);
  ok = ok && t < 30.0;
  return {ok, detail + fmt("%.1f s", t)};
}

Outcome criterion_4() {
  const ModelSpec s = build_student();
  const Parameters p = init_params(s, 4);
  const FloatParameters pf = p.cast<float>();
  const QuantizedParameters pq = quantize_params(p, kFormat);
  const auto windows = random_windows(100, 44);
  std::size_t compared = 0, mismatched = 0;
  for (Preset preset : kPresets) {
    const SplitPlan plan = make_plan(s, preset);
    const auto fs = partition(s, pf, plan);
    const auto qs = partition(s, pq, plan);
    for (const auto& w : windows) {
      const auto wf = to_float(w);
      const float split_f = server_forward(fs.server, edge_forward(fs.edge, wf));
      const float whole_f = float_forward(s, pf, wf);
      mismatched += std::memcmp(&split_f, &whole_f, sizeof(float)) != 0;
      mismatched += server_forward(qs.server, edge_forward(qs.edge, w)) != quantized_forward(s, pq, w).prediction;
      compared += 2;
    }
  }
  return {mismatched == 0, fmt("%zu comparisons over 3 presets x {float32, q8} x 100 windows, %zu mismatches", compared,
                               mismatched)};
}

Outcome criterion_5() {
  const ModelSpec s = build_student();
  const Parameters p = init_params(s, 5);
  const FloatParameters pf = p.cast<float>();
  const QuantizedParameters pq = quantize_params(p, kFormat);
  const auto windows = random_windows(100, 55);

  std::size_t runs = 0, mismatched = 0, failures = 0;
  for (Preset preset : kPresets) {
    const SplitPlan plan = make_plan(s, preset);
    for (WireDtype dtype : {WireDtype::Float32, WireDtype::Q8}) {
      SplitManifest m;
      m.model_hash = "acce9701";
      m.plan = plan.name;
      m.cut_index = plan.cut_index;
      m.intermediate_size = intermediate_size(s, plan);
      m.input_size = input_size(s);
      m.dtype = dtype;
      if (dtype == WireDtype::Q8) m.format = kFormat;
      auto [edge, server] = dtype == WireDtype::Q8 ? deploy(m, partition(s, pq, plan)) : deploy(m, partition(s, pf, plan));
      Server srv(std::move(server), Endpoint{"127.0.0.1", 0});
      std::thread serving([&srv] { srv.serve(); });
      const EdgeRunResult r = run_edge(edge, windows, Endpoint{"127.0.0.1", srv.port()});
      srv.stop();
      serving.join();
      failures += r.failures();
      for (std::size_t i = 0; i < windows.size(); ++i) {
        if (!r.windows[i].prediction) continue;
        if (dtype == WireDtype::Q8) {
          mismatched += std::get<std::int8_t>(*r.windows[i].prediction) != quantized_forward(s, pq, windows[i]).prediction;
        } else {
          const float local = float_forward(s, pf, to_float(windows[i]));
          const float remote = std::get<float>(*r.windows[i].prediction);
          mismatched += std::memcmp(&local, &remote, sizeof(float)) != 0;
        }
      }
      ++runs;
    }
  }

  Rng rng(5005);
  std::size_t round_trip_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    Frame f;
    f.type = static_cast<MsgType>(1 + rng.below(4));
    f.dtype = rng.below(2) ? WireDtype::Q8 : WireDtype::Float32;
    f.reserved = static_cast<std::uint8_t>(rng.below(256));
    f.payload.resize(rng.below(1024));
    for (auto& b : f.payload) b = static_cast<std::uint8_t>(rng.below(256));
    round_trip_bad += !(decode_frame(encode_frame(f)) == f);
  }

  // Every single-bit flip of a Split-B q8 frame, plus random multi-byte mutations.
  const auto frame = encode_frame(intermediate_frame(std::vector<std::int8_t>(150, 7), kFormat));
  std::size_t mutations = 0, accepted = 0;
  auto try_decode = [&](const std::vector<std::uint8_t>& bytes) {
    ++mutations;
    try {
      decode_frame(bytes);
      ++accepted;
    } catch (const FormatError&) {
    }
  };
  for (std::size_t i = 0; i < frame.size(); ++i) {
    for (int bit = 0; bit < 8; ++bit) {
      auto bytes = frame;
      bytes[i] ^= static_cast<std::uint8_t>(1u << bit);
      try_decode(bytes);
    }
  }
  for (int i = 0; i < 2000; ++i) {
    auto bytes = frame;
    const auto hits = 2 + rng.below(4);
    for (std::uint64_t k = 0; k < hits; ++k) bytes[rng.below(bytes.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    if (bytes != frame) try_decode(bytes);
  }

  const bool ok = mismatched == 0 && failures == 0 && round_trip_bad == 0 && accepted == 0;
  return {ok, fmt("%zu loopback runs x 100 windows: %zu mismatches, %zu failures; 1000 random frames: %zu bad round "
                  "trips; %zu mutated frames: %zu accepted",
                  runs, mismatched, failures, round_trip_bad, mutations, accepted)};
}

Outcome criterion_7() {
  std::size_t bound_violations = 0, swept = 0;
  for (int ib = 1; ib <= 7; ++ib) {
    const auto f = FixedPointFormat::with_integer_bits(ib);
    const double lo = f.min_value(), hi = f.max_value();
    const double bound = std::ldexp(1.0, -f.fractional_bits - 1);
    for (int i = 0; i < 100000; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / 99999.0;
      bound_violations += std::abs(dequantize(quantize_value(x, f), f) - x) > bound;
      ++swept;
    }
  }
  const FixedPointFormat& q = kFormat;
  const bool saturates = quantize_value(q.max_value() + 1.0, q) == 127 && quantize_value(1e9, q) == 127 &&
                         quantize_value(q.min_value() - 1.0, q) == -128 && quantize_value(-1e9, q) == -128 &&
                         quantize_value(4.0, q) == 127;
  // Exact halves k + 0.5 at the code scale must round to the even neighbour.
  std::size_t half_errors = 0, halves = 0;
  for (int k = -128; k < 127; ++k) {
    const double x = (k + 0.5) / 32.0;
    const int expected = (k % 2 == 0) ? k : k + 1;
    half_errors += quantize_value(x, q) != std::clamp(expected, -128, 127);
    ++halves;
  }
  const bool examples = quantize_value(0.1, q) == 3 && quantize_value(0.046875, q) == 2;
  const bool ok = bound_violations == 0 && saturates && half_errors == 0 && examples;
  return {ok, fmt("%zu swept values over 7 formats, %zu over the half-LSB bound; saturation %s; %zu exact halves, %zu "
                  "not rounded to even",
                  swept, bound_violations, saturates ? "ok" : "wrong", halves, half_errors)};
}

Outcome criterion_9() {
  const ReferenceFixtures f = load_fixtures(default_fixtures_path());
  std::array<int, 3> sc{};
  for (std::size_t i = 0; i < 3; ++i) {
    sc[i] = scalability_from_design(f.deployment(preset_name(kPresets[i])).utilization);
  }
  const int example = scalability(ResourceVector{100, 100, 100, 100}, ResourceVector{50, 25, 20, 10});
  Rng rng(909);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const ResourceVector total{rng.uniform(1, 100), rng.uniform(1, 100), rng.uniform(1, 100), rng.uniform(1, 100)};
    const ResourceVector pe{rng.uniform(0.5, 80), rng.uniform(0.5, 80), rng.uniform(0.5, 80), rng.uniform(0.5, 80)};
    const double k = std::ldexp(1.0, static_cast<int>(rng.below(12)) - 6);
    const ResourceVector ts{total.bram * k, total.dsp * k, total.lut * k, total.ff * k};
    const ResourceVector ps{pe.bram * k, pe.dsp * k, pe.lut * k, pe.ff * k};
    violations += scalability(ts, ps) != scalability(total, pe);
  }
  const bool ok = sc == std::array<int, 3>{1, 1, 2} && example == 2 && violations == 0;
  return {ok, fmt("design SC %d/%d/%d, example %d, scale invariance violated %zu of 10000", sc[0], sc[1], sc[2], example,
                  violations)};
}

Outcome criterion_10() {
  const ModelSpec s = build_student();
  const LatencyModelConfig cfg;
  const double a = latency_estimate(s, make_plan(s, Preset::SplitA), cfg);
  const double b = latency_estimate(s, make_plan(s, Preset::SplitB), cfg);
  LatencyModelConfig fast = cfg;
  fast.clock_mhz *= 2.0;
  bool halves = true;
  for (Preset p : kPresets) {
    const double base = latency_estimate(s, make_plan(s, p), cfg);
    halves = halves && std::abs(latency_estimate(s, make_plan(s, p), fast) - base / 2.0) <= 1e-12 * base;
  }
  const bool ok = b > a && halves;
  return {ok, fmt("Split-B %.3f us > Split-A %.3f us: %s; doubling the clock halves all estimates: %s", b, a,
                  b > a ? "yes" : "no", halves ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// Full pipeline, used by criteria 6, 8 and 11

struct PipelineRun {
  std::map<std::string, std::vector<std::uint8_t>> artifacts;
  Metrics teacher, student, quantized;
  PruneReport prune;
  std::size_t zeros_lost_in_quantization = 0;
  std::size_t prunable_zeros = 0;
  double seconds = 0.0;
};

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

PipelineRun run_pipeline() {
  const auto t0 = Clock::now();
  PipelineRun run;
  const TimeSeries series = generate_synthetic(kDataSeed, kDays);
  const PreparedData data = prepare(series);
  run.artifacts["series.csv"] = bytes_of(to_csv(series));

  const TeacherDims d = closest_teacher_dims(kTeacherTarget, 128);
  const ModelSpec teacher_spec = build_teacher(d.h1, d.d, d.h2);
  TrainConfig tc = TrainConfig::teacher_defaults();
  tc.seed = kTrainSeed;
  const TrainResult teacher = train_teacher(teacher_spec, data, tc);
  run.teacher = evaluate(teacher_spec, teacher.params, data.test);
  run.artifacts["teacher.slm"] = encode_model(teacher_spec, teacher.params);
  run.artifacts["teacher_history.csv"] = bytes_of(history_csv(teacher.history));

  const ModelSpec student_spec = build_student();
  TrainConfig sc = TrainConfig::student_defaults();
  sc.seed = kTrainSeed;
  // The float student is evaluated after the 32-bit round trip every deployed model goes through.
  const TrainResult student = distill(teacher_spec, teacher.params, student_spec, data, sc);
  const Model saved_student = decode_model(encode_model(student_spec, student.params));
  run.student = evaluate(student_spec, saved_student.params, data.test);
  run.artifacts["student.slm"] = encode_model(student_spec, student.params);
  run.artifacts["student_history.csv"] = bytes_of(history_csv(student.history));

  auto [pruned, report] = prune_global_magnitude(saved_student.params, kSparsity);
  run.prune = report;
  const QuantizedModel q = quantize_model(student_spec, pruned, kFormat);
  run.artifacts["student_pruned.slm"] = encode_model(student_spec, pruned);
  run.artifacts["student_q.slmq"] = encode_quantized_model(q);

  const auto pv = tensors(pruned);
  const auto qv = tensors(q.params.codes);
  for (std::size_t t = 0; t < pv.size(); ++t) {
    if (pv[t].role == TensorRole::Bias) continue;
    for (std::size_t i = 0; i < pv[t].values.size(); ++i) {
      if (pv[t].values[i] != 0.0) continue;
      ++run.prunable_zeros;
      run.zeros_lost_in_quantization += qv[t].values[i] != 0;
    }
  }

  std::vector<double> y, yq;
  std::ostringstream predictions;
  predictions << "index,y_true,y_float,y_q8\n";
  predictions.precision(17);
  const FloatParameters pf = saved_student.params.cast<float>();
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto& w = data.test[i];
    const double qv_pred = quantized_forward(student_spec, q.params, w.x).value;
    const float fv = float_forward(student_spec, pf, to_float(w.x));
    y.push_back(w.y);
    yq.push_back(qv_pred);
    predictions << i << ',' << data.norm.invert(w.y) << ',' << data.norm.invert(fv) << ','
                << data.norm.invert(qv_pred) << '\n';
  }
  run.quantized = metrics(y, yq);
  run.artifacts["predictions.csv"] = bytes_of(predictions.str());
  run.artifacts["report.csv"] =
      bytes_of(build_report(teacher_spec, student_spec, load_fixtures(default_fixtures_path())).to_csv());
  run.seconds = seconds_since(t0);
  return run;
}

double r2_or_nan(const Metrics& m) { return m.r2.value_or(std::nan("")); }

Outcome criterion_6(const PipelineRun& run) {
  const auto expected = static_cast<std::size_t>(std::llround(kSparsity * static_cast<double>(run.prune.total)));
  const bool exact = run.prune.zeroed == expected &&
                     run.prune.achieved_sparsity == static_cast<double>(expected) / static_cast<double>(run.prune.total);
  const bool ok = exact && run.prunable_zeros >= run.prune.zeroed && run.zeros_lost_in_quantization == 0;
  return {ok, fmt("%zu of %zu weights zeroed (sparsity %.6f, expected %zu); %zu zero weights, %zu nonzero after "
                  "quantization",
                  run.prune.zeroed, run.prune.total, run.prune.achieved_sparsity, expected, run.prunable_zeros,
                  run.zeros_lost_in_quantization)};
}

Outcome criterion_8(const PipelineRun& run) {
  const double t = r2_or_nan(run.teacher), s = r2_or_nan(run.student), q = r2_or_nan(run.quantized);
  const bool teacher_ok = t >= kTeacherR2;
  const bool student_ok = s >= kStudentR2;
  const bool gap_ok = std::abs(t - s) <= kStudentGap;
  const bool quant_ok = q >= kQuantRetention * s;
  const bool time_ok = run.seconds < kPipelineBudgetSeconds;
  const auto mark = [](bool b) { return b ? "ok" : "miss"; };
  return {teacher_ok && student_ok && gap_ok && quant_ok && time_ok,
          fmt("teacher R2 %.4f (>= %.2f %s); student R2 %.4f (>= %.2f %s); gap %.4f (<= %.2f %s); q8 pruned R2 %.4f "
              "(>= %.4f %s); pipeline %.0f s (< %.0f %s)",
              t, kTeacherR2, mark(teacher_ok), s, kStudentR2, mark(student_ok), std::abs(t - s), kStudentGap,
              mark(gap_ok), q, kQuantRetention * s, mark(quant_ok), run.seconds, kPipelineBudgetSeconds,
              mark(time_ok))};
}

Outcome criterion_11(const PipelineRun& a, const PipelineRun& b) {
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : a.artifacts) {
    const auto it = b.artifacts.find(name);
    if (it == b.artifacts.end() || it->second != bytes) differing.push_back(name);
  }
  std::string detail = fmt("%zu artifacts compared across two runs", a.artifacts.size());
  if (differing.empty()) {
    detail += ", all byte-identical (student.slm sha256 " + hash_hex(a.artifacts.at("student.slm")) + ")";
  } else {
    detail += ", differing:";
    for (const auto& n : differing) detail += " " + n;
  }
  return {differing.empty() && a.artifacts.size() == b.artifacts.size(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Comma-separated criterion numbers (default: all)")->delimiter(',')->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);
  std::set<int> selected(only.begin(), only.end());
  if (selected.empty())
    for (int i = 1; i <= 11; ++i) selected.insert(i);

  std::map<int, std::function<Outcome()>> simple{{1, criterion_1}, {2, criterion_2}, {3, criterion_3},
                                                  {4, criterion_4}, {5, criterion_5}, {7, criterion_7},
                                                  {9, criterion_9}, {10, criterion_10}};
  std::optional<PipelineRun> first, second;
  std::string pipeline_error;
  try {
    if (selected.contains(6) || selected.contains(8) || selected.contains(11)) first = run_pipeline();
    if (selected.contains(11)) second = run_pipeline();
  } catch (const std::exception& e) {
    pipeline_error = std::string("pipeline error: ") + e.what();
  }

  bool all = true;
  for (int n : selected) {
    Outcome o;
    try {
      if ((n == 6 || n == 8 || n == 11) && !pipeline_error.empty()) {
        o = {false, pipeline_error};
      } else if (n == 6) {
        o = criterion_6(*first);
      } else if (n == 8) {
        o = criterion_8(*first);
      } else if (n == 11) {
        o = criterion_11(*first, *second);
      } else {
        o = simple.at(n)();
      }
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("criterion %d: %s: %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
