#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "splitlstm/compression.hpp"
#include "splitlstm/error.hpp"
#include "splitlstm/model_io.hpp"
#include "test_support.hpp"

using namespace splitlstm;

namespace {

const FixedPointFormat kQ35{3, 5};

Parameters single_dense(std::vector<double> kernel, double bias = 0.0) {
  Parameters p;
  DenseWeights<double> w{Matrix<double>(1, static_cast<Eigen::Index>(kernel.size())), Vector<double>::Constant(1, bias)};
  for (std::size_t i = 0; i < kernel.size(); ++i) w.kernel(0, static_cast<Eigen::Index>(i)) = kernel[i];
  p.layers.emplace_back(std::move(w));
  return p;
}

ModelSpec dense_1x1() {
  ModelSpec s;
  s.layers = {LayerSpec::dense(1, 1, Activation::Linear)};
  s.window_length = 1;
  s.sequence_input = false;
  return s;
}

std::vector<double> kernel_of(const Parameters& p) {
  const auto& k = std::get<DenseWeights<double>>(p.layers[0]).kernel;
  return {k.data(), k.data() + k.size()};
}

}  // namespace

TEST_CASE("pruning example") {
  const Parameters p = single_dense({0.5, -0.1, 0.2, 0.05, -0.3, 0.0, 0.7, 0.02, -0.04, 0.15}, 0.01);
  const auto [pruned, report] = prune_global_magnitude(p, 0.7);
  CHECK(report.total == 10);
  CHECK(report.zeroed == 7);
  CHECK(report.achieved_sparsity == doctest::Approx(0.7));
  CHECK(report.threshold == 0.2);
  const auto k = kernel_of(pruned);
  CHECK(k == std::vector<double>{0.5, 0, 0, 0, -0.3, 0, 0.7, 0, 0, 0});
  // Bias is not a prunable weight even though it is the smallest value.
  CHECK(std::get<DenseWeights<double>>(pruned.layers[0]).bias(0) == 0.01);
}

TEST_CASE("pruning edge cases") {
  const ModelSpec s = build_student();
  const Parameters p = init_params(s, 3);

  SUBCASE("target zero is the identity") {
    const auto [pruned, report] = prune_global_magnitude(p, 0.0);
    CHECK(pruned == p);
    CHECK(report.zeroed == 0);
  }
  SUBCASE("ties go to the earlier position") {
    const auto [pruned, report] = prune_global_magnitude(single_dense({1, -1, 1, -1}), 0.5);
    CHECK(kernel_of(pruned) == std::vector<double>{0, 0, 1, -1});
    CHECK(report.zeroed == 2);
  }
  SUBCASE("exact count and untouched survivors at 70 percent") {
    const auto [pruned, report] = prune_global_magnitude(p, 0.7);
    std::size_t weights = 0, zeros = 0;
    const auto before = tensors(p);
    const auto after = tensors(pruned);
    for (std::size_t t = 0; t < before.size(); ++t) {
      for (std::size_t i = 0; i < before[t].values.size(); ++i) {
        const double a = before[t].values[i], b = after[t].values[i];
        if (before[t].role == TensorRole::Bias) {
          CHECK(a == b);
          continue;
        }
        ++weights;
        if (b == 0.0) {
          ++zeros;
          CHECK(std::abs(a) <= report.threshold);
        } else {
          CHECK(a == b);
          CHECK(std::abs(a) >= report.threshold);
        }
      }
    }
    CHECK(weights == report.total);
    CHECK(report.total == 871 - (40 + 20 + 10 + 1));
    CHECK(zeros == static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(report.total))));
    CHECK(zeros == report.zeroed);
  }
  SUBCASE("range") {
    CHECK_THROWS_AS(prune_global_magnitude(p, 1.0), ConfigError);
    CHECK_THROWS_AS(prune_global_magnitude(p, -0.1), ConfigError);
  }
}

TEST_CASE("fixed-point examples") {
  CHECK(quantize_value(0.1, kQ35) == 3);
  CHECK(dequantize(3, kQ35) == 0.09375);
  CHECK(quantize_value(4.0, kQ35) == 127);
  CHECK(dequantize(127, kQ35) == 3.96875);
  CHECK(quantize_value(0.046875, kQ35) == 2);
  CHECK(quantize_value(0.078125, kQ35) == 2);  // 2.5 rounds to even
  CHECK(quantize_value(-4.0, kQ35) == -128);
  CHECK(quantize_value(-100.0, kQ35) == -128);
  CHECK(kQ35.resolution() == 1.0 / 32.0);
  CHECK(kQ35.max_value() == 3.96875);
  CHECK(kQ35.min_value() == -4.0);
}

TEST_CASE("fixed-point properties") {
  for (int ib = 1; ib <= 7; ++ib) {
    const auto fmt = FixedPointFormat::with_integer_bits(ib);
    for (int q = -128; q <= 127; ++q) {
      const auto code = static_cast<std::int8_t>(q);
      CHECK(quantize_value(dequantize(code, fmt), fmt) == code);
    }
    Rng rng(static_cast<std::uint64_t>(ib));
    std::int8_t prev_q = -128;
    std::vector<double> xs(2000);
    for (double& x : xs) x = rng.uniform(fmt.min_value() * 1.2, fmt.max_value() * 1.2);
    std::sort(xs.begin(), xs.end());
    for (double x : xs) {
      const std::int8_t q = quantize_value(x, fmt);
      CHECK(q >= prev_q);
      prev_q = q;
      if (x >= fmt.min_value() && x <= fmt.max_value()) {
        CHECK(std::abs(dequantize(q, fmt) - x) <= fmt.resolution() / 2.0 + 1e-15);
      }
    }
  }
}

TEST_CASE("format parsing") {
  CHECK(FixedPointFormat::parse("3.5") == kQ35);
  CHECK(FixedPointFormat::parse("2.6").fractional_bits == 6);
  CHECK(FixedPointFormat::from_descriptor(kQ35.descriptor()) == kQ35);
  CHECK(kQ35.descriptor() == 0x35);
  CHECK(kQ35.to_string() == "3.5");
  CHECK_THROWS_AS(FixedPointFormat::parse("3.6"), ConfigError);
  CHECK_THROWS_AS(FixedPointFormat::parse("q35"), ConfigError);
  CHECK_THROWS_AS(FixedPointFormat::with_integer_bits(0), ConfigError);
}

TEST_CASE("round half even shift") {
  CHECK(shift_round_half_even(48, 5) == 2);   // 1.5
  CHECK(shift_round_half_even(80, 5) == 2);   // 2.5
  CHECK(shift_round_half_even(-48, 5) == -2);
  CHECK(shift_round_half_even(49, 5) == 2);
  CHECK(shift_round_half_even(7, 0) == 7);
  CHECK(saturate_int8(300) == 127);
  CHECK(saturate_int8(-300) == -128);
}

TEST_CASE("activation tables") {
  const ActivationTable sig(TableFunction::Sigmoid, kQ35);
  const ActivationTable th(TableFunction::Tanh, kQ35);
  CHECK(ActivationTable::input_at(0) == -8.0);
  CHECK(ActivationTable::input_at(512) == 0.0);
  CHECK(sig.entries()[512] == 16);  // sigmoid(0) = 0.5
  CHECK(th.entries()[512] == 0);
  for (int k = 1; k < ActivationTable::kEntries; ++k) {
    CHECK(sig.entries()[k] >= sig.entries()[k - 1]);
    CHECK(th.entries()[k] >= th.entries()[k - 1]);
  }
  for (int q = -128; q <= 127; ++q) {
    const auto code = static_cast<std::int8_t>(q);
    CHECK(sig.lookup(code) >= 0);
    CHECK(sig.lookup(code) <= 32);
    CHECK(std::abs(dequantize(sig.lookup(code), kQ35) - sigmoid(dequantize(code, kQ35))) <= 2.0 / 32.0);
  }
}

TEST_CASE("integer engine examples") {
  const ModelSpec s = dense_1x1();
  SUBCASE("identity dense") {
    const auto q = quantize_params(single_dense({1.0}), kQ35);
    const std::vector<double> x{0.5};
    const auto r = quantized_forward(s, q, x);
    CHECK(r.prediction == 16);
    CHECK(r.value == 0.5);
  }
  SUBCASE("all-zero student") {
    const ModelSpec st = build_student();
    const auto q = quantize_params(zero_params<double>(st), kQ35);
    Rng rng(1);
    CHECK(quantized_forward(st, q, testing::random_window(rng)).prediction == 0);
  }
  SUBCASE("bit determinism") {
    const ModelSpec st = build_student();
    const auto q = quantize_params(init_params(st, 4), kQ35);
    Rng rng(2);
    const auto w = testing::random_window(rng);
    const auto a = quantized_forward(st, q, w);
    const auto b = quantized_forward(st, q, w);
    CHECK(a.taps == b.taps);
  }
  SUBCASE("wrong window length") {
    const ModelSpec st = build_student();
    const auto q = quantize_params(init_params(st, 4), kQ35);
    CHECK_THROWS_AS(quantized_forward(st, q, std::vector<double>(14, 0.1)), ShapeError);
  }
}

TEST_CASE("quantized engine tracks the float model") {
  const ModelSpec st = build_student();
  const Parameters p = testing::random_params(st, 21, 0.4);
  const auto q = quantize_params(p, kQ35);
  const Parameters dq = dequantize_params(q);
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto w = testing::random_window(rng);
    const double f = model_forward<double>(st, dq, w).prediction;
    worst = std::max(worst, std::abs(quantized_forward(st, q, w).value - f));
  }
  // Loose bound: a few LSBs of accumulated rounding through four layers.
  CHECK(worst < 0.25);
}

TEST_CASE("parameter quantization") {
  const ModelSpec st = build_student();
  const auto [pruned, report] = prune_global_magnitude(init_params(st, 6), 0.7);
  const auto q = quantize_params(pruned, kQ35);
  const auto a = tensors(pruned);
  const auto b = tensors(q.codes);
  for (std::size_t t = 0; t < a.size(); ++t) {
    for (std::size_t i = 0; i < a[t].values.size(); ++i) {
      if (a[t].values[i] == 0.0) CHECK(b[t].values[i] == 0);
      // Glorot-initialized values lie inside the Q3.5 range.
      CHECK(std::abs(dequantize(b[t].values[i], kQ35) - a[t].values[i]) <= 1.0 / 64.0 + 1e-15);
    }
  }
}

TEST_CASE("quantized container") {
  const ModelSpec st = build_student();
  const Parameters p = init_params(st, 8);
  const QuantizedModel m = quantize_model(st, p, kQ35);
  CHECK(m.params.source_hash == payload_crc32(encode_model(st, p)));
  CHECK(m.params.source_hash != quantize_model(st, init_params(st, 9), kQ35).params.source_hash);
  const auto bytes = encode_quantized_model(m);
  const QuantizedModel back = decode_quantized_model(bytes);
  CHECK(back.spec == st);
  CHECK(back.params == m.params);
  CHECK(encode_quantized_model(back) == bytes);

  const auto dir = testing::temp_dir("qmodel");
  save_quantized_model(m, dir / "q.slmq");
  CHECK(quantized_model_hash(load_quantized_model(dir / "q.slmq")) == quantized_model_hash(m));

  for (std::size_t i = 0; i < bytes.size(); i += 37) {
    auto bad = bytes;
    bad[i] ^= 0x04;
    CHECK_THROWS_AS(decode_quantized_model(bad), FormatError);
  }
  // A float container is not a quantized one.
  CHECK_THROWS_AS(decode_quantized_model(encode_model(st, p)), FormatError);
}

TEST_CASE("compression ratio") {
  CHECK(compression_ratio(39951, 871) == doctest::Approx(45.90).epsilon(0.0002));
  CHECK(round_decimals(compression_ratio(39951, 871), 2) == 45.9);
  CHECK(compression_ratio(871, 871) == 1.0);
  CHECK(compression_ratio(2048, 1024) == 2.0);
  CHECK_THROWS_AS(compression_ratio(0, 871), ConfigError);
}
