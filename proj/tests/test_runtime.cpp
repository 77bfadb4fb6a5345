#include <doctest.h>

#include <sys/socket.h>
#include <netinet/in.h>
#include <unistd.h>

#include <thread>

#include "splitlstm/error.hpp"
#include "splitlstm/runtime.hpp"
#include "test_support.hpp"

using namespace splitlstm;

namespace {

const FixedPointFormat kQ35{3, 5};

SplitManifest manifest_for(const ModelSpec& spec, const SplitPlan& plan, WireDtype dtype) {
  SplitManifest m;
  m.model_hash = "c0ffee00";
  m.plan = plan.name;
  m.cut_index = plan.cut_index;
  m.intermediate_size = intermediate_size(spec, plan);
  m.input_size = input_size(spec);
  m.dtype = dtype;
  if (dtype == WireDtype::Q8) m.format = kQ35;
  m.edge_hash = "00000001";
  m.server_hash = "00000002";
  return m;
}

std::vector<std::vector<double>> windows(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_window(rng));
  return out;
}

// Runs a server on an ephemeral loopback port for the lifetime of the object.
struct LiveServer {
  Server server;
  std::thread thread;

  explicit LiveServer(ServerDeployment d) : server(std::move(d), Endpoint{"127.0.0.1", 0}) {
    thread = std::thread([this] { server.serve(); });
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  Endpoint endpoint() const { return Endpoint{"127.0.0.1", server.port()}; }
};

std::uint16_t unused_port() {
  // Bind, read the port, close: nothing listens there afterwards.
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST_CASE("endpoint parsing") {
  const Endpoint e = Endpoint::parse("127.0.0.1:7000");
  CHECK(e.host == "127.0.0.1");
  CHECK(e.port == 7000);
  CHECK(e.to_string() == "127.0.0.1:7000");
  CHECK(Endpoint::parse("[::1]:80").host == "::1");
  CHECK(Endpoint::parse("localhost:0").port == 0);
  CHECK_THROWS_AS(Endpoint::parse("nohost"), ConfigError);
  CHECK_THROWS_AS(Endpoint::parse("h:70000"), ConfigError);
}

TEST_CASE("deploy checks the manifest against the halves") {
  const ModelSpec s = build_student();
  const SplitPlan b = make_plan(s, Preset::SplitB);
  const auto halves = partition(s, init_params(s, 1).cast<float>(), b);
  CHECK_NOTHROW(deploy(manifest_for(s, b, WireDtype::Float32), halves));
  CHECK_THROWS_AS(deploy(manifest_for(s, b, WireDtype::Q8), halves), ConfigError);
  auto wrong = manifest_for(s, b, WireDtype::Float32);
  wrong.intermediate_size = 5;
  CHECK_THROWS_AS(deploy(wrong, halves), ConfigError);
}

TEST_CASE("loopback Split-B q8 matches local quantized inference") {
  const ModelSpec s = build_student();
  const Parameters p = init_params(s, 31);
  const QuantizedParameters q = quantize_params(p, kQ35);
  const SplitPlan plan = make_plan(s, Preset::SplitB);
  auto [edge, server] = deploy(manifest_for(s, plan, WireDtype::Q8), partition(s, q, plan));

  const auto inputs = windows(10, 77);
  std::vector<std::int8_t> local;
  for (const auto& w : inputs) local.push_back(quantized_forward(s, q, w).prediction);

  LiveServer live(server);
  const EdgeRunResult r = run_edge(edge, inputs, live.endpoint());
  REQUIRE(r.windows.size() == 10);
  CHECK(r.failures() == 0);
  for (std::size_t i = 0; i < 10; ++i) {
    REQUIRE(r.windows[i].prediction.has_value());
    CHECK(std::get<std::int8_t>(*r.windows[i].prediction) == local[i]);
    CHECK(r.windows[i].value == dequantize(local[i], kQ35));
  }
  CHECK(r.intermediate_bytes == 10 * intermediate_frame_size(150, WireDtype::Q8));
  CHECK(live.server.requests_served() == 10);
}

TEST_CASE("loopback float32 for every preset") {
  const ModelSpec s = build_student();
  const FloatParameters pf = init_params(s, 32).cast<float>();
  const auto inputs = windows(4, 5);
  for (Preset preset : {Preset::LstmDoS, Preset::SplitA, Preset::SplitB}) {
    const SplitPlan plan = make_plan(s, preset);
    CAPTURE(plan.name);
    auto [edge, server] = deploy(manifest_for(s, plan, WireDtype::Float32), partition(s, pf, plan));
    LiveServer live(server);
    const EdgeRunResult r = run_edge(edge, inputs, live.endpoint());
    CHECK(r.failures() == 0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto wf = to_float(inputs[i]);
      CHECK(std::get<float>(*r.windows[i].prediction) == float_forward(s, pf, wf));
    }
    CHECK(r.intermediate_bytes ==
          inputs.size() * intermediate_frame_size(intermediate_size(s, plan), WireDtype::Float32));
  }
}

TEST_CASE("manifest mismatch is refused") {
  const ModelSpec s = build_student();
  const SplitPlan plan = make_plan(s, Preset::SplitA);
  const auto halves = partition(s, init_params(s, 2).cast<float>(), plan);
  auto server_manifest = manifest_for(s, plan, WireDtype::Float32);
  auto edge_manifest = server_manifest;
  edge_manifest.model_hash = "abad1dea";
  auto [edge, unused_server] = deploy(edge_manifest, halves);
  auto [unused_edge, server] = deploy(server_manifest, halves);
  (void)unused_server;
  (void)unused_edge;

  LiveServer live(server);
  const EdgeRunResult r = run_edge(edge, windows(3, 1), live.endpoint());
  CHECK(r.failures() == 3);
  for (const auto& w : r.windows) {
    CHECK_FALSE(w.prediction.has_value());
    CHECK(w.error.find("model") != std::string::npos);
  }
  CHECK(live.server.requests_served() == 0);
}

TEST_CASE("server down is reported per window") {
  const ModelSpec s = build_student();
  const SplitPlan plan = make_plan(s, Preset::SplitA);
  auto [edge, server] = deploy(manifest_for(s, plan, WireDtype::Float32),
                               partition(s, init_params(s, 3).cast<float>(), plan));
  (void)server;
  const EdgeRunResult r = run_edge(edge, windows(3, 2), Endpoint{"127.0.0.1", unused_port()},
                                   EdgeOptions{std::chrono::milliseconds(500)});
  CHECK(r.windows.size() == 3);
  CHECK(r.failures() == 3);
  for (const auto& w : r.windows) CHECK_FALSE(w.error.empty());
}

TEST_CASE("stop returns promptly with no clients") {
  const ModelSpec s = build_student();
  const SplitPlan plan = make_plan(s, Preset::SplitA);
  auto [edge, server] = deploy(manifest_for(s, plan, WireDtype::Float32),
                               partition(s, init_params(s, 4).cast<float>(), plan));
  (void)edge;
  const auto start = std::chrono::steady_clock::now();
  { LiveServer live(server); }
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(2));
}

TEST_CASE("server compute rejects a bad intermediate") {
  const ModelSpec s = build_student();
  const SplitPlan plan = make_plan(s, Preset::SplitA);
  auto [edge, server] = deploy(manifest_for(s, plan, WireDtype::Float32),
                               partition(s, init_params(s, 5).cast<float>(), plan));
  const Tensor z = edge_compute(edge, windows(1, 3)[0]);
  CHECK(element_count(z) == 5);
  CHECK_NOTHROW(server_compute(server, z));
  CHECK_THROWS_AS(server_compute(server, Tensor{std::vector<float>(4, 0.0f)}), ShapeError);
  CHECK_THROWS_AS(server_compute(server, Tensor{std::vector<std::int8_t>(5, 0)}), ConfigError);
}
