// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "splitlstm/split.hpp"
#include "splitlstm/wire.hpp"

namespace splitlstm {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// "host:port"; port 0 asks the server for an ephemeral port.
  static Endpoint parse(const std::string& text);
  std::string to_string() const;
};

using AnyEdge = std::variant<EdgeModel<FloatParameters>, EdgeModel<QuantizedParameters>>;
using AnyServer = std::variant<ServerModel<FloatParameters>, ServerModel<QuantizedParameters>>;

struct EdgeDeployment {
  SplitManifest manifest;
  AnyEdge model;
};

struct ServerDeployment {
  SplitManifest manifest;
  AnyServer model;
};

/// Builds both deployments of one plan. dtype q8 requires quantized params.
std::pair<EdgeDeployment, ServerDeployment> deploy(const SplitManifest& manifest,
                                                   const SplitModels<FloatParameters>& halves);
std::pair<EdgeDeployment, ServerDeployment> deploy(const SplitManifest& manifest,
                                                   const SplitModels<QuantizedParameters>& halves);

/// Runs the edge half on one window (normalized values) and returns z.
Tensor edge_compute(const EdgeDeployment& edge, std::span<const double> window);
/// Runs the server half on z. Throws ShapeError / ConfigError on a bad z.
Prediction server_compute(const ServerDeployment& server, const Tensor& z);
/// Dequantized (q8) or widened (float32) value of a prediction.
double prediction_value(const Prediction& y, const std::optional<FixedPointFormat>& fmt);

/// TCP server. Each connection is handled on its own thread against the
/// shared immutable model; one request is processed at a time per connection.
class Server {
 public:
  /// Binds and listens immediately so port() is valid after construction.
  Server(ServerDeployment deployment, const Endpoint& endpoint);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const noexcept { return port_; }

  /// Accepts connections until stop(); joins every connection thread before
  /// returning, so an in-flight request completes.
  void serve();
  /// Async-signal-safe.
  void stop() noexcept { stopping_.store(true); }

  std::uint64_t requests_served() const noexcept { return served_.load(); }

 private:
  void handle(int fd);

  ServerDeployment deployment_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> served_{0};
  std::mutex threads_mutex_;
  std::vector<std::thread> threads_;
};

struct EdgeOptions {
  std::chrono::milliseconds timeout{5000};
};

struct WindowOutcome {
  std::optional<Prediction> prediction;
  double value = 0.0;  // dequantized prediction when present
  std::string error;
};

struct EdgeRunResult {
  std::vector<WindowOutcome> windows;
  std::uint64_t bytes_sent = 0;      // every frame, HELLO included
  std::uint64_t bytes_received = 0;
  std::uint64_t intermediate_bytes = 0;  // INTERMEDIATE frames only

  std::size_t failures() const;
};

/// Sends HELLO, then one INTERMEDIATE per window in order. Connection or
/// timeout failures are recorded per window; the edge reconnects for the next
/// window after a failure.
EdgeRunResult run_edge(const EdgeDeployment& edge, const std::vector<std::vector<double>>& windows,
                       const Endpoint& endpoint, const EdgeOptions& options = {});

}  // namespace splitlstm
