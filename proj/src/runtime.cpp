// SPDX-License-Identifier: Apache-2.0
#include "splitlstm/runtime.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <memory>
#include <utility>

#include <spdlog/spdlog.h>

#include "splitlstm/error.hpp"

namespace splitlstm {
namespace {

using Clock = std::chrono::steady_clock;

class IoError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public IoError {
 public:
  using IoError::IoError;
};

class PeerClosed : public IoError {
 public:
  using IoError::IoError;
};

std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }

  int fd() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL, 0);
  if (flags < 0 || ::fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) throw IoError(errno_text("fcntl"));
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return static_cast<int>(std::clamp<long long>(left, 0, 1 << 30));
}

// Waits for `events`; false on deadline.
bool wait_for(int fd, short events, Clock::time_point deadline) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw IoError(errno_text("poll"));
  }
}

struct Traffic {
  std::uint64_t sent = 0;
  std::uint64_t received = 0;
};

void send_all(int fd, std::span<const std::uint8_t> bytes, Clock::time_point deadline, Traffic* traffic) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n > 0) {
      done += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      if (!wait_for(fd, POLLOUT, deadline)) throw TimeoutError("send timed out");
      continue;
    }
    throw IoError(errno_text("send"));
  }
  if (traffic) traffic->sent += bytes.size();
}

void recv_exact(int fd, std::span<std::uint8_t> out, Clock::time_point deadline, Traffic* traffic) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::recv(fd, out.data() + done, out.size() - done, 0);
    if (n > 0) {
      done += static_cast<std::size_t>(n);
      continue;
    }
    if (n == 0) throw PeerClosed("connection closed by peer");
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      if (!wait_for(fd, POLLIN, deadline)) throw TimeoutError("receive timed out");
      continue;
    }
    throw IoError(errno_text("recv"));
  }
  if (traffic) traffic->received += out.size();
}

Frame read_frame(int fd, Clock::time_point deadline, Traffic* traffic) {
  std::vector<std::uint8_t> bytes(kFrameHeaderSize);
  recv_exact(fd, bytes, deadline, traffic);
  const std::uint32_t len = frame_payload_length(std::span<const std::uint8_t, kFrameHeaderSize>(bytes.data(), kFrameHeaderSize));
  bytes.resize(kFrameOverhead + len);
  recv_exact(fd, std::span(bytes).subspan(kFrameHeaderSize), deadline, traffic);
  return decode_frame(bytes);
}

void write_frame(int fd, const Frame& frame, Clock::time_point deadline, Traffic* traffic) {
  send_all(fd, encode_frame(frame), deadline, traffic);
}

using AddrInfo = std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)>;

AddrInfo resolve(const Endpoint& endpoint, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* head = nullptr;
  const std::string port = std::to_string(endpoint.port);
  const int rc = ::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &head);
  if (rc != 0) throw IoError("cannot resolve " + endpoint.to_string() + ": " + ::gai_strerror(rc));
  return AddrInfo(head, &::freeaddrinfo);
}

Socket connect_to(const Endpoint& endpoint, Clock::time_point deadline) {
  const AddrInfo info = resolve(endpoint, false);
  std::string last = "no addresses";
  for (addrinfo* a = info.get(); a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s) continue;
    set_nonblocking(s.fd());
    if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) < 0) {
      if (errno != EINPROGRESS) {
        last = errno_text("connect");
        continue;
      }
      if (!wait_for(s.fd(), POLLOUT, deadline)) throw TimeoutError("connect to " + endpoint.to_string() + " timed out");
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last = std::string("connect: ") + std::strerror(err);
        continue;
      }
    }
    const int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
  }
  throw IoError("cannot connect to " + endpoint.to_string() + ": " + last);
}

template <typename P>
void check_deployment(const SplitManifest& manifest, const SplitModels<P>& halves) {
  if (manifest.cut_index != halves.plan.cut_index) throw ConfigError("manifest cut index disagrees with the model halves");
  if (manifest.intermediate_size != halves.edge.intermediate_size) {
    throw ConfigError("manifest intermediate size disagrees with the model halves");
  }
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError("endpoint must look like host:port, got '" + text + "'");
  }
  Endpoint e;
  e.host = text.substr(0, colon);
  if (e.host.size() >= 2 && e.host.front() == '[' && e.host.back() == ']') e.host = e.host.substr(1, e.host.size() - 2);
  const std::string port = text.substr(colon + 1);
  if (!std::all_of(port.begin(), port.end(), [](unsigned char c) { return std::isdigit(c); }) || port.size() > 5 ||
      std::stoul(port) > 65535) {
    throw ConfigError("invalid port in endpoint '" + text + "'");
  }
  e.port = static_cast<std::uint16_t>(std::stoul(port));
  return e;
}

std::string Endpoint::to_string() const {
  const bool v6 = host.find(':') != std::string::npos;
  return (v6 ? "[" + host + "]" : host) + ":" + std::to_string(port);
}

std::pair<EdgeDeployment, ServerDeployment> deploy(const SplitManifest& manifest,
                                                   const SplitModels<FloatParameters>& halves) {
  if (manifest.dtype != WireDtype::Float32) throw ConfigError("float halves need a float32 manifest");
  check_deployment(manifest, halves);
  return {EdgeDeployment{manifest, halves.edge}, ServerDeployment{manifest, halves.server}};
}

std::pair<EdgeDeployment, ServerDeployment> deploy(const SplitManifest& manifest,
                                                   const SplitModels<QuantizedParameters>& halves) {
  if (manifest.dtype != WireDtype::Q8) throw ConfigError("quantized halves need a q8 manifest");
  if (manifest.format != halves.edge.params.format) throw ConfigError("manifest format disagrees with the model");
  check_deployment(manifest, halves);
  return {EdgeDeployment{manifest, halves.edge}, ServerDeployment{manifest, halves.server}};
}

Tensor edge_compute(const EdgeDeployment& edge, std::span<const double> window) {
  return std::visit(
      [&](const auto& model) -> Tensor {
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, EdgeModel<FloatParameters>>) {
          const auto w = to_float(window);
          return edge_forward(model, w);
        } else {
          return edge_forward(model, window);
        }
      },
      edge.model);
}

Prediction server_compute(const ServerDeployment& server, const Tensor& z) {
  return std::visit(
      [&](const auto& model) -> Prediction {
        using M = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<M, ServerModel<FloatParameters>>) {
          const auto* v = std::get_if<std::vector<float>>(&z);
          if (!v) throw ConfigError("server expects float32 intermediates");
          return server_forward(model, *v);
        } else {
          const auto* v = std::get_if<std::vector<std::int8_t>>(&z);
          if (!v) throw ConfigError("server expects q8 intermediates");
          return server_forward(model, *v);
        }
      },
      server.model);
}

double prediction_value(const Prediction& y, const std::optional<FixedPointFormat>& fmt) {
  if (const auto* f = std::get_if<float>(&y)) return static_cast<double>(*f);
  if (!fmt) throw ConfigError("q8 prediction without a format");
  return dequantize(std::get<std::int8_t>(y), *fmt);
}

// ---------------------------------------------------------------------------
// Server

Server::Server(ServerDeployment deployment, const Endpoint& endpoint) : deployment_(std::move(deployment)) {
  const AddrInfo info = resolve(endpoint, true);
  std::string last = "no addresses";
  for (addrinfo* a = info.get(); a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s) continue;
    const int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) < 0 || ::listen(s.fd(), 16) < 0) {
      last = errno_text("bind/listen");
      continue;
    }
    set_nonblocking(s.fd());
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port
                                             : reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    listen_fd_ = s.release();
    break;
  }
  if (listen_fd_ < 0) throw IoError("cannot listen on " + endpoint.to_string() + ": " + last);
}

Server::~Server() {
  stop();
  std::lock_guard lock(threads_mutex_);
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void Server::serve() {
  spdlog::info("serving plan {} ({}) on port {}", deployment_.manifest.plan, to_string(deployment_.manifest.dtype),
               port_);
  while (!stopping_.load()) {
    pollfd p{listen_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
    if (fd < 0) continue;
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(threads_mutex_);
    threads_.emplace_back([this, fd] { handle(fd); });
  }
  std::lock_guard lock(threads_mutex_);
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
  spdlog::info("server stopped after {} requests", served_.load());
}

void Server::handle(int raw_fd) {
  Socket sock(raw_fd);
  const int fd = sock.fd();
  const SplitManifest& mine = deployment_.manifest;
  const auto reserved = mine.format ? mine.format->descriptor() : std::uint8_t{0};
  bool greeted = false;
  constexpr auto kFrameTimeout = std::chrono::seconds(5);

  auto reply_error = [&](ErrorCode code, const std::string& message) {
    spdlog::debug("connection {}: error {} {}", fd, static_cast<int>(code), message);
    write_frame(fd, error_frame({code, message}), Clock::now() + kFrameTimeout, nullptr);
  };

  try {
    while (!stopping_.load()) {
      // Idle wait in short slices so stop() is observed between requests.
      if (!wait_for(fd, POLLIN, Clock::now() + std::chrono::milliseconds(100))) continue;
      Frame frame;
      try {
        frame = read_frame(fd, Clock::now() + kFrameTimeout, nullptr);
      } catch (const FormatError& e) {
        reply_error(ErrorCode::MalformedFrame, e.what());
        return;
      }

      switch (frame.type) {
        case MsgType::Hello: {
          SplitManifest theirs;
          try {
            theirs = parse_hello(frame);
          } catch (const FormatError& e) {
            reply_error(ErrorCode::MalformedFrame, e.what());
            return;
          }
          if (const std::string why = mine.mismatch(theirs); !why.empty()) {
            greeted = false;
            reply_error(ErrorCode::ManifestMismatch, why);
            break;
          }
          greeted = true;
          write_frame(fd, Frame{MsgType::Hello, mine.dtype, reserved, {}}, Clock::now() + kFrameTimeout, nullptr);
          break;
        }
        case MsgType::Intermediate: {
          if (!greeted) {
            reply_error(ErrorCode::ProtocolViolation, "INTERMEDIATE before an accepted HELLO");
            break;
          }
          if (frame.dtype != mine.dtype || frame.reserved != reserved) {
            reply_error(ErrorCode::DtypeMismatch, "frame dtype/format disagrees with the manifest");
            break;
          }
          Tensor z;
          try {
            z = deserialize_intermediate(frame.payload, frame.dtype);
          } catch (const FormatError& e) {
            reply_error(ErrorCode::MalformedFrame, e.what());
            return;
          }
          Prediction y;
          try {
            y = server_compute(deployment_, z);
          } catch (const ShapeError& e) {
            reply_error(ErrorCode::ShapeMismatch, e.what());
            break;
          }
          write_frame(fd, prediction_frame(y, mine.format), Clock::now() + kFrameTimeout, nullptr);
          served_.fetch_add(1);
          break;
        }
        case MsgType::Prediction:
        case MsgType::Error:
          reply_error(ErrorCode::ProtocolViolation, "unexpected " + to_string(frame.type) + " from edge");
          break;
      }
    }
  } catch (const PeerClosed&) {
    spdlog::debug("connection {} closed", fd);
  } catch (const std::exception& e) {
    spdlog::warn("connection {}: {}", fd, e.what());
  }
}

// ---------------------------------------------------------------------------
// Edge

std::size_t EdgeRunResult::failures() const {
  return static_cast<std::size_t>(
      std::count_if(windows.begin(), windows.end(), [](const auto& w) { return !w.prediction.has_value(); }));
}

EdgeRunResult run_edge(const EdgeDeployment& edge, const std::vector<std::vector<double>>& windows,
                       const Endpoint& endpoint, const EdgeOptions& options) {
  EdgeRunResult result;
  result.windows.resize(windows.size());
  Traffic traffic;
  Socket conn;
  const auto& manifest = edge.manifest;

  auto open = [&](Clock::time_point deadline) {
    conn = connect_to(endpoint, deadline);
    write_frame(conn.fd(), hello_frame(manifest), deadline, &traffic);
    const Frame ack = read_frame(conn.fd(), deadline, &traffic);
    if (ack.type == MsgType::Error) {
      const auto err = parse_error(ack);
      throw Error("server rejected HELLO (code " + std::to_string(static_cast<int>(err.code)) + "): " + err.message);
    }
    if (ack.type != MsgType::Hello) throw Error("expected HELLO ack, got " + to_string(ack.type));
  };

  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto& out = result.windows[i];
    Tensor z;
    try {
      z = edge_compute(edge, windows[i]);
    } catch (const std::exception& e) {
      out.error = e.what();
      continue;
    }
    const auto deadline = Clock::now() + options.timeout;
    try {
      if (!conn) open(deadline);
      const auto bytes = encode_frame(intermediate_frame(z, manifest.format));
      send_all(conn.fd(), bytes, deadline, &traffic);
      result.intermediate_bytes += bytes.size();
      const Frame reply = read_frame(conn.fd(), deadline, &traffic);
      if (reply.type == MsgType::Error) {
        const auto err = parse_error(reply);
        out.error = "server error " + std::to_string(static_cast<int>(err.code)) + ": " + err.message;
        continue;
      }
      const Prediction y = parse_prediction(reply);
      if (reply.dtype != manifest.dtype) throw Error("prediction dtype disagrees with the manifest");
      out.prediction = y;
      out.value = prediction_value(y, manifest.format);
    } catch (const std::exception& e) {
      out.error = e.what();
      conn.reset();
    }
  }
  result.bytes_sent = traffic.sent;
  result.bytes_received = traffic.received;
  return result;
}

}  // namespace splitlstm
