#include "addd/runtime.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <exception>
#include <iostream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "addd/errors.hpp"

namespace addd {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Envelopes

namespace {

const char* kind_name(EnvelopeKind k) {
  switch (k) {
    case EnvelopeKind::kReading: return "READING";
    case EnvelopeKind::kPrediction: return "PREDICTION";
    case EnvelopeKind::kRegion: return "REGION";
    case EnvelopeKind::kEnd: return "END";
  }
  return "?";
}

}  // namespace

std::string encode_envelope(const Envelope& e) {
  ojson j;
  j["kind"] = kind_name(e.kind);
  if (e.kind != EnvelopeKind::kRegion) j["sensor"] = e.sensor;
  j["t"] = e.t;
  switch (e.kind) {
    case EnvelopeKind::kReading: j["value"] = e.value; break;
    case EnvelopeKind::kPrediction: j["y"] = e.y; break;
    case EnvelopeKind::kRegion: j["nodes"] = e.nodes; break;
    case EnvelopeKind::kEnd: break;
  }
  return j.dump();
}

Envelope decode_envelope(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed envelope: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("envelope is not an object");
  auto field = [&](const char* key) -> const ojson& {
    const auto it = j.find(key);
    if (it == j.end()) throw ProtocolError(std::string("envelope lacks '") + key + "'");
    return *it;
  };
  const auto& kind = field("kind");
  if (!kind.is_string()) throw ProtocolError("envelope kind must be a string");
  Envelope e;
  const auto k = kind.get<std::string>();
  if (k == "READING") e.kind = EnvelopeKind::kReading;
  else if (k == "PREDICTION") e.kind = EnvelopeKind::kPrediction;
  else if (k == "REGION") e.kind = EnvelopeKind::kRegion;
  else if (k == "END") e.kind = EnvelopeKind::kEnd;
  else throw ProtocolError("unknown envelope kind " + k);

  const auto& t = field("t");
  if (!t.is_number_integer() || t.get<std::int64_t>() < 0) {
    throw ProtocolError("envelope step must be a nonnegative integer");
  }
  e.t = t.get<std::int64_t>();
  if (e.kind != EnvelopeKind::kRegion) {
    const auto& s = field("sensor");
    if (!s.is_string() || s.get<std::string>().empty()) {
      throw ProtocolError("envelope sensor must be a nonempty string");
    }
    e.sensor = s.get<std::string>();
  }
  switch (e.kind) {
    case EnvelopeKind::kReading: {
      const auto& v = field("value");
      if (!v.is_number()) throw ProtocolError("READING value must be a number");
      e.value = v.get<double>();
      break;
    }
    case EnvelopeKind::kPrediction: {
      const auto& y = field("y");
      if (!y.is_number_integer() || (y.get<int>() != 0 && y.get<int>() != 1)) {
        throw ProtocolError("PREDICTION y must be 0 or 1");
      }
      e.y = y.get<int>();
      break;
    }
    case EnvelopeKind::kRegion: {
      const auto& n = field("nodes");
      if (!n.is_array()) throw ProtocolError("REGION nodes must be an array");
      for (const auto& node : n) {
        if (!node.is_string()) throw ProtocolError("REGION nodes must be strings");
        e.nodes.push_back(node.get<std::string>());
      }
      break;
    }
    case EnvelopeKind::kEnd: break;
  }
  return e;
}

void log_to_stderr(const std::string& message) {
  std::cerr << "addd: " << message << '\n';
}

// ---------------------------------------------------------------------------
// Agent

void run_sensor_agent(const std::string& sensor, std::span<const double> readings,
                      Detector& detector, const LineSink& sink, const StepObserver& observer,
                      const AgentOptions& options) {
  auto deliver = [&](const std::string& line) {
    auto backoff = options.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      try {
        sink(line);
        return;
      } catch (const std::exception& e) {
        if (attempt >= options.max_attempts) {
          throw ProtocolError(fmt::format("agent {}: giving up after {} attempts: {}", sensor,
                                          attempt, e.what()));
        }
      }
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  };

  Envelope env;
  env.sensor = sensor;
  for (std::size_t i = 0; i < readings.size(); ++i) {
    const StepOutput out = detector.step(readings[i]);
    env.kind = EnvelopeKind::kPrediction;
    env.t = static_cast<std::int64_t>(i);
    env.y = out.y_hat;
    if (observer) observer(env.t, out);
    deliver(encode_envelope(env));
  }
  env.kind = EnvelopeKind::kEnd;
  env.t = static_cast<std::int64_t>(readings.size());
  deliver(encode_envelope(env));
}

// ---------------------------------------------------------------------------
// Barrier

BarrierState::BarrierState(std::vector<std::string> sensors, Clock::duration timeout, LogFn log)
    : sensors_(std::move(sensors)), timeout_(timeout), log_(std::move(log)) {
  if (sensors_.empty()) throw ValidationError("barrier needs at least one sensor");
  for (std::size_t i = 0; i < sensors_.size(); ++i) index_.emplace(sensors_[i], i);
  ended_.assign(sensors_.size(), std::nullopt);
}

bool BarrierState::accept(const Envelope& e, Clock::time_point now) {
  auto reject = [&](const std::string& why) {
    log_(fmt::format("rejected {}: {}", encode_envelope(e), why));
    return false;
  };
  const auto it = index_.find(e.sensor);
  if (it == index_.end()) return reject("unknown sensor");
  const std::size_t s = it->second;

  if (e.kind == EnvelopeKind::kEnd) {
    if (ended_[s]) return reject("duplicate END");
    ended_[s] = e.t;
    horizon_ = std::max(horizon_, e.t);
    return true;
  }
  if (e.kind != EnvelopeKind::kPrediction) return reject("center accepts PREDICTION and END only");
  if (ended_[s] && e.t >= *ended_[s]) return reject("prediction after END");
  if (e.t < next_) return reject("duplicate or late prediction for a released step");

  auto [pit, fresh] = pending_.try_emplace(e.t);
  Pending& p = pit->second;
  if (fresh) {
    p.y.assign(sensors_.size(), std::nullopt);
    p.first_arrival = now;
  }
  if (p.y[s]) return reject("duplicate prediction");
  p.y[s] = e.y;
  ++p.received;
  horizon_ = std::max(horizon_, e.t + 1);
  return true;
}

PredictionSnapshot BarrierState::complete(std::int64_t t, Pending& p, const char* reason) {
  PredictionSnapshot snap{t, std::vector<int>(sensors_.size(), 0)};
  std::string missing;
  for (std::size_t i = 0; i < sensors_.size(); ++i) {
    if (p.y[i]) {
      snap.y_hat[i] = *p.y[i];
    } else {
      missing += (missing.empty() ? "" : ",") + sensors_[i];
    }
  }
  if (!missing.empty()) {
    log_(fmt::format("step {}: {}; treating {} as clean", t, reason, missing));
  }
  return snap;
}

std::vector<PredictionSnapshot> BarrierState::release(Clock::time_point now) {
  std::vector<PredictionSnapshot> out;
  while (true) {
    auto it = pending_.find(next_);
    if (it == pending_.end()) {
      // A step nobody reported is released only by flush().
      break;
    }
    Pending& p = it->second;
    const bool full = p.received == sensors_.size();
    if (!full && now - p.first_arrival < timeout_) break;
    out.push_back(complete(next_, p, "barrier timeout"));
    pending_.erase(it);
    ++next_;
  }
  return out;
}

std::vector<PredictionSnapshot> BarrierState::flush() {
  std::vector<PredictionSnapshot> out;
  for (; next_ < horizon_; ++next_) {
    auto it = pending_.find(next_);
    Pending empty;
    empty.y.assign(sensors_.size(), std::nullopt);
    out.push_back(complete(next_, it == pending_.end() ? empty : it->second, "stream closed"));
    if (it != pending_.end()) pending_.erase(it);
  }
  pending_.clear();
  return out;
}

bool BarrierState::all_ended() const {
  return std::all_of(ended_.begin(), ended_.end(), [](const auto& e) { return e.has_value(); });
}

std::optional<Clock::time_point> BarrierState::next_deadline() const {
  const auto it = pending_.find(next_);
  if (it == pending_.end()) return std::nullopt;
  return it->second.first_arrival + timeout_;
}

// ---------------------------------------------------------------------------
// Center

MonitoringCenter::MonitoringCenter(const Topology& topology, Clock::duration timeout, LogFn log)
    : topology_(topology),
      localizer_(topology),
      log_(log),
      barrier_(topology.sensor_names(), timeout, log) {}

void MonitoringCenter::absorb(std::vector<PredictionSnapshot> ready) {
  for (auto& snap : ready) {
    RegionReport r = localizer_.region(snap);
    Envelope e;
    e.kind = EnvelopeKind::kRegion;
    e.t = r.t;
    for (std::size_t v : r.region) e.nodes.push_back(topology_.node(v));
    region_lines_.push_back(encode_envelope(e));
    regions_.push_back(std::move(r));
    snapshots_.push_back(std::move(snap));
  }
}

void MonitoringCenter::handle_line(const std::string& line, Clock::time_point now) {
  try {
    barrier_.accept(decode_envelope(line), now);
  } catch (const ProtocolError& e) {
    log_(fmt::format("dropped line: {}", e.what()));
  }
  absorb(barrier_.release(now));
}

void MonitoringCenter::tick(Clock::time_point now) { absorb(barrier_.release(now)); }

void MonitoringCenter::finish() { absorb(barrier_.flush()); }

// ---------------------------------------------------------------------------
// In-process transport

void LineChannel::push(std::string line) {
  {
    std::lock_guard lock(mutex_);
    lines_.push_back(std::move(line));
  }
  ready_.notify_one();
}

void LineChannel::close_producer() {
  {
    std::lock_guard lock(mutex_);
    if (open_producers_ > 0) --open_producers_;
  }
  ready_.notify_all();
}

std::optional<std::string> LineChannel::pop(Clock::time_point until, bool& closed) {
  std::unique_lock lock(mutex_);
  ready_.wait_until(lock, until, [&] { return !lines_.empty() || open_producers_ == 0; });
  closed = lines_.empty() && open_producers_ == 0;
  if (lines_.empty()) return std::nullopt;
  std::string line = std::move(lines_.front());
  lines_.pop_front();
  return line;
}

TransportMode parse_transport_mode(const std::string& text) {
  if (text == "inprocess") return TransportMode::kInProcess;
  if (text == "socket") return TransportMode::kSocket;
  throw ConfigError("mode must be 'inprocess' or 'socket', got '" + text + "'");
}

std::string to_string(TransportMode mode) {
  return mode == TransportMode::kInProcess ? "inprocess" : "socket";
}

// ---------------------------------------------------------------------------
// Socket transport

namespace {

class Fd {
 public:
  explicit Fd(int fd = -1) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_;
};

std::runtime_error sys_error(const std::string& what) {
  return std::runtime_error(what + ": " + std::strerror(errno));
}

sockaddr_in make_address(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw ConfigError("host must be an IPv4 address, got '" + host + "'");
  }
  return addr;
}

Fd listen_on(const std::string& host, std::uint16_t port, std::uint16_t& bound_port) {
  Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (fd.get() < 0) throw sys_error("socket");
  const int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = make_address(host, port);
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    throw sys_error(fmt::format("bind {}:{}", host, port));
  }
  if (::listen(fd.get(), 64) < 0) throw sys_error("listen");
  socklen_t len = sizeof addr;
  ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&addr), &len);
  bound_port = ntohs(addr.sin_port);
  return fd;
}

// Agent-side connection that reconnects lazily after a failure.
class SocketSink {
 public:
  SocketSink(std::string host, std::uint16_t port) : host_(std::move(host)), port_(port) {}

  void operator()(const std::string& line) {
    if (fd_.get() < 0) connect();
    std::string data = line + '\n';
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd_.get(), data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        const auto err = sys_error("send");
        fd_.reset();
        throw err;
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  void close() { fd_.reset(); }

 private:
  void connect() {
    Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (fd.get() < 0) throw sys_error("socket");
    sockaddr_in addr = make_address(host_, port_);
    if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
      throw sys_error(fmt::format("connect {}:{}", host_, port_));
    }
    fd_ = std::move(fd);
  }

  std::string host_;
  std::uint16_t port_;
  Fd fd_;
};

int poll_timeout_ms(const MonitoringCenter& center) {
  const auto deadline = center.next_deadline();
  if (!deadline) return 200;
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now());
  return static_cast<int>(std::clamp<std::int64_t>(ms.count() + 1, 0, 200));
}

void serve_sockets(Fd& listener, std::size_t agents, MonitoringCenter& center,
                   const std::function<bool()>& agents_done) {
  struct Conn {
    Fd fd;
    std::string buffer;
  };
  std::vector<Conn> conns;
  std::size_t accepted = 0;
  while (true) {
    std::vector<pollfd> fds;
    fds.push_back({listener.get(), POLLIN, 0});
    for (const auto& c : conns) fds.push_back({c.fd.get(), POLLIN, 0});
    const int rc = ::poll(fds.data(), fds.size(), poll_timeout_ms(center));
    if (rc < 0 && errno != EINTR) throw sys_error("poll");

    if (fds[0].revents & POLLIN) {
      Fd client(::accept(listener.get(), nullptr, nullptr));
      if (client.get() >= 0) {
        conns.push_back({std::move(client), {}});
        ++accepted;
      }
    }
    for (std::size_t i = 1; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      Conn& c = conns[i - 1];
      char buf[65536];
      const ssize_t n = ::recv(c.fd.get(), buf, sizeof buf, 0);
      if (n > 0) {
        c.buffer.append(buf, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl; (nl = c.buffer.find('\n', start)) != std::string::npos;
             start = nl + 1) {
          center.handle_line(c.buffer.substr(start, nl - start));
        }
        c.buffer.erase(0, start);
      } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
        c.fd.reset();
      }
    }
    std::erase_if(conns, [](const Conn& c) { return c.fd.get() < 0; });
    center.tick();
    // Agents that died before connecting never show up; their threads have
    // finished, so stop waiting for them once nothing is left open.
    if (conns.empty() && (accepted >= agents || agents_done())) break;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Orchestration

RuntimeResult run_runtime(const Topology& topology,
                          const std::vector<std::vector<double>>& online_readings,
                          std::vector<Detector>& detectors, const RuntimeOptions& options,
                          LogFn log) {
  const auto sensors = topology.sensor_names();
  const std::size_t k = sensors.size();
  if (online_readings.size() != k || detectors.size() != k) {
    throw ValidationError(fmt::format("runtime needs {} reading series and detectors", k));
  }

  MonitoringCenter center(topology, options.barrier_timeout, log);
  std::vector<std::vector<DetectorLogRow>> logs(k);
  std::vector<std::exception_ptr> errors(k);
  std::vector<std::thread> agents;
  std::atomic<std::size_t> finished{0};

  auto agent_body = [&](std::size_t i, const LineSink& sink) {
    try {
      run_sensor_agent(
          sensors[i], online_readings[i], detectors[i], sink,
          [&, i](std::int64_t t, const StepOutput& out) {
            logs[i].push_back({t, sensors[i], out, detectors[i].theta()});
          },
          options.agent);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (options.mode == TransportMode::kInProcess) {
    LineChannel channel(k);
    for (std::size_t i = 0; i < k; ++i) {
      agents.emplace_back([&, i] {
        agent_body(i, [&](const std::string& line) { channel.push(line); });
        channel.close_producer();
      });
    }
    while (true) {
      const auto deadline = center.next_deadline().value_or(Clock::now() + std::chrono::milliseconds(200));
      bool closed = false;
      if (auto line = channel.pop(deadline, closed)) {
        center.handle_line(*line);
      } else {
        center.tick();
      }
      if (closed) break;
    }
  } else {
    std::uint16_t port = 0;
    Fd listener = listen_on(options.host, options.port, port);
    for (std::size_t i = 0; i < k; ++i) {
      agents.emplace_back([&, i, port] {
        SocketSink sink(options.host, port);
        agent_body(i, [&](const std::string& line) { sink(line); });
        sink.close();
        ++finished;
      });
    }
    serve_sockets(listener, k, center, [&] { return finished.load() == k; });
  }
  for (auto& t : agents) t.join();
  center.finish();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RuntimeResult result;
  result.snapshots = center.snapshots();
  result.regions = center.regions();
  for (auto& l : logs) {
    for (auto& row : l) result.detector_log.push_back(std::move(row));
  }
  return result;
}

}  // namespace addd
