#pragma once

// Line protocol for an external rig controller (ASCII, '\n' terminated):
//   SEP <mm>                               -> OK <achieved_mm>
//   LOWER                                  -> OK <force_N> | ERR TIMEOUT
//   BURST <mask> <duty_a> <duty_b> [<duty_c>] -> OK
//   RAISE                                  -> OK
// <mask> has bit i set when motor i fires; every motor slot carries a duty
// (0 for silent motors). Other failures answer "ERR <reason>".

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "vibropsi/apparatus.hpp"

namespace vibropsi {

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  virtual void write_line(const std::string& line) = 0;
  /// Blocks for one line (without the terminator); throws kApparatusUnreachable
  /// when the peer is gone.
  virtual std::string read_line() = 0;
};

/// Formats one request line (without '\n').
std::string format_sep(double mm);
std::string format_burst(std::span<const Motor> motors, std::span<const double> duties,
                         int motor_slots);

/// Apparatus backed by a remote controller speaking the line protocol.
/// Reorientation is manual on real hardware and only tracked locally.
class BridgeApparatus final : public Apparatus {
 public:
  BridgeApparatus(std::unique_ptr<LineChannel> channel, ApparatusConfig config = {},
                  int motor_slots = 2);

  const ApparatusConfig& config() const noexcept override { return config_; }
  double set_separation(double target_mm) override;
  double lower_to_contact() override;
  void raise() override;
  void burst(std::span<const Motor> motors, std::span<const double> duties) override;
  void reorient(Orientation orientation) override;
  void wait(double ms) override;
  double now_ms() const override;

 private:
  std::string exchange(const std::string& request);

  std::unique_ptr<LineChannel> channel_;
  ApparatusConfig config_;
  int motor_slots_;
  std::atomic<bool> busy_{false};
  Orientation orientation_ = Orientation::kHorizontal;
  std::chrono::steady_clock::time_point epoch_;
};

/// Controller side of the protocol, answering requests from a simulator.
class BridgeServer {
 public:
  explicit BridgeServer(SimulatedApparatus& rig) : rig_(rig) {}
  /// One request line in, one response line out (no terminators).
  std::string handle_line(const std::string& line);

 private:
  SimulatedApparatus& rig_;
};

/// Blocking TCP client channel.
class TcpLineChannel final : public LineChannel {
 public:
  static std::unique_ptr<TcpLineChannel> connect(const std::string& host, std::uint16_t port);
  ~TcpLineChannel() override;

  void write_line(const std::string& line) override;
  std::string read_line() override;

 private:
  explicit TcpLineChannel(int fd) : fd_(fd) {}
  int fd_;
  std::string buffer_;
};

/// Serves the line protocol for one simulator on a loopback/any TCP port,
/// one connection at a time, until stopped.
class TcpBridgeServer {
 public:
  TcpBridgeServer(SimulatedApparatus& rig, const std::string& host, std::uint16_t port);
  ~TcpBridgeServer();

  std::uint16_t port() const noexcept { return port_; }
  void stop();

 private:
  void serve();

  BridgeServer handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

}  // namespace vibropsi
