#include "vibropsi/bridge.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <vector>

namespace vibropsi {

namespace {

std::string fmt_number(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

double parse_ok_value(const std::string& reply, const std::string& request) {
  std::istringstream in(reply);
  std::string status;
  double value = 0.0;
  if (!(in >> status) || status != "OK" || !(in >> value)) {
    throw Error(ErrorCode::kProtocol, "unexpected reply '" + reply + "' to '" + request + "'");
  }
  return value;
}

[[noreturn]] void raise_remote_error(const std::string& reply, const std::string& request) {
  const std::string reason = reply.size() > 4 ? reply.substr(4) : "";
  if (reason == "TIMEOUT") throw Error(ErrorCode::kContactTimeout, "remote rig: contact timeout");
  if (reason == "RANGE") throw Error(ErrorCode::kOutOfRange, "remote rig: separation out of range");
  if (reason == "NOCONTACT") throw Error(ErrorCode::kNotInContact, "remote rig: not in contact");
  throw Error(ErrorCode::kProtocol, "remote rig rejected '" + request + "': " + reply);
}

}  // namespace

std::string format_sep(double mm) { return "SEP " + fmt_number(mm, 3); }

std::string format_burst(std::span<const Motor> motors, std::span<const double> duties,
                         int motor_slots) {
  std::vector<double> slot_duty(static_cast<std::size_t>(motor_slots), 0.0);
  unsigned mask = 0;
  for (std::size_t i = 0; i < motors.size(); ++i) {
    const auto slot = static_cast<unsigned>(motors[i]);
    if (slot >= slot_duty.size()) throw Error(ErrorCode::kInvalidArgument, "motor slot out of range");
    mask |= 1u << slot;
    slot_duty[slot] = duties[i];
  }
  std::string line = "BURST " + std::to_string(mask);
  for (double d : slot_duty) line += " " + fmt_number(d, 2);
  return line;
}

BridgeApparatus::BridgeApparatus(std::unique_ptr<LineChannel> channel, ApparatusConfig config,
                                 int motor_slots)
    : channel_(std::move(channel)),
      config_(config),
      motor_slots_(motor_slots),
      epoch_(std::chrono::steady_clock::now()) {
  config_.validate();
  if (motor_slots_ < 2 || motor_slots_ > 3) {
    throw Error(ErrorCode::kInvalidArgument, "bridge supports 2 or 3 motor slots");
  }
}

std::string BridgeApparatus::exchange(const std::string& request) {
  channel_->write_line(request);
  std::string reply = channel_->read_line();
  if (reply.rfind("ERR", 0) == 0) raise_remote_error(reply, request);
  return reply;
}

double BridgeApparatus::set_separation(double target_mm) {
  CommandGuard guard(busy_);
  if (!(target_mm >= config_.separation_min && target_mm <= config_.separation_max)) {
    throw Error(ErrorCode::kOutOfRange, "separation " + fmt_number(target_mm, 3) + " mm out of range");
  }
  const std::string req = format_sep(target_mm);
  return parse_ok_value(exchange(req), req);
}

double BridgeApparatus::lower_to_contact() {
  CommandGuard guard(busy_);
  return parse_ok_value(exchange("LOWER"), "LOWER");
}

void BridgeApparatus::raise() {
  CommandGuard guard(busy_);
  exchange("RAISE");
}

void BridgeApparatus::burst(std::span<const Motor> motors, std::span<const double> duties) {
  CommandGuard guard(busy_);
  if (motors.empty() || motors.size() != duties.size()) {
    throw Error(ErrorCode::kInvalidArgument, "burst needs one duty per motor");
  }
  exchange(format_burst(motors, duties, motor_slots_));
}

void BridgeApparatus::reorient(Orientation orientation) {
  CommandGuard guard(busy_);
  orientation_ = orientation;
}

void BridgeApparatus::wait(double ms) {
  CommandGuard guard(busy_);
  std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

double BridgeApparatus::now_ms() const {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_)
      .count();
}

std::string BridgeServer::handle_line(const std::string& line) {
  std::istringstream in(line);
  std::string cmd;
  in >> cmd;
  try {
    if (cmd == "SEP") {
      double mm = 0.0;
      if (!(in >> mm)) return "ERR SYNTAX";
      return "OK " + fmt_number(rig_.set_separation(mm), 3);
    }
    if (cmd == "LOWER") return "OK " + fmt_number(rig_.lower_to_contact(), 4);
    if (cmd == "RAISE") {
      rig_.raise();
      return "OK";
    }
    if (cmd == "BURST") {
      unsigned mask = 0;
      if (!(in >> mask)) return "ERR SYNTAX";
      std::vector<Motor> motors;
      std::vector<double> duties;
      double d = 0.0;
      for (unsigned slot = 0; in >> d; ++slot) {
        if (slot > 2) return "ERR SYNTAX";
        if (mask & (1u << slot)) {
          motors.push_back(static_cast<Motor>(slot));
          duties.push_back(d);
        }
      }
      if (motors.empty()) return "ERR SYNTAX";
      rig_.burst(motors, duties);
      return "OK";
    }
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kContactTimeout: return "ERR TIMEOUT";
      case ErrorCode::kOutOfRange: return "ERR RANGE";
      case ErrorCode::kNotInContact: return "ERR NOCONTACT";
      default: return "ERR FAULT";
    }
  }
  return "ERR UNKNOWN";
}

std::unique_ptr<TcpLineChannel> TcpLineChannel::connect(const std::string& host,
                                                        std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_str = std::to_string(port);
  if (getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kApparatusUnreachable, "cannot resolve rig host " + host);
  }
  int fd = -1;
  for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  freeaddrinfo(res);
  if (fd < 0) {
    throw Error(ErrorCode::kApparatusUnreachable,
                "cannot connect to rig at " + host + ":" + port_str);
  }
  return std::unique_ptr<TcpLineChannel>(new TcpLineChannel(fd));
}

TcpLineChannel::~TcpLineChannel() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpLineChannel::write_line(const std::string& line) {
  const std::string data = line + "\n";
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::kApparatusUnreachable, "rig connection lost while writing");
    sent += static_cast<std::size_t>(n);
  }
}

std::string TcpLineChannel::read_line() {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    char chunk[256];
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::kApparatusUnreachable, "rig connection closed");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

TcpBridgeServer::TcpBridgeServer(SimulatedApparatus& rig, const std::string& host,
                                 std::uint16_t port)
    : handler_(rig) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kIo, "cannot create bridge socket");
  const int yes = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw Error(ErrorCode::kInvalidArgument, "bridge host must be an IPv4 address");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 1) != 0) {
    ::close(listen_fd_);
    throw Error(ErrorCode::kIo, "cannot bind bridge server: " + std::string(std::strerror(errno)));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  thread_ = std::thread([this] { serve(); });
}

TcpBridgeServer::~TcpBridgeServer() { stop(); }

void TcpBridgeServer::stop() {
  if (stopping_.exchange(true)) return;
  if (thread_.joinable()) thread_.join();
  ::close(listen_fd_);
}

void TcpBridgeServer::serve() {
  while (!stopping_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    std::string buffer;
    bool open = true;
    while (open && !stopping_) {
      pollfd cfd{fd, POLLIN, 0};
      if (::poll(&cfd, 1, 50) <= 0) continue;
      char chunk[256];
      const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n')) {
        std::string line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string reply = handler_.handle_line(line) + "\n";
        if (::send(fd, reply.data(), reply.size(), MSG_NOSIGNAL) < 0) {
          open = false;
          break;
        }
      }
    }
    ::close(fd);
  }
}

}  // namespace vibropsi
