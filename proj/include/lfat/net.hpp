#ifndef LFAT_NET_HPP_
#define LFAT_NET_HPP_

// Thin RAII wrappers over POSIX stream sockets (TCP and Unix-domain) with
// length-prefixed frame I/O.

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <sys/types.h>

#include "lfat/protocol.hpp"

namespace lfat::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int fd = fd_;
    fd_ = -1;
    return fd;
  }
  void reset();
  /// Stops further reads and writes; wakes a thread blocked in accept/read.
  void shutdown();

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// Parses "host:port". Throws Errc::InvalidArgument.
Endpoint parse_endpoint(const std::string& text);

/// Connected stream with per-operation timeouts. Errors surface as
/// Errc::IoError.
class Stream {
 public:
  explicit Stream(Socket sock) : sock_(std::move(sock)) {}

  void set_timeout(std::chrono::milliseconds timeout);
  void write_all(std::span<const std::uint8_t> bytes);
  /// Returns false on orderly EOF before the first byte.
  bool read_exact(std::span<std::uint8_t> out);

  void send_frame(proto::MessageType type, std::span<const std::uint8_t> payload);
  /// Returns nullopt when the peer closed the connection cleanly.
  std::optional<proto::Frame> recv_frame();

  /// Reads bytes up to and excluding '\n'; nullopt on EOF without data.
  std::optional<std::string> read_line(std::size_t max_len);

  /// Process id of a Unix-domain peer (SO_PEERCRED), if available.
  std::optional<pid_t> peer_pid() const;

  Socket& socket() { return sock_; }

 private:
  Socket sock_;
};

/// Throws Errc::ProverUnreachable when the connection cannot be made in time.
Stream connect_tcp(const Endpoint& ep, std::chrono::milliseconds timeout);

class Listener {
 public:
  static Listener tcp(const Endpoint& ep);
  /// Binds a Unix-domain stream socket, replacing a stale socket file.
  static Listener unix_domain(const std::string& path);

  ~Listener();
  Listener(Listener&&) noexcept = default;
  Listener& operator=(Listener&&) noexcept = default;

  /// Blocks until a client connects; nullopt once the listener is shut down.
  std::optional<Stream> accept();
  std::uint16_t port() const;
  void shutdown() { sock_.shutdown(); }

 private:
  Listener(Socket s, std::string unix_path) : sock_(std::move(s)), unix_path_(std::move(unix_path)) {}
  Socket sock_;
  std::string unix_path_;
};

Stream connect_unix(const std::string& path);

}  // namespace lfat::net

#endif  // LFAT_NET_HPP_
