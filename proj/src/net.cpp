#include "lfat/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace lfat::net {

namespace {

[[noreturn]] void io_error(const std::string& what) {
  throw Error(Errc::IoError, what + ": " + std::strerror(errno));
}

}  // namespace

void Socket::reset() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(Errc::InvalidArgument, "expected host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  try {
    std::size_t used = 0;
    const unsigned long port = std::stoul(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, "bad port in '" + text + "'");
  }
  return ep;
}

void Stream::set_timeout(std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

void Stream::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::send(sock_.fd(), bytes.data() + done, bytes.size() - done, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("send");
    }
    done += static_cast<std::size_t>(n);
  }
}

bool Stream::read_exact(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::recv(sock_.fd(), out.data() + done, out.size() - done, 0);
    if (n == 0) {
      if (done == 0) return false;
      throw Error(Errc::IoError, "connection closed mid-message");
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(Errc::IoError, "read timed out");
      io_error("recv");
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

void Stream::send_frame(proto::MessageType type, std::span<const std::uint8_t> payload) {
  write_all(proto::frame(type, payload));
}

std::optional<proto::Frame> Stream::recv_frame() {
  std::uint8_t len_bytes[4];
  if (!read_exact(len_bytes)) return std::nullopt;
  const std::uint32_t len = static_cast<std::uint32_t>(len_bytes[0]) |
                            static_cast<std::uint32_t>(len_bytes[1]) << 8 |
                            static_cast<std::uint32_t>(len_bytes[2]) << 16 |
                            static_cast<std::uint32_t>(len_bytes[3]) << 24;
  if (len == 0 || len > proto::kMaxFrameBytes) {
    throw Error(Errc::FormatError, "bad frame length " + std::to_string(len));
  }
  proto::Bytes buf(4 + len);
  std::memcpy(buf.data(), len_bytes, 4);
  if (!read_exact(std::span(buf).subspan(4))) {
    throw Error(Errc::IoError, "connection closed mid-frame");
  }
  return proto::unframe(buf);
}

std::optional<std::string> Stream::read_line(std::size_t max_len) {
  std::string line;
  char c = 0;
  while (true) {
    const ssize_t n = ::recv(sock_.fd(), &c, 1, 0);
    if (n == 0) {
      if (line.empty()) return std::nullopt;
      return line;
    }
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("recv");
    }
    if (c == '\n') return line;
    if (line.size() >= max_len) throw Error(Errc::FormatError, "line too long");
    line += c;
  }
}

std::optional<pid_t> Stream::peer_pid() const {
#ifdef SO_PEERCRED
  ucred cred{};
  socklen_t len = sizeof cred;
  if (::getsockopt(sock_.fd(), SOL_SOCKET, SO_PEERCRED, &cred, &len) == 0 && cred.pid > 0) {
    return cred.pid;
  }
#endif
  return std::nullopt;
}

Stream connect_tcp(const Endpoint& ep, std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(Errc::ProverUnreachable,
                "cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!s.valid()) continue;
    const int flags = ::fcntl(s.fd(), F_GETFL, 0);
    ::fcntl(s.fd(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(s.fd(), ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd pfd{s.fd(), POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      if (rc == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        errno = err;
        rc = err == 0 ? 0 : -1;
      } else {
        errno = rc == 0 ? ETIMEDOUT : errno;
        rc = -1;
      }
    }
    if (rc == 0) {
      ::fcntl(s.fd(), F_SETFL, flags);
      int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ::freeaddrinfo(res);
      Stream stream(std::move(s));
      stream.set_timeout(timeout);
      return stream;
    }
    last_error = std::strerror(errno);
  }
  ::freeaddrinfo(res);
  throw Error(Errc::ProverUnreachable,
              ep.host + ":" + std::to_string(ep.port) + ": " + last_error);
}

Listener Listener::tcp(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(Errc::IoError, "cannot resolve " + ep.host + ": " + ::gai_strerror(rc));
  }
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!s.valid()) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(s.fd(), 64) == 0) {
      ::freeaddrinfo(res);
      return Listener(std::move(s), {});
    }
  }
  ::freeaddrinfo(res);
  io_error("cannot listen on " + ep.host + ":" + port);
}

Listener Listener::unix_domain(const std::string& path) {
  sockaddr_un addr{};
  if (path.size() >= sizeof addr.sun_path) {
    throw Error(Errc::InvalidArgument, "unix socket path too long: " + path);
  }
  addr.sun_family = AF_UNIX;
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  Socket s(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) io_error("socket");
  ::unlink(path.c_str());
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    io_error("bind " + path);
  }
  if (::listen(s.fd(), 16) != 0) io_error("listen " + path);
  return Listener(std::move(s), path);
}

Listener::~Listener() {
  if (!unix_path_.empty() && sock_.valid()) ::unlink(unix_path_.c_str());
}

std::optional<Stream> Listener::accept() {
  while (true) {
    const int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) return Stream(Socket(fd));
    if (errno == EINTR || errno == ECONNABORTED) continue;
    return std::nullopt;
  }
}

std::uint16_t Listener::port() const {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&ss), &len) != 0) return 0;
  if (ss.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  if (ss.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
  return 0;
}

Stream connect_unix(const std::string& path) {
  sockaddr_un addr{};
  if (path.size() >= sizeof addr.sun_path) {
    throw Error(Errc::InvalidArgument, "unix socket path too long: " + path);
  }
  addr.sun_family = AF_UNIX;
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  Socket s(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!s.valid()) io_error("socket");
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    io_error("connect " + path);
  }
  return Stream(std::move(s));
}

}  // namespace lfat::net
