#pragma once

// Framed request/response over a stream socket.
//   frame    "ENSP" | version u8 | type u8 | body length u64 | body
//   request  config digest u64 | key_id u64 | packed matrix length u64 | ENSM bytes
//   response packed matrix length u64 | ENSM bytes | report length u64 | report (JSON lines)
//   error    code u16 | message length u32 | message
// One connection carries exactly one request and one reply.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "ensi/core/bytes.hpp"

namespace ensi::io {

inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::uint64_t kMaxFrameBody = 1ull << 34;

enum class MsgType : std::uint8_t { request = 0, response = 1, error = 2 };

enum ErrorCode : std::uint16_t {
  err_version = 1,
  err_config = 2,
  err_key = 3,
  err_malformed = 4,
  err_missing_keys = 5,
  err_evaluation = 6,
};

struct Frame {
  MsgType type = MsgType::request;
  std::vector<std::uint8_t> body;
};

struct Request {
  std::uint64_t config_digest = 0;
  std::uint64_t key_id = 0;
  std::vector<std::uint8_t> packed;  // ENSM bytes
};

struct Response {
  std::vector<std::uint8_t> packed;
  std::string report;
};

struct ErrorReply {
  std::uint16_t code = 0;
  std::string message;
};

// ---- frame codec ----

inline std::vector<std::uint8_t> frame_bytes(const Frame& f) {
  ByteWriter w;
  w.magic("ENSP");
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(f.type));
  w.u64(f.body.size());
  w.bytes(f.body);
  return w.take();
}

/// Parses the fixed 14-byte header; returns the body length.
inline std::uint64_t parse_frame_header(std::span<const std::uint8_t> hdr, MsgType& type) {
  ByteReader r(hdr);
  r.expect_magic("ENSP");
  auto at = r.offset();
  if (auto v = r.u8(); v != kWireVersion)
    throw ProtocolError(err_version, "unsupported protocol version " + std::to_string(v) + " (at byte offset " +
                                         std::to_string(at) + ")");
  at = r.offset();
  auto t = r.u8();
  if (t > 2) throw FormatError("unknown message type " + std::to_string(t), at);
  type = static_cast<MsgType>(t);
  at = r.offset();
  const auto len = r.u64();
  if (len > kMaxFrameBody) throw FormatError("frame body too large", at);
  return len;
}

inline constexpr std::size_t kFrameHeader = 14;

inline Frame frame_from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeader) throw FormatError("truncated frame header", bytes.size());
  Frame f;
  const auto len = parse_frame_header(bytes.first(kFrameHeader), f.type);
  if (bytes.size() - kFrameHeader != len) throw FormatError("frame length does not match body", kFrameHeader);
  f.body.assign(bytes.begin() + kFrameHeader, bytes.end());
  return f;
}

inline Frame encode(const Request& q) {
  ByteWriter w;
  w.u64(q.config_digest);
  w.u64(q.key_id);
  w.u64(q.packed.size());
  w.bytes(q.packed);
  return {MsgType::request, w.take()};
}

inline Frame encode(const Response& p) {
  ByteWriter w;
  w.u64(p.packed.size());
  w.bytes(p.packed);
  w.u64(p.report.size());
  w.magic(p.report);
  return {MsgType::response, w.take()};
}

inline Frame encode(const ErrorReply& e) {
  ByteWriter w;
  w.u16(e.code);
  w.u32(static_cast<std::uint32_t>(e.message.size()));
  w.magic(e.message);
  return {MsgType::error, w.take()};
}

inline Request decode_request(const Frame& f) {
  if (f.type != MsgType::request) throw ProtocolError(err_malformed, "expected a request frame");
  ByteReader r(f.body, kFrameHeader);
  Request q;
  q.config_digest = r.u64();
  q.key_id = r.u64();
  auto n = r.u64();
  auto b = r.take(n);
  q.packed.assign(b.begin(), b.end());
  if (!r.done()) throw FormatError("trailing bytes in request", r.offset());
  return q;
}

inline ErrorReply decode_error(const Frame& f) {
  ByteReader r(f.body, kFrameHeader);
  ErrorReply e;
  e.code = r.u16();
  auto n = r.u32();
  auto b = r.take(n);
  e.message.assign(b.begin(), b.end());
  return e;
}

/// Throws ProtocolError for an error frame.
inline Response decode_response(const Frame& f) {
  if (f.type == MsgType::error) {
    auto e = decode_error(f);
    throw ProtocolError(e.code, "server error " + std::to_string(e.code) + ": " + e.message);
  }
  if (f.type != MsgType::response) throw ProtocolError(err_malformed, "expected a response frame");
  ByteReader r(f.body, kFrameHeader);
  Response p;
  auto n = r.u64();
  auto b = r.take(n);
  p.packed.assign(b.begin(), b.end());
  n = r.u64();
  b = r.take(n);
  p.report.assign(b.begin(), b.end());
  if (!r.done()) throw FormatError("trailing bytes in response", r.offset());
  return p;
}

// ---- sockets ----

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const noexcept { return fd_; }
  explicit operator bool() const noexcept { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void send_all(std::span<const std::uint8_t> data) const {
    std::size_t off = 0;
    while (off < data.size()) {
      auto n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(std::string("send failed: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  void recv_all(std::uint8_t* out, std::size_t len) const {
    std::size_t off = 0;
    while (off < len) {
      auto n = ::recv(fd_, out + off, len - off, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n == 0) throw FormatError("connection closed mid-frame", off);
      if (n < 0) throw Error(std::string("recv failed: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  void send_frame(const Frame& f) const { send_all(frame_bytes(f)); }

  Frame recv_frame() const {
    std::uint8_t hdr[kFrameHeader];
    recv_all(hdr, kFrameHeader);
    Frame f;
    const auto len = parse_frame_header(hdr, f.type);
    f.body.resize(len);
    recv_all(f.body.data(), len);
    return f;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& s) {
  auto c = s.rfind(':');
  if (c == std::string::npos) throw InvalidParams("address must be host:port");
  Endpoint e;
  e.host = s.substr(0, c);
  const auto p = std::stoul(s.substr(c + 1));
  if (p > 65535) throw InvalidParams("port out of range");
  e.port = static_cast<std::uint16_t>(p);
  return e;
}

inline sockaddr_in resolve(const Endpoint& e) {
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_port = htons(e.port);
  const std::string host = e.host.empty() || e.host == "localhost" ? "127.0.0.1" : e.host;
  if (inet_pton(AF_INET, host.c_str(), &a.sin_addr) == 1) return a;
  addrinfo hints{}, *res = nullptr;
  hints.ai_family = AF_INET;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) throw Error("cannot resolve host " + host);
  a.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return a;
}

/// Bound and listening; port 0 picks a free port (see bound_port).
inline Socket listen_on(const Endpoint& e, int backlog = 16) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s) throw Error("socket() failed");
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto a = resolve(e);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&a), sizeof a) != 0)
    throw Error("bind " + e.host + ":" + std::to_string(e.port) + " failed: " + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0) throw Error("listen failed");
  return s;
}

inline std::uint16_t bound_port(const Socket& s) {
  sockaddr_in a{};
  socklen_t len = sizeof a;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&a), &len);
  return ntohs(a.sin_port);
}

inline Socket connect_to(const Endpoint& e) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s) throw Error("socket() failed");
  auto a = resolve(e);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&a), sizeof a) != 0)
    throw Error("connect " + e.host + ":" + std::to_string(e.port) + " failed: " + std::strerror(errno));
  return s;
}

/// Maps a request to a reply frame. Exceptions become error frames.
using Handler = std::function<Response(const Request&)>;

inline Frame handle(const Handler& h, const Frame& in) {
  try {
    return encode(h(decode_request(in)));
  } catch (const ProtocolError& e) {
    return encode(ErrorReply{e.code(), e.what()});
  } catch (const FormatError& e) {
    return encode(ErrorReply{err_malformed, e.what()});
  } catch (const KeyMismatch& e) {
    return encode(ErrorReply{err_key, e.what()});
  } catch (const MissingKey& e) {
    return encode(ErrorReply{err_missing_keys, e.what()});
  } catch (const std::exception& e) {
    return encode(ErrorReply{err_evaluation, e.what()});
  }
}

/// Serves one connection: one request frame in, one reply frame out.
inline void serve_connection(Socket conn, const Handler& h) {
  Frame reply;
  try {
    reply = handle(h, conn.recv_frame());
  } catch (const ProtocolError& e) {
    reply = encode(ErrorReply{e.code(), e.what()});
  } catch (const std::exception& e) {
    reply = encode(ErrorReply{err_malformed, e.what()});
  }
  try {
    conn.send_frame(reply);
  } catch (const std::exception&) {
    // peer went away; nothing left to tell it
  }
}

/// Accepts connections and serves each on its own thread. Stops after
/// `max_connections` (0 = forever).
inline void serve(const Socket& listener, const Handler& h, std::size_t max_connections = 0) {
  std::vector<std::thread> workers;
  for (std::size_t n = 0; max_connections == 0 || n < max_connections; ++n) {
    int fd = ::accept(listener.fd(), nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    workers.emplace_back(serve_connection, Socket(fd), std::cref(h));
  }
  for (auto& t : workers) t.join();
}

/// Client side of one exchange.
inline Response round_trip(const Endpoint& e, const Request& q) {
  auto s = connect_to(e);
  s.send_frame(encode(q));
  return decode_response(s.recv_frame());
}

}  // namespace ensi::io
