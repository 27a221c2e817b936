#pragma once

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "atsne/service/protocol.hpp"

namespace atsne::service::testing_support {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct Reply {
  Envelope envelope;
  std::vector<BinaryFrame> frames;
};

class Client {
 public:
  explicit Client(std::uint16_t port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/session");
  }

  ~Client() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  void send_text(const std::string& text) {
    ws_.text(true);
    ws_.write(net::buffer(text));
  }

  void send_binary(const std::string& bytes) {
    ws_.binary(true);
    ws_.write(net::buffer(bytes));
  }

  /// Next message of `type` with `frames` binary frames after it. Snapshot
  /// events met on the way are kept in `events` unless that is the type.
  Reply expect(const std::string& type, std::size_t frames = 0) {
    while (true) {
      Reply r = read_envelope();
      if (r.envelope.type == "snapshot" && type != "snapshot") {
        read_frames(r, 2);
        events.push_back(std::move(r));
        continue;
      }
      if (r.envelope.type != type) {
        throw std::runtime_error("expected " + type + ", got " + r.envelope.type + " " +
                                 r.envelope.payload.dump());
      }
      read_frames(r, frames);
      return r;
    }
  }

  Reply request(const std::string& type, json payload = json::object(), std::size_t frames = 0) {
    const std::uint64_t seq = ++seq_;
    send_text(serialize({type, seq, std::move(payload)}));
    Reply r = expect(type, frames);
    check_seq(r, seq);
    return r;
  }

  /// Sends a command expected to fail and returns the error code.
  std::string error_of(const std::string& type, json payload = json::object()) {
    const std::uint64_t seq = ++seq_;
    send_text(serialize({type, seq, std::move(payload)}));
    const Reply r = expect("error");
    check_seq(r, seq);
    return r.envelope.payload.value("code", "");
  }

  std::vector<Reply> events;

 private:
  static void check_seq(const Reply& r, std::uint64_t seq) {
    if (r.envelope.seq != seq) {
      throw std::runtime_error("reply seq " + std::to_string(r.envelope.seq) + " for request " +
                               std::to_string(seq));
    }
  }

  Reply read_envelope() {
    beast::flat_buffer buf;
    ws_.read(buf);
    if (!ws_.got_text()) throw std::runtime_error("expected a text frame");
    return {parse_envelope(beast::buffers_to_string(buf.data())), {}};
  }

  void read_frames(Reply& r, std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      beast::flat_buffer buf;
      ws_.read(buf);
      if (!ws_.got_binary()) throw std::runtime_error("expected a binary frame");
      r.frames.push_back(decode_frame(beast::buffers_to_string(buf.data())));
    }
  }

  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
  std::uint64_t seq_ = 0;
};

}  // namespace atsne::service::testing_support
