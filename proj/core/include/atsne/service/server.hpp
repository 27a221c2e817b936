#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "atsne/service/session.hpp"

namespace atsne::service {

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  std::chrono::milliseconds idle_timeout = std::chrono::seconds(300);
  std::size_t command_threads = 4;
  SessionConfig defaults;
};

/// WebSocket endpoint `/session`. Text frames carry JSON envelopes; replies
/// and events are followed by the binary frames they reference by seq.
///
/// Besides the session commands, a connection understands `load` (creates a
/// session and binds the connection to it), `attach` {session_id} and `close`.
/// Every other command goes to `payload.session_id` or to the bound session.
class Server {
 public:
  /// Binds immediately; throws Error(Errc::io) when the address is unusable.
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  std::uint16_t port() const noexcept;
  /// Serves until stop() is called.
  void run();
  /// Serves on a background thread.
  void start();
  /// Closes the listener, every connection and every session.
  void stop();

  SessionManager& sessions() noexcept;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace atsne::service
