#include "atsne/service/server.hpp"

#include <atomic>
#include <csignal>
#include <deque>
#include <mutex>
#include <thread>

#include <boost/asio/signal_set.hpp>
#include <boost/asio/strand.hpp>
#include <boost/asio/thread_pool.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

namespace atsne::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

class Connection;

}  // namespace

struct Server::Impl {
  explicit Impl(ServerOptions opts)
      : options(std::move(opts)),
        acceptor(ioc),
        pool(std::max<std::size_t>(1, options.command_threads)),
        manager(options.defaults, options.idle_timeout),
        signals(ioc) {}

  void accept();
  void shutdown();

  ServerOptions options;
  net::io_context ioc;
  tcp::acceptor acceptor;
  net::thread_pool pool;
  SessionManager manager;
  net::signal_set signals;
  std::thread thread;
  std::atomic<bool> stopping{false};
  std::once_flag shutdown_once;
  std::mutex connections_mutex;
  std::vector<std::weak_ptr<Connection>> connections;
};

namespace {

struct Outgoing {
  std::string data;
  bool binary = false;
  bool ends_snapshot = false;
};

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, Server::Impl& server)
      : ws_(std::move(socket)), server_(server), commands_(net::make_strand(server.pool)) {}

  void start() {
    http::async_read(ws_.next_layer(), buffer_, request_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       self->on_request(ec);
                     });
  }

  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      beast::error_code ec;
      self->ws_.next_layer().socket().shutdown(tcp::socket::shutdown_both, ec);
      self->ws_.next_layer().socket().close(ec);
    });
  }

 private:
  void on_request(beast::error_code ec) {
    if (ec) return;
    const std::string_view target(request_.target().data(), request_.target().size());
    const std::string_view path = target.substr(0, target.find('?'));
    if (!websocket::is_upgrade(request_) || path != "/session") {
      auto res = std::make_shared<http::response<http::string_body>>(http::status::not_found,
                                                                    request_.version());
      res->set(http::field::content_type, "text/plain");
      res->body() = "websocket endpoint is /session\n";
      res->prepare_payload();
      http::async_write(ws_.next_layer(), *res,
                        [self = shared_from_this(), res](beast::error_code, std::size_t) {
                          beast::error_code ignored;
                          self->ws_.next_layer().socket().shutdown(tcp::socket::shutdown_both, ignored);
                        });
      return;
    }
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(std::size_t{256} << 20);
    ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->read();
    });
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      on_closed();
      return;
    }
    if (!ws_.got_text()) {
      buffer_.consume(buffer_.size());
      send_error(0, ErrorCode::bad_request, "clients send text frames only");
      read();
      return;
    }
    std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    net::post(commands_, [self = shared_from_this(), text = std::move(text)] {
      self->process(text);
    });
    read();
  }

  void on_closed() {
    if (closed_) return;
    closed_ = true;
    if (mailbox_ && subscribed_) subscribed_->unsubscribe(mailbox_);
    mailbox_.reset();
    subscribed_.reset();
    net::post(commands_, [self = shared_from_this()] {
      if (self->bound_) self->bound_->detach();
      self->bound_.reset();
    });
  }

  // Runs on the command strand.
  void process(const std::string& text) {
    Envelope env;
    try {
      env = parse_envelope(text);
    } catch (const ProtocolError& e) {
      send_error(0, e.code(), e.what());
      return;
    }
    try {
      send(route(env));
    } catch (const ProtocolError& e) {
      send_error(env.seq, e.code(), e.what());
    } catch (const std::exception& e) {
      send_error(env.seq, ErrorCode::bad_request, e.what());
    }
  }

  void bind(const std::shared_ptr<Session>& session) {
    if (bound_ == session) return;
    if (bound_) bound_->detach();
    session->attach();
    bound_ = session;
  }

  std::shared_ptr<Session> target_session(const Envelope& env) {
    if (env.payload.contains("session_id")) {
      if (!env.payload["session_id"].is_string()) {
        throw ProtocolError(ErrorCode::bad_request, "session_id must be a string");
      }
      return server_.manager.find(env.payload["session_id"].get<std::string>());
    }
    if (!bound_ || bound_->closed()) throw ProtocolError(ErrorCode::no_session, "no session bound");
    return bound_;
  }

  Message route(const Envelope& env) {
    if (env.type == "load") {
      auto session = server_.manager.create(env.payload);
      bind(session);
      Message msg = session->handle({"get_state", env.seq, json::object()});
      msg.envelope.type = "load";
      return msg;
    }
    auto session = target_session(env);
    if (env.type == "attach") {
      bind(session);
      Message msg = session->handle({"get_state", env.seq, json::object()});
      msg.envelope.type = "attach";
      return msg;
    }
    if (env.type == "close") {
      const std::string id = session->id();
      if (bound_ == session) {
        bound_->detach();
        bound_.reset();
      }
      server_.manager.close(id);
      return {{"close", env.seq, json{{"session_id", id}, {"closed", true}}}, {}};
    }
    if (env.type == "subscribe") {
      auto mailbox = session->subscribe();
      Message msg = session->handle(env);
      std::weak_ptr<Connection> weak = weak_from_this();
      mailbox->set_notify([weak] {
        if (auto self = weak.lock()) {
          net::post(self->ws_.get_executor(), [self] { self->pump(); });
        }
      });
      net::post(ws_.get_executor(), [self = shared_from_this(), session, mailbox] {
        if (self->closed_) {
          session->unsubscribe(mailbox);
          return;
        }
        if (self->mailbox_ && self->subscribed_) self->subscribed_->unsubscribe(self->mailbox_);
        self->mailbox_ = mailbox;
        self->subscribed_ = session;
        self->pump();
      });
      return msg;
    }
    if (env.type == "unsubscribe") {
      net::post(ws_.get_executor(), [self = shared_from_this()] {
        if (self->mailbox_ && self->subscribed_) self->subscribed_->unsubscribe(self->mailbox_);
        self->mailbox_.reset();
        self->subscribed_.reset();
      });
      return {{"unsubscribe", env.seq, json{{"session_id", session->id()}}}, {}};
    }
    return session->handle(env);
  }

  void send_error(std::uint64_t seq, ErrorCode code, const std::string& message) {
    send({error_envelope(seq, code, message), {}});
  }

  void send(Message msg, bool snapshot = false) {
    std::vector<Outgoing> items;
    items.push_back({serialize(msg.envelope), false, false});
    for (const auto& f : msg.frames) items.push_back({encode_frame(f), true, false});
    items.back().ends_snapshot = snapshot;
    net::post(ws_.get_executor(), [self = shared_from_this(), items = std::move(items)]() mutable {
      if (self->closed_) return;
      for (auto& item : items) self->out_.push_back(std::move(item));
      self->write();
    });
  }

  // Runs on the websocket executor.
  void pump() {
    if (closed_ || snapshot_inflight_ || !mailbox_) return;
    auto event = mailbox_->try_take();
    if (!event) return;
    snapshot_inflight_ = true;
    Message msg = snapshot_message(*event, ++event_seq_);
    out_.push_back({serialize(msg.envelope), false, false});
    for (const auto& f : msg.frames) out_.push_back({encode_frame(f), true, false});
    out_.back().ends_snapshot = true;
    write();
  }

  void write() {
    if (writing_ || out_.empty() || closed_) return;
    writing_ = true;
    ws_.binary(out_.front().binary);
    ws_.async_write(net::buffer(out_.front().data),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->writing_ = false;
                      if (ec) {
                        self->on_closed();
                        return;
                      }
                      const bool ended = self->out_.front().ends_snapshot;
                      self->out_.pop_front();
                      if (ended) {
                        self->snapshot_inflight_ = false;
                        self->pump();
                      }
                      self->write();
                    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Server::Impl& server_;
  net::strand<net::thread_pool::executor_type> commands_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;

  // Websocket executor state.
  std::deque<Outgoing> out_;
  bool writing_ = false;
  bool snapshot_inflight_ = false;
  bool closed_ = false;
  std::shared_ptr<Mailbox> mailbox_;
  std::shared_ptr<Session> subscribed_;
  std::uint64_t event_seq_ = 0;

  // Command strand state.
  std::shared_ptr<Session> bound_;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    auto conn = std::make_shared<Connection>(std::move(socket), *this);
    {
      std::lock_guard lock(connections_mutex);
      std::erase_if(connections, [](const auto& w) { return w.expired(); });
      connections.push_back(conn);
    }
    conn->start();
    accept();
  });
}

void Server::Impl::shutdown() {
  std::call_once(shutdown_once, [this] {
    manager.close_all();
    pool.join();
    manager.close_all();
  });
}

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->options.address, ec);
  if (ec) throw Error(Errc::io, "bad bind address '" + impl_->options.address + "'");
  const tcp::endpoint endpoint(address, impl_->options.port);
  impl_->acceptor.open(endpoint.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(endpoint, ec);
  if (!ec) impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw Error(Errc::io, "cannot listen on " + impl_->options.address + ":" +
                              std::to_string(impl_->options.port) + ": " + ec.message());
  }
  impl_->accept();
}

Server::~Server() { stop(); }

std::uint16_t Server::port() const noexcept { return impl_->acceptor.local_endpoint().port(); }

SessionManager& Server::sessions() noexcept { return impl_->manager; }

void Server::run() {
  impl_->signals.add(SIGINT);
  impl_->signals.add(SIGTERM);
  impl_->signals.async_wait([this](beast::error_code ec, int) {
    if (!ec) impl_->ioc.stop();
  });
  impl_->ioc.run();
  impl_->shutdown();
}

void Server::start() {
  impl_->thread = std::thread([this] {
    impl_->ioc.run();
    impl_->shutdown();
  });
}

void Server::stop() {
  if (impl_->stopping.exchange(true)) return;
  {
    std::lock_guard lock(impl_->connections_mutex);
    for (auto& w : impl_->connections) {
      if (auto c = w.lock()) c->close();
    }
  }
  impl_->manager.close_all();
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
    impl_->ioc.stop();
  });
  if (impl_->thread.joinable() && impl_->thread.get_id() != std::this_thread::get_id()) {
    impl_->thread.join();
  }
  impl_->shutdown();
}

}  // namespace atsne::service
