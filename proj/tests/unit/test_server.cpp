#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>
#include <boost/beast/http.hpp>

#include "atsne/service/server.hpp"
#include "ws_client.hpp"

namespace atsne::service {
namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using testing_support::Client;
using testing_support::Reply;

ServerOptions test_options() {
  ServerOptions o;
  o.port = 0;
  o.command_threads = 2;
  o.defaults.engine.perplexity = 5.0;
  o.defaults.engine.calibration_sample = 100;
  o.defaults.engine.seed = 1;
  o.defaults.engine.optimizer.max_iterations = 0;
  return o;
}

json synthetic(std::size_t n) {
  return {{"synthetic", {{"n", n}, {"dim", 6}, {"clusters", 3}, {"seed", 2}}}};
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override { server.start(); }
  void TearDown() override { server.stop(); }
  Server server{test_options()};
};

TEST_F(ServerTest, LoadStartSubscribeStreamsFrames) {
  Client c(server.port());
  const Reply load = c.request("load", synthetic(200));
  EXPECT_EQ(load.envelope.payload["n"], 200);
  EXPECT_EQ(load.envelope.payload["state"], "idle");
  EXPECT_EQ(c.request("start").envelope.payload["state"], "running");
  const Reply sub = c.request("subscribe", json::object(), 2);
  EXPECT_EQ(sub.frames[0].values.size(), 400u);
  EXPECT_EQ(sub.frames[1].values.size(), 200u);
  std::size_t last = 0;
  for (int k = 0; k < 5; ++k) {
    const Reply ev = c.expect("snapshot", 2);
    const auto n = ev.envelope.payload["n"].get<std::size_t>();
    EXPECT_EQ(n, 200u);
    EXPECT_EQ(ev.envelope.payload["ids"].size(), n);
    ASSERT_EQ(ev.frames.size(), 2u);
    EXPECT_EQ(ev.frames[0].kind, FrameKind::positions);
    EXPECT_EQ(ev.frames[0].values.size(), 2 * n);
    EXPECT_EQ(ev.frames[1].kind, FrameKind::rho);
    EXPECT_EQ(ev.frames[1].values.size(), n);
    EXPECT_EQ(ev.frames[0].seq, ev.envelope.seq);
    const auto it = ev.envelope.payload["iteration"].get<std::size_t>();
    EXPECT_GT(it, last);
    last = it;
  }
  c.request("unsubscribe");
  c.request("pause");
}

TEST_F(ServerTest, SessionsAreIndependentAndAttachable) {
  Client a(server.port());
  Client b(server.port());
  const auto ida = a.request("load", synthetic(100)).envelope.payload["session_id"];
  const auto idb = b.request("load", synthetic(150)).envelope.payload["session_id"];
  EXPECT_NE(ida, idb);
  EXPECT_EQ(server.sessions().size(), 2u);
  a.request("start");
  EXPECT_EQ(b.request("get_state").envelope.payload["state"], "idle");
  EXPECT_EQ(b.request("get_state", {{"session_id", ida}}).envelope.payload["state"], "running");
  Client c(server.port());
  EXPECT_EQ(c.error_of("get_state"), "no_session");
  EXPECT_EQ(c.request("attach", {{"session_id", idb}}).envelope.payload["n"], 150);
  EXPECT_EQ(c.request("get_state").envelope.payload["n"], 150);
  EXPECT_EQ(c.request("close").envelope.payload["closed"], true);
  EXPECT_EQ(b.error_of("get_state"), "no_session");
  EXPECT_EQ(server.sessions().size(), 1u);
}

TEST_F(ServerTest, OtherPathsAre404) {
  net::io_context ioc;
  tcp::socket sock(ioc);
  tcp::resolver resolver(ioc);
  net::connect(sock, resolver.resolve("127.0.0.1", std::to_string(server.port())));
  http::request<http::empty_body> req(http::verb::get, "/", 11);
  req.set(http::field::host, "127.0.0.1");
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(sock, buf, res);
  EXPECT_EQ(res.result(), http::status::not_found);
}

TEST_F(ServerTest, ErrorCodes) {
  Client c(server.port());
  c.send_text("{not json");
  const Reply bad = c.expect("error");
  EXPECT_EQ(bad.envelope.seq, 0u);
  EXPECT_EQ(bad.envelope.payload["code"], "bad_request");
  c.send_binary(encode_frame({1, FrameKind::positions, {}}));
  EXPECT_EQ(c.expect("error").envelope.payload["code"], "bad_request");
  EXPECT_EQ(c.error_of("start"), "no_session");
  EXPECT_EQ(c.error_of("get_state", {{"session_id", "s999"}}), "no_session");
  EXPECT_EQ(c.error_of("get_state", {{"session_id", 5}}), "bad_request");
  EXPECT_EQ(c.error_of("load", {{"inline", {{"dim", 2}, {"values", {1, 2, 3}}}}}), "bad_request");
  c.request("load", synthetic(60));
  EXPECT_EQ(c.error_of("resume"), "bad_state");
  EXPECT_EQ(c.error_of("warp"), "bad_request");
  EXPECT_EQ(c.error_of("insert", {{"vector", {1}}}), "bad_request");
  EXPECT_EQ(c.error_of("stream_tick", {{"now", 1}}), "bad_state");
}

TEST_F(ServerTest, EveryCommandReplies) {
  Client c(server.port());
  c.request("load", {{"synthetic", {{"n", 120}, {"dim", 4}, {"clusters", 2}, {"seed", 3}}},
                     {"config", {{"window", 1000}}}});
  c.request("set_config", {{"snapshot_stride", 2}, {"theta", 0.5}});
  c.request("start");
  c.request("pause");
  c.request("resume");
  c.request("brush", {{"ids", {0, 1, 2}}});
  const auto task = c.request("refine", {{"strategy", "user_selection"}}).envelope.payload["task_id"];
  c.request("task_control", {{"task_id", task}, {"action", "cancel"}});
  const auto id = c.request("insert", {{"vector", {0.0, 0.0, 0.0, 0.0}}}).envelope.payload["id"];
  c.request("get_point", {{"id", id}});
  c.request("delete", {{"id", id}});
  c.request("stream_tick", {{"now", 5}, {"arrivals", {{1.0, 1.0, 1.0, 1.0}}}});
  const Reply fields = c.request("get_fields", {{"h", 1.0}, {"width", 8}, {"height", 8}}, 1);
  EXPECT_EQ(fields.frames[0].values.size(), 64u);
  c.request("subscribe", json::object(), 2);
  c.request("unsubscribe");
  const auto st = c.request("get_state").envelope.payload;
  const auto n = st["n"].get<std::size_t>();
  std::vector<float> values(n * 3, 0.25f);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(i % 7);
  c.request("redim", {{"inline", {{"dim", 3}, {"values", values}}}});
  c.request("pause");
  c.request("close");
}

}  // namespace
}  // namespace atsne::service
