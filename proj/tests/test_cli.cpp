#include "support.hpp"

#include "xri/cli.hpp"
#include "xri/demo.hpp"
#include "xri/wire.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>
#include <httplib.h>
#include <sys/socket.h>

#include <chrono>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

namespace xri {
namespace {

namespace asio = boost::asio;
namespace websocket = boost::beast::websocket;
using tcp = asio::ip::tcp;
using namespace std::chrono_literals;

EnvLookup no_env() {
  return [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
}

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args, const EnvLookup& env = no_env()) {
  args.insert(args.begin(), "xri-hub");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  std::atomic<bool> stop{true};
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err, env, stop);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string write_temp(const std::string& tag, const std::string& name, const std::string& text) {
  const auto path = test::temp_dir(tag) / name;
  std::ofstream(path) << text;
  return path.string();
}

TEST(ConfigResolution, DefaultsHold) {
  const auto c = resolve_run_config({}, no_env());
  EXPECT_EQ(c.listen, "127.0.0.1");
  EXPECT_EQ(c.ws_port, 8765);
  EXPECT_EQ(c.tcp_port, 8766);
  EXPECT_EQ(c.callback_port, 8767);
  EXPECT_EQ(c.bridge_port, 8081);
  EXPECT_EQ(c.plug_port, 8082);
  EXPECT_FALSE(c.tick_rate);
  EXPECT_FALSE(c.seed);
  EXPECT_FALSE(c.attach);
}

TEST(ConfigResolution, FileThenEnvThenFlags) {
  const auto file = write_temp("cfg", "hub.conf",
                               "# settings\nws_port = 9001\ntcp_port = 9002\nseed = 5\nscenario = \"a.scn\"\n"
                               "tick_rate = 10\n");
  auto c = resolve_run_config({{"config", file}}, no_env());
  EXPECT_EQ(c.ws_port, 9001);
  EXPECT_EQ(c.tcp_port, 9002);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.scenario, "a.scn");
  EXPECT_EQ(c.tick_rate, 10.0);

  c = resolve_run_config({{"config", file}}, env_of({{"XRI_WS_PORT", "9101"}, {"XRI_SEED", "6"}}));
  EXPECT_EQ(c.ws_port, 9101);
  EXPECT_EQ(c.tcp_port, 9002);
  EXPECT_EQ(c.seed, 6u);

  c = resolve_run_config({{"config", file}, {"ws_port", "9201"}},
                         env_of({{"XRI_WS_PORT", "9101"}, {"XRI_SEED", "6"}}));
  EXPECT_EQ(c.ws_port, 9201);
  EXPECT_EQ(c.seed, 6u);

  // config path from the environment
  c = resolve_run_config({}, env_of({{"XRI_CONFIG", file}}));
  EXPECT_EQ(c.ws_port, 9001);
}

TEST(ConfigResolution, Rejections) {
  EXPECT_THROW(resolve_run_config({{"ws_port", "8766"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"plug_port", "8081"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"ws_port", "70000"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"tick_rate", "0"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"tick_rate", "-2"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"tick_rate", "fast"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"seed", "-1"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"volume", "11"}}, no_env()), ConfigError);
  EXPECT_THROW(resolve_run_config({{"config", "/nonexistent/hub.conf"}}, no_env()), ConfigError);
  const auto bad = write_temp("cfg-bad", "hub.conf", "ws_port = 1\nnonsense\n");
  try {
    resolve_run_config({{"config", bad}}, no_env());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2);
  }
  // zero ports may repeat
  EXPECT_NO_THROW(resolve_run_config(
      {{"ws_port", "0"}, {"tcp_port", "0"}, {"callback_port", "0"}, {"bridge_port", "0"}, {"plug_port", "0"}},
      no_env()));
}

TEST(CliExitCodes, Usage) {
  EXPECT_EQ(cli({}).code, exit_code::kConfig);
  EXPECT_EQ(cli({"dance"}).code, exit_code::kConfig);
  EXPECT_EQ(cli({"serve", "--ws-port", "nope"}).code, exit_code::kConfig);
  EXPECT_EQ(cli({"demo"}).code, exit_code::kConfig);
  const auto help = cli({"--help"});
  EXPECT_EQ(help.code, exit_code::kOk);
  EXPECT_NE(help.out.find("serve"), std::string::npos);
}

TEST(CliExitCodes, BadScenarioReportsLine) {
  const auto scn = write_temp("bad-scn", "bad.scn", "scenario lamp\ntick_rate 20\nagent lamp wobbly\n");
  const auto r = cli({"serve", "--scenario", scn, "--ws-port", "0", "--tcp-port", "0", "--callback-port", "0",
                      "--bridge-port", "0", "--plug-port", "0"});
  EXPECT_EQ(r.code, exit_code::kConfig);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST(CliExitCodes, MissingScenarioIsConfigError) {
  const auto r = cli({"serve", "--scenario", "/nonexistent.scn", "--ws-port", "0", "--tcp-port", "0"});
  EXPECT_EQ(r.code, exit_code::kConfig);
  EXPECT_FALSE(r.err.empty());
}

TEST(CliDemo, PassingDemoWritesOutputs) {
  const auto dir = test::temp_dir("demo-out");
  const auto r = cli({"demo", test::scenario_file("lamp.demo").string(), "--out-dir", dir.string()});
  EXPECT_EQ(r.code, exit_code::kOk) << r.err;
  EXPECT_NE(r.out.find("19/19 assertions passed"), std::string::npos) << r.out;
  const auto log = test::read_text(dir / "lamp.log.csv");
  const auto reports = test::read_text(dir / "lamp.reports.csv");
  EXPECT_EQ(log.substr(0, kLogHeader.size()), kLogHeader);
  EXPECT_EQ(reports.substr(0, kReportHeader.size()), kReportHeader);

  const auto m = cli({"metrics", (dir / "lamp.log.csv").string()});
  EXPECT_EQ(m.code, exit_code::kOk) << m.err;
  EXPECT_EQ(m.out.substr(0, kMetricsHeader.size()), kMetricsHeader);
  EXPECT_NE(m.out.find("\nlamp_power,"), std::string::npos);
  EXPECT_NE(m.out.find("\nplug1,3\n"), std::string::npos) << m.out;
}

TEST(CliDemo, SeedAndExplicitPaths) {
  const auto dir = test::temp_dir("demo-paths");
  const auto log = (dir / "x.csv").string();
  const auto rep = (dir / "y.csv").string();
  const auto r = cli({"demo", test::scenario_file("outage.demo").string(), "--seed", "42", "--log", log,
                      "--reports", rep});
  EXPECT_EQ(r.code, exit_code::kOk) << r.err;
  EXPECT_NE(test::read_text(log).find(",meta,,,,seed,42,"), std::string::npos);
  EXPECT_FALSE(test::read_text(rep).empty());
}

TEST(CliDemo, FailingAssertionExitsOne) {
  const auto script = write_temp("demo-fail", "fail.demo",
                                 "scenario " + test::scenario_file("lamp.scn").string() +
                                     "\nend 1000\nat 100 expect device plug1 power true\n");
  const auto r = cli({"demo", script, "--out-dir", std::filesystem::path(script).parent_path().string()});
  EXPECT_EQ(r.code, exit_code::kAssertion);
  EXPECT_NE(r.err.find("assertion failed at line 3"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find("0/1 assertions passed"), std::string::npos) << r.out;
}

TEST(CliDemo, MalformedScriptExitsTwo) {
  const auto script = write_temp("demo-bad", "bad.demo",
                                 "scenario " + test::scenario_file("lamp.scn").string() + "\nend 1000\nat 5 jump\n");
  const auto r = cli({"demo", script, "--out-dir", std::filesystem::path(script).parent_path().string()});
  EXPECT_EQ(r.code, exit_code::kConfig);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST(CliMetrics, Errors) {
  EXPECT_EQ(cli({"metrics", "/nonexistent.csv"}).code, exit_code::kConfig);
  const auto junk = write_temp("metrics-bad", "junk.csv", "a,b,c\n");
  const auto r = cli({"metrics", junk});
  EXPECT_EQ(r.code, exit_code::kConfig);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

// ---------------------------------------------------------------------------
// Live server

void set_timeout(int fd) {
  timeval tv{5, 0};
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

class LineClient {
 public:
  explicit LineClient(int port) : socket_(io_) {
    socket_.connect({asio::ip::make_address("127.0.0.1"), static_cast<unsigned short>(port)});
    set_timeout(socket_.native_handle());
  }

  void send(const std::string& frame) { asio::write(socket_, asio::buffer(frame + "\n")); }

  Frame next() {
    const auto n = asio::read_until(socket_, asio::dynamic_buffer(buffer_), '\n');
    const std::string line = buffer_.substr(0, n - 1);
    buffer_.erase(0, n);
    auto f = decode_frame(line);
    if (!std::holds_alternative<Frame>(f)) throw std::runtime_error("undecodable: " + line);
    return std::get<Frame>(f);
  }

  template <typename Pred>
  std::optional<Frame> await(Pred pred, int max_frames = 400) {
    for (int i = 0; i < max_frames; ++i) {
      auto f = next();
      if (pred(f)) return f;
    }
    return std::nullopt;
  }

 private:
  asio::io_context io_;
  tcp::socket socket_;
  std::string buffer_;
};

class ServeFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = test::temp_dir("serve");
    rc_.ws_port = rc_.tcp_port = rc_.callback_port = rc_.bridge_port = rc_.plug_port = 0;
    rc_.scenario = test::scenario_file("lamp.scn").string();
    rc_.metrics = (dir_ / "metrics.csv").string();
    rc_.log = (dir_ / "log.csv").string();
    std::promise<ServeInfo> ready;
    auto ready_f = ready.get_future();
    thread_ = std::thread([this, p = std::move(ready)]() mutable {
      code_ = cmd_serve(rc_, stop_, out_, err_, [&p](const ServeInfo& i) { p.set_value(i); });
    });
    ASSERT_EQ(ready_f.wait_for(10s), std::future_status::ready) << err_.str();
    info_ = ready_f.get();
  }

  void TearDown() override {
    stop_ = true;
    if (thread_.joinable()) thread_.join();
  }

  int finish() {
    stop_ = true;
    thread_.join();
    return code_;
  }

  std::filesystem::path dir_;
  RunConfig rc_;
  std::atomic<bool> stop_{false};
  std::ostringstream out_, err_;
  int code_ = -1;
  ServeInfo info_;
  std::thread thread_;
};

bool plug_on(int port) {
  httplib::Client c("127.0.0.1", port);
  auto res = c.Get("/state");
  return res && res->status == 200 && nlohmann::json::parse(res->body).at("on").get<bool>();
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = 5s) {
  const auto until = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < until) {
    if (pred()) return true;
    std::this_thread::sleep_for(20ms);
  }
  return false;
}

TEST_F(ServeFixture, PortsAreReported) {
  EXPECT_GT(info_.ws_port, 0);
  EXPECT_GT(info_.tcp_port, 0);
  EXPECT_GT(info_.callback_port, 0);
  ASSERT_EQ(info_.plug_ports.size(), 1u);
  EXPECT_GT(info_.plug_ports.at("plug1"), 0);
  EXPECT_NE(out_.str().find("ndjson tcp://127.0.0.1:" + std::to_string(info_.tcp_port)), std::string::npos);
}

TEST_F(ServeFixture, LineClientDrivesThePlug) {
  LineClient c(info_.tcp_port);
  c.send(R"({"v":1,"type":"hello","seq":1,"ts":0,"payload":{"client":"alice"}})");
  auto f = c.next();
  EXPECT_EQ(f.type, FrameType::ack);
  c.send(R"({"v":1,"type":"subscribe","seq":2,"ts":0,"payload":{"agents":["lamp"]}})");
  EXPECT_EQ(c.next().type, FrameType::ack);
  EXPECT_EQ(c.next().payload.at("kind"), "snapshot");
  EXPECT_FALSE(plug_on(info_.plug_ports.at("plug1")));

  c.send(R"({"v":1,"type":"state_update","seq":3,"ts":0,"agent":"lamp","payload":{"var":"power","value":true}})");
  auto ack = c.await([](const Frame& x) { return x.type == FrameType::ack; });
  ASSERT_TRUE(ack);
  EXPECT_EQ(ack->payload.at("ack_seq"), 3);
  EXPECT_TRUE(eventually([&] { return plug_on(info_.plug_ports.at("plug1")); }));

  c.send(R"({"v":1,"type":"state_update","seq":3,"ts":0,"agent":"lamp","payload":{"var":"power","value":false}})");
  auto err = c.await([](const Frame& x) { return x.type == FrameType::error; });
  ASSERT_TRUE(err);
  EXPECT_EQ(err->payload.at("code"), "stale_seq");
}

TEST_F(ServeFixture, PlugButtonReachesSubscribers) {
  LineClient c(info_.tcp_port);
  c.send(R"({"v":1,"type":"hello","seq":1,"ts":0,"payload":{"client":"bob"}})");
  c.send(R"({"v":1,"type":"subscribe","seq":2,"ts":0,"payload":{"agents":["lamp"]}})");
  ASSERT_TRUE(c.await([](const Frame& x) { return x.type == FrameType::event && x.payload.at("kind") == "snapshot"; }));

  httplib::Client plug("127.0.0.1", info_.plug_ports.at("plug1"));
  auto res = plug.Post("/press", "", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);

  auto ev = c.await([](const Frame& x) {
    return x.type == FrameType::event && x.agent == std::optional<std::string>("lamp") &&
           x.payload.at("kind") != "snapshot" && x.payload.at("data").dump().find("true") != std::string::npos;
  });
  ASSERT_TRUE(ev) << "no lamp event after press";
  EXPECT_EQ(ev->payload.at("class"), "environment_to_human");
  EXPECT_TRUE(plug_on(info_.plug_ports.at("plug1")));

  EXPECT_EQ(finish(), exit_code::kOk);
  const auto metrics = test::read_text(rc_.metrics);
  EXPECT_EQ(metrics.substr(0, kMetricsHeader.size()), kMetricsHeader);
  EXPECT_NE(metrics.find("\nlamp_power,"), std::string::npos) << metrics;
  const auto log = test::read_text(rc_.log);
  EXPECT_NE(log.find(",update,lamp_power,,plug1,power,true,physical,"), std::string::npos) << log.substr(0, 2000);
}

TEST_F(ServeFixture, WebSocketHelloIsAcked) {
  asio::io_context io;
  websocket::stream<tcp::socket> ws(io);
  ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), static_cast<unsigned short>(info_.ws_port)});
  set_timeout(ws.next_layer().native_handle());
  ws.handshake("127.0.0.1", "/");
  ws.text(true);
  ws.write(asio::buffer(std::string(R"({"v":1,"type":"hello","seq":9,"ts":0,"payload":{"client":"carol"}})")));
  boost::beast::flat_buffer buf;
  ws.read(buf);
  auto f = decode_frame(boost::beast::buffers_to_string(buf.data()));
  ASSERT_TRUE(std::holds_alternative<Frame>(f));
  EXPECT_EQ(std::get<Frame>(f).type, FrameType::ack);
  EXPECT_EQ(std::get<Frame>(f).payload.at("ack_seq"), 9);
  buf.consume(buf.size());

  ws.write(asio::buffer(std::string("not json")));
  ws.read(buf);
  f = decode_frame(boost::beast::buffers_to_string(buf.data()));
  ASSERT_TRUE(std::holds_alternative<Frame>(f));
  EXPECT_EQ(std::get<Frame>(f).payload.at("code"), "bad_frame");
  ws.close(websocket::close_code::normal);
}

TEST_F(ServeFixture, SecondHubOnSamePortsFails) {
  RunConfig clash = rc_;
  clash.ws_port = info_.ws_port;
  clash.metrics.clear();
  clash.log.clear();
  std::atomic<bool> stop{false};
  std::ostringstream out, err;
  EXPECT_EQ(cmd_serve(clash, stop, out, err), exit_code::kConfig);
  EXPECT_NE(err.str().find("cannot"), std::string::npos) << err.str();

  clash = rc_;
  clash.callback_port = info_.callback_port;
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_serve(clash, stop, out2, err2), exit_code::kConfig);
}

TEST(SimDevices, EmulatorsServeTheirApi) {
  RunConfig rc;
  rc.ws_port = rc.tcp_port = rc.callback_port = rc.bridge_port = rc.plug_port = 0;
  rc.scenario = test::scenario_file("galaxy.scn").string();
  std::atomic<bool> stop{false};
  std::ostringstream out, err;
  std::promise<ServeInfo> ready;
  auto ready_f = ready.get_future();
  int code = -1;
  std::thread t([&] { code = cmd_sim_devices(rc, stop, out, err, [&](const ServeInfo& i) { ready.set_value(i); }); });
  ASSERT_EQ(ready_f.wait_for(10s), std::future_status::ready) << err.str();
  const auto info = ready_f.get();
  httplib::Client bridge("127.0.0.1", info.bridge_port);
  auto res = bridge.Get("/api/xri/lights");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body).size(), 4u);
  stop = true;
  t.join();
  EXPECT_EQ(code, exit_code::kOk);
}

}  // namespace
}  // namespace xri
