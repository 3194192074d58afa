#include "device_goldens.hpp"
#include "support.hpp"

#include "xri/devices.hpp"
#include "xri/http_server.hpp"

#include <gtest/gtest.h>

namespace xri {
namespace {

using ojson = nlohmann::ordered_json;

TEST(DeviceGolden, ResponsesAreByteExact) {
  const auto checks = test::run_device_goldens();
  EXPECT_GE(checks.size(), 16u);
  for (const auto& c : checks) EXPECT_TRUE(c.ok) << c.name << ": " << c.detail;
}

TEST(Bridge, ReadYourWrites) {
  ManualClock clock;
  BridgeEmulator b("xri", 4, clock);
  test::Rng rng(8);
  std::map<std::string, BulbState> model;
  for (int i = 1; i <= 4; ++i) model[std::to_string(i)] = BulbState{};
  for (int n = 0; n < 3000; ++n) {
    const std::string id = std::to_string(rng.integer(1, 4));
    ojson body = ojson::object();
    BulbState expect = model[id];
    // fields in random order, some out of range
    std::vector<std::string> fields{"on", "hue", "sat", "bri"};
    std::shuffle(fields.begin(), fields.end(), rng.engine());
    for (const auto& f : fields) {
      if (rng.coin()) continue;
      if (f == "on") {
        const bool v = rng.coin();
        body[f] = v;
        expect.on = v;
      } else if (f == "hue") {
        const auto v = rng.integer(-10, 70000);
        body[f] = v;
        if (v >= 0 && v <= 65535) expect.hue = static_cast<std::uint16_t>(v);
      } else if (f == "sat") {
        const auto v = rng.integer(-5, 300);
        body[f] = v;
        if (v >= 0 && v <= 254) expect.sat = static_cast<std::uint8_t>(v);
      } else {
        const auto v = rng.integer(-5, 300);
        body[f] = v;
        if (v >= 1 && v <= 254) expect.bri = static_cast<std::uint8_t>(v);
      }
    }
    const auto resp = b.put_state(id, body);
    ASSERT_EQ(resp.size(), body.size());
    std::size_t i = 0;
    for (const auto& [field, _] : body.items()) {
      const auto& entry = resp[i++];
      const std::string key = entry.contains("success") ? entry["success"].begin().key()
                                                        : entry["error"]["address"].get<std::string>();
      EXPECT_EQ(key, "/lights/" + id + "/state/" + field);
    }
    model[id] = expect;
    EXPECT_EQ(b.get_lights(), model);
  }
}

TEST(Bridge, OutageAffectsOnlyAvailability) {
  ManualClock clock;
  BridgeEmulator b("xri", 4, clock);
  b.put_state("1", ojson::parse(R"({"on":true,"hue":100})"));
  b.faults().add_outage(1000, 500);
  clock.set(1000);
  EXPECT_THROW(b.get_lights(), DeviceUnavailable);
  EXPECT_EQ(b.handle({"PUT", "/api/xri/lights/1/state", R"({"on":false})"}).status, 503);
  clock.set(1499);
  EXPECT_EQ(b.handle({"GET", "/api/xri/lights/1", ""}).status, 503);
  clock.set(1500);
  const auto lights = b.get_lights();
  EXPECT_TRUE(lights.at("1").on);
  EXPECT_EQ(lights.at("1").hue, 100);
}

TEST(Bridge, MalformedAndUnknownRoutes) {
  ManualClock clock;
  BridgeEmulator b("xri", 2, clock);
  EXPECT_EQ(b.handle({"PUT", "/api/xri/lights/1/state", "{oops"}).body,
            R"([{"error":{"type":2,"address":"/lights/1/state","description":"body contains invalid json"}}])");
  EXPECT_EQ(b.handle({"GET", "/api/xri/groups", ""}).status, 404);
  EXPECT_EQ(b.handle({"GET", "/api/xri/lights/7", ""}).body,
            R"([{"error":{"type":3,"address":"/lights/7","description":"resource, /lights/7, not available"}}])");
  EXPECT_EQ(b.handle({"PUT", "/api/xri/lights/1/state", R"({"effect":"colorloop"})"}).body,
            R"([{"error":{"type":6,"address":"/lights/1/state/effect","description":"parameter, effect, not available"}}])");
}

TEST(Plug, TriggerSemantics) {
  ManualClock clock;
  PlugEmulator p("plug1", "k", clock);
  EXPECT_EQ(p.trigger("lamp_on", "k"), PlugEmulator::TriggerStatus::Ok);
  EXPECT_TRUE(p.state().on);
  EXPECT_EQ(p.trigger("lamp_off", "bad"), PlugEmulator::TriggerStatus::AuthError);
  EXPECT_TRUE(p.state().on);
  EXPECT_EQ(p.trigger("dance", "k"), PlugEmulator::TriggerStatus::NotFound);
  EXPECT_EQ(p.state().last_event, "lamp_on");
  EXPECT_EQ(p.trigger("lamp_off", "k"), PlugEmulator::TriggerStatus::Ok);
  EXPECT_FALSE(p.state().on);
}

TEST(Plug, PressTogglesAndNotifies) {
  ManualClock clock;
  PlugEmulator p("plug1", "k", clock);
  std::vector<DeviceEvent> got;
  p.set_sink([&](const DeviceEvent& e) {
    got.push_back(e);
    return true;
  });
  EXPECT_TRUE(p.press().on);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].var, "power");
  EXPECT_EQ(got[0].value, Value{true});
  EXPECT_EQ(got[0].press_seq, 1u);
  EXPECT_FALSE(p.press().on);
  EXPECT_EQ(got.size(), 2u);
  EXPECT_EQ(p.pending_events(), 0u);
}

TEST(Plug, PressDuringHubOutageDeliveredOnceAfterRecovery) {
  ManualClock clock;
  PlugEmulator p("plug1", "k", clock);
  bool hub_up = false;
  std::vector<DeviceEvent> got;
  int attempts = 0;
  p.set_sink([&](const DeviceEvent& e) {
    ++attempts;
    if (!hub_up) return false;
    got.push_back(e);
    return true;
  });
  EXPECT_TRUE(p.press().on);
  EXPECT_EQ(p.pending_events(), 1u);
  // backoff: 50, 100, 200, 400, 800, 800 ...
  std::vector<std::int64_t> retry_times;
  for (std::int64_t t = 1; t <= 2400; ++t) {
    clock.set(t);
    const int before = attempts;
    p.poll();
    if (attempts != before) retry_times.push_back(t);
  }
  EXPECT_EQ(retry_times, (std::vector<std::int64_t>{50, 150, 350, 750, 1550, 2350}));
  hub_up = true;
  clock.set(3200);
  p.poll();
  p.poll();
  clock.set(10000);
  p.poll();
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].press_seq, 1u);
  EXPECT_EQ(p.pending_events(), 0u);
}

TEST(Plug, QueuedPressesKeepOrder) {
  ManualClock clock;
  PlugEmulator p("plug1", "k", clock);
  bool up = false;
  std::vector<std::uint64_t> seqs;
  p.set_sink([&](const DeviceEvent& e) {
    if (!up) return false;
    seqs.push_back(e.press_seq);
    return true;
  });
  p.press();
  p.press();
  p.press();
  EXPECT_EQ(p.pending_events(), 3u);
  up = true;
  clock.set(5000);
  p.poll();
  EXPECT_EQ(seqs, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(DeviceEventJson, RoundTrip) {
  const DeviceEvent e{"plug1", "power", true, 4};
  EXPECT_EQ(to_json(e).dump(), R"({"device":"plug1","var":"power","value":true,"press_seq":4})");
  const auto back = device_event_from_json(nlohmann::json::parse(to_json(e).dump()));
  ASSERT_TRUE(back);
  EXPECT_EQ(back->device, "plug1");
  EXPECT_EQ(back->value, Value{true});
  EXPECT_EQ(back->press_seq, 4u);
  EXPECT_FALSE(device_event_from_json(nlohmann::json::parse(R"({"device":"p","var":"power","value":true})")));
  EXPECT_FALSE(device_event_from_json(nlohmann::json::parse(R"({"device":"p","var":"power","value":[],"press_seq":1})")));
}

Command device_command(std::string device, std::string var, Value v) {
  Command c;
  c.target = CommandTarget::Device;
  c.device_id = std::move(device);
  c.var = std::move(var);
  c.value = std::move(v);
  return c;
}

TEST(Adapter, PowerToPlugTriggersWebhook) {
  ManualClock clock;
  PlugEmulator p("plug1", "xri-key", clock);
  std::vector<std::string> paths;
  InProcessTransport t([&](const HttpRequest& r) {
    paths.push_back(r.method + " " + r.path);
    return p.handle(r);
  });
  const DeviceDescriptor d{"plug1", DeviceKind::Plug, "inproc://plug1", "", ""};
  EXPECT_TRUE(adapter_send(d, t, device_command("plug1", "power", true), {}).ok);
  EXPECT_TRUE(p.state().on);
  EXPECT_EQ(paths.back(), "POST /trigger/lamp_on/with/key/xri-key");
  EXPECT_TRUE(adapter_send(d, t, device_command("plug1", "power", false), {}).ok);
  EXPECT_EQ(paths.back(), "POST /trigger/lamp_off/with/key/xri-key");
  EXPECT_EQ(adapter_read(d, t, {}).at("power"), Value{false});

  const auto bad_key = adapter_send(d, t, device_command("plug1", "power", true), {"xri", "nope"});
  EXPECT_FALSE(bad_key.ok);
  EXPECT_FALSE(bad_key.retriable);
}

TEST(Adapter, ColorToBulbUsesRgbToHsb) {
  ManualClock clock;
  BridgeEmulator b("xri", 4, clock);
  std::string body;
  InProcessTransport t([&](const HttpRequest& r) {
    body = r.body;
    return b.handle(r);
  });
  const DeviceDescriptor d{"bulb3", DeviceKind::ColorBulb, "inproc://bridge", "3", ""};
  EXPECT_TRUE(adapter_send(d, t, device_command("bulb3", "color", ColorRGB{0, 1, 0}), {}).ok);
  EXPECT_EQ(body, R"({"on":true,"hue":21845,"sat":254,"bri":254})");
  EXPECT_EQ(b.get_light("3"), (BulbState{true, 21845, 254, 254}));
  const auto back = std::get<ColorRGB>(adapter_read(d, t, {}).at("color"));
  EXPECT_NEAR(back.g, 1.0, 1e-12);
  EXPECT_NEAR(back.r, 0.0, 1e-4);
}

TEST(Adapter, SchemaMismatchIsAFault) {
  ManualClock clock;
  PlugEmulator p("plug1", "xri-key", clock);
  InProcessTransport t([&](const HttpRequest& r) { return p.handle(r); });
  const DeviceDescriptor plug{"plug1", DeviceKind::Plug, "", "", ""};
  EXPECT_THROW(adapter_send(plug, t, device_command("plug1", "color", ColorRGB{1, 0, 0}), {}), SyncError);
  EXPECT_THROW(adapter_send(plug, t, device_command("plug1", "power", 1.0), {}), SyncError);
  const DeviceDescriptor bulb{"b", DeviceKind::ColorBulb, "", "1", ""};
  EXPECT_THROW(adapter_send(bulb, t, device_command("b", "power", true), {}), SyncError);
  Command scene = device_command("plug1", "power", true);
  scene.target = CommandTarget::SceneClients;
  EXPECT_THROW(adapter_send(plug, t, scene, {}), SyncError);
}

TEST(Adapter, OutagesAreRetriable) {
  ManualClock clock;
  PlugEmulator p("plug1", "xri-key", clock);
  p.faults().add_outage(0, 100);
  InProcessTransport t([&](const HttpRequest& r) { return p.handle(r); });
  const DeviceDescriptor d{"plug1", DeviceKind::Plug, "", "", ""};
  const auto r = adapter_send(d, t, device_command("plug1", "power", true), {});
  EXPECT_FALSE(r.ok);
  EXPECT_TRUE(r.retriable);
  EXPECT_THROW(adapter_read(d, t, {}), DeviceUnavailable);
  InProcessTransport dead([](const HttpRequest&) -> HttpResponse { throw DeviceUnavailable("refused"); });
  const auto r2 = adapter_send(d, dead, device_command("plug1", "power", true), {});
  EXPECT_FALSE(r2.ok);
  EXPECT_TRUE(r2.retriable);
}

TEST(HttpFront, ServesEmulatorsOverRealHttp) {
  ManualClock clock;
  BridgeEmulator b("xri", 4, clock);
  PlugEmulator p("plug1", "xri-key", clock);
  HttpFront bridge_front("127.0.0.1", 0, [&](const HttpRequest& r) { return b.handle(r); });
  HttpFront plug_front("127.0.0.1", 0, [&](const HttpRequest& r) { return p.handle(r); });
  ASSERT_TRUE(bridge_front.start());
  ASSERT_TRUE(plug_front.start());

  HttpTransport bt("http://127.0.0.1:" + std::to_string(bridge_front.port()), std::chrono::milliseconds(2000));
  const auto put = bt.request({"PUT", "/api/xri/lights/1/state", R"({"on":true,"hue":0,"sat":254,"bri":254})"});
  EXPECT_EQ(put.status, 200);
  EXPECT_EQ(put.body, test::read_text(test::golden("devices/bridge_put_red.json")));
  EXPECT_EQ(bt.request({"GET", "/api/xri/lights/1", ""}).body,
            test::read_text(test::golden("devices/bridge_get_red.json")));

  HttpTransport pt("http://127.0.0.1:" + std::to_string(plug_front.port()), std::chrono::milliseconds(2000));
  const auto bad = pt.request({"POST", "/trigger/lamp_on/with/key/wrong", ""});
  EXPECT_EQ(bad.status, 401);
  EXPECT_EQ(bad.body, test::read_text(test::golden("devices/plug_trigger_bad_key.json")));
  const auto press = pt.request({"POST", "/press", ""});
  EXPECT_EQ(press.status, 200);
  EXPECT_TRUE(p.state().on);

  // sink over HTTP to a webhook
  std::vector<DeviceEvent> got;
  HttpFront hook("127.0.0.1", 0, [&](const HttpRequest& r) {
    auto e = device_event_from_json(nlohmann::json::parse(r.body, nullptr, false));
    if (r.path != "/events" || !e) return HttpResponse{400, "{}"};
    got.push_back(*e);
    return HttpResponse{200, "{}"};
  });
  ASSERT_TRUE(hook.start());
  auto sink = http_event_sink("http://127.0.0.1:" + std::to_string(hook.port()), std::chrono::milliseconds(2000));
  EXPECT_TRUE(sink(DeviceEvent{"plug1", "power", true, 9}));
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].press_seq, 9u);
  hook.stop();
  EXPECT_FALSE(sink(DeviceEvent{"plug1", "power", true, 10}));

  bridge_front.stop();
  EXPECT_THROW(bt.request({"GET", "/api/xri/lights", ""}), DeviceUnavailable);
}

TEST(HttpFront, BusyPortFailsToStart) {
  HttpFront a("127.0.0.1", 0, [](const HttpRequest&) { return HttpResponse{}; });
  ASSERT_TRUE(a.start());
  HttpFront b("127.0.0.1", a.port(), [](const HttpRequest&) { return HttpResponse{}; });
  EXPECT_FALSE(b.start());
}

}  // namespace
}  // namespace xri
