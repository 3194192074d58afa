#pragma once

// Randomised two-sided traces against one link: a scene client and a device
// each hold their own copy of the value, updates race, commands are delayed,
// dropped or delivered late.

#include "support.hpp"

#include "xri/sync_engine.hpp"

#include <variant>

namespace xri::test {

struct TraceOutcome {
  bool converged = false;
  int rounds = 0;
  std::string detail;
};

class TraceSim {
 public:
  // `color` selects an rgb_to_hsb colour link, otherwise a boolean link.
  TraceSim(bool color, std::uint64_t seed)
      : color_(color),
        rng_(seed),
        state_(SyncLink{"link", "obj", "dev", Interaction::TwoWay,
                        {{color ? "color" : "power", color ? "color" : "power",
                          color ? Transform::RgbToHsb : Transform::Identity}}}) {
    const Value init = color ? Value{ColorRGB{0, 0, 0}} : Value{false};
    client_ = init;
    device_ = color ? Device{ColorHSB{false, 0, 0, 1}} : Device{false};
    state_.seed(var(), VersionedValue{init, {0}, Origin::Virtual, 0});
    state_.observe(Origin::Physical, var(), device_value());
  }

  std::string var() const { return color_ ? "color" : "power"; }

  Value random_value() {
    if (!color_) return rng_.coin();
    // Mix of arbitrary and repeated colours so equal-value races happen.
    static const std::vector<ColorRGB> palette{{1, 0, 0}, {0, 1, 0}, {0.2, 0.4, 0.6}, {0, 0, 0}};
    return rng_.integer(0, 2) == 0 ? Value{rng_.pick(palette)} : Value{rng_.color()};
  }

  // Value the device exposes to the hub.
  Value device_value() const {
    if (const auto* h = std::get_if<ColorHSB>(&device_)) return hsb_to_rgb(*h);
    return std::get<bool>(device_);
  }

  void step() {
    switch (rng_.integer(0, 4)) {
      case 0: {
        client_ = random_value();
        emit(state_, UpdateEvent{"link", var(), {client_, {now_}, Origin::Virtual, ++vseq_}});
        break;
      }
      case 1: {
        const Value v = random_value();
        if (color_) device_ = rgb_to_hsb(std::get<ColorRGB>(v));
        else device_ = std::get<bool>(v);
        emit(state_, UpdateEvent{"link", var(), {device_value(), {now_}, Origin::Physical, ++pseq_}});
        break;
      }
      case 2: deliver_some(); break;
      case 3: {
        // duplicate re-delivery of an earlier update
        if (!history_.empty()) emit(state_, rng_.pick(history_), false);
        break;
      }
      default: now_ += rng_.integer(0, 2); break;
    }
  }

  // Delivers everything outstanding, then runs propagation rounds: read
  // back both sides, push the reconciled value where they differ.
  TraceOutcome quiesce() {
    while (!pending_.empty()) deliver(0, true);
    TraceOutcome out;
    for (out.rounds = 0; out.rounds < 4; ++out.rounds) {
      state_.observe(Origin::Virtual, var(), client_);
      state_.observe(Origin::Physical, var(), device_value());
      auto cmds = resync(state_);
      if (cmds.empty()) break;
      for (const auto& c : cmds) {
        mark_sent(state_, c);
        apply(c);
        acknowledge(state_, c, true);
      }
    }
    const Value dev = device_value();
    out.converged = values_agree(client_, dev) && resync(state_).empty();
    if (!out.converged) out.detail = "client " + format_value(client_) + " device " + format_value(dev);
    return out;
  }

  void run(int updates) {
    int made = 0;
    while (made < updates) {
      const auto before = vseq_ + pseq_;
      step();
      made += static_cast<int>(vseq_ + pseq_ - before);
    }
  }

 private:
  using Device = std::variant<bool, ColorHSB>;

  void emit(LinkState& s, const UpdateEvent& e, bool record = true) {
    if (record) history_.push_back(e);
    for (const auto& c : ingest_update(s, e)) {
      mark_sent(s, c);
      pending_.push_back(c);
    }
  }

  void deliver_some() {
    if (pending_.empty()) return;
    const auto i = static_cast<std::size_t>(rng_.integer(0, static_cast<std::int64_t>(pending_.size()) - 1));
    deliver(i, rng_.integer(0, 3) != 0);
  }

  void deliver(std::size_t i, bool ok) {
    const Command c = pending_[i];
    pending_.erase(pending_.begin() + static_cast<std::ptrdiff_t>(i));
    if (ok) apply(c);
    acknowledge(state_, c, ok);
  }

  void apply(const Command& c) {
    if (c.target == CommandTarget::SceneClients) {
      client_ = c.value;
    } else if (c.hsb) {
      device_ = *c.hsb;
    } else {
      device_ = std::get<bool>(c.value);
    }
  }

  bool color_;
  Rng rng_;
  LinkState state_;
  Value client_;
  Device device_;
  std::int64_t now_ = 1;
  std::uint64_t vseq_ = 0;
  std::uint64_t pseq_ = 0;
  std::vector<Command> pending_;
  std::vector<UpdateEvent> history_;
};

}  // namespace xri::test
