#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evflow/core.hpp"

namespace evflow {

/// Events of one accumulation window.
struct EventWindow {
  std::int64_t index = 0;
  std::int64_t start = 0;   // microseconds
  std::int64_t length = 1;  // microseconds
  std::vector<Event> events;

  std::int64_t end() const { return start + length; }
};

/// Groups a time-ordered event stream into half-open windows
/// [t0 + k*dt, t0 + (k+1)*dt), t0 being the first event's timestamp.
/// Windows with no events between active ones are still produced; nothing
/// is produced after the last event.
class WindowSplitter {
 public:
  WindowSplitter(SensorGeometry geometry, std::int64_t window_us)
      : geometry_(geometry), window_us_(window_us) {
    geometry_.validate();
    if (window_us_ <= 0) throw ParameterError("accumulation window must be > 0 us");
  }

  /// Adds an event; windows it closes are appended to `out`.
  void push(const Event& e, std::vector<EventWindow>& out) {
    if (!geometry_.contains(e.x, e.y))
      throw GeometryError("event at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                          ") outside sensor");
    if (!t0_) {
      t0_ = e.t;
      open(0);
    } else if (e.t < last_t_) {
      throw OrderingError("event timestamp " + std::to_string(e.t) + " precedes " +
                          std::to_string(last_t_));
    }
    last_t_ = e.t;
    const std::int64_t k = (e.t - *t0_) / window_us_;
    while (current_.index < k) {
      const auto next = current_.index + 1;
      out.push_back(std::move(current_));
      open(next);
    }
    current_.events.push_back(e);
  }

  /// Emits the open window, if any, and resets.
  void finish(std::vector<EventWindow>& out) {
    if (t0_) out.push_back(std::move(current_));
    t0_.reset();
  }

  /// Index of the window currently being filled, if any.
  std::optional<std::int64_t> open_window() const {
    if (!t0_) return std::nullopt;
    return current_.index;
  }

 private:
  void open(std::int64_t k) {
    current_ = EventWindow{k, *t0_ + k * window_us_, window_us_, {}};
  }

  SensorGeometry geometry_;
  std::int64_t window_us_;
  std::optional<std::int64_t> t0_;
  std::int64_t last_t_ = 0;
  EventWindow current_;
};

/// Binary edge image of one window: a pixel is set iff at least one event of
/// either polarity fell on it.
inline EdgeImage rasterize(const EventWindow& window, SensorGeometry geometry) {
  EdgeImage img(geometry, window.start, window.length, window.index);
  for (const auto& e : window.events) img.bits(e.x, e.y) = 1;
  return img;
}

inline std::vector<EventWindow> split_windows(std::span<const Event> events,
                                              std::int64_t window_us, SensorGeometry geometry) {
  WindowSplitter splitter(geometry, window_us);
  std::vector<EventWindow> out;
  for (const auto& e : events) splitter.push(e, out);
  splitter.finish(out);
  return out;
}

inline std::vector<EdgeImage> accumulate(std::span<const Event> events, std::int64_t window_us,
                                         SensorGeometry geometry) {
  std::vector<EdgeImage> out;
  for (const auto& w : split_windows(events, window_us, geometry))
    out.push_back(rasterize(w, geometry));
  return out;
}

}  // namespace evflow
