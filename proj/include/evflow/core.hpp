#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace evflow {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

struct GeometryError : Error { using Error::Error; };
struct OrderingError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct GenerationError : Error { using Error::Error; };

/// Raised when a metric has no support (empty evaluation set, zero variance).
struct UndefinedMetricError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Events and geometry
// ---------------------------------------------------------------------------

enum class Polarity : std::uint8_t { negative = 0, positive = 1 };

inline int sign(Polarity p) { return p == Polarity::positive ? 1 : -1; }

struct Event {
  std::int64_t t = 0;  // microseconds
  int x = 0;
  int y = 0;
  Polarity polarity = Polarity::positive;

  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorGeometry {
  int width = 0;
  int height = 0;

  std::size_t area() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  void validate() const {
    if (width < 1 || height < 1)
      throw GeometryError("sensor geometry must be at least 1x1, got " +
                          std::to_string(width) + "x" + std::to_string(height));
  }

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

// ---------------------------------------------------------------------------
// Grid
// ---------------------------------------------------------------------------

/// Dense row-major 2-D array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}
  explicit Grid(SensorGeometry g, T fill = T{}) : Grid(g.width, g.height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  SensorGeometry geometry() const { return {width_, height_}; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* row(int y) { return data_.data() + static_cast<std::size_t>(y) * width_; }
  const T* row(int y) const { return data_.data() + static_cast<std::size_t>(y) * width_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using ScalarGrid = Grid<float>;

// ---------------------------------------------------------------------------
// Edge images
// ---------------------------------------------------------------------------

/// Binary per-window occupancy grid: 1 where at least one event fired.
struct EdgeImage {
  Grid<std::uint8_t> bits;
  std::int64_t window_start = 0;   // microseconds
  std::int64_t window_length = 1;  // microseconds
  std::int64_t window_index = 0;

  EdgeImage() = default;
  EdgeImage(SensorGeometry g, std::int64_t start = 0, std::int64_t length = 1,
            std::int64_t index = 0)
      : bits(g, 0), window_start(start), window_length(length), window_index(index) {}

  SensorGeometry geometry() const { return bits.geometry(); }
  bool at(int x, int y) const { return bits(x, y) != 0; }
  void set(int x, int y, bool v = true) { bits(x, y) = v ? 1 : 0; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits.data()) n += (b != 0);
    return n;
  }
};

}  // namespace evflow
