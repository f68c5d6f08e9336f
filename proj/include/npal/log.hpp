#pragma once

#include <functional>
#include <iostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace npal::log {

using Sink = std::function<void(std::string_view level, std::string_view message)>;

inline Sink& sink() {
  static Sink s = [](std::string_view level, std::string_view message) {
    std::cerr << "[npal] " << level << ": " << message << '\n';
  };
  return s;
}

// Replace the process-wide sink; returns the previous one. Passing an empty
// function silences all output.
inline Sink set_sink(Sink s) { return std::exchange(sink(), std::move(s)); }

inline void warn(std::string_view message) {
  if (auto& s = sink()) s("warning", message);
}

inline void info(std::string_view message) {
  if (auto& s = sink()) s("info", message);
}

// Collects messages for the lifetime of the object, restoring the previous
// sink afterwards. Handy in tests.
class CaptureScope {
 public:
  CaptureScope()
      : previous_(set_sink([this](std::string_view level, std::string_view message) {
          messages_.emplace_back(std::string(level) + ": " + std::string(message));
        })) {}
  ~CaptureScope() { set_sink(std::move(previous_)); }
  CaptureScope(const CaptureScope&) = delete;
  CaptureScope& operator=(const CaptureScope&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  std::vector<std::string> messages_;
  Sink previous_;
};

}  // namespace npal::log
