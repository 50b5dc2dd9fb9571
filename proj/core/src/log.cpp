#include "nodect/log.hpp"

#include <iostream>
#include <mutex>

namespace nodect {

namespace {

bool g_verbose = false;

void default_sink(LogLevel level, const std::string& msg) {
  if (level == LogLevel::warning) {
    std::cerr << "warning: " << msg << '\n';
  } else if (g_verbose) {
    std::cerr << msg << '\n';
  }
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& sink_ref() {
  static LogSink sink = default_sink;
  return sink;
}

void emit(LogLevel level, const std::string& msg) {
  std::lock_guard lock(sink_mutex());
  if (sink_ref()) sink_ref()(level, msg);
}

}  // namespace

LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(sink_mutex());
  LogSink previous = std::move(sink_ref());
  sink_ref() = sink ? std::move(sink) : LogSink(default_sink);
  return previous;
}

void set_verbose(bool verbose) { g_verbose = verbose; }

void log_info(const std::string& msg) { emit(LogLevel::info, msg); }
void log_warning(const std::string& msg) { emit(LogLevel::warning, msg); }

}  // namespace nodect
