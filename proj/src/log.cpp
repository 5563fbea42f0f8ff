#include "perclab/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace perclab {

namespace {
std::atomic<bool> g_enabled{true};
std::atomic<long> g_count{0};
std::mutex g_mutex;
}  // namespace

void warn(const std::string& msg) {
  ++g_count;
  if (!g_enabled) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "perclab warning: " << msg << '\n';
}

void set_warnings_enabled(bool on) { g_enabled = on; }

long warning_count() { return g_count; }

}  // namespace perclab
