#include "nvread/threads.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace nvread {

namespace {
std::atomic<int> g_override{0};
}

int max_threads() {
  int n = g_override.load();
  if (n <= 0) {
    if (const char* env = std::getenv("NVREAD_THREADS")) n = std::atoi(env);
  }
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

void set_max_threads(int n) { g_override.store(n); }

}  // namespace nvread
