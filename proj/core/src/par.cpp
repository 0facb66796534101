#include "hinerv/par.hpp"

#include <cstdlib>
#include <thread>

namespace hinerv {

int worker_count() {
  static const int count = [] {
    int n = (int)std::thread::hardware_concurrency();
    if (n < 1) n = 1;
    if (const char* env = std::getenv("HINERV_THREADS")) {
      int cap = std::atoi(env);
      if (cap >= 1 && cap < n) n = cap;
    }
    return n;
  }();
  return count;
}

}  // namespace hinerv
