#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrife/parallel.hpp"

using namespace qrife;

TEST_CASE("parallel_for visits each index once") {
  for (int threads : {1, 2, 7}) {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (const auto& h : hits) CHECK(h.load() == 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
  for (int threads : {1, 3, 8}) {
    try {
      parallel_for(50, threads, [](std::size_t i) {
        if (i == 17 || i == 31) throw std::runtime_error(std::to_string(i));
      });
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "17");
    }
  }
}

TEST_CASE("default_thread_count reads QRIFE_THREADS") {
  ::setenv("QRIFE_THREADS", "3", 1);
  CHECK(default_thread_count() == 3);
  ::setenv("QRIFE_THREADS", "junk", 1);
  CHECK(default_thread_count() == 1);
  ::unsetenv("QRIFE_THREADS");
  CHECK(default_thread_count() == 1);
}
