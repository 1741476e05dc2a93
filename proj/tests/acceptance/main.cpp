// Acceptance criteria 1-9: one PASS/FAIL line per criterion.

#include <iostream>

#include "acceptance.hpp"
#include "qrife/parallel.hpp"

int main() {
  qrife::acceptance::Options options;
  options.threads = qrife::default_thread_count();
  bool ok = true;
  for (const auto& r : qrife::acceptance::run_all(options, std::cout)) ok = ok && r.pass;
  return ok ? 0 : 1;
}
