#include <iostream>

#include "mpw/selftest.hpp"

int main() {
  auto report = mpw::run_unit_tests();
  std::cout << report.to_text();
  return report.passed() ? 0 : 1;
}
