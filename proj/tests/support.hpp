#pragma once

#include <filesystem>
#include <string>

#include "misalloc/dgp.hpp"

namespace testing {

inline std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::path(MISALLOC_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Cobb-Douglas (0.3, 0.3, 0.4) with AR(1) productivity.
inline misalloc::DgpSpec cd_spec(int firms = 500, int years = 10, std::uint64_t seed = 1) {
  misalloc::DgpSpec s;
  s.n_firms = firms;
  s.n_years = years;
  s.seed = seed;
  return s;
}

}  // namespace testing
