#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gestalt/cohort.hpp"
#include "gestalt/error.hpp"

namespace testing {

inline gestalt::Measurement row(std::string id, double fa, double crl, double weight = 1.0) {
  gestalt::Measurement m;
  m.pregnancy_id = std::move(id);
  m.exam_date = gestalt::parse_date("2021-03-01");
  m.fa = fa;
  m.crl = crl;
  m.weight = weight;
  return m;
}

inline gestalt::Cohort cohort_from(const std::vector<double>& fa, const std::vector<double>& crl) {
  std::vector<gestalt::Measurement> rows;
  for (std::size_t i = 0; i < fa.size(); ++i) rows.push_back(row("p" + std::to_string(i), fa[i], crl[i]));
  return gestalt::Cohort(std::move(rows));
}

template <typename Fn>
gestalt::ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const gestalt::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a gestalt::Error");
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gestalt_test_" + name)).string();
}

}  // namespace testing
