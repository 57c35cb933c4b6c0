#include <gtest/gtest.h>

#include "simres/verify.hpp"

using namespace simres;

TEST(Verify, CleanBuildPassesEveryCheck) {
  std::size_t seen = 0;
  const auto report = run_verify({}, [&](const CheckResult&) { ++seen; });
  EXPECT_EQ(seen, verify_check_names().size());
  for (const auto& c : report.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  EXPECT_TRUE(report.passed());
  EXPECT_TRUE(report.failures().empty());
  EXPECT_LT(report.seconds, 120.0);
}

TEST(Verify, ZeroLambdaFaultIsReported) {
  VerifyOptions opts;
  opts.simam_lambda = 0.0;
  const auto report = run_verify(opts);
  EXPECT_FALSE(report.passed());
  EXPECT_EQ(report.failures(), std::vector<std::string>{"simam.precondition"});
}

TEST(Verify, CheckNamesAreUnique) {
  auto names = verify_check_names();
  std::sort(names.begin(), names.end());
  EXPECT_EQ(std::adjacent_find(names.begin(), names.end()), names.end());
  EXPECT_GE(names.size(), 20u);
}
