#include <gtest/gtest.h>

#include "gradcheck_suite.hpp"

TEST(GradientFidelity, EveryPrimitiveAndCompositionOverTwentySeeds) {
  for (const auto& r : gradcheck::run(20)) {
    EXPECT_LT(r.worst, 1e-4) << r.name;
    RecordProperty(r.name, std::to_string(r.worst));
  }
}
