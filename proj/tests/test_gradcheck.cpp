#include <gtest/gtest.h>

#include "samdetr/gradcheck.hpp"

using namespace samdetr;

TEST(GradCheck, EveryOperation) {
  for (const auto& r : run_op_gradchecks(11, 3)) {
    EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
    EXPECT_GT(r.coords, 0u) << r.name;
  }
}

TEST(GradCheck, EndToEndMicroModel) {
  for (Variant v : {Variant::kBaseline, Variant::kSam, Variant::kSamSmca}) {
    const auto r = run_end_to_end_gradcheck(v, 5, 12);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.name;
  }
}

TEST(GradCheck, DetectsWrongGradient) {
  // a tensor used outside the graph gets zero analytic gradient but a nonzero numeric one
  Tensor x = Tensor::full({3}, 0.7, true);
  auto f = [&] { return Tensor::scalar(x.data()[0] * x.data()[0]); };
  const auto r = check_gradient("detached", f, {x});
  EXPECT_GT(r.max_rel_error, 0.5);
}
