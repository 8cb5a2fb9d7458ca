// Acceptance suite: one test per criterion, each printing a PASS/FAIL line
// with the measured values.

#include <gtest/gtest.h>

#include "aqsgd/verify.hpp"

using namespace aqsgd;

namespace {

void report(int criterion, const CheckResult& r) {
  std::printf("[criterion %2d] %s  %s: %s\n", criterion, r.pass ? "PASS" : "FAIL",
              r.name.c_str(), r.detail.c_str());
  std::fflush(stdout);
  EXPECT_TRUE(r.pass) << r.detail;
}

// Heavyweight studies shared between criteria.
const ToyAuditOutcome& toy_audit() {
  static const ToyAuditOutcome a = run_toy_audit(/*t_steps=*/10000);
  return a;
}

const ConvergenceStudy& study() {
  static const ConvergenceStudy s = run_convergence_study();
  return s;
}

}  // namespace

TEST(Acceptance, C01_IdentityOracle) {
  report(1, check_identity_oracle(2));
  report(1, check_identity_oracle(4));
}

TEST(Acceptance, C02_QuantizerUnbiasedness) { report(2, check_unbiasedness()); }

TEST(Acceptance, C03_DeterministicCqBound) { report(3, check_cq_bound()); }

TEST(Acceptance, C04_FirstVisitAndBufferMirror) { report(4, check_first_visit_and_mirror()); }

TEST(Acceptance, C05_Lemma1CertifiedAudit) { report(5, check_lemma1(toy_audit())); }

TEST(Acceptance, C06_Lemma2AggregateAudit) { report(6, check_lemma2(toy_audit())); }

TEST(Acceptance, C07_TheoremConstantsArithmetic) { report(7, check_constants_arithmetic()); }

TEST(Acceptance, C08_ConvergenceQuality) { report(8, check_convergence_quality(study())); }

TEST(Acceptance, C09_SelfEnforcingDynamics) {
  report(9, check_delta_shrinks(study()));
  report(9, check_frozen_decay());
}

TEST(Acceptance, C10_LowBitBuffer) { report(10, check_low_bit_buffer(study())); }

TEST(Acceptance, C11_SimnetRatioBands) { report(11, check_simnet_bands()); }

TEST(Acceptance, C12_GradientCorrectness) { report(12, check_gradients(100)); }
