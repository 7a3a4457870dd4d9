#pragma once

// Property suites shared by `geo-residual verify` and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

namespace georesidual::verify {

enum class Relation { at_most, below, above };

struct Property {
  std::string suite;
  std::string name;
  double measured = 0.0;  // worst case over the trials
  double bound = 0.0;
  Relation relation = Relation::at_most;
  bool passed = false;
  double seconds = 0.0;
};

Property make_property(std::string suite, std::string name, double measured, Relation rel,
                       double bound);
std::string relation_symbol(Relation r);

struct VerifyOptions {
  std::uint64_t seed = 20260;
  /// Test hook: evaluates the boundary-orthogonality check at beta = 1.5.
  bool break_householder_beta = false;
};

/// 1000 random rank-2 Cayley operators, beta in [0, 1e3], n in {2, 4, 8}.
std::vector<Property> orthogonality_suite(const VerifyOptions& o = {});
std::vector<Property> householder_suite(const VerifyOptions& o = {});
/// Midpoint blend non-orthogonality and gate-penalty anchors.
std::vector<Property> midpoint_suite(const VerifyOptions& o = {});
/// Iterative retraction (alpha 0.1, s 2, X = I, ||A||_F <= 1) versus exact Cayley.
std::vector<Property> retraction_suite(const VerifyOptions& o = {});
/// Central-difference checks of every trainable operation and of 1-layer models.
std::vector<Property> gradient_suite(const VerifyOptions& o = {});
/// Matched configurations within 3% of the reference parameter budgets.
std::vector<Property> fairness_suite();

std::vector<Property> run_all(const VerifyOptions& o = {});

}  // namespace georesidual::verify
