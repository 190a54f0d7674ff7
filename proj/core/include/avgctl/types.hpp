#pragma once

#include <cmath>

#include <Eigen/Core>

#include "avgctl/errors.hpp"

namespace avgctl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;

// x lives in a single chart V of R^n; p is the matching row covector,
// stored column-wise. Controls are Euclidean-ball constrained.
using StateVec = Vec;
using CostateVec = Vec;
using ControlVec = Vec;

inline constexpr double kTwoPi = 6.2831853071795864769252867665590058;
inline constexpr double kPi = 3.1415926535897932384626433832795029;

/// Admissibility slack on ||u|| <= 1.
inline constexpr double kControlTol = 1e-12;

/// Reduces a real angle to its canonical representative in [0, 2*pi).
double normalize_angle(double s);

/// An angle on S^1 kept as the raw real value it was built from.
class AngleS1 {
  public:
    AngleS1() = default;
    explicit AngleS1(double raw) : raw_(raw) {
        if (!std::isfinite(raw)) throw DomainError("AngleS1: non-finite angle");
    }
    double raw() const { return raw_; }
    double canonical() const { return normalize_angle(raw_); }

  private:
    double raw_ = 0.0;
};

inline bool all_finite(const Vec& v) { return v.allFinite(); }

struct CotangentPoint {
    StateVec x;
    CostateVec p;
};

}  // namespace avgctl
