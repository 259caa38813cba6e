#pragma once

#include <Eigen/Core>
#include <cmath>

namespace sali {

using Vec3 = Eigen::Vector3d;
using VecXd = Eigen::VectorXd;

// Heading convention used throughout: angle in the (x, y) plane measured
// from +y, increasing clockwise (towards +x), in radians. A node due
// "east" (+x) of the reference is at heading pi/2.
inline double heading_of(const Vec3& delta) {
  if (delta.x() == 0.0 && delta.y() == 0.0) return 0.0;
  return std::atan2(delta.x(), delta.y());
}

// Wraps any angle into [0, 2*pi).
inline double wrap_angle(double a) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  a = std::fmod(a, two_pi);
  if (a < 0) a += two_pi;
  return a;
}

// Unit displacement for a heading in the convention above, at z = 0.
inline Vec3 heading_dir(double heading) {
  return Vec3(std::sin(heading), std::cos(heading), 0.0);
}

}  // namespace sali
