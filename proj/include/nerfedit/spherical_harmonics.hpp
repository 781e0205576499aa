#pragma once

#include "nerfedit/common.hpp"

namespace nerfedit {

inline constexpr int kShCoefficients = 16;

/// Real spherical harmonics of bands 0..3 evaluated at a unit direction.
template <typename Scalar, typename Out>
void spherical_harmonics(const Vector3<Scalar>& d, Out&& out) {
  const Scalar x = d.x(), y = d.y(), z = d.z();
  const Scalar xx = x * x, yy = y * y, zz = z * z;
  out[0] = Scalar(0.28209479177387814);
  out[1] = Scalar(-0.48860251190291987) * y;
  out[2] = Scalar(0.48860251190291987) * z;
  out[3] = Scalar(-0.48860251190291987) * x;
  out[4] = Scalar(1.0925484305920792) * x * y;
  out[5] = Scalar(-1.0925484305920792) * y * z;
  out[6] = Scalar(0.94617469575755997) * zz - Scalar(0.31539156525251999);
  out[7] = Scalar(-1.0925484305920792) * x * z;
  out[8] = Scalar(0.54627421529603959) * (xx - yy);
  out[9] = Scalar(0.59004358992664352) * y * (Scalar(3) * xx - yy) * Scalar(-1);
  out[10] = Scalar(2.8906114426405538) * x * y * z;
  out[11] = Scalar(0.45704579946446572) * y * (Scalar(1) - Scalar(5) * zz);
  out[12] = Scalar(0.3731763325901154) * z * (Scalar(5) * zz - Scalar(3));
  out[13] = Scalar(0.45704579946446572) * x * (Scalar(1) - Scalar(5) * zz);
  out[14] = Scalar(1.4453057213202769) * z * (xx - yy);
  out[15] = Scalar(0.59004358992664352) * x * (Scalar(3) * yy - xx);
}

}  // namespace nerfedit
