#pragma once

namespace mdcell {

// Scalar type of the gradient tape and the network weights. Analysis code
// always runs in double.
#ifdef MDCELL_FLOAT32
using Real = float;
#else
using Real = double;
#endif

inline constexpr bool kDoublePrecision = sizeof(Real) == sizeof(double);

}  // namespace mdcell
