#pragma once

#include "mlmcvi/core.hpp"

namespace mlmcvi {

/// Euclidean projection of z onto the L2 ball of the given radius.
Vector proximal_truncate(const Vector& z, double radius);

/// J_P(z)^T g for the ball projection P. Identity inside the ball; outside,
/// (radius/|z|) times the projector orthogonal to z.
Vector proximal_truncate_vjp(const Vector& z, double radius, const Vector& g);

}  // namespace mlmcvi
