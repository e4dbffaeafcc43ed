"""Cumulative B-splines on Lie groups with recursive time derivatives.

Modules by concern:

* :mod:`liespline.lie` - SO(3), SE(3) and R^d primitives.
* :mod:`liespline.blending` - uniform B-spline blending matrices.
* :mod:`liespline.spline` - spline evaluation and derivatives (recursive and product-rule).
* :mod:`liespline.so3_jacobians` - analytic knot Jacobians for SO(3) splines.
* :mod:`liespline.optimizer` - Levenberg-Marquardt over spline knots.
* :mod:`liespline.experiments` - simulated fitting and synthetic calibration.
"""

from .blending import BlendingMatrices, LambdaBundle, blending_matrix, deboor_cox, lambda_bundle
from .lie import (
    SE3, SO3, BranchError, Rd, RigidTransform, Rotation3, adjoint, commutator, exp_map, hat,
    log_map, perturb, right_jacobian, right_jacobian_inv, vee,
)
from .spline import (
    DerivativeBundle, LieSpline, OpCounter, OutOfRangeError, SegmentContext, derivatives,
    reconstruct_group_derivative,
)

__version__ = "0.1.0"

__all__ = [
    "BlendingMatrices", "LambdaBundle", "blending_matrix", "deboor_cox", "lambda_bundle",
    "SE3", "SO3", "BranchError", "Rd", "RigidTransform", "Rotation3", "adjoint", "commutator",
    "exp_map", "hat", "log_map", "perturb", "right_jacobian", "right_jacobian_inv", "vee",
    "DerivativeBundle", "LieSpline", "OpCounter", "OutOfRangeError", "SegmentContext",
    "derivatives", "reconstruct_group_derivative",
]
