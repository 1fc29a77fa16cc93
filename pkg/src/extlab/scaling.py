"""Exponent bookkeeping, parabolic rescaling, and log-log slope fitting.

Three independent strands of algebra used by the experiment drivers:

- the critical exponents attached to a dimension parameter alpha (the
  weighted estimates hold at ``p = 2(4 alpha+3)/(2 alpha+3)`` for
  ``alpha < 5/2`` and at the fixed endpoint 13/4 above), together with
  the two weight-factor branches ``max[A, A^{1-p/4}]`` and
  ``max[A, A^{2-p/2}]``;
- the anisotropic affine map adapted to a surface cap — parameter
  directions contract by the cap radius r, the normal direction by r^2 —
  with its exact eigenvalue algebra and the induced pushforward of
  weights and amplitudes;
- least-squares slope extraction from (R, value) samples in log-log
  coordinates, the measurement primitive behind every scaling run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .extension import AmplitudeFunction
from .geometry import (
    Cap,
    HeightFunction,
    Polynomial2D,
    SurfaceGraph,
    build_surface,
)
from .measures import Weight

LOGGER = logging.getLogger(__name__)

#: alpha at and above which the exponent p stops varying.
ALPHA_CAP = 2.5

#: constant in the pushforward scan bound A(H') <= 192 r^{3-alpha} A(H).
PUSHFORWARD_CONSTANT = 192.0


# ---------------------------------------------------------------------------
# exponent tables and weight factors
# ---------------------------------------------------------------------------

def weight_factor(a_value: float, p: float, variant: str = "A") -> float:
    """The two-branch weight factor max(A, A^e).

    ``variant="A"`` uses e = 1 - p/4; ``variant="script_A"`` uses
    e = 2 - p/2.  For A >= 1 the first branch wins, below 1 the second.
    """
    if a_value < 0.0:
        raise ValueError(f"A value must be nonnegative, got {a_value}")
    if variant == "A":
        expo = 1.0 - p / 4.0
    elif variant == "script_A":
        expo = 2.0 - p / 2.0
    else:
        raise ValueError(f"unknown weight-factor variant {variant!r}")
    if expo <= 0.0:
        raise ValueError(f"p={p} puts the secondary branch exponent at "
                         f"{expo} <= 0")
    return max(a_value, a_value ** expo)


@dataclass(frozen=True)
class ExponentTable:
    """Critical exponents for a dimension parameter alpha.

    ``p0_dual`` is the Lebesgue conjugate of p0; ``gamma_max`` bounds the
    admissible spherical-mean parameter (2 <= gamma < 11/2 - alpha) in
    the capped regime and is None otherwise.
    """

    alpha: float
    p: float
    p0: float
    p0_dual: float
    regime: str
    gamma_max: Optional[float]

    def weight_bound(self, a_value: float, variant: str = "A") -> float:
        """Weight factor evaluated at this table's exponent p."""
        return weight_factor(a_value, self.p, variant)

    def to_dict(self) -> Dict:
        return {"alpha": self.alpha, "p": self.p, "p0": self.p0,
                "p0_dual": self.p0_dual, "regime": self.regime,
                "gamma_max": self.gamma_max}


def exponents(alpha: float) -> ExponentTable:
    """Exponent table at dimension alpha in [3/2, 3].

    Below ALPHA_CAP the exponent interpolates as 2(4a+3)/(2a+3) from 3
    (at a=3/2) up to 13/4; from ALPHA_CAP on it is pinned at 13/4.  p0
    always satisfies p0 = 2p/(2p-3).
    """
    if not 1.5 <= alpha <= 3.0:
        raise ValueError(f"alpha must lie in [1.5, 3], got {alpha}")
    if alpha < ALPHA_CAP:
        p = 2.0 * (4.0 * alpha + 3.0) / (2.0 * alpha + 3.0)
        regime = "varying_exponent"
        gamma_max = None
    else:
        p = 3.25
        regime = "capped_exponent"
        gamma_max = 5.5 - alpha
    p0 = 2.0 * p / (2.0 * p - 3.0)
    return ExponentTable(alpha=float(alpha), p=p, p0=p0,
                         p0_dual=p0 / (p0 - 1.0), regime=regime,
                         gamma_max=gamma_max)


# ---------------------------------------------------------------------------
# the cap-adapted affine map
# ---------------------------------------------------------------------------

@dataclass
class ParabolicMap:
    """Affine map Tx = ((r x1, r x2) + r x3 grad_h(w0), r^2 x3).

    ``matrix`` is T; the Gram matrix T^t T has one exact eigenvalue r^2
    and two more from the quadratic factor
    lambda^2 - (r^2 J^2 + r^4) lambda + r^6, with J^2 = 1 + |grad_h|^2.
    """

    center: np.ndarray
    radius: float
    gradient: np.ndarray
    matrix: np.ndarray

    @property
    def determinant(self) -> float:
        """det T = r^4 (volume contraction of the change of variables)."""
        return float(self.radius) ** 4

    @property
    def gram(self) -> np.ndarray:
        return self.matrix.T @ self.matrix

    @property
    def inverse_matrix(self) -> np.ndarray:
        r = self.radius
        gx, gy = self.gradient
        return np.array([[1.0 / r, 0.0, -gx / r**2],
                         [0.0, 1.0 / r, -gy / r**2],
                         [0.0, 0.0, 1.0 / r**2]])

    def eigenvalues(self) -> Tuple[float, float, float]:
        """Closed-form Gram eigenvalues (lambda1, lambda2, lambda3) =
        (r^2, smaller root, larger root)."""
        r = self.radius
        jac_sq = 1.0 + float(self.gradient @ self.gradient)
        s = r**2 * jac_sq + r**4
        root = np.sqrt(max(s * s - 4.0 * r**6, 0.0))
        lam3 = 0.5 * (s + root)
        lam2 = 2.0 * r**6 / (s + root)
        return (r**2, lam2, lam3)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=float)) @ self.matrix.T

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=float)) \
            @ self.inverse_matrix.T

    def to_dict(self) -> Dict:
        lam = self.eigenvalues()
        return {"center": self.center.tolist(), "radius": self.radius,
                "gradient": self.gradient.tolist(),
                "determinant": self.determinant,
                "eigenvalues": list(lam)}


def parabolic_map(surface: SurfaceGraph, cap) -> ParabolicMap:
    """Cap-adapted affine map for a cap (duck-typed: center, radius)."""
    r = float(cap.radius)
    if not 0.0 < r <= 1.0:
        raise ValueError(f"cap radius must lie in (0, 1], got {r}")
    center = np.asarray(cap.center, dtype=float)
    grad = surface.height.gradient(center[None, :])[0]
    matrix = np.array([[r, 0.0, r * grad[0]],
                       [0.0, r, r * grad[1]],
                       [0.0, 0.0, r**2]])
    return ParabolicMap(center=center, radius=r, gradient=grad,
                        matrix=matrix)


def pushforward_weight(H: Weight, pmap: ParabolicMap) -> Weight:
    """The weight H' = H compose T^{-1}, evaluated exactly (no regridding).

    Satisfies H'(Tx) = H(x) pointwise; its A_alpha scan is bounded by
    PUSHFORWARD_CONSTANT * r^{3-alpha} times the scan of H (see
    :func:`pushforward_A_bound`).
    """
    inverse = pmap.inverse_matrix

    def evaluator(points: np.ndarray) -> np.ndarray:
        return H(np.atleast_2d(np.asarray(points, dtype=float))
                 @ inverse.T)

    return Weight(kind="pushforward",
                  claimed_dimension=H.claimed_dimension,
                  evaluator=evaluator,
                  meta={"base_kind": H.kind,
                        "cap_center": pmap.center.tolist(),
                        "cap_radius": pmap.radius,
                        "determinant": pmap.determinant})


def pushforward_A_bound(a_value: float, radius: float,
                        alpha: float) -> float:
    """Scan bound PUSHFORWARD_CONSTANT * r^{3-alpha} * A_alpha(H)."""
    return PUSHFORWARD_CONSTANT * radius ** (3.0 - alpha) * a_value


# ---------------------------------------------------------------------------
# rescaled surfaces and amplitudes
# ---------------------------------------------------------------------------

def _compose_affine(poly: Polynomial2D, center: np.ndarray,
                    scale: float) -> Dict[Tuple[int, int], float]:
    """Coefficients of w -> poly(center + scale * w), exact binomials."""
    out: Dict[Tuple[int, int], float] = {}
    for (i, j), c in poly.coeffs.items():
        for a in range(i + 1):
            for b in range(j + 1):
                term = (c * comb(i, a) * comb(j, b)
                        * center[0] ** (i - a) * center[1] ** (j - b)
                        * scale ** (a + b))
                if term != 0.0:
                    out[(a, b)] = out.get((a, b), 0.0) + term
    return out


def rescaled_height(height: HeightFunction, center: np.ndarray,
                    radius: float) -> HeightFunction:
    """Height of the rescaled surface:
    h1(w) = r^{-2} [h(w0 + r w) - h(w0) - r grad_h(w0).w].

    The constant and linear coefficients cancel identically, so they are
    dropped rather than subtracted; the Hessian of h1 at w equals the
    Hessian of h at w0 + r w, keeping the curvature window intact.
    """
    comp = _compose_affine(height.poly, np.asarray(center, dtype=float),
                           float(radius))
    coeffs = {key: val / radius**2 for key, val in comp.items()
              if key not in ((0, 0), (1, 0), (0, 1))}
    return HeightFunction(Polynomial2D(coeffs),
                          name=f"{height.name}|rescaled")


def parabolic_rescale(surface: SurfaceGraph, cap,
                      amplitude: Callable[[np.ndarray], np.ndarray],
                      grid_resolution: Optional[int] = None
                      ) -> Tuple[SurfaceGraph, AmplitudeFunction]:
    """Rescaled surface S1 and amplitude g for a cap-supported amplitude.

    ``amplitude`` is a callable on (n, 2) parameter arrays.  The full
    parameter disc of S1 corresponds to the cap, and
    g(w) = r^2 f(w0 + r w), which gives the norm bookkeeping
    ||g||^2_{L2(S1)} <= 3 r^2 ||f||^2_{L2(S)}.
    """
    r = float(cap.radius)
    center = np.asarray(cap.center, dtype=float)
    height1 = rescaled_height(surface.height, center, r)
    surface1 = build_surface(height1,
                             grid_resolution or surface.grid_resolution)
    values = r**2 * np.asarray(amplitude(center + r * surface1.params),
                               dtype=complex)
    g = AmplitudeFunction(surface1, values, name="g")
    return surface1, g


# ---------------------------------------------------------------------------
# log-log slope fits
# ---------------------------------------------------------------------------

@dataclass
class ScalingFit:
    """Least-squares line through (log R, log value) samples.

    ``window`` is slope +/- 2 standard errors; ``residual`` the largest
    absolute log-deviation from the fitted line.
    """

    log_radii: np.ndarray
    log_values: np.ndarray
    slope: float
    intercept: float
    residual: float
    stderr: float

    @property
    def window(self) -> Tuple[float, float]:
        return (self.slope - 2.0 * self.stderr,
                self.slope + 2.0 * self.stderr)

    @property
    def n_points(self) -> int:
        return len(self.log_radii)

    def predict(self, R: float) -> float:
        return float(np.exp(self.intercept + self.slope * np.log(R)))

    def to_dict(self) -> Dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "stderr": self.stderr,
                "window": list(self.window), "n_points": self.n_points,
                "log_radii": self.log_radii.tolist(),
                "log_values": self.log_values.tolist()}


def fit_scaling(pairs: Iterable[Tuple[float, float]]) -> ScalingFit:
    """Fit value ~ C * R^slope from (R, value) samples.

    Requires at least 3 pairs with distinct R and positive entries.
    """
    arr = np.asarray([(float(R), float(v)) for R, v in pairs])
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("pairs must be (R, value) tuples")
    if len(np.unique(arr[:, 0])) < 3:
        raise ValueError("need at least 3 pairs with distinct R")
    if np.any(arr <= 0.0):
        raise ValueError("radii and values must be positive for a "
                         "log-log fit")
    x = np.log(arr[:, 0])
    y = np.log(arr[:, 1])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    return ScalingFit(log_radii=x, log_values=y, slope=slope,
                      intercept=intercept,
                      residual=float(np.abs(resid).max()),
                      stderr=float(np.sqrt(s2 / sxx)))
