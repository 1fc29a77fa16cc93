"""Curved graph surfaces over the unit disc and their cap decompositions.

The central object is :class:`SurfaceGraph`: a quadrature discretization of
the graph S = {(w, h(w)) : |w| <= 1} of a height function h with Hessian
eigenvalues pinned to the window (3/4, 5/4).  Caps are parameter-space discs
on S; :func:`cap_cover` builds separated covers at the two scales used
throughout (fine caps of radius R^{-1/2}, coarse caps of radius 1/K).

Height functions are closed-form bivariate polynomials, so node positions,
gradients and Hessians are exact; the only approximation anywhere in this
module is the cubature weight of boundary-straddling grid cells, which is
estimated by subsampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

LOGGER = logging.getLogger(__name__)

#: Open interval that must contain every Hessian eigenvalue of h.
HESSIAN_WINDOW = (0.75, 1.25)

#: Largest admissible radius for fine (theta) caps, r = R^{-1/2}.
MAX_THETA_RADIUS = 1.0 / 12.0

#: Largest admissible radius for coarse (tau) caps, r = 1/K.
MAX_TAU_RADIUS = 1.0 / 4.0


# ---------------------------------------------------------------------------
# height functions
# ---------------------------------------------------------------------------

class Polynomial2D:
    """Bivariate polynomial with exact derivatives.

    Parameters
    ----------
    coeffs : dict
        Maps exponent pairs (i, j) to the coefficient of w1^i * w2^j.
        String keys of the form ``"i,j"`` are accepted for JSON round trips.
    """

    def __init__(self, coeffs: Dict) -> None:
        parsed: Dict[Tuple[int, int], float] = {}
        for key, c in coeffs.items():
            if isinstance(key, str):
                i, j = (int(part) for part in key.split(","))
            else:
                i, j = int(key[0]), int(key[1])
            if c != 0.0:
                parsed[(i, j)] = parsed.get((i, j), 0.0) + float(c)
        self.coeffs = parsed

    def __call__(self, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        out = np.zeros(len(w))
        for (i, j), c in self.coeffs.items():
            out += c * w[:, 0] ** i * w[:, 1] ** j
        return out

    def partial(self, dx: int, dy: int) -> "Polynomial2D":
        """Exact partial derivative d^dx/dw1 d^dy/dw2 as a new polynomial."""
        out: Dict[Tuple[int, int], float] = {}
        for (i, j), c in self.coeffs.items():
            if i < dx or j < dy:
                continue
            factor = 1.0
            for k in range(dx):
                factor *= i - k
            for k in range(dy):
                factor *= j - k
            out[(i - dx, j - dy)] = c * factor
        return Polynomial2D(out)

    def to_dict(self) -> Dict[str, float]:
        return {f"{i},{j}": c for (i, j), c in sorted(self.coeffs.items())}


@dataclass(eq=False)
class HeightFunction:
    """A height function with cached derivative polynomials."""

    poly: Polynomial2D
    name: str = "polynomial"
    smoothness_order: int = 100

    def __post_init__(self) -> None:
        self._dx = self.poly.partial(1, 0)
        self._dy = self.poly.partial(0, 1)
        self._dxx = self.poly.partial(2, 0)
        self._dxy = self.poly.partial(1, 1)
        self._dyy = self.poly.partial(0, 2)

    def value(self, w: np.ndarray) -> np.ndarray:
        return self.poly(w)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return np.column_stack([self._dx(w), self._dy(w)])

    def hessian(self, w: np.ndarray) -> np.ndarray:
        """Hessians at each parameter point, shape (n, 2, 2)."""
        hxx, hxy, hyy = self._dxx(w), self._dxy(w), self._dyy(w)
        out = np.empty((len(hxx), 2, 2))
        out[:, 0, 0] = hxx
        out[:, 0, 1] = out[:, 1, 0] = hxy
        out[:, 1, 1] = hyy
        return out

    def hessian_eigenvalues(self, w: np.ndarray) -> np.ndarray:
        """Both eigenvalue branches of the 2x2 Hessian, shape (n, 2)."""
        hxx, hxy, hyy = self._dxx(w), self._dxy(w), self._dyy(w)
        mean = 0.5 * (hxx + hyy)
        rad = np.sqrt((0.5 * (hxx - hyy)) ** 2 + hxy**2)
        return np.column_stack([mean - rad, mean + rad])


def paraboloid_height() -> HeightFunction:
    """The default height h(w) = |w|^2 / 2."""
    return HeightFunction(Polynomial2D({(2, 0): 0.5, (0, 2): 0.5}),
                          name="paraboloid")


def parse_height_spec(h_spec) -> HeightFunction:
    """Normalize a height-function descriptor.

    Accepts the string ``"paraboloid"`` (or None), an existing
    :class:`HeightFunction`, or a dict with ``kind`` in
    {``"paraboloid"``, ``"polynomial"``, ``"quadratic"``}:

    - ``polynomial``: ``coeffs`` maps (i, j) or "i,j" to coefficients;
    - ``quadratic``: ``axx, ayy, axy`` give h = (axx w1^2 + ayy w2^2)/2
      + axy w1 w2.

    ``L`` (smoothness-order metadata) is recorded but never enforced.
    """
    if h_spec is None or h_spec == "paraboloid":
        return paraboloid_height()
    if isinstance(h_spec, HeightFunction):
        return h_spec
    if isinstance(h_spec, dict):
        kind = h_spec.get("kind", "polynomial")
        order = int(h_spec.get("L", 100))
        if kind == "paraboloid":
            hf = paraboloid_height()
            hf.smoothness_order = order
            return hf
        if kind == "quadratic":
            coeffs = {
                (2, 0): 0.5 * float(h_spec.get("axx", 1.0)),
                (0, 2): 0.5 * float(h_spec.get("ayy", 1.0)),
                (1, 1): float(h_spec.get("axy", 0.0)),
            }
            return HeightFunction(Polynomial2D(coeffs), name="quadratic",
                                  smoothness_order=order)
        if kind == "polynomial":
            return HeightFunction(Polynomial2D(h_spec["coeffs"]),
                                  name=h_spec.get("name", "polynomial"),
                                  smoothness_order=order)
        raise ValueError(f"unknown height-function kind: {kind!r}")
    raise TypeError(f"cannot interpret height spec of type {type(h_spec)!r}")


# ---------------------------------------------------------------------------
# exact cell/disc overlap areas
# ---------------------------------------------------------------------------

def _antiderivative_halfchord(x: np.ndarray) -> np.ndarray:
    """int_0^x sqrt(1-t^2) dt, clamped to its limits outside [-1, 1]."""
    xc = np.clip(x, -1.0, 1.0)
    return 0.5 * (xc * np.sqrt(np.maximum(1.0 - xc * xc, 0.0))
                  + np.arcsin(xc))


def _disc_corner_area(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Area of {t <= x, u <= y} intersected with the unit disc.

    Closed form assembled from half-chord antiderivatives; exact up to
    floating-point roundoff, vectorized over corner coordinates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    I = _antiderivative_halfchord
    quarter = np.pi / 4.0

    out = np.zeros(np.broadcast(x, y).shape)
    yhigh = y >= 1.0
    ymid = (y > -1.0) & ~yhigh

    # y >= 1: full vertical chords, area = int_{-1}^{x} 2 sqrt(1-t^2) dt.
    if np.any(yhigh):
        xb = np.broadcast_to(x, out.shape)[yhigh]
        out[yhigh] = 2.0 * (I(xb) + quarter)

    if np.any(ymid):
        xb = np.broadcast_to(x, out.shape)[ymid]
        yb = np.broadcast_to(y, out.shape)[ymid]
        tstar = np.sqrt(np.maximum(1.0 - yb * yb, 0.0))
        # middle band |t| < t*: chord [-sqrt(1-t^2), y], length y + sqrt.
        u2 = np.minimum(xb, tstar)
        u1 = np.full_like(u2, 0.0) - tstar
        width = np.maximum(u2 - u1, 0.0)
        mid = yb * width + np.where(u2 > u1, I(u2) - I(u1), 0.0)
        area = mid
        # left/right bands only contribute when y >= 0 (full chords 2 sqrt).
        pos = yb >= 0.0
        left = 2.0 * (I(np.minimum(xb, -tstar)) + quarter)
        right = np.where(xb > tstar, 2.0 * (I(xb) - I(tstar)), 0.0)
        area = area + np.where(pos, left + right, 0.0)
        out[ymid] = area
    return np.maximum(out, 0.0)


def disc_cell_coverage(centers: np.ndarray, spacing: float) -> np.ndarray:
    """Exact fraction of each square grid cell inside the unit disc.

    Parameters
    ----------
    centers : ndarray, shape (n, 2)
        Cell midpoints; cells are axis-aligned squares of side `spacing`.

    Returns
    -------
    ndarray, shape (n,)
        |cell intersect disc| / spacing^2, by inclusion-exclusion over the
        four corner areas.
    """
    half = 0.5 * spacing
    x1 = centers[:, 0] - half
    x2 = centers[:, 0] + half
    y1 = centers[:, 1] - half
    y2 = centers[:, 1] + half
    area = (_disc_corner_area(x2, y2) - _disc_corner_area(x1, y2)
            - _disc_corner_area(x2, y1) + _disc_corner_area(x1, y1))
    return np.clip(area / (spacing * spacing), 0.0, 1.0)


# ---------------------------------------------------------------------------
# the discretized surface
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SurfaceGraph:
    """Quadrature discretization of the graph of h over the unit disc.

    Attributes
    ----------
    params : ndarray, shape (n, 2)
        Parameter points w_k (grid-cell midpoints inside the disc).
    nodes : ndarray, shape (n, 3)
        Surface points (w_k, h(w_k)).
    quad_weights : ndarray, shape (n,)
        Cubature weights J_h(w_k) * cell_area * coverage_fraction with
        J_h = sqrt(1 + |grad h|^2); their sum approximates the surface
        measure sigma(S).
    gradients : ndarray, shape (n, 2)
        grad h at the nodes.
    jacobians : ndarray, shape (n,)
        J_h at the nodes.
    grid_resolution : int
        Nodes per unit length (grid spacing is 1/grid_resolution).
    height : HeightFunction
        The closed-form height descriptor.
    """

    params: np.ndarray
    nodes: np.ndarray
    quad_weights: np.ndarray
    gradients: np.ndarray
    jacobians: np.ndarray
    grid_resolution: int
    height: HeightFunction
    _tree: Optional[cKDTree] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.params)

    @property
    def spacing(self) -> float:
        return 1.0 / self.grid_resolution

    @property
    def h_spec_name(self) -> str:
        return self.height.name

    @property
    def smoothness_order(self) -> int:
        return self.height.smoothness_order

    @property
    def total_weight(self) -> float:
        """Quadrature estimate of the surface measure sigma(S)."""
        return float(self.quad_weights.sum())

    @property
    def param_tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.params)
        return self._tree

    def nodes_within(self, center: Sequence[float], radius: float) -> np.ndarray:
        """Indices of nodes with |w - center| <= radius (closed disc)."""
        idx = self.param_tree.query_ball_point(np.asarray(center, dtype=float),
                                               radius * (1.0 + 1e-12))
        return np.asarray(sorted(idx), dtype=np.intp)

    def summary(self) -> Dict:
        """JSON-ready summary of the discretization."""
        return {
            "h_spec": {"name": self.height.name,
                       "coeffs": self.height.poly.to_dict(),
                       "L": self.height.smoothness_order},
            "grid_resolution": self.grid_resolution,
            "n_nodes": self.n_nodes,
            "total_weight": self.total_weight,
        }


def build_surface(h_spec="paraboloid", grid_resolution: int = 64) -> SurfaceGraph:
    """Discretize the graph of a height function over the unit disc.

    Parameters
    ----------
    h_spec : str, dict or HeightFunction
        Height-function descriptor; see :func:`parse_height_spec`.
    grid_resolution : int
        Nodes per unit length, at least 8.  The parameter grid is uniform
        Cartesian with spacing 1/grid_resolution, clipped to the disc;
        boundary-straddling cells get subsampled coverage fractions.

    Returns
    -------
    SurfaceGraph

    Raises
    ------
    ValueError
        If the resolution is below 8, or any node's Hessian eigenvalue
        falls outside the open window (3/4, 5/4).
    """
    if grid_resolution < 8:
        raise ValueError("grid_resolution must be at least 8 nodes per unit "
                         f"length, got {grid_resolution}")
    height = parse_height_spec(h_spec)
    res = int(grid_resolution)
    spacing = 1.0 / res

    centers_1d = (np.arange(-res, res) + 0.5) * spacing
    xx, yy = np.meshgrid(centers_1d, centers_1d, indexing="ij")
    params = np.column_stack([xx.ravel(), yy.ravel()])

    dist = np.linalg.norm(params, axis=1)
    cell_rad = spacing * np.sqrt(0.5)
    coverage = np.ones(len(params))
    boundary = dist > 1.0 - cell_rad
    coverage[boundary] = disc_cell_coverage(params[boundary], spacing)

    # Threshold guards against inclusion-exclusion roundoff residue in
    # cells that only graze the disc.
    keep = coverage > 1e-9
    params = params[keep]
    coverage = coverage[keep]
    dist = dist[keep]

    # Sliver cells whose midpoint falls just outside the disc get their
    # node representative pulled radially onto the rim, so every node
    # parameter lies in the closed disc.
    outside = dist > 1.0
    if np.any(outside):
        params = params.copy()
        params[outside] *= ((1.0 - 1e-12) / dist[outside])[:, None]

    eigs = height.hessian_eigenvalues(params)
    lo, hi = HESSIAN_WINDOW
    bad = (eigs[:, 0] <= lo) | (eigs[:, 1] >= hi)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise ValueError(
            "Hessian eigenvalues outside the open window (3/4, 5/4): "
            f"eigenvalues {eigs[k].tolist()} at parameter point "
            f"{params[k].tolist()}")

    grads = height.gradient(params)
    jac = np.sqrt(1.0 + np.sum(grads * grads, axis=1))
    weights = jac * spacing * spacing * coverage
    nodes = np.column_stack([params, height.value(params)])

    LOGGER.debug("built surface %s: %d nodes, sigma ~ %.6f",
                 height.name, len(params), float(weights.sum()))
    return SurfaceGraph(params=params, nodes=nodes, quad_weights=weights,
                        gradients=grads, jacobians=jac,
                        grid_resolution=res, height=height)


# ---------------------------------------------------------------------------
# caps and cap covers
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Cap:
    """A parameter-space disc on the surface.

    ``node_indices`` is exactly the set of surface nodes with
    |w - center| <= radius; ``unit_normal`` is the surface normal at the
    cap center.
    """

    center: np.ndarray
    radius: float
    node_indices: np.ndarray
    unit_normal: np.ndarray
    cap_id: int

    def to_dict(self) -> Dict:
        return {
            "cap_id": self.cap_id,
            "center": self.center.tolist(),
            "radius": self.radius,
            "n_nodes": int(len(self.node_indices)),
            "unit_normal": self.unit_normal.tolist(),
        }


@dataclass(eq=False)
class CapCover:
    """A cover of the surface by equal-radius caps.

    ``scale_kind`` is "theta" (radius R^{-1/2}) or "tau" (radius 1/K);
    ``multiplicity`` is the measured maximum number of caps containing a
    single node, and ``c`` the recorded constant so that the guaranteed
    bound is c * multiplicity.
    """

    caps: List[Cap]
    scale_kind: str
    scale: float
    multiplicity: int
    c: float = 1.0

    def __len__(self) -> int:
        return len(self.caps)

    def summary(self) -> Dict:
        return {
            "scale_kind": self.scale_kind,
            "scale": self.scale,
            "n_caps": len(self.caps),
            "multiplicity": self.multiplicity,
            "c": self.c,
            "caps": [cap.to_dict() for cap in self.caps],
        }


def _surface_normal(surface: SurfaceGraph, center: np.ndarray) -> np.ndarray:
    grad = surface.height.gradient(center[None, :])[0]
    v = np.array([-grad[0], -grad[1], 1.0])
    return v / np.linalg.norm(v)


def cap_cover(surface: SurfaceGraph, scale: str, K_or_R: float) -> CapCover:
    """Cover the surface by caps of radius R^{-1/2} or 1/K.

    Centers sit on a square lattice with spacing equal to the cap radius,
    so centers are radius-separated by construction.  A small deterministic
    list of lattice offsets is searched for one where every node is covered
    and no node lies in more than 4 caps; the construction fails loudly if
    none qualifies (e.g. when the cap radius is below the node spacing, so
    rim nodes cannot be covered).

    Parameters
    ----------
    surface : SurfaceGraph
    scale : {"theta", "tau"}
        "theta" gives radius K_or_R^{-1/2} (K_or_R = R); "tau" gives
        radius 1/K_or_R (K_or_R = K).
    K_or_R : float

    Returns
    -------
    CapCover
    """
    if scale == "theta":
        radius = float(K_or_R) ** -0.5
        if radius > MAX_THETA_RADIUS:
            raise ValueError(
                f"theta-cap radius {radius:.4f} exceeds the separation "
                f"limit {MAX_THETA_RADIUS:.4f}; R must be at least 144")
    elif scale == "tau":
        radius = 1.0 / float(K_or_R)
        if radius > MAX_TAU_RADIUS:
            raise ValueError(
                f"tau-cap radius {radius:.4f} exceeds the cover limit "
                f"{MAX_TAU_RADIUS:.4f}; a near-global cap is not a cover")
    else:
        raise ValueError(f"scale must be 'theta' or 'tau', got {scale!r}")
    if radius < surface.spacing / np.sqrt(2.0):
        raise ValueError(
            f"cap radius {radius:.5f} is below the node spacing "
            f"{surface.spacing:.5f}/sqrt(2); rim nodes cannot be covered -- "
            "increase grid_resolution")

    s = radius
    span = int(np.ceil(1.0 / s)) + 2
    ii, jj = np.meshgrid(np.arange(-span, span + 1),
                         np.arange(-span, span + 1), indexing="ij")
    base = np.column_stack([ii.ravel(), jj.ravel()]).astype(float)

    params = surface.params
    tol = 1.0 + 1e-12
    chosen = None
    for k in range(16):
        offset = np.array([0.5 + 0.0171 * k, 0.5 + 0.0293 * k])
        centers = (base + offset) * s
        centers = centers[np.linalg.norm(centers, axis=1) <= 1.0]
        if len(centers) == 0:
            continue
        tree = cKDTree(centers)
        nearest, _ = tree.query(params)
        if np.max(nearest) > radius * tol:
            continue
        counts = np.asarray([len(ix) for ix in
                             tree.query_ball_point(params, radius * tol)])
        if counts.max() > 4:
            continue
        chosen = (centers, int(counts.max()))
        break
    if chosen is None:
        raise ValueError("no lattice offset achieved full coverage with "
                         "multiplicity <= 4 at this scale/resolution")

    centers, mult = chosen
    order = np.lexsort((centers[:, 1], centers[:, 0]))
    caps = []
    for cap_id, c in enumerate(centers[order]):
        idx = surface.nodes_within(c, radius)
        caps.append(Cap(center=c, radius=radius, node_indices=idx,
                        unit_normal=_surface_normal(surface, c),
                        cap_id=cap_id))
    LOGGER.debug("cap cover scale=%s radius=%.5f: %d caps, multiplicity %d",
                 scale, radius, len(caps), mult)
    return CapCover(caps=caps, scale_kind=scale, scale=radius,
                    multiplicity=mult, c=1.0)


def cap_normal(surface: SurfaceGraph, cap: Cap) -> np.ndarray:
    """Unit surface normal at the cap center:
    (-grad h(w0), 1)/sqrt(1 + |grad h(w0)|^2).

    Raises
    ------
    ValueError
        If the cap center lies outside the closed unit disc.
    """
    if np.linalg.norm(cap.center) > 1.0 + 1e-12:
        raise ValueError(f"cap center {cap.center.tolist()} outside the disc")
    return _surface_normal(surface, np.asarray(cap.center, dtype=float))
