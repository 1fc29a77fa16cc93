"""Polynomial partitioning of space: cells, walls, and tube bookkeeping.

A partition is driven by a nonnegative mass on a box grid.  A product of
low-degree polynomial factors cuts the box into sign-vector cells
(connected components of the complement of the zero set), an
``equidistribute`` solver picks the factors so the cell masses agree up
to a factor of two, and the wall is the neighborhood of the zero set at
the tube radius.  Tubes are then classified against balls as tangent or
transverse to the zero set, which feeds the broad/bilinear split of
extension values.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, optimize

from .extension import (AmplitudeFunction, extension_eval,
                        extension_eval_stack)
from .geometry import SurfaceGraph

LOGGER = logging.getLogger(__name__)

#: Certified bound: a degree-D partition has at most this times D^3 cells.
CELL_COUNT_CONSTANT = 4.0

#: Target equidistribution ratio (largest cell mass over smallest).
TARGET_MASS_RATIO = 2.0

#: Cells below this share of the total mass are reported but not ratioed.
MASS_FLOOR_SHARE = 1e-12

_MAX_DEGREE = 8
_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class TriPoly:
    """Sparse trivariate polynomial: sum of coeff * x^i y^j z^k terms."""

    exponents: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def from_terms(cls, terms: Dict[Tuple[int, int, int], float]
                   ) -> "TriPoly":
        expo = np.array(sorted(terms), dtype=int).reshape(-1, 3)
        coef = np.array([terms[tuple(e)] for e in expo], dtype=float)
        return cls(exponents=expo, coeffs=coef)

    @classmethod
    def plane(cls, normal: Sequence[float], offset: float) -> "TriPoly":
        """The affine polynomial normal . x - offset."""
        n = np.asarray(normal, dtype=float)
        terms = {(0, 0, 0): -float(offset)}
        for a in range(3):
            if n[a] != 0.0:
                key = tuple(int(a == b) for b in range(3))
                terms[key] = float(n[a])
        return cls.from_terms(terms)

    @property
    def degree(self) -> int:
        live = np.abs(self.coeffs) > 0.0
        if not live.any():
            return 0
        return int(self.exponents[live].sum(axis=1).max())

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts))
        for (i, j, k), c in zip(self.exponents, self.coeffs):
            out += c * pts[:, 0] ** i * pts[:, 1] ** j * pts[:, 2] ** k
        return out

    def gradient(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((len(pts), 3))
        for (i, j, k), c in zip(self.exponents, self.coeffs):
            if i:
                out[:, 0] += c * i * pts[:, 0] ** (i - 1) \
                    * pts[:, 1] ** j * pts[:, 2] ** k
            if j:
                out[:, 1] += c * j * pts[:, 0] ** i \
                    * pts[:, 1] ** (j - 1) * pts[:, 2] ** k
            if k:
                out[:, 2] += c * k * pts[:, 0] ** i \
                    * pts[:, 1] ** j * pts[:, 2] ** (k - 1)
        return out

    def perturbed(self, eps: float) -> "TriPoly":
        terms = {tuple(e): c for e, c in zip(self.exponents, self.coeffs)}
        terms[(0, 0, 0)] = terms.get((0, 0, 0), 0.0) + eps
        return TriPoly.from_terms(terms)

    def to_dict(self) -> dict:
        return {",".join(str(i) for i in e): float(c)
                for e, c in zip(self.exponents, self.coeffs)}


def _grid_arrays(F) -> Tuple[List[np.ndarray], np.ndarray, float]:
    """Axes, 3-d value array, and cell volume of a box grid function."""
    pts = np.asarray(F.points, dtype=float)
    vals = np.asarray(F.values)
    if np.iscomplexobj(vals):
        if np.abs(vals.imag).max() > 0.0:
            raise ValueError("driving function must be real")
        vals = vals.real
    axes = [np.unique(pts[:, a]) for a in range(3)]
    shape = tuple(len(ax) for ax in axes)
    if int(np.prod(shape)) != len(pts):
        raise ValueError("driving function must cover a full box grid")
    idx = [np.searchsorted(axes[a], pts[:, a]) for a in range(3)]
    V = np.zeros(shape)
    V[idx[0], idx[1], idx[2]] = vals
    return axes, V, float(F.cell_volume)


def _grid_points(axes: List[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


def _label_cells(factors: Sequence[TriPoly], axes: List[np.ndarray]
                 ) -> np.ndarray:
    """Cell ids on the grid: sign vector, then 6-connected components."""
    shape = tuple(len(ax) for ax in axes)
    pts = _grid_points(axes)
    code = np.zeros(len(pts), dtype=np.int64)
    for k, factor in enumerate(factors):
        code |= (factor(pts) >= 0.0).astype(np.int64) << k
    code = code.reshape(shape)
    labels = np.full(shape, -1, dtype=np.int64)
    next_id = 0
    for c in np.unique(code):
        comp, n = ndimage.label(code == c, structure=_SIX_CONNECTED)
        inside = comp > 0
        labels[inside] = comp[inside] - 1 + next_id
        next_id += n
    return labels


@dataclass
class Partition:
    """A polynomial cell decomposition of a box with mass bookkeeping.

    Attributes
    ----------
    factors : list of TriPoly
        The zero set is the union of the factor zero sets.
    axes : list of three 1-d arrays
        Grid coordinates (cell centers) per axis.
    labels : 3-d int ndarray
        Cell id of every grid point.
    masses : (n_cells,) ndarray
        Integral of the driving function over each cell.
    wall_mask : 3-d bool ndarray or None
        Grid points within ``wall_width`` of the zero set.
    wall_width : float
    cell_volume : float
    achieved_ratio : float
        Largest over smallest cell mass (cells above the mass floor).
    success : bool
        Whether the ratio met :data:`TARGET_MASS_RATIO`.
    method : str
    degree : int
        Total degree of the factor product.
    """

    factors: List[TriPoly]
    axes: List[np.ndarray]
    labels: np.ndarray
    masses: np.ndarray
    wall_mask: Optional[np.ndarray]
    wall_width: float
    cell_volume: float
    achieved_ratio: float
    success: bool
    method: str
    degree: int

    @classmethod
    def from_factors(cls, factors: Sequence[TriPoly], F,
                     wall_width: float = 0.0, method: str = "direct"
                     ) -> "Partition":
        """Build the partition of a grid function by given factors."""
        axes, V, cell_volume = _grid_arrays(F)
        factors = _desingularized(list(factors), axes)
        labels = _label_cells(factors, axes)
        n_cells = int(labels.max()) + 1
        masses = np.bincount(labels.reshape(-1),
                             weights=V.reshape(-1),
                             minlength=n_cells) * cell_volume
        ratio = _mass_ratio(masses)
        part = cls(factors=factors, axes=axes, labels=labels, masses=masses,
                   wall_mask=None, wall_width=0.0, cell_volume=cell_volume,
                   achieved_ratio=ratio,
                   success=bool(ratio <= TARGET_MASS_RATIO),
                   method=method,
                   degree=int(sum(f.degree for f in factors)))
        if wall_width > 0.0:
            part.compute_wall(wall_width)
        return part

    # -- geometry queries --------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.masses)

    @property
    def box(self) -> np.ndarray:
        lo = np.array([ax[0] for ax in self.axes])
        hi = np.array([ax[-1] for ax in self.axes])
        return np.stack([lo, hi])

    @property
    def spacing(self) -> float:
        return float(min(ax[1] - ax[0] for ax in self.axes))

    def signs_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([f(pts) >= 0.0 for f in self.factors], axis=-1)

    def _snap(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest grid indices and a mask of points inside the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.zeros((len(pts), 3), dtype=int)
        inside = np.ones(len(pts), dtype=bool)
        for a in range(3):
            ax = self.axes[a]
            h = ax[1] - ax[0]
            inside &= (pts[:, a] >= ax[0] - 0.5 * h) \
                & (pts[:, a] <= ax[-1] + 0.5 * h)
            idx[:, a] = np.clip(np.round((pts[:, a] - ax[0]) / h),
                                0, len(ax) - 1)
        return idx, inside

    def label_at(self, points: np.ndarray) -> np.ndarray:
        """Cell id at each point, or -1 outside the box or when the
        point's sign vector disagrees with its snapped grid point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx, inside = self._snap(pts)
        out = np.full(len(pts), -1, dtype=np.int64)
        if inside.any():
            snapped = self.labels[idx[inside, 0], idx[inside, 1],
                                  idx[inside, 2]]
            grid_pts = np.stack([self.axes[a][idx[inside, a]]
                                 for a in range(3)], axis=-1)
            agree = np.all(self.signs_at(pts[inside])
                           == self.signs_at(grid_pts), axis=1)
            vals = np.where(agree, snapped, -1)
            out[inside] = vals
        return out

    def wall_at(self, points: np.ndarray) -> np.ndarray:
        if self.wall_mask is None:
            raise ValueError("wall has not been computed; call "
                             "compute_wall(width) first")
        idx, inside = self._snap(points)
        out = np.zeros(len(idx), dtype=bool)
        out[inside] = self.wall_mask[idx[inside, 0], idx[inside, 1],
                                     idx[inside, 2]]
        return out

    def distance_to_zero(self, points: np.ndarray) -> np.ndarray:
        """First-order distance to the zero set, Newton-refined once."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(len(pts), np.inf)
        for factor in self.factors:
            val = factor(pts)
            grad = factor.gradient(pts)
            gn = np.maximum(np.linalg.norm(grad, axis=1), 1e-30)
            step = val / gn
            proj = pts - (step / gn)[:, None] * grad
            val2 = factor(proj)
            gn2 = np.maximum(np.linalg.norm(factor.gradient(proj), axis=1),
                             1e-30)
            dist = np.abs(step) + np.abs(val2) / gn2
            best = np.minimum(best, dist)
        return best

    def compute_wall(self, width: float) -> None:
        """Mark grid points within ``width`` of the zero set."""
        if width <= 0.0:
            raise ValueError(f"wall width must be positive, got {width}")
        pts = _grid_points(self.axes)
        dist = self.distance_to_zero(pts)
        self.wall_mask = (dist <= width).reshape(self.labels.shape)
        self.wall_width = float(width)

    def to_dict(self) -> dict:
        wall_fraction = (float(self.wall_mask.mean())
                         if self.wall_mask is not None else 0.0)
        return {
            "factors": [f.to_dict() for f in self.factors],
            "degree": self.degree,
            "cell_masses": [float(m) for m in self.masses],
            "cell_count": self.n_cells,
            "achieved_ratio": float(self.achieved_ratio),
            "success": bool(self.success),
            "method": self.method,
            "wall_width": float(self.wall_width),
            "wall_volume_fraction": wall_fraction,
        }


def _mass_ratio(masses: np.ndarray) -> float:
    total = masses.sum()
    if total <= 0.0 or (masses <= MASS_FLOOR_SHARE * total).any():
        # A cell with essentially no mass means equidistribution failed.
        return np.inf
    return float(masses.max() / masses.min())


def _desingularized(factors: List[TriPoly], axes: List[np.ndarray]
                    ) -> List[TriPoly]:
    """Perturb factors whose sampled zero set has vanishing gradient."""
    pts = _grid_points(axes)
    h = min(ax[1] - ax[0] for ax in axes)
    out = []
    for factor in factors:
        for attempt in range(2):
            val = np.abs(factor(pts))
            grad = np.linalg.norm(factor.gradient(pts), axis=1)
            near = val <= 2.0 * h * np.maximum(grad, 1e-30)
            near |= val <= 1e-12 * max(1.0, val.max())
            if near.any() and (grad[near] < 1e-8).any():
                if attempt == 1:
                    raise ValueError(
                        "factor remains singular on its zero set after "
                        "perturbation")
                factor = factor.perturbed(1e-6)
                continue
            break
        out.append(factor)
    return out


# ---------------------------------------------------------------------------
# equidistribution
# ---------------------------------------------------------------------------

def _degree_split(D: int) -> List[int]:
    base = D // 3
    return [base + (1 if a < D % 3 else 0) for a in range(3)]


def _marginal_quantiles(axis_vals: np.ndarray, marginal: np.ndarray,
                        n_cuts: int) -> np.ndarray:
    cum = np.cumsum(marginal)
    total = cum[-1]
    targets = total * (np.arange(1, n_cuts + 1) / (n_cuts + 1))
    return np.interp(targets, cum, axis_vals)


def _box_masses(V: np.ndarray, axes: List[np.ndarray],
                cuts: List[np.ndarray]) -> np.ndarray:
    """Masses of the boxes cut by axis-aligned planes (fast path)."""
    out = V
    for a in range(3):
        splits = np.searchsorted(axes[a], np.sort(cuts[a]))
        starts = np.concatenate([[0], splits])
        starts = np.unique(np.clip(starts, 0, out.shape[a] - 1))
        out = np.add.reduceat(out, starts, axis=a)
    return out.reshape(-1)


def equidistribute(F, D: int, wall_width: float = 0.0) -> Partition:
    """Cut a nonnegative grid mass into cells of comparable mass.

    Degree ``D`` is split across the axes; candidate axis-aligned planes
    start at marginal mass quantiles and are polished by Nelder-Mead
    descent on the squared deviation of the box masses from their mean.
    The best candidate by achieved max/min mass ratio wins; if no
    candidate reaches ratio two, the quantile construction is reported
    with ``success=False`` and its honest ratio.

    Parameters
    ----------
    F : GridFunction
        Nonnegative values on a full box grid.
    D : int
        Total degree, between 1 and 8.
    wall_width : float, optional
        If positive, also compute the wall mask at this width.

    Returns
    -------
    Partition

    Raises
    ------
    ValueError
        For zero or negative mass, or a degree out of range.
    """
    if not 1 <= int(D) <= _MAX_DEGREE:
        raise ValueError(f"degree must lie in 1..{_MAX_DEGREE}, got {D}")
    D = int(D)
    axes, V, cell_volume = _grid_arrays(F)
    if V.min() < -1e-12 * max(1.0, np.abs(V).max()):
        raise ValueError("driving function must be nonnegative")
    V = np.maximum(V, 0.0)
    total = V.sum()
    if total <= 0.0:
        raise ValueError("driving function has zero mass")

    split = _degree_split(D)
    marginals = [V.sum(axis=tuple(b for b in range(3) if b != a))
                 for a in range(3)]
    seed_cuts = [(_marginal_quantiles(axes[a], marginals[a], split[a])
                  if split[a] else np.array([])) for a in range(3)]
    sizes = [split[a] for a in range(3)]
    offsets = np.concatenate([c for c in seed_cuts])

    def unpack(vec):
        cuts, k = [], 0
        for a in range(3):
            cuts.append(np.asarray(vec[k:k + sizes[a]], dtype=float))
            k += sizes[a]
        return cuts

    expected_boxes = int(np.prod([s + 1 for s in sizes]))

    def objective(vec):
        masses = _box_masses(V, axes, unpack(vec))
        # Collapsing two cuts into one grid cell would delete a box;
        # punish that so the solver keeps all planes distinct.
        penalty = 10.0 * (expected_boxes - len(masses))
        return penalty + float(((masses - masses.mean()) ** 2).sum()) \
            / max(total, 1e-300) ** 2

    def ratio_of(vec):
        masses = _box_masses(V, axes, unpack(vec)) * cell_volume
        if len(masses) < expected_boxes:
            return np.inf
        return _mass_ratio(masses)

    rng = np.random.default_rng(2026)
    h = min(ax[1] - ax[0] for ax in axes)
    candidates = [offsets]
    if len(offsets):
        for _ in range(2):
            candidates.append(offsets
                              + rng.uniform(-1.5 * h, 1.5 * h,
                                            size=len(offsets)))
    best_vec, best_ratio = offsets, ratio_of(offsets)
    if len(offsets):
        for start in candidates:
            try:
                sol = optimize.minimize(
                    objective, start, method="Nelder-Mead",
                    options={"maxiter": 200 * max(1, len(offsets)),
                             "xatol": 0.05 * h, "fatol": 1e-12})
            except Exception:      # pragma: no cover - solver hiccup
                continue
            r = ratio_of(sol.x)
            if r < best_ratio:
                best_vec, best_ratio = sol.x, r

    cuts = unpack(best_vec)
    factors = []
    for a in range(3):
        e = [float(a == b) for b in range(3)]
        for q in cuts[a]:
            factors.append(TriPoly.plane(e, q))
    grid = type(F)(points=np.asarray(F.points, dtype=float),
                   values=V.reshape(-1), spacing=F.spacing) \
        if hasattr(F, "spacing") else F
    part = Partition.from_factors(factors, grid, wall_width=wall_width,
                                  method="quantile-planes+descent")
    LOGGER.debug("equidistribute D=%d: %d cells, ratio %.3f, success %s",
                 D, part.n_cells, part.achieved_ratio, part.success)
    return part


# ---------------------------------------------------------------------------
# lines and tubes against the cells
# ---------------------------------------------------------------------------

def _line_box_range(point: np.ndarray, direction: np.ndarray,
                    box: np.ndarray) -> Optional[Tuple[float, float]]:
    t_lo, t_hi = -np.inf, np.inf
    for a in range(3):
        if abs(direction[a]) < 1e-15:
            if not box[0, a] <= point[a] <= box[1, a]:
                return None
            continue
        t1 = (box[0, a] - point[a]) / direction[a]
        t2 = (box[1, a] - point[a]) / direction[a]
        t_lo = max(t_lo, min(t1, t2))
        t_hi = min(t_hi, max(t1, t2))
    if t_lo > t_hi:
        return None
    return t_lo, t_hi


def line_cell_crossings(partition: Partition, line) -> int:
    """Number of distinct cells met by a line inside the box.

    The line is sampled at a third of the grid spacing; samples whose
    exact factor signs disagree with their snapped grid point are
    discarded, so each constant-sign segment contributes exactly one
    cell and the count is bounded by the total degree plus one.

    Parameters
    ----------
    partition : Partition
    line : (point, direction) pair of length-3 sequences

    Returns
    -------
    int
    """
    point, direction = (np.asarray(line[0], dtype=float),
                        np.asarray(line[1], dtype=float))
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ValueError("line direction must be nonzero")
    direction = direction / norm
    span = _line_box_range(point, direction, partition.box)
    if span is None:
        return 0
    step = partition.spacing / 3.0
    n = max(2, int(np.ceil((span[1] - span[0]) / step)) + 1)
    ts = np.linspace(span[0], span[1], min(n, 20000))
    pts = point[None, :] + ts[:, None] * direction[None, :]
    labels = partition.label_at(pts)
    return len(np.unique(labels[labels >= 0]))


def _tube_samples(tube, partition: Partition) -> np.ndarray:
    """Deterministic samples of the solid tube clipped to the box."""
    span = _line_box_range(np.asarray(tube.point, dtype=float),
                           np.asarray(tube.direction, dtype=float),
                           partition.box)
    pad = tube.radius + np.linalg.norm(
        partition.box[1] - partition.box[0])
    lo = max(-tube.half_length, (span[0] - pad) if span else
             -tube.half_length)
    hi = min(tube.half_length, (span[1] + pad) if span else
             tube.half_length)
    if lo > hi:
        lo, hi = -tube.half_length, tube.half_length
    step = partition.spacing / 2.0
    ts = np.arange(lo, hi + step, step)
    v = np.asarray(tube.direction, dtype=float)
    e1 = np.array([1.0, 0.0, 0.0])
    if abs(e1 @ v) > 0.9:
        e1 = np.array([0.0, 1.0, 0.0])
    e1 -= (e1 @ v) * v
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(v, e1)
    angles = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    rings = [np.zeros((1, 3))]
    for frac in (0.5, 1.0):
        rings.append(frac * tube.radius
                     * (np.cos(angles)[:, None] * e1[None, :]
                        + np.sin(angles)[:, None] * e2[None, :]))
    offsets = np.concatenate(rings)
    axis_pts = np.asarray(tube.point, dtype=float)[None, :] \
        + ts[:, None] * v[None, :]
    pts = (axis_pts[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    box = partition.box
    inside = np.all((pts >= box[0] - 1e-9) & (pts <= box[1] + 1e-9),
                    axis=1)
    return pts[inside]


def tube_cell_membership(partition: Partition, tubes: Sequence
                         ) -> List[List[int]]:
    """Cells (minus the wall) entered by each tube.

    Parameters
    ----------
    partition : Partition
        Must have a wall at least as wide as each tube's radius.
    tubes : sequence of Tube

    Returns
    -------
    list of sorted cell-id lists, one per tube.
    """
    if partition.wall_mask is None:
        raise ValueError("partition has no wall; call compute_wall first")
    out = []
    for tube in tubes:
        if partition.wall_width < tube.radius * 0.999:
            raise ValueError(
                f"wall width {partition.wall_width:.4g} is narrower than "
                f"the tube radius {tube.radius:.4g}")
        pts = _tube_samples(tube, partition)
        if len(pts) == 0:
            out.append([])
            continue
        in_wall = partition.wall_at(pts)
        labels = partition.label_at(pts[~in_wall])
        out.append(sorted(int(l) for l in np.unique(labels[labels >= 0])))
    return out


# ---------------------------------------------------------------------------
# tangent / transverse classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TubeClassification:
    """Tangent/transverse/disjoint labels per (tube, ball) pair."""

    tubes: List
    balls: List[Tuple[np.ndarray, float]]
    labels: Dict[Tuple[int, int], str]
    angles: Dict[Tuple[int, int], float]
    thresholds: Dict[Tuple[int, int], float]

    def label(self, tube_index: int, ball_index: int) -> str:
        return self.labels[(tube_index, ball_index)]

    def tangent_tubes(self, ball_index: int) -> List[int]:
        return [i for (i, j), lab in self.labels.items()
                if j == ball_index and lab == "tangent"]

    def transverse_tubes(self, ball_index: int) -> List[int]:
        return [i for (i, j), lab in self.labels.items()
                if j == ball_index and lab == "transverse"]

    def rows(self) -> List[dict]:
        """CSV-ready rows: tube id, ball id, class, witnessed angle."""
        return [{"tube": i, "ball": j, "class": lab,
                 "angle": float(self.angles[(i, j)]),
                 "threshold": float(self.thresholds[(i, j)])}
                for (i, j), lab in sorted(self.labels.items())]


def _zero_set_samples(factor: TriPoly, pts: np.ndarray, scale: float,
                      widen: float = 1.0) -> np.ndarray:
    """Newton-project near-zero grid points of one factor onto its
    zero set; returns converged non-singular samples."""
    val = factor(pts)
    grad = factor.gradient(pts)
    gn = np.maximum(np.linalg.norm(grad, axis=1), 1e-30)
    near = np.abs(val) <= widen * scale * gn
    z = pts[near]
    if len(z) == 0:
        return z
    for _ in range(5):
        val = factor(z)
        grad = factor.gradient(z)
        gn2 = np.maximum((grad ** 2).sum(axis=1), 1e-60)
        z = z - (val / gn2)[:, None] * grad
    val = np.abs(factor(z))
    gn = np.linalg.norm(factor.gradient(z), axis=1)
    good = (val <= 1e-8 * max(1.0, np.abs(factor(pts)).max())) \
        & (gn >= 1e-8)
    return z[good]


def classify_tubes(partition: Partition, tubes: Sequence,
                   balls: Sequence[Tuple[Sequence[float], float]],
                   delta: float) -> TubeClassification:
    """Label every (tube, ball) pair tangent, transverse, or disjoint.

    A pair is disjoint when the tube misses the wall inside the ball.
    Otherwise the zero set is sampled inside twice the ball and ten
    times the tube, and the pair is tangent exactly when the angle
    between the tube direction and the tangent plane stays below
    ``R**(-1/2 + 2 delta)`` at every sample (R from the tube's extent).

    Raises
    ------
    ValueError
        If fewer than 8 non-singular zero-set samples are found for a
        pair that does meet the wall inside the ball.
    """
    if partition.wall_mask is None:
        raise ValueError("partition has no wall; call compute_wall first")
    grid_pts = _grid_points(partition.axes)
    wall_flat = partition.wall_mask.reshape(-1)
    labels: Dict[Tuple[int, int], str] = {}
    angles: Dict[Tuple[int, int], float] = {}
    thresholds: Dict[Tuple[int, int], float] = {}
    ball_list = [(np.asarray(c, dtype=float), float(r)) for c, r in balls]

    # Per-ball precomputation: wall points inside the ball (for the
    # disjointness check) and zero-set samples inside twice the ball,
    # each tagged with the unit normal of the factor it lies on.
    ball_data = []
    for center, radius in ball_list:
        dist = np.linalg.norm(grid_pts - center, axis=1)
        wall_pts = grid_pts[wall_flat & (dist <= radius)]
        local = grid_pts[dist <= 2.0 * radius]
        per_widen = {}
        for widen in (1.0, 10.0):
            zs_all, normals = [], []
            for factor in partition.factors:
                zs = _zero_set_samples(factor, local,
                                       2.0 * partition.spacing, widen)
                if len(zs) == 0:
                    continue
                keep = np.linalg.norm(zs - center, axis=1) <= 2.0 * radius
                zs = zs[keep]
                if len(zs) == 0:
                    continue
                grad = factor.gradient(zs)
                gn = np.linalg.norm(grad, axis=1)
                zs_all.append(zs)
                normals.append(grad / gn[:, None])
            if zs_all:
                per_widen[widen] = (np.concatenate(zs_all),
                                    np.concatenate(normals))
            else:
                per_widen[widen] = (np.zeros((0, 3)), np.zeros((0, 3)))
        ball_data.append((wall_pts, per_widen))

    for i, tube in enumerate(tubes):
        R = tube.half_length / 2.0
        threshold = R ** (-0.5 + 2.0 * delta)
        v = np.asarray(tube.direction, dtype=float)
        for j, (center, radius) in enumerate(ball_list):
            thresholds[(i, j)] = threshold
            wall_pts, per_widen = ball_data[j]
            meets = False
            if len(wall_pts):
                hit = (tube.axis_distance(wall_pts) <= tube.radius) \
                    & (np.abs(tube.axis_offset(wall_pts))
                       <= tube.half_length)
                meets = bool(hit.any())
            if not meets:
                labels[(i, j)] = "disjoint"
                angles[(i, j)] = 0.0
                continue
            zero_pts = normals = None
            for widen in (1.0, 10.0):
                zs, ns = per_widen[widen]
                if len(zs):
                    near_tube = (tube.axis_distance(zs)
                                 <= 10.0 * tube.radius) \
                        & (np.abs(tube.axis_offset(zs))
                           <= 10.0 * tube.half_length)
                    zs, ns = zs[near_tube], ns[near_tube]
                if len(zs) >= 8:
                    zero_pts, normals = zs, ns
                    break
            if zero_pts is None:
                raise ValueError(
                    f"classification error for tube {i}, ball {j}: fewer "
                    "than 8 non-singular zero-set samples")
            sines = np.abs(normals @ v)
            worst = float(np.arcsin(np.clip(sines, 0.0, 1.0)).max())
            angles[(i, j)] = worst
            labels[(i, j)] = ("tangent" if worst <= threshold
                              else "transverse")
    return TubeClassification(tubes=list(tubes), balls=ball_list,
                              labels=labels, angles=angles,
                              thresholds=thresholds)


def tangential_direction_count(classification: TubeClassification,
                               ball_index: int) -> int:
    """Distinct parent caps among tubes tangent inside one ball."""
    caps = {classification.tubes[i].cap_id
            for i in classification.tangent_tubes(ball_index)}
    return len(caps)


# ---------------------------------------------------------------------------
# broad and bilinear parts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BroadConfig:
    """Broad-point parameters: cap scale K, threshold beta, cover."""

    K: float
    beta: float
    cover: Sequence
    multiplicity: int = 1

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.K < 1.0:
            raise ValueError(f"K must be at least 1, got {self.K}")
        if len(_caps_of(self.cover)) == 0:
            raise ValueError("empty cover")

    @property
    def n_caps(self) -> int:
        return len(_caps_of(self.cover))

    @property
    def recorded_c(self) -> float:
        """The cover constant c with n_caps = c K^2."""
        return self.n_caps / self.K ** 2

    @property
    def broad_possible(self) -> bool:
        """Whether beta >= K^-2 / c, i.e. beta n_caps >= 1."""
        return self.beta * self.n_caps >= 1.0


def _caps_of(cover) -> List:
    return list(getattr(cover, "caps", cover))


def _cap_pieces(surface: SurfaceGraph, f: AmplitudeFunction, caps: List
                ) -> List[AmplitudeFunction]:
    """Split f as sum of cap-supported pieces, dividing overlap counts."""
    if f.surface is not surface:
        raise ValueError("amplitude belongs to a different surface")
    counts = np.zeros(len(f.values))
    for cap in caps:
        counts[cap.node_indices] += 1.0
    covered = counts > 0
    missing = (~covered) & (np.asarray(f.values) != 0.0)
    if missing.any():
        raise ValueError("cover does not cover the amplitude support")
    weight = np.zeros(len(f.values))
    weight[covered] = 1.0 / counts[covered]
    pieces = []
    for cap in caps:
        vals = np.zeros(len(f.values), dtype=complex)
        vals[cap.node_indices] = (np.asarray(f.values)[cap.node_indices]
                                  * weight[cap.node_indices])
        pieces.append(AmplitudeFunction(surface, vals,
                                        name=f"{f.name}|tau{cap.cap_id}"))
    return pieces


def broad_part(surface: SurfaceGraph, f: AmplitudeFunction, cover,
               beta: float, points: np.ndarray) -> np.ndarray:
    """|Ef| at beta-broad points, zero elsewhere.

    A point is broad when every single-cap piece is strictly smaller
    than ``beta`` times the full extension there:
    ``max_tau |E f_tau(x)| < beta |E f(x)|``.  Ties are not broad.

    Parameters
    ----------
    surface : SurfaceGraph
    f : AmplitudeFunction
    cover : CapCover or list of Cap
        Must cover the support of ``f``; overlaps are divided out so
        the pieces sum to ``f`` exactly.
    beta : float
        In (0, 1].
    points : (m, 3) array_like

    Returns
    -------
    (m,) ndarray
    """
    caps = _caps_of(cover)
    if len(caps) == 0:
        raise ValueError("empty cover")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pieces = _cap_pieces(surface, f, caps)
    stack = np.stack([np.asarray(f.values, dtype=complex)]
                     + [p.values for p in pieces])
    evals = np.abs(extension_eval_stack(surface, stack, pts))
    full = evals[0]
    biggest = evals[1:].max(axis=0)
    return np.where(biggest < beta * full, full, 0.0)


def bilinear_tangential(surface: SurfaceGraph, f: AmplitudeFunction,
                        partition: Partition, ball, cover, delta: float,
                        points: np.ndarray, *, packet_sets=None,
                        config=None, K: Optional[float] = None
                        ) -> np.ndarray:
    """Bilinear sum of tangential extension pieces inside one ball.

    For each cap the tangent wave packets (tubes tangent to the zero
    set inside the ball) are summed into a tangential amplitude, and
    the result is ``sum over non-adjacent cap pairs`` of
    ``sqrt(|E f_tau1,tang| |E f_tau2,tang|)`` at each point.  Caps are
    non-adjacent when the gap between them is at least ``1/K`` (K
    defaults to the reciprocal cap radius).

    Parameters
    ----------
    surface : SurfaceGraph
    f : AmplitudeFunction
    partition : Partition
        With a computed wall.
    ball : (center, radius) pair
    cover : CapCover or list of Cap
    delta : float
    points : (m, 3) array_like
    packet_sets : list of WavePacketSet, optional
        Pre-built packets, one set per cap; built on the fly from
        ``config`` when omitted.
    config : WavePacketConfig, optional
    K : float, optional

    Returns
    -------
    (m,) ndarray

    Raises
    ------
    ValueError
        If neither packet inventory nor a config to build one is given.
    """
    caps = _caps_of(cover)
    if len(caps) == 0:
        raise ValueError("empty cover")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if packet_sets is None:
        if config is None:
            raise ValueError(
                "missing packet inventory: pass packet_sets or a config "
                "to build them")
        from .wavepacket import decompose
        pieces = _cap_pieces(surface, f, caps)
        packet_sets = [decompose(surface, piece, cap, config)
                       for cap, piece in zip(caps, pieces)]
    if len(packet_sets) != len(caps):
        raise ValueError("need one packet set per cap")

    all_tubes = [p.tube for ps in packet_sets for p in ps.packets]
    owners = [(si, pi) for si, ps in enumerate(packet_sets)
              for pi in range(len(ps.packets))]
    tangential = np.zeros((len(caps), len(pts)))
    if all_tubes:
        classification = classify_tubes(partition, all_tubes, [ball],
                                        delta)
        sums: Dict[int, np.ndarray] = {}
        for t_idx in classification.tangent_tubes(0):
            si, pi = owners[t_idx]
            vals = packet_sets[si].packets[pi].amplitude.values
            if si in sums:
                sums[si] = sums[si] + vals
            else:
                sums[si] = np.array(vals, dtype=complex)
        for si, vals in sums.items():
            amp = AmplitudeFunction(surface, vals,
                                    name=f"tangential|tau{si}")
            tangential[si] = np.abs(extension_eval(surface, amp, pts))

    radius = float(caps[0].radius)
    if K is None:
        K = 1.0 / radius
    out = np.zeros(len(pts))
    for a in range(len(caps)):
        for b in range(a + 1, len(caps)):
            gap = np.linalg.norm(caps[a].center - caps[b].center) \
                - caps[a].radius - caps[b].radius
            if gap >= 1.0 / K - 1e-12:
                out += np.sqrt(tangential[a] * tangential[b])
    return out
