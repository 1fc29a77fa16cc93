"""Wave-packet decomposition: frequency balls, packet functions, tubes.

An amplitude supported in a parameter cap is split by a smooth partition
of unity on the dual (frequency) plane into band-limited pieces, each
tapered back to three times the cap.  Every piece rides a tube in
physical space whose direction is the surface normal at the cap center;
away from its tube the piece's extension is tiny, which is what makes
the decomposition useful for localized estimates.

The frequency partition uses bumps on a square lattice whose spacing
equals the ball radius ``rho**(-1-delta)`` (``rho`` = cap radius), so at
most four bumps overlap anywhere and their normalized sum is exactly one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .extension import AmplitudeFunction, extension_eval
from .geometry import MAX_THETA_RADIUS, Cap, SurfaceGraph

LOGGER = logging.getLogger(__name__)

#: Certified bound on sum_T ||f_T||_L2^2 / ||f||_L2^2 for interior caps.
FRAME_CONSTANT = 1.5

#: Largest number of partition bumps that are nonzero at any dual point.
MAX_BALL_OVERLAP = 4

#: Relative L1 reconstruction error allowed for sum_T f_T versus f.
RECONSTRUCTION_TOL = 1e-6

#: Dual balls holding less than this share of the patch energy are dropped.
ENERGY_KEEP_SHARE = 1e-18

_OFFSETS_3X3 = np.array([(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)],
                        dtype=np.int64)


def _bump(t: np.ndarray) -> np.ndarray:
    """Smooth bump exp(-6 t^2 / (1 - t^2)) on |t| < 1, zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    inside = np.abs(t) < 1.0
    s = t[inside] ** 2
    out[inside] = np.exp(-6.0 * s / (1.0 - s))
    return out


def _smoothstep(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1, monotone between."""
    u = np.asarray(u, dtype=float)
    lo = u <= 0.0
    hi = u >= 1.0
    mid = ~(lo | hi)
    out = np.zeros(u.shape)
    out[hi] = 1.0
    um = u[mid]
    a = np.exp(-1.0 / um)
    b = np.exp(-1.0 / (1.0 - um))
    out[mid] = a / (a + b)
    return out


@dataclass(frozen=True)
class WavePacketConfig:
    """Scale parameters of a wave-packet decomposition.

    Parameters
    ----------
    R : float
        Spatial scale; packets are meant for use inside the ball of
        radius ``R`` and tubes have radius ``R**(1/2 + delta)``.
    delta : float
        Small positive tuning exponent, at most 1/4.
    decay_order : int, optional
        Polynomial decay order targeted off the tube (at least 2).
    ball_radius : float, optional
        Explicit dual-ball radius; by default ``rho**(-1-delta)`` with
        ``rho`` the cap radius, resolved per cap.
    """

    R: float
    delta: float
    decay_order: int = 2
    ball_radius: Optional[float] = None

    def __post_init__(self):
        if not self.R >= 4.0:
            raise ValueError(f"R must be at least 4, got {self.R}")
        if not 0.0 < self.delta <= 0.25:
            raise ValueError(
                f"delta must lie in (0, 1/4], got {self.delta}")
        if self.decay_order < 2:
            raise ValueError(
                f"decay order must be at least 2, got {self.decay_order}")
        if self.ball_radius is not None and self.ball_radius <= 0.0:
            raise ValueError("ball radius must be positive")

    @property
    def tube_radius(self) -> float:
        """Tube radius R**(1/2 + delta)."""
        return float(self.R) ** (0.5 + self.delta)

    def ball_radius_for(self, rho: float) -> float:
        """Dual-ball radius for a cap of radius ``rho``."""
        if rho <= 0.0:
            raise ValueError(f"cap radius must be positive, got {rho}")
        if self.ball_radius is not None:
            return float(self.ball_radius)
        return float(rho) ** (-1.0 - self.delta)


def _lattice_weights(xi: np.ndarray, spacing: float
                     ) -> Tuple[np.ndarray, np.ndarray]:
    """Normalized bump weights of the 3x3 nearest lattice balls.

    Returns the integer lattice coordinates ``(m, 9, 2)`` of the
    candidate ball centers and weights ``(m, 9)`` that sum to one along
    the second axis.  Balls have radius equal to ``spacing``, so every
    ball whose bump is nonzero at ``xi`` is among the candidates.
    """
    xi = np.asarray(xi, dtype=float)
    base = np.round(xi / spacing).astype(np.int64)
    cand = base[:, None, :] + _OFFSETS_3X3[None, :, :]
    dist = np.linalg.norm(xi[:, None, :] - cand * spacing, axis=2)
    w = _bump(dist / spacing)
    total = w.sum(axis=1)
    # The lattice balls cover the plane, so total is bounded below.
    w /= total[:, None]
    return cand, w


@dataclass(frozen=True)
class FrequencyPartition:
    """Square-lattice ball cover of a dual-plane region with bump weights.

    Attributes
    ----------
    centers : (n, 2) ndarray
        Ball centers.
    radius : float
        Common ball radius (equals the lattice spacing).
    spacing : float
        Lattice spacing.
    extent : float
        Half side of the covered square ``[-extent, extent]^2``.
    """

    centers: np.ndarray
    radius: float
    spacing: float
    extent: float

    @property
    def n_balls(self) -> int:
        return len(self.centers)

    def _keys(self) -> np.ndarray:
        idx = np.round(self.centers / self.spacing).astype(np.int64)
        return _ball_key(idx)

    def weights(self, xi: np.ndarray) -> np.ndarray:
        """Bump weights of every listed ball at dual points ``xi``.

        Rows sum to one (within roundoff) for points of the covered
        square, since every lattice ball touching the square is listed.
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        cand, w = _lattice_weights(xi, self.spacing)
        keys = self._keys()
        order = np.argsort(keys)
        sorted_keys = keys[order]
        flat_keys = _ball_key(cand.reshape(-1, 2))
        pos = np.searchsorted(sorted_keys, flat_keys)
        pos = np.clip(pos, 0, len(sorted_keys) - 1)
        found = sorted_keys[pos] == flat_keys
        out = np.zeros((len(xi), self.n_balls))
        rows = np.repeat(np.arange(len(xi)), 9)[found]
        cols = order[pos[found]]
        out[rows, cols] = w.reshape(-1)[found]
        return out

    def overlap_counts(self, xi: np.ndarray) -> np.ndarray:
        """Number of listed balls with a nonzero bump at each point."""
        return (self.weights(xi) > 0.0).sum(axis=1)


def _ball_key(idx: np.ndarray) -> np.ndarray:
    """Collision-free integer key for 2-d lattice coordinates."""
    off = np.int64(1) << 20
    return (idx[..., 0] + off) * (np.int64(1) << 21) + (idx[..., 1] + off)


def _key_to_index(keys: np.ndarray) -> np.ndarray:
    off = np.int64(1) << 20
    i = keys // (np.int64(1) << 21) - off
    j = keys % (np.int64(1) << 21) - off
    return np.column_stack([i, j])


def frequency_partition(cap: Cap, config: WavePacketConfig,
                        extent: Optional[float] = None
                        ) -> FrequencyPartition:
    """Cover a dual-plane square by balls carrying a partition of unity.

    Parameters
    ----------
    cap : Cap
        Parameter cap; its radius ``rho`` sets the ball radius
        ``rho**(-1-delta)``.
    config : WavePacketConfig
    extent : float, optional
        Half side of the dual square of interest; defaults to
        ``config.R``.

    Returns
    -------
    FrequencyPartition
        Lists every lattice ball touching the square, so the normalized
        bumps sum to one exactly on the whole square.

    Raises
    ------
    ValueError
        If the cap radius exceeds the separation limit.
    """
    rho = float(cap.radius)
    if rho > MAX_THETA_RADIUS * (1.0 + 1e-12):
        raise ValueError(
            f"cap radius {rho:.5f} exceeds the separation limit "
            f"{MAX_THETA_RADIUS:.5f}")
    radius = config.ball_radius_for(rho)
    if extent is None:
        extent = float(config.R)
    if extent <= 0.0:
        raise ValueError(f"extent must be positive, got {extent}")
    n_max = int(np.floor((extent + radius) / radius)) + 1
    rng = np.arange(-n_max, n_max + 1)
    ii, jj = np.meshgrid(rng, rng, indexing="ij")
    idx = np.column_stack([ii.ravel(), jj.ravel()])
    centers = idx * radius
    keep = np.max(np.abs(centers), axis=1) <= extent + radius
    return FrequencyPartition(centers=centers[keep], radius=radius,
                              spacing=radius, extent=float(extent))


@dataclass(frozen=True)
class Tube:
    """A tube in physical space: an axis segment with a radius.

    Attributes
    ----------
    point : (3,) ndarray
        A point on the center line (the stationary point at height 0).
    direction : (3,) ndarray
        Unit direction, equal to the surface normal at the cap center.
    radius : float
        Tube radius ``R**(1/2 + delta)``.
    cap_id : int
        Identifier of the parent cap.
    half_length : float
        The axis is truncated to ``|t| <= half_length`` around ``point``
        (set to ``2 R`` so that the ball of radius R is covered).
    """

    point: np.ndarray
    direction: np.ndarray
    radius: float
    cap_id: int
    half_length: float

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError("tube direction must be a unit vector")
        if self.radius <= 0.0 or self.half_length <= 0.0:
            raise ValueError("tube radius and half_length must be positive")

    def axis_offset(self, points: np.ndarray) -> np.ndarray:
        """Signed coordinate along the axis for each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (pts - self.point) @ self.direction

    def axis_distance(self, points: np.ndarray) -> np.ndarray:
        """Perpendicular distance from each point to the center line."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rel = pts - self.point
        t = rel @ self.direction
        perp = rel - t[:, None] * self.direction[None, :]
        return np.linalg.norm(perp, axis=1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Mask of points inside the truncated tube."""
        return ((self.axis_distance(points) <= self.radius)
                & (np.abs(self.axis_offset(points)) <= self.half_length))

    def to_dict(self) -> dict:
        return {
            "point": [float(x) for x in self.point],
            "direction": [float(x) for x in self.direction],
            "radius": float(self.radius),
            "cap_id": int(self.cap_id),
            "half_length": float(self.half_length),
        }


@dataclass(frozen=True)
class WavePacket:
    """One packet: a tube plus the amplitude riding it.

    Unpacks as the pair ``tube, amplitude``.
    """

    tube: Tube
    amplitude: AmplitudeFunction
    ball_center: np.ndarray
    l2_mass: float
    parent_l1: float

    def __iter__(self) -> Iterator:
        yield self.tube
        yield self.amplitude


@dataclass(frozen=True)
class WavePacketSet:
    """All packets of one cap, with the decomposition bookkeeping.

    Attributes
    ----------
    cap : Cap
        Parent cap.
    config : WavePacketConfig
    packets : list of WavePacket
    residual : float
        ``||f - sum_T f_T||_L1(S)``, measured.
    frame_ratio : float
        ``sum_T ||f_T||_L2^2 / ||f||_L2^2``, measured; certified to stay
        below :data:`FRAME_CONSTANT` for interior caps.
    parent_l1, parent_l2 : float
        Norms of the decomposed amplitude.
    """

    cap: Cap
    config: WavePacketConfig
    packets: List[WavePacket] = field(default_factory=list)
    residual: float = 0.0
    frame_ratio: float = 0.0
    parent_l1: float = 0.0
    parent_l2: float = 0.0

    def __len__(self) -> int:
        return len(self.packets)

    def tubes(self) -> List[Tube]:
        return [p.tube for p in self.packets]

    def inventory(self) -> List[dict]:
        """JSON-ready list of tube geometry plus packet L2 mass."""
        return [dict(p.tube.to_dict(),
                     ball_center=[float(x) for x in p.ball_center],
                     l2_mass=float(p.l2_mass))
                for p in self.packets]


def _node_index_map(surface: SurfaceGraph) -> Tuple[np.ndarray, np.ndarray]:
    """Sorted integer keys of the surface's interior lattice nodes.

    Interior nodes sit at cell centers ``(i + 1/2)/res``; boundary-ring
    nodes are pulled off the lattice and are excluded here.
    """
    res = surface.grid_resolution
    q = surface.params * res - 0.5
    qi = np.round(q)
    interior = np.max(np.abs(q - qi), axis=1) <= 1e-9
    pk = qi.astype(np.int64)
    keys = (pk[:, 0] + res) * (2 * res + 1) + (pk[:, 1] + res)
    idx = np.flatnonzero(interior)
    order = np.argsort(keys[idx])
    return keys[idx][order], idx[order]


def decompose(surface: SurfaceGraph, f: AmplitudeFunction, cap: Cap,
              config: WavePacketConfig) -> WavePacketSet:
    """Split an amplitude supported in a cap into wave packets.

    The amplitude is transplanted to the aligned square patch of side
    six cap radii around the cap center, transformed by FFT, split by
    the dual-ball partition of unity, transformed back, and tapered by a
    smooth cutoff that is one on twice the cap and vanishes outside
    three times the cap.  The taper makes every packet vanish outside
    ``3 theta`` exactly, while the pieces still sum back to ``f`` on the
    cap because the cutoff is one there.

    Parameters
    ----------
    surface : SurfaceGraph
    f : AmplitudeFunction
        Must vanish outside the cap.
    cap : Cap
        Cap of radius at most 1/12.
    config : WavePacketConfig

    Returns
    -------
    WavePacketSet

    Raises
    ------
    ValueError
        If ``f`` lives on another surface, is not supported in the cap,
        or the grid is too coarse for the cap.
    """
    if f.surface is not surface:
        raise ValueError("amplitude is not defined on this surface")
    rho = float(cap.radius)
    if rho > MAX_THETA_RADIUS * (1.0 + 1e-12):
        raise ValueError(
            f"cap radius {rho:.5f} exceeds the separation limit "
            f"{MAX_THETA_RADIUS:.5f}")
    res = surface.grid_resolution
    if res * rho < 4.0:
        raise ValueError(
            f"grid resolution {res} is too coarse for cap radius "
            f"{rho:.4f}; need at least 4 nodes per cap radius")

    values = np.asarray(f.values, dtype=complex)
    nonzero = np.flatnonzero(values)
    if len(nonzero) == 0:
        return WavePacketSet(cap=cap, config=config)
    support_dist = np.linalg.norm(surface.params[nonzero] - cap.center,
                                  axis=1)
    if support_dist.max() > rho * (1.0 + 1e-9):
        raise ValueError(
            f"amplitude is not supported in the cap: a nonzero node lies "
            f"at parameter distance {support_dist.max():.5f} > "
            f"{rho:.5f} from the center")

    h = 1.0 / res
    lo = np.maximum(np.ceil((cap.center - 3.0 * rho) / h - 0.5), -res)
    hi = np.minimum(np.floor((cap.center + 3.0 * rho) / h - 0.5), res - 1)
    lo = lo.astype(int)
    hi = hi.astype(int)
    gx = np.arange(lo[0], hi[0] + 1)
    gy = np.arange(lo[1], hi[1] + 1)
    nx, ny = len(gx), len(gy)

    sorted_keys, sorted_order = _node_index_map(surface)
    gi, gj = np.meshgrid(gx, gy, indexing="ij")
    patch_keys = ((gi + res) * (2 * res + 1) + (gj + res)).reshape(-1)
    pos = np.searchsorted(sorted_keys, patch_keys)
    pos = np.clip(pos, 0, len(sorted_keys) - 1)
    on_surface = sorted_keys[pos] == patch_keys
    node_idx = sorted_order[pos]

    patch_f = np.zeros(nx * ny, dtype=complex)
    patch_f[on_surface] = values[node_idx[on_surface]]
    captured = np.abs(patch_f).sum()
    expected = np.abs(values).sum()
    if not captured >= expected * (1.0 - 1e-12):
        raise ValueError(
            "amplitude support includes boundary-ring nodes that are off "
            "the parameter lattice; decomposition needs an interior cap")

    F = np.fft.fft2(patch_f.reshape(nx, ny))
    fx = np.fft.fftfreq(nx, d=h)
    fy = np.fft.fftfreq(ny, d=h)
    xi = np.stack(np.meshgrid(fx, fy, indexing="ij"), axis=-1).reshape(-1, 2)

    spacing = config.ball_radius_for(rho)
    cand, w = _lattice_weights(xi, spacing)
    flat_f = F.reshape(-1)
    mode_energy = np.abs(flat_f) ** 2
    total_energy = float(mode_energy.sum())

    flat_w = w.reshape(-1)
    flat_keys = _ball_key(cand.reshape(-1, 2))
    mode_of = np.repeat(np.arange(nx * ny), 9)
    live = flat_w > 0.0
    flat_w, flat_keys, mode_of = (flat_w[live], flat_keys[live],
                                  mode_of[live])
    ball_keys, inverse = np.unique(flat_keys, return_inverse=True)
    ball_energy = np.bincount(
        inverse, weights=flat_w ** 2 * mode_energy[mode_of],
        minlength=len(ball_keys))
    kept = np.flatnonzero(ball_energy > ENERGY_KEEP_SHARE * total_energy)

    px = (gx + 0.5) * h
    py = (gy + 0.5) * h
    PX, PY = np.meshgrid(px, py, indexing="ij")
    dist = np.hypot(PX - cap.center[0], PY - cap.center[1]).reshape(-1)
    psi = np.zeros(nx * ny)
    psi[dist <= 2.0 * rho] = 1.0
    band = (dist > 2.0 * rho) & (dist < 3.0 * rho)
    psi[band] = _smoothstep((3.0 * rho - dist[band]) / rho)

    parent_l1 = f.norm("L1")
    parent_l2 = f.norm("L2")
    ball_centers = _key_to_index(ball_keys) * spacing

    packets: List[WavePacket] = []
    recon = np.zeros(nx * ny, dtype=complex)
    order_by_energy = kept[np.argsort(ball_energy[kept])[::-1]]
    for b in order_by_energy:
        sel = inverse == b
        mask = np.zeros(nx * ny)
        mask[mode_of[sel]] = flat_w[sel]
        piece = np.fft.ifft2((flat_f * mask).reshape(nx, ny)).reshape(-1)
        piece *= psi
        recon += piece
        full = np.zeros(len(values), dtype=complex)
        full[node_idx[on_surface]] = piece[on_surface]
        amp = AmplitudeFunction(
            surface, full,
            name=f"{f.name}|ball({ball_centers[b, 0]:g},"
                 f"{ball_centers[b, 1]:g})")
        tube = Tube(point=np.array([ball_centers[b, 0],
                                    ball_centers[b, 1], 0.0]),
                    direction=np.array(cap.unit_normal, dtype=float),
                    radius=config.tube_radius, cap_id=int(cap.cap_id),
                    half_length=2.0 * float(config.R))
        packets.append(WavePacket(tube=tube, amplitude=amp,
                                  ball_center=ball_centers[b].copy(),
                                  l2_mass=amp.norm("L2") ** 2,
                                  parent_l1=parent_l1))

    diff = np.zeros(len(values), dtype=complex)
    diff[node_idx[on_surface]] = recon[on_surface]
    residual = AmplitudeFunction(surface, values - diff).norm("L1")
    frame_ratio = (sum(p.l2_mass for p in packets) / parent_l2 ** 2
                   if parent_l2 > 0.0 else 0.0)
    LOGGER.debug("decompose cap %d: %d packets, residual %.3e, frame %.3f",
                 cap.cap_id, len(packets), residual, frame_ratio)
    return WavePacketSet(cap=cap, config=config, packets=packets,
                         residual=float(residual),
                         frame_ratio=float(frame_ratio),
                         parent_l1=float(parent_l1),
                         parent_l2=float(parent_l2))


def off_tube_decay(surface: SurfaceGraph, packet, sample_points: np.ndarray
                   ) -> float:
    """Largest packet extension value far from the tube, normalized.

    Evaluates ``|E f_T|`` at the sample points that satisfy the
    preconditions (inside the ball of radius R and at distance at least
    twice the tube radius from the axis) and returns the maximum divided
    by the L1 norm of the decomposed amplitude.  Points violating the
    preconditions are ignored.

    Parameters
    ----------
    surface : SurfaceGraph
    packet : WavePacket or (Tube, AmplitudeFunction)
    sample_points : (m, 3) array_like

    Returns
    -------
    float

    Raises
    ------
    ValueError
        If no sample point satisfies the preconditions, or the packet
        amplitude vanishes.
    """
    tube, amp = packet
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("sample points must be an (m, 3) array")
    R = tube.half_length / 2.0
    inside = np.linalg.norm(pts, axis=1) <= R * (1.0 + 1e-9)
    far = tube.axis_distance(pts) >= 2.0 * tube.radius * (1.0 - 1e-9)
    valid = inside & far
    if not valid.any():
        raise ValueError(
            "no valid sample points: need points inside B(0, R) at "
            "distance >= 2 x tube radius from the axis")
    denom = getattr(packet, "parent_l1", 0.0) or amp.norm("L1")
    if denom == 0.0:
        raise ValueError("packet amplitude vanishes; ratio is undefined")
    vals = extension_eval(surface, amp, pts[valid])
    return float(np.abs(vals).max() / denom)
