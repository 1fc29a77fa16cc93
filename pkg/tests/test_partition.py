"""Polynomial cells: equidistribution, crossing bounds, tube classes,
and the broad/bilinear split of extension values."""

import numpy as np
import pytest

import oracles
from extlab.extension import (AmplitudeFunction, GridFunction,
                              extension_eval)
from extlab.geometry import Cap, build_surface, cap_cover
from extlab.partition import (BroadConfig, Partition, TriPoly,
                              bilinear_tangential, broad_part,
                              classify_tubes, equidistribute,
                              line_cell_crossings,
                              tangential_direction_count,
                              tube_cell_membership)
from extlab.wavepacket import Tube, WavePacketConfig, decompose

# Frozen contract values.
CELL_BOUND_D4 = 4.0 * 4 ** 3           # cells <= C D^3 at degree four
THRESHOLD_R64_D01 = 0.2871745887492588  # 64^(-1/2 + 2*0.1)
TUBE_RADIUS_R64_D01 = 12.125732532083184  # 64^(1/2 + 0.1)
BAND_COUNT_THETA144 = 196               # tangent caps of x=0 at R=64

R_DEMO = 64.0
DELTA_DEMO = 0.1
RHO = 1.0 / 12.0


def box_grid(lo, hi, n, fn):
    h = (hi - lo) / n
    ax = lo + h * (np.arange(n) + 0.5)
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"),
                   -1).reshape(-1, 3)
    return GridFunction(points=pts, values=fn(pts), spacing=h)


def two_gaussians(pts, c1, c2, width2=0.01):
    a = np.exp(-np.sum((pts - np.asarray(c1)) ** 2, axis=1) / (2 * width2))
    b = np.exp(-np.sum((pts - np.asarray(c2)) ** 2, axis=1) / (2 * width2))
    return a + b


def graph_normal(w):
    w = np.asarray(w, dtype=float)
    return np.array([-w[0], -w[1], 1.0]) / np.sqrt(1.0 + w @ w)


def make_tube(direction, point=(0.0, 0.0, 0.0), cap_id=0,
              radius=TUBE_RADIUS_R64_D01, half_length=2.0 * R_DEMO):
    d = np.asarray(direction, dtype=float)
    return Tube(point=np.asarray(point, dtype=float),
                direction=d / np.linalg.norm(d), radius=radius,
                cap_id=cap_id, half_length=half_length)


@pytest.fixture(scope="module")
def unit_grid():
    return box_grid(0.0, 1.0, 32, lambda pts: np.ones(len(pts)))


@pytest.fixture(scope="module")
def gauss_partition():
    F = box_grid(0.0, 1.0, 48,
                 lambda p: two_gaussians(p, [0.3, 0.5, 0.5],
                                         [0.7, 0.5, 0.5]))
    return equidistribute(F, 4, wall_width=0.04)


@pytest.fixture(scope="module")
def demo_grid():
    return box_grid(-64.0, 64.0, 40, lambda pts: np.ones(len(pts)))


@pytest.fixture(scope="module")
def plane_partition(demo_grid):
    return Partition.from_factors([TriPoly.plane([0.0, 0.0, 1.0], 0.0)],
                                  demo_grid,
                                  wall_width=TUBE_RADIUS_R64_D01 * 1.01)


@pytest.fixture(scope="module")
def vertical_partition(demo_grid):
    return Partition.from_factors([TriPoly.plane([1.0, 0.0, 0.0], 0.0)],
                                  demo_grid,
                                  wall_width=TUBE_RADIUS_R64_D01 * 1.01)


@pytest.fixture(scope="module")
def bilinear_scene(paraboloid64, demo_grid):
    surface = paraboloid64

    def cap_bump(center):
        d = np.linalg.norm(surface.params - np.asarray(center), axis=1) \
            / (0.8 * RHO)
        vals = np.zeros(surface.n_nodes, dtype=complex)
        inside = d < 1.0
        vals[inside] = np.exp(-1.0 / (1.0 - d[inside] ** 2))
        return vals

    c1, c2 = np.array([0.0, 0.5]), np.array([0.0, -0.5])
    caps = [Cap(center=c, radius=RHO,
                node_indices=surface.nodes_within(c, RHO),
                unit_normal=graph_normal(c), cap_id=i)
            for i, c in enumerate((c1, c2))]
    v1, v2 = cap_bump(c1), cap_bump(c2)
    part = Partition.from_factors([TriPoly.plane([1.0, 0.0, 0.0], 0.0)],
                                  demo_grid,
                                  wall_width=TUBE_RADIUS_R64_D01 * 1.05)
    config = WavePacketConfig(R=R_DEMO, delta=DELTA_DEMO)
    return {"surface": surface, "caps": caps, "v1": v1, "v2": v2,
            "f": AmplitudeFunction(surface, v1 + v2),
            "partition": part, "config": config,
            "ball": (np.zeros(3), 45.0)}


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------

def test_plane_polynomial_values_and_gradient():
    poly = TriPoly.plane([1.0, 2.0, -1.0], 0.5)
    pts = np.array([[0.5, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert np.allclose(poly(pts), [0.0, 1.5])
    assert np.allclose(poly.gradient(pts), [[1.0, 2.0, -1.0]] * 2)
    assert poly.degree == 1


def test_polynomial_from_terms_degree_and_dict():
    poly = TriPoly.from_terms({(2, 0, 1): 3.0, (0, 0, 0): -1.0})
    assert poly.degree == 3
    assert poly(np.array([[1.0, 5.0, 2.0]]))[0] == pytest.approx(5.0)
    assert poly.to_dict() == {"0,0,0": -1.0, "2,0,1": 3.0}
    assert poly.perturbed(0.5).to_dict()["0,0,0"] == pytest.approx(-0.5)


# ---------------------------------------------------------------------------
# equidistribution
# ---------------------------------------------------------------------------

def test_degree_one_uniform_splits_into_equal_halves(unit_grid):
    part = equidistribute(unit_grid, 1)
    assert part.n_cells == 2
    assert part.success
    assert np.all(np.abs(part.masses - 0.5) <= 0.02 * 0.5)


def test_degree_two_uniform_gives_four_balanced_cells(unit_grid):
    part = equidistribute(unit_grid, 2)
    assert part.n_cells == 4
    assert part.achieved_ratio <= 1.1


def test_separated_gaussians_equidistribute_at_degree_four(gauss_partition):
    part = gauss_partition
    assert part.success
    assert part.achieved_ratio <= 2.0
    assert part.n_cells <= CELL_BOUND_D4
    assert part.degree == 4
    total = part.masses.sum()
    assert total == pytest.approx(2.0 * (2 * np.pi * 0.01) ** 1.5, rel=5e-3)


def test_diagonal_gaussians_report_honest_failure():
    F = box_grid(0.0, 1.0, 48,
                 lambda p: two_gaussians(p, [0.3, 0.3, 0.5],
                                         [0.7, 0.7, 0.5]))
    part = equidistribute(F, 4)
    assert not part.success
    assert part.achieved_ratio > 2.0


def test_equidistribute_rejects_bad_input(unit_grid):
    zero = box_grid(0.0, 1.0, 8, lambda p: np.zeros(len(p)))
    with pytest.raises(ValueError, match="zero mass"):
        equidistribute(zero, 2)
    neg = box_grid(0.0, 1.0, 8, lambda p: -np.ones(len(p)))
    with pytest.raises(ValueError, match="nonnegative"):
        equidistribute(neg, 2)
    with pytest.raises(ValueError, match="degree"):
        equidistribute(unit_grid, 9)
    with pytest.raises(ValueError, match="degree"):
        equidistribute(unit_grid, 0)


def test_from_factors_with_parallel_planes(unit_grid):
    planes = [TriPoly.plane([1.0, 0.0, 0.0], q) for q in (0.25, 0.5, 0.75)]
    part = Partition.from_factors(planes, unit_grid)
    assert part.n_cells == 4
    assert part.achieved_ratio == pytest.approx(1.0)
    assert part.degree == 3


def test_partition_to_dict_summary(gauss_partition):
    d = gauss_partition.to_dict()
    assert d["cell_count"] == gauss_partition.n_cells
    assert len(d["cell_masses"]) == gauss_partition.n_cells
    assert d["success"] is True
    assert 0.0 < d["wall_volume_fraction"] < 1.0
    assert len(d["factors"]) == 4


# ---------------------------------------------------------------------------
# lines through the cells
# ---------------------------------------------------------------------------

def test_single_plane_line_crossings_at_most_two(unit_grid):
    part = equidistribute(unit_grid, 1)
    rng = np.random.default_rng(5)
    worst = 0
    for _ in range(30):
        line = (rng.uniform(0.1, 0.9, 3), rng.standard_normal(3))
        worst = max(worst, line_cell_crossings(part, line))
    assert worst <= 2


def test_transversal_line_meets_all_four_slabs(unit_grid):
    planes = [TriPoly.plane([1.0, 0.0, 0.0], q) for q in (0.25, 0.5, 0.75)]
    part = Partition.from_factors(planes, unit_grid)
    crossing = line_cell_crossings(part,
                                   ((0.02, 0.5, 0.5), (1.0, 0.3, 0.1)))
    assert crossing == 4
    parallel = line_cell_crossings(part,
                                   ((0.6, 0.5, 0.5), (0.0, 1.0, 0.0)))
    assert parallel == 1


def test_random_lines_respect_degree_plus_one(gauss_partition):
    rng = np.random.default_rng(5)
    worst = 0
    for _ in range(100):
        line = (rng.uniform(0.0, 1.0, 3), rng.standard_normal(3))
        worst = max(worst, line_cell_crossings(gauss_partition, line))
    assert worst <= gauss_partition.degree + 1


def test_line_missing_the_box_crosses_nothing(unit_grid):
    part = equidistribute(unit_grid, 1)
    assert line_cell_crossings(part, ((5.0, 5.0, 5.0),
                                      (0.0, 0.0, 1.0))) == 0
    with pytest.raises(ValueError, match="direction"):
        line_cell_crossings(part, ((0.5, 0.5, 0.5), (0.0, 0.0, 0.0)))


# ---------------------------------------------------------------------------
# tubes through the cells
# ---------------------------------------------------------------------------

def test_tube_inside_wall_meets_no_cells(unit_grid):
    part = Partition.from_factors([TriPoly.plane([1.0, 0.0, 0.0], 0.5)],
                                  unit_grid, wall_width=0.04)
    inside = make_tube([0.0, 1.0, 0.0], point=(0.5, 0.5, 0.5),
                       radius=0.03, half_length=0.45)
    crossing = make_tube([1.0, 0.0, 0.0], point=(0.5, 0.5, 0.5),
                         radius=0.03, half_length=0.45)
    members = tube_cell_membership(part, [inside, crossing])
    assert members[0] == []
    assert members[1] == [0, 1]


def test_membership_requires_wide_enough_wall(unit_grid):
    part = Partition.from_factors([TriPoly.plane([1.0, 0.0, 0.0], 0.5)],
                                  unit_grid, wall_width=0.04)
    fat = make_tube([1.0, 0.0, 0.0], point=(0.5, 0.5, 0.5),
                    radius=0.05, half_length=0.45)
    with pytest.raises(ValueError, match="narrower"):
        tube_cell_membership(part, [fat])
    bare = Partition.from_factors([TriPoly.plane([1.0, 0.0, 0.0], 0.5)],
                                  unit_grid)
    with pytest.raises(ValueError, match="wall"):
        tube_cell_membership(bare, [fat])


def test_random_tubes_respect_degree_plus_one(gauss_partition):
    rng = np.random.default_rng(11)
    worst = 0
    for _ in range(50):
        d = rng.standard_normal(3)
        tube = make_tube(d, point=rng.uniform(0.05, 0.95, 3),
                         radius=0.03, half_length=0.9)
        members = tube_cell_membership(gauss_partition, [tube])[0]
        worst = max(worst, len(members))
    assert worst <= gauss_partition.degree + 1


# ---------------------------------------------------------------------------
# tangent / transverse classification
# ---------------------------------------------------------------------------

def test_plane_classification_by_angle(plane_partition):
    thr = THRESHOLD_R64_D01
    tilt = 2.0 * thr
    tubes = [make_tube([0.0, 0.0, 1.0], cap_id=0),
             make_tube([1.0, 0.0, 0.0], cap_id=1),
             make_tube([np.cos(tilt), 0.0, np.sin(tilt)], cap_id=2),
             make_tube([np.cos(0.5 * thr), 0.0, np.sin(0.5 * thr)],
                       cap_id=3),
             make_tube([1.0, 0.0, 0.0], point=(0.0, 50.0, 40.0),
                       cap_id=4)]
    ball = (np.zeros(3), 24.0)
    cls = classify_tubes(plane_partition, tubes, [ball], DELTA_DEMO)
    assert [cls.label(i, 0) for i in range(5)] == \
        ["transverse", "tangent", "transverse", "tangent", "disjoint"]
    assert cls.angles[(0, 0)] == pytest.approx(np.pi / 2.0)
    assert cls.angles[(1, 0)] == pytest.approx(0.0, abs=1e-12)
    assert cls.angles[(2, 0)] == pytest.approx(tilt, abs=1e-9)
    assert cls.angles[(3, 0)] == pytest.approx(0.5 * thr, abs=1e-9)
    assert cls.thresholds[(0, 0)] == pytest.approx(thr)
    assert cls.tangent_tubes(0) == [1, 3]
    assert cls.transverse_tubes(0) == [0, 2]


def test_classification_is_exclusive_and_complete(plane_partition):
    rng = np.random.default_rng(17)
    tubes = [make_tube(rng.standard_normal(3),
                       point=rng.uniform(-20, 20, 3), cap_id=i)
             for i in range(12)]
    balls = [(np.zeros(3), 24.0), (np.array([10.0, 0.0, 0.0]), 20.0)]
    cls = classify_tubes(plane_partition, tubes, balls, DELTA_DEMO)
    for i in range(len(tubes)):
        for j in range(len(balls)):
            assert cls.label(i, j) in {"tangent", "transverse", "disjoint"}
    rows = cls.rows()
    assert len(rows) == len(tubes) * len(balls)
    assert {"tube", "ball", "class", "angle", "threshold"} \
        <= set(rows[0])


def test_classification_needs_zero_set_samples(demo_grid):
    thick = Partition.from_factors([TriPoly.plane([0.0, 0.0, 1.0], 0.0)],
                                   demo_grid, wall_width=20.0)
    tube = make_tube([1.0, 0.0, 0.0], point=(0.0, 0.0, 15.0), radius=5.0)
    with pytest.raises(ValueError, match="fewer than 8"):
        classify_tubes(thick, [tube], [(np.array([0.0, 0.0, 15.0]), 4.0)],
                       DELTA_DEMO)


def test_tangent_direction_count_matches_normal_band(vertical_partition,
                                                     paraboloid64):
    cover = cap_cover(paraboloid64, "theta", 144.0)
    tubes = [make_tube(c.unit_normal, cap_id=c.cap_id)
             for c in cover.caps]
    ball = (np.zeros(3), 24.0)
    cls = classify_tubes(vertical_partition, tubes, [ball], DELTA_DEMO)
    count = tangential_direction_count(cls, 0)
    centers = np.stack([c.center for c in cover.caps])
    assert count == oracles.normal_band_count(centers,
                                              np.array([1.0, 0.0, 0.0]),
                                              THRESHOLD_R64_D01)
    assert count == BAND_COUNT_THETA144


def test_no_tubes_near_wall_means_zero_directions(vertical_partition):
    far = [make_tube([0.0, 1.0, 0.0], point=(40.0, 0.0, 0.0), cap_id=3)]
    cls = classify_tubes(vertical_partition, far,
                         [(np.zeros(3), 24.0)], DELTA_DEMO)
    assert cls.label(0, 0) == "disjoint"
    assert tangential_direction_count(cls, 0) == 0


def test_doubling_degree_grows_count_tamely(demo_grid, vertical_partition,
                                            paraboloid64):
    cover = cap_cover(paraboloid64, "theta", 144.0)
    tubes = [make_tube(c.unit_normal, cap_id=c.cap_id)
             for c in cover.caps]
    ball = (np.zeros(3), 24.0)
    base = tangential_direction_count(
        classify_tubes(vertical_partition, tubes, [ball], DELTA_DEMO), 0)
    phi = 0.35
    doubled = Partition.from_factors(
        [TriPoly.plane([1.0, 0.0, 0.0], 0.0),
         TriPoly.plane([np.cos(phi), np.sin(phi), 0.0], 0.0)],
        demo_grid, wall_width=TUBE_RADIUS_R64_D01 * 1.01)
    grown = tangential_direction_count(
        classify_tubes(doubled, tubes, [ball], DELTA_DEMO), 0)
    assert grown <= 4.0 * (1.0 + 0.25) * base


# ---------------------------------------------------------------------------
# broad part
# ---------------------------------------------------------------------------

def test_single_cap_cover_has_no_broad_points(paraboloid32, rng):
    surface = paraboloid32
    whole = Cap(center=np.zeros(2), radius=2.0,
                node_indices=np.arange(surface.n_nodes),
                unit_normal=np.array([0.0, 0.0, 1.0]), cap_id=0)
    f = AmplitudeFunction.random(surface, rng)
    pts = rng.uniform(-10.0, 10.0, (50, 3))
    values = broad_part(surface, f, [whole], 0.9, pts)
    assert np.all(values == 0.0)


def _two_cap_scene(surface):
    c1, c2 = np.array([0.5, 0.0]), np.array([-0.5, 0.0])
    caps = [Cap(center=c, radius=0.25,
                node_indices=surface.nodes_within(c, 0.25),
                unit_normal=graph_normal(c), cap_id=i)
            for i, c in enumerate((c1, c2))]
    vals = np.zeros(surface.n_nodes, dtype=complex)
    for cap in caps:
        vals[cap.node_indices] = 1.0
    return caps, AmplitudeFunction(surface, vals)


def test_two_far_caps_are_broad_at_the_origin(paraboloid32):
    caps, f = _two_cap_scene(paraboloid32)
    origin = np.zeros((1, 3))
    full = np.abs(extension_eval(paraboloid32, f, origin))[0]
    assert full > 0.0
    high = broad_part(paraboloid32, f, caps, 0.7, origin)[0]
    assert high == pytest.approx(full, rel=1e-12)
    low = broad_part(paraboloid32, f, caps, 0.45, origin)[0]
    assert low == 0.0


def test_tiny_beta_empties_the_broad_set(paraboloid32, rng):
    cover = cap_cover(paraboloid32, "tau", 4.0)
    f = AmplitudeFunction.random(paraboloid32, rng)
    beta = 0.9 / len(cover.caps)
    pts = rng.uniform(-20.0, 20.0, (1000, 3))
    values = broad_part(paraboloid32, f, cover, beta, pts)
    assert np.all(values == 0.0)


def test_broad_part_validates_inputs(paraboloid32, rng):
    caps, f = _two_cap_scene(paraboloid32)
    pts = np.zeros((1, 3))
    with pytest.raises(ValueError, match="empty cover"):
        broad_part(paraboloid32, f, [], 0.5, pts)
    with pytest.raises(ValueError, match="beta"):
        broad_part(paraboloid32, f, caps, 0.0, pts)
    with pytest.raises(ValueError, match="beta"):
        broad_part(paraboloid32, f, caps, 1.5, pts)
    uncovered = AmplitudeFunction.constant(paraboloid32, 1.0)
    with pytest.raises(ValueError, match="cover"):
        broad_part(paraboloid32, uncovered, caps, 0.5, pts)


def test_pointwise_broad_display_inequality(paraboloid32, rng):
    caps, f = _two_cap_scene(paraboloid32)
    beta, p = 0.7, 3.25
    pts = rng.uniform(-15.0, 15.0, (200, 3))
    broad = broad_part(paraboloid32, f, caps, beta, pts)
    full = np.abs(extension_eval(paraboloid32, f, pts))
    pieces = []
    for cap in caps:
        vals = np.zeros(paraboloid32.n_nodes, dtype=complex)
        vals[cap.node_indices] = np.asarray(f.values)[cap.node_indices]
        pieces.append(np.abs(extension_eval(
            paraboloid32, AmplitudeFunction(paraboloid32, vals), pts)))
    lhs = full ** p
    rhs = broad ** p + beta ** (-p) * sum(piece ** p for piece in pieces)
    rel = (lhs - rhs) / np.maximum(lhs, 1e-300)
    assert rel.max() <= 1e-10


def test_broad_config_records_the_threshold_check():
    surface = build_surface("paraboloid", grid_resolution=16)
    cover = cap_cover(surface, "tau", 4.0)
    config = BroadConfig(K=4.0, beta=0.5, cover=cover,
                         multiplicity=cover.multiplicity)
    assert config.n_caps == len(cover.caps)
    assert config.recorded_c == pytest.approx(len(cover.caps) / 16.0)
    assert config.broad_possible
    tiny = BroadConfig(K=4.0, beta=0.9 / len(cover.caps), cover=cover)
    assert not tiny.broad_possible
    with pytest.raises(ValueError, match="beta"):
        BroadConfig(K=4.0, beta=0.0, cover=cover)
    with pytest.raises(ValueError, match="empty cover"):
        BroadConfig(K=4.0, beta=0.5, cover=[])


# ---------------------------------------------------------------------------
# bilinear tangential part
# ---------------------------------------------------------------------------

def test_two_tangent_caps_give_the_geometric_mean(bilinear_scene):
    scene = bilinear_scene
    rng = np.random.default_rng(9)
    pts = rng.uniform(-30.0, 30.0, (25, 3))
    out = bilinear_tangential(scene["surface"], scene["f"],
                              scene["partition"], scene["ball"],
                              scene["caps"], DELTA_DEMO, pts,
                              config=scene["config"])
    e1 = np.abs(extension_eval(
        scene["surface"],
        AmplitudeFunction(scene["surface"], scene["v1"]), pts))
    e2 = np.abs(extension_eval(
        scene["surface"],
        AmplitudeFunction(scene["surface"], scene["v2"]), pts))
    expected = np.sqrt(e1 * e2)
    significant = expected > 0.1 * expected.max()
    assert significant.sum() >= 5
    rel = np.abs(out - expected)[significant] / expected[significant]
    assert rel.max() <= 0.02


def test_single_cap_has_no_bilinear_pairs(bilinear_scene):
    scene = bilinear_scene
    surface = scene["surface"]
    f1 = AmplitudeFunction(surface, scene["v1"])
    pts = np.random.default_rng(9).uniform(-30.0, 30.0, (10, 3))
    out = bilinear_tangential(surface, f1, scene["partition"],
                              scene["ball"], scene["caps"][:1],
                              DELTA_DEMO, pts, config=scene["config"])
    assert np.all(out == 0.0)


def test_transverse_wall_gives_zero_bilinear_part(bilinear_scene,
                                                  demo_grid):
    scene = bilinear_scene
    horizontal = Partition.from_factors(
        [TriPoly.plane([0.0, 0.0, 1.0], 0.0)], demo_grid,
        wall_width=TUBE_RADIUS_R64_D01 * 1.05)
    pts = np.random.default_rng(9).uniform(-30.0, 30.0, (10, 3))
    out = bilinear_tangential(scene["surface"], scene["f"], horizontal,
                              scene["ball"], scene["caps"], DELTA_DEMO,
                              pts, config=scene["config"])
    assert np.all(out == 0.0)


def test_missing_packet_inventory_is_an_error(bilinear_scene):
    scene = bilinear_scene
    with pytest.raises(ValueError, match="missing packet inventory"):
        bilinear_tangential(scene["surface"], scene["f"],
                            scene["partition"], scene["ball"],
                            scene["caps"], DELTA_DEMO, np.zeros((1, 3)))


def test_prebuilt_packets_match_on_the_fly(bilinear_scene):
    scene = bilinear_scene
    surface = scene["surface"]
    pts = np.random.default_rng(9).uniform(-30.0, 30.0, (10, 3))
    sets = [decompose(surface, AmplitudeFunction(surface, scene[key]),
                      cap, scene["config"])
            for key, cap in zip(("v1", "v2"), scene["caps"])]
    prebuilt = bilinear_tangential(surface, scene["f"],
                                   scene["partition"], scene["ball"],
                                   scene["caps"], DELTA_DEMO, pts,
                                   packet_sets=sets)
    rebuilt = bilinear_tangential(surface, scene["f"],
                                  scene["partition"], scene["ball"],
                                  scene["caps"], DELTA_DEMO, pts,
                                  config=scene["config"])
    assert np.abs(prebuilt - rebuilt).max() <= 1e-12
