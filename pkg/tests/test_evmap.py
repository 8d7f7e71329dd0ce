import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.core.errors import NoObservableCentersError
from app.models.cloud import FREE_SPACE_INTENSITY, PointCloud, PointLabel
from app.models.evidence import CenterPoint
from app.models.grid import GridSpec
from app.services.evmap import (
    EvidentialMap,
    build_from_cloud,
    density_weight,
    dirichlet_at,
    evidence_at,
    evidence_grid,
    evidence_many,
    expand_centers,
    expansion_offsets,
    rasterize,
    read_snapshot,
    subsample_centers,
    write_snapshot,
)
from models import Layer, MapInit

UNIT = ((1.0, 1.0), (1.0, 1.0))


def center(x, y, o_cls=(1.0, 1.0), o_var=((0.0, 0.0), (0.0, 0.0))) -> CenterPoint:
    return CenterPoint(pos=(x, y), o_cls=o_cls, o_var=o_var)


def random_map(rng, n=60, extent=8.0) -> EvidentialMap:
    return EvidentialMap(
        positions=rng.uniform(-extent, extent, size=(n, 2)),
        o_cls=rng.uniform(0.0, 3.0, size=(n, 2)),
        o_var=rng.uniform(0.0, 1.0, size=(n, 2, 2)),
        layer=Layer.ROAD,
    )


# ---------- pointwise ----------

def test_density_weight_examples():
    c = center(1.0, 2.0, o_var=UNIT)
    assert density_weight((1.0, 2.0), c, 0, sigma0_sq=0.0) == 1.0
    assert density_weight((2.0, 2.0), c, 0, sigma0_sq=0.0) == pytest.approx(math.exp(-0.5))
    c = center(0.0, 0.0, o_var=((0.5, 2.0), (1.0, 1.0)))
    assert density_weight((1.0, 2.0), c, 0, sigma0_sq=0.0) == pytest.approx(math.exp(-2.0))


def test_density_weight_matches_matrix_form(rng):
    for _ in range(20):
        var = rng.uniform(0.1, 3.0, size=2)
        c = center(0.0, 0.0, o_var=(tuple(var), (1.0, 1.0)))
        x = rng.normal(size=2)
        cov = np.diag(var + 0.01)
        m = x @ np.linalg.inv(cov) @ x
        assert density_weight(x, c, 0) == pytest.approx(math.exp(-0.5 * m))


def test_evidence_at_single_center():
    emap = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=(3.0, 1.0), o_var=UNIT)], Layer.ROAD)
    e, observed = evidence_at(emap, (0.0, 0.0))
    np.testing.assert_allclose(e, [3.0, 1.0])
    assert observed


def test_unobserved_point_has_no_evidence():
    emap = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=(3.0, 1.0))], Layer.ROAD)
    e, observed = evidence_at(emap, (5.0, 0.0))
    np.testing.assert_array_equal(e, [0.0, 0.0])
    assert not observed
    result = dirichlet_at(emap, (5.0, 0.0))
    assert result.u == 1.0
    np.testing.assert_allclose(result.p_hat, [0.5, 0.5])


def test_two_centers_sum_their_evidence():
    centers = [center(1.0, 0.0, o_cls=(2.0, 0.0), o_var=UNIT), center(-1.0, 0.0, o_cls=(2.0, 0.0), o_var=UNIT)]
    emap = EvidentialMap.from_centers(centers, Layer.ROAD, sigma0_sq=1e-12)
    e, _ = evidence_at(emap, (0.0, 0.0))
    assert e[0] == pytest.approx(4.0 * math.exp(-0.5), rel=1e-9)
    assert e[1] == 0.0


@pytest.mark.parametrize(
    "o_cls, p_fg, u",
    [((0.0, 0.0), 0.5, 1.0), ((3.0, 1.0), 2.0 / 3.0, 1.0 / 3.0), ((8.0, 0.0), 0.9, 0.2)],
)
def test_dirichlet_at_center(o_cls, p_fg, u):
    emap = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=o_cls)], Layer.OBJECT)
    result = dirichlet_at(emap, (0.0, 0.0))
    assert result.p_hat[0] == pytest.approx(p_fg, abs=1e-12)
    assert result.u == pytest.approx(u, abs=1e-12)
    assert result.S == pytest.approx(sum(o_cls) + 2.0)
    assert result.K == 2


def test_evidence_is_additive_over_disjoint_center_sets(rng):
    a, b = random_map(rng, n=25), random_map(rng, n=25)
    queries = rng.uniform(-9.0, 9.0, size=(400, 2))
    e_a, obs_a = evidence_many(a, queries)
    e_b, obs_b = evidence_many(b, queries)
    e_ab, obs_ab = evidence_many(a.merged(b), queries)
    np.testing.assert_allclose(e_ab, e_a + e_b, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(obs_ab, obs_a | obs_b)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), x=st.floats(-10.0, 10.0), y=st.floats(-10.0, 10.0))
def test_dirichlet_is_a_distribution_and_more_centers_never_add_doubt(seed, x, y):
    rng = np.random.default_rng(seed)
    emap = random_map(rng, n=20)
    extra = random_map(rng, n=1)
    before = dirichlet_at(emap, (x, y))
    after = dirichlet_at(emap.merged(extra), (x, y))
    for result in (before, after):
        assert result.p_hat.sum() == pytest.approx(1.0, abs=1e-12)
        assert 0.0 < result.u <= 1.0
    assert after.u <= before.u + 1e-12


# ---------- rasterization ----------

def test_empty_map_rasterizes_to_unknown():
    emap = EvidentialMap.from_centers([], Layer.ROAD)
    raster = rasterize(emap, GridSpec.centered(4.0, 0.4))
    assert np.all(raster.u == 1.0)
    assert not raster.observed.any()


def test_observed_mask_is_a_disc():
    emap = EvidentialMap.from_centers([center(0.13, -0.27)], Layer.ROAD, nu=2.0)
    spec = GridSpec.centered(4.0, 0.4)
    raster = rasterize(emap, spec)
    xs, ys = spec.cell_centers()
    np.testing.assert_array_equal(raster.observed, np.hypot(xs - 0.13, ys + 0.27) < 2.0)


def test_observed_mask_matches_brute_force_on_random_maps():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        emap = random_map(rng, n=40)
        spec = GridSpec.centered(10.0, 0.4)
        observed = rasterize(emap, spec).observed
        pts = spec.centers_flat()
        d2 = np.sum((pts[:, None, :] - emap.positions[None, :, :]) ** 2, axis=2)
        np.testing.assert_array_equal(observed.reshape(-1), np.any(d2 < 4.0, axis=1))


def test_coarse_and_fine_grids_agree_on_shared_centers(rng):
    emap = random_map(rng)
    coarse = evidence_grid(emap, GridSpec(origin_x=-6.0, origin_y=-6.0, resolution=0.4, width=30, height=30))
    fine = evidence_grid(emap, GridSpec(origin_x=-6.1, origin_y=-6.1, resolution=0.2, width=61, height=61))
    # coarse center i sits at fine index 2i + 1
    np.testing.assert_allclose(coarse.evidence, fine.evidence[1::2, 1::2][:30, :30], rtol=1e-12, atol=1e-12)


def test_raster_zeroes_unobserved_evidence():
    emap = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=(5.0, 0.0), o_var=UNIT)], Layer.ROAD)
    grid = evidence_grid(emap, GridSpec.centered(4.0, 0.4))
    raster = grid.raster()
    assert np.all(raster.u[~grid.observed] == 1.0)
    assert np.all(raster.u[grid.observed] < 1.0)


# ---------- expansion ----------

def test_zero_radius_leaves_map_unchanged(rng):
    emap = random_map(rng)
    assert expand_centers(emap, 0.0, 0.4) is emap


def test_lattice_count_for_one_center():
    emap = EvidentialMap.from_centers([center(0.0, 0.0)], Layer.OBJECT)
    expanded = expand_centers(emap, 1.2, 0.6)
    lattice = [(i, j) for i in range(-2, 3) for j in range(-2, 3) if (i, j) != (0, 0) and math.hypot(i, j) * 0.6 <= 1.2]
    assert len(expanded) == 1 + len(lattice)
    assert len(expansion_offsets(1.2, 0.6)) == len(lattice)
    assert np.all(np.hypot(*expanded.positions.T) <= 1.2 + 1e-9)


def test_expanded_copies_decay_with_the_variance_floor():
    emap = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=(2.0, 1.0), o_var=UNIT)], Layer.OBJECT)
    expanded = expand_centers(emap, 0.4, 0.4)
    assert len(expanded) == 5
    w = math.exp(-0.16 / 0.02)
    for o_cls, o_var in zip(expanded.o_cls[1:], expanded.o_var[1:]):
        np.testing.assert_allclose(o_cls, [2.0 * w, 1.0 * w])
        np.testing.assert_array_equal(o_var, UNIT)


def test_source_decay_widens_with_the_source_variance():
    emap = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=(2.0, 1.0), o_var=UNIT)], Layer.OBJECT)
    expanded = expand_centers(emap, 0.4, 0.4, decay="source")
    for pos, o_cls in zip(expanded.positions[1:], expanded.o_cls[1:]):
        w = math.exp(-0.5 * float(pos @ pos) / 1.01)
        np.testing.assert_allclose(o_cls, [2.0 * w, 1.0 * w])
    # both readings agree once the source has no variance of its own
    bare = EvidentialMap.from_centers([center(0.0, 0.0, o_cls=(2.0, 1.0))], Layer.OBJECT)
    np.testing.assert_allclose(
        expand_centers(bare, 0.4, 0.4, decay="source").o_cls, expand_centers(bare, 0.4, 0.4).o_cls, rtol=1e-12
    )


def test_expansion_keeps_one_center_per_lattice_cell(rng):
    emap = random_map(rng, n=30)
    step = 0.4
    expanded = expand_centers(emap, 1.2, step)
    added = expanded.positions[len(emap):]
    keys = {tuple(k) for k in np.round(added / step).astype(int)}
    assert len(keys) == len(added)
    assert not keys & {tuple(k) for k in np.round(emap.positions / step).astype(int)}
    np.testing.assert_array_equal(expanded.positions[: len(emap)], emap.positions)


def test_expansion_never_lowers_evidence(rng):
    emap = random_map(rng, n=30)
    expanded = expand_centers(emap, 1.2, 0.4)
    queries = rng.uniform(-9.0, 9.0, size=(300, 2))
    for p in queries:
        before, _ = evidence_at(emap, p)
        after, _ = evidence_at(expanded, p)
        assert np.all(after >= before - 1e-12)


# ---------- construction ----------

def test_one_point_cloud_gives_one_center():
    cloud = PointCloud.from_xyz(np.array([[1.1, -2.3, -1.9]]), np.array([0.4]), np.array([PointLabel.ROAD]))
    emap = build_from_cloud(cloud, Layer.ROAD, MapInit())
    assert len(emap) == 1
    np.testing.assert_allclose(emap.positions[0], [1.1, -2.3])


def test_zero_initial_evidence_means_full_uncertainty(rng):
    xyz = np.column_stack([rng.uniform(-5, 5, 200), rng.uniform(-5, 5, 200), np.full(200, -1.9)])
    cloud = PointCloud.from_xyz(xyz, np.full(200, 0.5), np.zeros(200))
    emap = build_from_cloud(cloud, Layer.ROAD, MapInit(o_cls=(0.0, 0.0)))
    raster = rasterize(emap, GridSpec.centered(6.0, 0.4))
    assert raster.observed.any()
    assert np.all(raster.u == 1.0)


def test_center_count_matches_voxel_keys(rng):
    xyz = np.column_stack([rng.uniform(-5, 5, 500), rng.uniform(-5, 5, 500), rng.uniform(-2, 0, 500)])
    labels = rng.integers(0, 3, 500)
    cloud = PointCloud.from_xyz(xyz, np.full(500, 0.5), labels)
    emap = build_from_cloud(cloud, Layer.ROAD, MapInit(), voxel=0.4)
    assert len(emap) == len({tuple(k) for k in np.floor(xyz[:, :2] / 0.4).astype(int)})


def test_per_label_init_and_free_space_exclusion():
    xyz = np.array([[0.1, 0.1, -1.9], [5.1, 0.1, -1.0], [9.1, 0.1, -1.9]])
    intensity = np.array([0.5, 0.5, FREE_SPACE_INTENSITY])
    labels = np.array([PointLabel.ROAD, PointLabel.VEHICLE, PointLabel.ROAD])
    cloud = PointCloud.from_xyz(xyz, intensity, labels)
    init = MapInit(mode="per_label", o_cls=(2.0, 4.0), off_ratio=0.5)

    road = build_from_cloud(cloud, Layer.ROAD, init)
    assert len(road) == 3
    np.testing.assert_allclose(road.o_cls, [[2.0, 2.0], [1.0, 4.0], [2.0, 2.0]])

    objects = build_from_cloud(cloud, Layer.OBJECT, init)
    assert len(objects) == 2
    np.testing.assert_allclose(objects.o_cls, [[1.0, 4.0], [2.0, 2.0]])


def test_only_free_space_has_no_object_centers():
    cloud = PointCloud.from_xyz(np.array([[3.0, 0.0, -1.9]]), np.array([FREE_SPACE_INTENSITY]), np.array([0]))
    with pytest.raises(NoObservableCentersError):
        build_from_cloud(cloud, Layer.OBJECT, MapInit())


def test_subsample_is_seeded(rng):
    emap = random_map(rng, n=100)
    a = subsample_centers(emap, 30, np.random.default_rng(4))
    b = subsample_centers(emap, 30, np.random.default_rng(4))
    assert len(a) == 30
    np.testing.assert_array_equal(a.positions, b.positions)
    assert subsample_centers(emap, None, np.random.default_rng(4)) is emap


def test_snapshot_roundtrip(tmp_path, rng):
    emap = random_map(rng)
    path = write_snapshot(emap, tmp_path / "map.csv")
    back = read_snapshot(path, Layer.ROAD)
    np.testing.assert_array_equal(back.positions, emap.positions)
    np.testing.assert_array_equal(back.o_cls, emap.o_cls)
    np.testing.assert_array_equal(back.o_var, emap.o_var)
