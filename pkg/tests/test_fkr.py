import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmseq.errors import FormatError, InputError
from mmseq.fkr import (
    MAGIC,
    FkrDatabase,
    VoxelGrid,
    bounding_directions,
    build_fkr,
    default_region,
    gap_indices,
    load_fkr,
    read_fkr,
    save_fkr,
    write_fkr,
)
from mmseq.kinematics import SphereModel, TaskPoint, default_chain, ik_solutions

SPHERE = SphereModel((0.1, -0.05, 0.3), 0.25, 0.6)
REGION = (np.array([-0.2, -0.4, 0.0]), np.array([0.6, 0.4, 0.8]))


def shell_oracle(grid, model):
    c = grid.centers()
    r = np.linalg.norm(c - np.array(model.shoulder), axis=1)
    return ((r >= model.r_min) & (r <= model.r_max)).reshape(grid.dims)


def test_bounding_directions_theta_zero_collapses():
    np.testing.assert_array_equal(bounding_directions(0.0), [[1.0, 0.0, 0.0]])


def test_bounding_directions_ten_degrees():
    expected = [
        [0.9848, 0.0, 0.1736],
        [0.9848, 0.0, -0.1736],
        [0.9848, 0.1736, 0.0],
        [0.9848, -0.1736, 0.0],
    ]
    np.testing.assert_allclose(bounding_directions(math.radians(10)), expected, atol=5e-5)


@given(st.floats(1e-6, math.pi / 2 - 1e-6))
def test_bounding_directions_unit_and_at_theta(theta):
    d = bounding_directions(theta)
    assert d.shape == (4, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.arccos(np.clip(d[:, 0], -1, 1)), theta, atol=1e-7)


@pytest.mark.parametrize("theta", [-0.1, math.pi / 2, 2.0])
def test_bounding_directions_range(theta):
    with pytest.raises(InputError):
        bounding_directions(theta)


@pytest.mark.parametrize("res", [0.05, 0.08, 0.13])
def test_sphere_model_is_exact(res):
    db = build_fkr(SPHERE, REGION, res, theta=math.radians(10))
    np.testing.assert_array_equal(db.grid.occupancy, shell_oracle(db.grid, SPHERE))
    assert db.count > 0


def test_sphere_model_direction_blind():
    a = build_fkr(SPHERE, REGION, 0.08, theta=math.radians(30))
    b = build_fkr(SPHERE, REGION, 0.08, theta=math.radians(5))
    np.testing.assert_array_equal(a.grid.occupancy, b.grid.occupancy)


class _OneSided:
    """Reaches everything, but only when approaching along +x."""

    identifier = "one-sided"

    def reachable(self, positions, directions, seeds, **kw):
        return np.asarray(directions)[:, 0] > 0.5


def test_opposite_directions_give_empty_database():
    db = build_fkr(_OneSided(), REGION, 0.1, r_ext=[[1, 0, 0], [-1, 0, 0]])
    assert db.count == 0
    db = build_fkr(_OneSided(), REGION, 0.1, r_ext=[[1, 0, 0]])
    assert db.count == db.grid.occupancy.size


def test_zero_volume_region_rejected():
    with pytest.raises(InputError):
        build_fkr(SPHERE, (np.zeros(3), np.array([1.0, 0.0, 1.0])), 0.1, theta=0.1)


def test_order_independent_on_arm():
    chain = default_chain()
    region = (np.array([0.3, -0.2, 0.6]), np.array([0.7, 0.2, 1.0]))
    a = build_fkr(chain, region, 0.2, theta=math.radians(10), seed=4)
    n = int(np.prod(a.grid.dims))
    perm = np.random.default_rng(1).permutation(n)
    b = build_fkr(chain, region, 0.2, theta=math.radians(10), seed=4, order=perm, chunk_size=3)
    assert a == b


def test_marked_voxels_have_ik_for_every_direction():
    chain = default_chain()
    region = (np.array([0.3, -0.2, 0.6]), np.array([0.7, 0.2, 1.0]))
    db = build_fkr(chain, region, 0.2, theta=math.radians(10), seed=4)
    assert db.count > 0
    for c in db.grid.centers(db.grid.marked_indices()):
        for d in db.r_ext:
            assert len(ik_solutions(chain, TaskPoint(c, d), restarts=8, seed=11)) > 0


def test_adding_direction_never_marks_more():
    chain = default_chain()
    region = (np.array([0.2, -0.3, 0.5]), np.array([0.8, 0.3, 1.1]))
    dirs = bounding_directions(math.radians(10))
    few = build_fkr(chain, region, 0.2, r_ext=dirs[:2], seed=2)
    more = build_fkr(chain, region, 0.2, r_ext=np.vstack([dirs[:2], [[0.0, 0.0, -1.0]]]), seed=2)
    assert not np.any(more.grid.occupancy & ~few.grid.occupancy)


def test_default_region_is_top_front_quarter():
    chain = default_chain()
    lo, hi = default_region(chain)
    assert lo[0] == 0 and lo[2] == pytest.approx(chain.d[0])
    assert hi[1] == -lo[1] and hi[0] > 0


def _sample_db(occ_seed=0, dims=(3, 4, 5)):
    rng = np.random.default_rng(occ_seed)
    grid = VoxelGrid([0.1, -0.2, 0.3], 0.04, dims, rng.random(dims) < 0.4)
    return FkrDatabase(grid, bounding_directions(0.2), 0.2, "chain-x")


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.tuples(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9)))
def test_round_trip(seed, dims):
    db = _sample_db(seed, dims)
    assert load_fkr(save_fkr(db)) == db


def test_empty_occupancy_round_trip(tmp_path):
    grid = VoxelGrid([0, 0, 0], 0.5, (2, 2, 2), np.zeros(8, dtype=bool))
    db = FkrDatabase(grid, [[1, 0, 0]], 0.0, "")
    write_fkr(db, tmp_path / "e.fkr")
    assert read_fkr(tmp_path / "e.fkr") == db


def test_corrupt_data_detected():
    data = save_fkr(_sample_db())
    with pytest.raises(FormatError, match="magic"):
        load_fkr(b"XXXXXXXX" + data[len(MAGIC):])
    with pytest.raises(FormatError, match="version"):
        load_fkr(MAGIC + struct.pack("<I", 99) + data[len(MAGIC) + 4:])
    with pytest.raises(FormatError, match="truncated"):
        load_fkr(data[:-1])
    with pytest.raises(FormatError, match="trailing"):
        load_fkr(data + b"\0")


def test_bundled_database_header():
    from importlib import resources

    db = load_fkr(resources.files("mmseq.data").joinpath("generic6r_t10_r004.fkr").read_bytes())
    assert db.chain_id == default_chain().identifier
    assert db.grid.resolution == 0.04
    assert db.theta == pytest.approx(math.radians(10))
    assert db.count > 1000


class _FlakyBall:
    """Solid ball, but IK at the center voxel only succeeds with a large restart budget."""

    identifier = "flaky"

    def __init__(self, center):
        self.center = np.asarray(center, dtype=float)
        self.budgets = []

    def reachable(self, positions, directions, seeds, roll_samples=8, restarts=4, **kw):
        self.budgets.append(restarts)
        p = np.asarray(positions, dtype=float)
        inside = np.linalg.norm(p, axis=1) <= 0.5
        miss = np.all(np.abs(p - self.center) < 1e-9, axis=1) & (restarts < 32)
        return inside & ~miss


def test_recheck_fills_ik_miss_inside_hull():
    region = (np.array([-0.5, -0.5, -0.5]), np.array([0.5, 0.5, 0.5]))
    center = np.array([0.05, 0.05, 0.05])
    flaky = _FlakyBall(center)
    db0 = build_fkr(flaky, region, 0.1, theta=0.0, recheck_rounds=0)
    assert not db0.grid.is_marked(center[None])[0]
    np.testing.assert_array_equal(gap_indices(db0.grid), db0.grid.index_of(center[None]))
    db = build_fkr(_FlakyBall(center), region, 0.1, theta=0.0)
    assert db.grid.is_marked(center[None])[0]
    assert len(gap_indices(db.grid)) == 0
    assert db.count == db0.count + 1


def test_recheck_keeps_true_cavity():
    model = SphereModel(r_min=0.3, r_max=0.8)
    grid = VoxelGrid.empty([-0.8] * 3, [0.8] * 3, 0.1)
    db = build_fkr(model, (grid.origin, grid.origin + 1.6), 0.1, theta=0.0)
    np.testing.assert_array_equal(db.grid.occupancy, shell_oracle(grid, model))
    assert len(gap_indices(db.grid)) > 0
