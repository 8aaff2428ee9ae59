import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmseq.errors import FormatError, InputError
from mmseq.geometry import angle_between
from mmseq.kinematics import (
    ANG_TOL,
    DEDUP_TOL,
    POS_TOL,
    KinematicChain,
    SphereModel,
    TaskPoint,
    default_chain,
    fk_batch,
    forward_kinematics,
    ik_solutions,
    ik_solutions_batch,
    load_chain,
)
from oracles import fk_homogeneous

CHAIN = default_chain()


def configs():
    return st.tuples(*[st.floats(float(lo), float(hi)) for lo, hi in zip(CHAIN.lower, CHAIN.upper)])


def test_home_pose_matches_frozen_fixture(frozen):
    t = forward_kinematics(CHAIN, np.zeros(6))
    np.testing.assert_allclose(t.as_matrix(), np.array(frozen["home_pose"]), atol=1e-12)


@given(configs())
def test_fk_matches_homogeneous_oracle(q):
    t = forward_kinematics(CHAIN, q)
    np.testing.assert_allclose(t.as_matrix(), fk_homogeneous(CHAIN.to_dict(), q), atol=1e-12)


@given(configs(), st.floats(-3.1, 3.1))
def test_last_joint_spins_about_tool_axis(q, q6):
    q2 = list(q)
    q2[5] = q6
    a, b = forward_kinematics(CHAIN, q), forward_kinematics(CHAIN, q2)
    np.testing.assert_allclose(a.translation, b.translation, atol=1e-12)
    np.testing.assert_allclose(a.rotation[:, 2], b.rotation[:, 2], atol=1e-12)


def test_fk_rejects_out_of_limit_config():
    q = np.zeros(6)
    q[1] = CHAIN.upper[1] + 0.1
    with pytest.raises(InputError):
        forward_kinematics(CHAIN, q)


def test_fk_batch_agrees_with_single():
    rng = np.random.default_rng(0)
    qs = rng.uniform(CHAIN.lower, CHAIN.upper, size=(20, 6))
    rots, poss = fk_batch(CHAIN, qs)
    for k, q in enumerate(qs):
        t = forward_kinematics(CHAIN, q)
        np.testing.assert_array_equal(rots[k], t.rotation)
        np.testing.assert_array_equal(poss[k], t.translation)


def _assert_solutions_valid(sols, target):
    assert sols.ndim == 2 and sols.shape[1] == 6
    for q in sols:
        t = forward_kinematics(CHAIN, q)
        assert np.linalg.norm(t.translation - target.position) <= POS_TOL
        assert angle_between(t.rotation[:, 2], target.direction) <= ANG_TOL
    # deduplicated and lexicographically sorted
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            assert np.max(np.abs(sols[i] - sols[j])) > DEDUP_TOL
    keys = [tuple(q) for q in sols]
    assert keys == sorted(keys)


@settings(max_examples=15)
@given(configs(), st.integers(0, 1000))
def test_ik_round_trip(q0, seed):
    t = forward_kinematics(CHAIN, q0)
    target = TaskPoint(t.translation, t.rotation[:, 2])
    sols = ik_solutions(CHAIN, target, roll_samples=8, restarts=4, seed=seed)
    _assert_solutions_valid(sols, target)


def test_ik_finds_seeded_pose(frozen):
    target = TaskPoint(frozen["ik_target"]["position"], frozen["ik_target"]["direction"])
    sols = ik_solutions(CHAIN, target, seed=0)
    _assert_solutions_valid(sols, target)
    assert len(sols) >= 1


def test_ik_branch_count_against_dense_fixture(frozen):
    target = TaskPoint(frozen["ik_target"]["position"], frozen["ik_target"]["direction"])
    sols = ik_solutions(CHAIN, target, seed=0)
    dense = np.array(frozen["ik_dense_solutions"])
    assert frozen["ik_dense_count"] >= 2
    # at least two distinct arm branches (joints 1-3) are found
    branches = {tuple(np.round(q[:3], 1)) for q in sols}
    assert len(branches) >= 2
    # every default-budget solution is one the dense oracle also found
    for q in sols:
        assert np.min(np.max(np.abs(dense - q), axis=1)) <= 5 * DEDUP_TOL


def test_ik_unreachable_target_is_empty():
    sols = ik_solutions(CHAIN, TaskPoint([10.0, 0, 0], [1.0, 0, 0]))
    assert sols.shape == (0, 6)


def test_ik_deterministic():
    target = TaskPoint([0.5, 0.1, 0.8], [1.0, 0, 0])
    a = ik_solutions(CHAIN, target, seed=7)
    b = ik_solutions(CHAIN, target, seed=7)
    np.testing.assert_array_equal(a, b)


def test_ik_batch_equals_single():
    targets = [TaskPoint([0.5, y, 0.8], [1.0, 0, 0]) for y in (-0.2, 0.0, 0.2)]
    batch = ik_solutions_batch(CHAIN, targets, seeds=[1, 2, 3])
    for t, s, got in zip(targets, [1, 2, 3], batch):
        np.testing.assert_array_equal(got, ik_solutions(CHAIN, t, seed=s))


def test_ik_more_restarts_keeps_coverage():
    target = TaskPoint([0.55, -0.1, 0.75], [np.cos(0.17), 0.0, np.sin(0.17)])
    few = ik_solutions(CHAIN, target, restarts=2, seed=3)
    many = ik_solutions(CHAIN, target, restarts=4, seed=3)
    assert len(few) > 0
    for q in few:
        assert np.min(np.max(np.abs(many - q), axis=1)) <= DEDUP_TOL


def test_ik_rejects_bad_sampling_args():
    with pytest.raises(InputError):
        ik_solutions(CHAIN, TaskPoint([0.5, 0, 0.8], [1, 0, 0]), roll_samples=0)
    with pytest.raises(InputError):
        ik_solutions(CHAIN, TaskPoint([0.5, 0, 0.8], [1, 0, 0]), restarts=0)


def test_task_point_requires_unit_direction():
    with pytest.raises(InputError):
        TaskPoint([0, 0, 0], [1.0, 1.0, 0.0])


def test_chain_json_round_trip(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(CHAIN.to_dict()))
    c = load_chain(p)
    for f in ("a", "alpha", "d", "offset", "lower", "upper"):
        np.testing.assert_array_equal(getattr(c, f), getattr(CHAIN, f))


def test_chain_validation(tmp_path):
    doc = CHAIN.to_dict()
    doc["joints"] = doc["joints"][:5]
    with pytest.raises(InputError):
        KinematicChain.from_dict(doc)
    doc = CHAIN.to_dict()
    doc["joints"][0]["lower"] = 3.0
    with pytest.raises(InputError):
        KinematicChain.from_dict(doc)
    bad = tmp_path / "bad.json"
    bad.write_text('{"joints": [\n  {"a": 1,}\n]}')
    with pytest.raises(FormatError, match="line 2"):
        load_chain(bad)


def test_sphere_model_closed_form():
    m = SphereModel((0, 0, 0.5), 0.2, 0.8)
    pts = np.array([[0, 0, 0.5], [0.5, 0, 0.5], [0.9, 0, 0.5], [0.2, 0, 0.5]])
    np.testing.assert_array_equal(m.reachable(pts, np.tile([1, 0, 0], (4, 1)), [0] * 4), [False, True, False, True])
    assert len(m.ik_solutions(TaskPoint([0.5, 0, 0.5], [0, 1, 0]))) == 1
    assert len(m.ik_solutions(TaskPoint([0.0, 0, 0.5], [0, 1, 0]))) == 0
