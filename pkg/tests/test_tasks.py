import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ictxot import tasks
from ictxot.linalg import rotation2
from ictxot.tasks import (
    COMMON_FRAME,
    DIAG_COV,
    ISO_COV,
    MEAN_SHIFT,
    TaskFamilySpec,
    TaskSet,
    TaskSpecError,
    make_task,
    ot_map_oracle,
    sample_points,
    sample_task,
    stream,
    w2_identity_to_gaussian,
)


def test_mean_shift_family():
    spec = TaskFamilySpec(MEAN_SHIFT, 2, mean_box=(4, 6))
    for i in range(200):
        t = sample_task(spec, stream(0, "task", i))
        assert np.all((t.mean >= 4) & (t.mean <= 6))
        np.testing.assert_array_equal(t.cov, np.eye(2))


def test_diag_cov_family():
    spec = TaskFamilySpec(DIAG_COV, 2, eig_interval=(1, 3))
    for i in range(200):
        t = sample_task(spec, stream(0, "task", i))
        np.testing.assert_array_equal(t.mean, 0.0)
        assert np.all((np.diag(t.cov) >= 1) & (np.diag(t.cov) <= 3))
        assert t.cov[0, 1] == 0.0


def test_iso_cov_family():
    spec = TaskFamilySpec(ISO_COV, 2, eig_interval=(1, 3))
    t = sample_task(spec, stream(0, "task", 7))
    np.testing.assert_array_equal(t.cov, t.cov[0, 0] * np.eye(2))
    assert 1 <= t.cov[0, 0] <= 3


def test_common_frame_family():
    u = rotation2(0.7)
    t = sample_task(TaskFamilySpec(COMMON_FRAME, 2, frame=u), stream(3, "task", 0))
    np.testing.assert_allclose(u.T @ t.cov @ u, np.diag(t.eigenvalues), atol=1e-12)


@pytest.mark.parametrize("kw", [
    {"eig_interval": (3, 1)},
    {"eig_interval": (0.0, 1.0)},
    {"mean_box": (6, 4)},
    {"dim": 0},
])
def test_bad_specs(kw):
    with pytest.raises(TaskSpecError):
        TaskFamilySpec(DIAG_COV, **kw)


def test_frame_must_be_orthogonal():
    with pytest.raises(TaskSpecError):
        TaskFamilySpec(COMMON_FRAME, 2, frame=np.ones((2, 2)))
    with pytest.raises(TaskSpecError):
        TaskFamilySpec(COMMON_FRAME, 2)


@given(st.sampled_from([DIAG_COV, ISO_COV, COMMON_FRAME, MEAN_SHIFT]), st.integers(0, 10**6),
       st.floats(0.1, 5), st.floats(0, 5))
def test_sampled_tasks_respect_spec(kind, idx, lo, width):
    frame = rotation2(0.25) if kind == COMMON_FRAME else None
    spec = TaskFamilySpec(kind, 2, eig_interval=(lo, lo + width), frame=frame)
    t = sample_task(spec, stream(1, "task", idx))
    np.testing.assert_allclose(t.cov, (t.frame * t.eigenvalues) @ t.frame.T, atol=1e-10)
    if kind != MEAN_SHIFT:
        assert np.all((t.eigenvalues >= lo) & (t.eigenvalues <= lo + width))


def test_many_draws_inside_bounds():
    spec = TaskFamilySpec(DIAG_COV, 3, eig_interval=(0.5, 2.0))
    eigs = np.array([sample_task(spec, stream(9, "task", i)).eigenvalues for i in range(10_000)])
    assert eigs.min() >= 0.5 and eigs.max() <= 2.0


def test_law_of_large_numbers():
    t = make_task(np.zeros(2), [1.0, 1.0])
    y = sample_points(t, 100_000, stream(0, "eval", 0))
    assert np.linalg.norm(y.T @ y / y.shape[0] - np.eye(2)) < 0.05


def test_single_point_and_determinism():
    t = make_task([1.0, 2.0], [2.0, 3.0])
    one = sample_points(t, 1, stream(5, "prompt", 1))
    assert one.shape == (1, 2) and np.all(np.isfinite(one))
    a = sample_points(t, 50, stream(5, "prompt", 1))
    b = sample_points(t, 50, stream(5, "prompt", 1))
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        sample_points(t, 0, stream(5, "prompt", 1))


def test_streams_are_independent_by_purpose():
    a = stream(0, "prompt", 1).random(4)
    b = stream(0, "eval", 1).random(4)
    c = stream(0, "prompt", 2).random(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_box_muller_moments():
    z = tasks.box_muller(stream(0, "eval", 99), 200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01 and abs(z.var() - 1.0) < 0.01


def test_ot_map_mean_shift():
    m = ot_map_oracle(make_task([5.0, 5.0], [1.0, 1.0]))
    np.testing.assert_allclose(m.matrix, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(m(np.array([[1.0, -1.0]])), [[6.0, 4.0]])


def test_ot_map_diagonal():
    m = ot_map_oracle(make_task([0.0, 0.0], [4.0, 9.0]))
    np.testing.assert_allclose(m.matrix, np.diag([2.0, 3.0]), atol=1e-14)
    np.testing.assert_array_equal(m.offset, 0.0)


def test_ot_map_pushforward():
    t = make_task([1.0, -2.0], [2.0, 0.5], rotation2(0.4))
    x = tasks.sample_source(2, 100_000, stream(0, "eval", 1))
    y = ot_map_oracle(t)(x)
    assert np.linalg.norm(y.mean(axis=0) - t.mean) < 0.02
    assert np.linalg.norm(np.cov(y.T) - t.cov) < 0.05


def test_w2_examples():
    assert w2_identity_to_gaussian(make_task(np.zeros(2), [1.0, 1.0])) == 0.0
    assert w2_identity_to_gaussian(make_task(np.zeros(1), [4.0])) == 1.0
    with pytest.raises(ValueError):
        w2_identity_to_gaussian(make_task([1.0], [1.0]))


def test_w2_monte_carlo():
    t = make_task(np.zeros(2), [0.5, 2.5], rotation2(1.1))
    x = tasks.sample_source(2, 200_000, stream(2, "eval", 0))
    cost = np.sum((x @ t.sqrt_cov - x) ** 2, axis=1)
    se = cost.std() / np.sqrt(cost.size)
    assert abs(cost.mean() - w2_identity_to_gaussian(t)) < 3 * se


@given(st.lists(st.floats(0.05, 10), min_size=1, max_size=4))
def test_w2_nonnegative_zero_iff_identity(eigs):
    v = w2_identity_to_gaussian(make_task(np.zeros(len(eigs)), eigs))
    assert v >= 0
    assert (v == 0) == all(e == 1.0 for e in eigs)


def test_prompt_validation():
    with pytest.raises(ValueError):
        tasks.Prompt(np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        tasks.Prompt(np.full((1, 2), np.inf), np.zeros((1, 2)))
    p = tasks.make_prompt(make_task([0.0, 0.0], [1.0, 2.0]), 7, stream(0, "prompt", 0))
    assert p.length == 7


def test_task_set_json_replay():
    ts = TaskSet(TaskFamilySpec(COMMON_FRAME, 2, frame=rotation2(0.2)), seed=11, count=5, offset=3)
    again = TaskSet.from_json(ts.to_json())
    for a, b in zip(ts, again):
        assert a.seed_id == b.seed_id
        np.testing.assert_array_equal(a.cov, b.cov)
    bad = ts.to_dict()
    bad["tasks"][0]["eigenvalues"][0] += 1.0
    with pytest.raises(ValueError):
        TaskSet.from_dict(bad)
