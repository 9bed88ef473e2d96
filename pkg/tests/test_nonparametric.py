import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ictxot import autodiff as ad
from ictxot import mmd
from ictxot import nonparametric as npm
from ictxot.tasks import Prompt, make_task, sample_points, sample_source, stream

SMALL = npm.CrossAttnConfig(dim=2, hidden=16, heads=4, prompt_len=8)


def weights(seed=0, cfg=SMALL):
    w = npm.init_weights(cfg, seed)
    arrays = dict(w.arrays)
    r = np.random.default_rng(seed + 100)
    for k, a in arrays.items():
        if a.ndim == 1:
            arrays[k] = 0.1 * r.normal(size=a.shape)  # nonzero biases exercise every path
    return w.with_arrays(arrays)


def prompt(seed=0, s=8, d=2):
    r = np.random.default_rng(seed)
    return Prompt(r.normal(size=(s, d)), r.normal(2.0, 1.0, size=(s, d)))


def identity_weights(cfg):
    """Exact identity map: +/- ReLU pairs carry x through both MLPs, attention outputs are zeroed."""
    d, h = cfg.dim, cfg.hidden
    arrays = {k: np.zeros(s) for k, s in cfg.shapes().items()}
    for pre in ("src", "out"):
        w1 = np.zeros(arrays[f"{pre}_w1"].shape)
        w1[:d, :d] = np.eye(d)
        w1[:d, d:2 * d] = -np.eye(d)
        w2 = np.zeros(arrays[f"{pre}_w2"].shape)
        w2[:d, :d] = np.eye(d)
        w2[d:2 * d, :d] = -np.eye(d)
        arrays[f"{pre}_w1"], arrays[f"{pre}_w2"] = w1, w2
    return npm.NonparametricWeights(cfg, arrays)


def test_config_validation():
    with pytest.raises(ValueError):
        npm.CrossAttnConfig(hidden=10, heads=4)
    with pytest.raises(ValueError):
        npm.CrossAttnConfig(dim=0)
    assert npm.CrossAttnConfig().head_dim == 32


def test_weight_validation():
    arrays = dict(weights().arrays)
    arrays["sa_wq"] = np.zeros((3, 3))
    with pytest.raises(ValueError):
        npm.NonparametricWeights(SMALL, arrays)
    arrays = dict(weights().arrays)
    arrays["out_b2"] = np.array([np.nan, 0.0])
    with pytest.raises(ValueError):
        npm.NonparametricWeights(SMALL, arrays)


def test_zero_final_layer():
    w = weights()
    arrays = dict(w.arrays, out_w2=np.zeros((16, 2)), out_b2=np.zeros(2))
    out = npm.np_forward(w.with_arrays(arrays), prompt(), np.ones((5, 2)))
    np.testing.assert_array_equal(out, 0.0)


@given(st.integers(0, 2**31 - 1))
def test_prompt_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    w, p = weights(seed % 7), prompt(seed % 11)
    xq = r.normal(size=(6, 2))
    base = npm.np_forward(w, p, xq)
    joint = r.permutation(8)
    out = npm.np_forward(w, Prompt(p.source_samples[joint], p.target_samples[joint]), xq)
    np.testing.assert_allclose(out, base, atol=1e-10)
    out = npm.np_forward(w, Prompt(p.source_samples[r.permutation(8)], p.target_samples[r.permutation(8)]), xq)
    np.testing.assert_allclose(out, base, atol=1e-10)


def test_duplicated_prompt():
    w, p = weights(3), prompt(4)
    xq = np.random.default_rng(0).normal(size=(7, 2))
    doubled = Prompt(np.tile(p.source_samples, (2, 1)), np.tile(p.target_samples, (2, 1)))
    np.testing.assert_allclose(npm.np_forward(w, doubled, xq), npm.np_forward(w, p, xq), atol=1e-8)


def test_rows_depend_on_own_query_only():
    w, p = weights(1), prompt(2)
    xq = np.random.default_rng(5).normal(size=(4, 2))
    base = npm.np_forward(w, p, xq)
    moved = xq.copy()
    moved[2] += 3.0
    out = npm.np_forward(w, p, moved)
    np.testing.assert_array_equal(np.delete(out, 2, axis=0), np.delete(base, 2, axis=0))
    single = npm.np_forward(w, p, xq[1:2])
    np.testing.assert_allclose(single, base[1:2], atol=1e-13)


@pytest.mark.parametrize("s", [1, 3, 8, 50])
def test_variable_prompt_length(s):
    out = npm.np_forward(weights(), prompt(0, s), np.zeros((3, 2)))
    assert out.shape == (3, 2) and np.all(np.isfinite(out))


def test_dimension_errors():
    with pytest.raises(ad.ShapeError):
        npm.np_forward(weights(), prompt(0, 4, d=3), np.zeros((2, 3)))
    with pytest.raises(ad.ShapeError):
        npm.np_forward(weights(), prompt(), np.zeros((2, 3)))


def test_identity_network_loss():
    cfg = npm.CrossAttnConfig(dim=2, hidden=8, heads=2)
    w = identity_weights(cfg)
    task = make_task(np.zeros(2), [1.0, 1.0])
    xs = sample_source(2, 200, stream(0, "train_source", 0))
    ys = sample_points(task, 200, stream(0, "train_target", 0))
    p = Prompt(xs[:10], ys[:10])
    np.testing.assert_allclose(npm.np_forward(w, p, xs), xs, atol=1e-14)
    total, transport, penalty = npm.np_loss_parts(w, p, xs, ys, 3.0)
    assert transport < 1e-26
    assert abs(penalty) < 0.02
    assert total == pytest.approx(transport + 3.0 * mmd.mmd2_u(xs, ys))


def test_lambda_zero_is_mean_square_displacement():
    w, p = weights(2), prompt(3)
    r = np.random.default_rng(9)
    xs, ys = r.normal(size=(10, 2)), r.normal(size=(10, 2))
    pred = npm.np_forward(w, p, xs)
    assert npm.np_loss(w, p, xs, ys, 0.0) == pytest.approx(np.mean(np.sum((pred - xs) ** 2, axis=1)), rel=1e-14)


def test_two_sample_case_term_by_term():
    w, p = weights(4), prompt(5)
    xs = np.array([[0.3, -1.0], [1.2, 0.4]])
    ys = np.array([[4.0, 5.0], [5.5, 4.2]])
    pred = npm.np_forward(w, p, xs)
    transport = 0.5 * (np.sum((pred[0] - xs[0]) ** 2) + np.sum((pred[1] - xs[1]) ** 2))
    z = np.vstack([pred, ys])
    s0 = sum(np.sum((a - b) ** 2) for i, a in enumerate(z) for j, b in enumerate(z) if i != j) / (4 * 3)
    k = lambda a, b: mmd.kernel_eval(mmd.RBF5, a, b, s0)
    pen = (2 * k(pred[0], pred[1]) + 2 * k(ys[0], ys[1]) - 2 * k(pred[0], ys[1]) - 2 * k(pred[1], ys[0])) / 2
    assert npm.np_loss(w, p, xs, ys, 0.8) == pytest.approx(transport + 0.8 * pen, rel=1e-12)


def test_size_errors():
    w, p = weights(), prompt()
    with pytest.raises(mmd.SampleSizeError):
        npm.np_loss(w, p, np.zeros((1, 2)), np.zeros((1, 2)), 1.0)
    with pytest.raises(mmd.SampleSizeError):
        npm.np_loss(w, p, np.zeros((3, 2)), np.zeros((4, 2)), 1.0)
    with pytest.raises(ValueError):
        npm.np_forward(w, Prompt(np.zeros((0, 2)), np.zeros((0, 2))), np.zeros((1, 2)))


@pytest.mark.parametrize("lam", [0.0, 1.5])
def test_graph_matches_numeric_path(lam):
    w, p = weights(6), prompt(7)
    r = np.random.default_rng(1)
    xs, ys = r.normal(size=(9, 2)), r.normal(1.0, 1.0, size=(9, 2))
    value, _, (transport, penalty) = npm.loss_and_grad(w, p, xs, ys, lam)
    total, t2, p2 = npm.np_loss_parts(w, p, xs, ys, lam)
    assert value == pytest.approx(total, rel=1e-12)
    assert transport == pytest.approx(t2, rel=1e-12) and penalty == pytest.approx(p2, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("spec", [mmd.RBF5, mmd.QUADRATIC_KERNEL, mmd.KernelSpec(bandwidth=2.0)])
def test_mmd_graph(spec):
    r = np.random.default_rng(3)
    x, y = r.normal(size=(6, 2)), r.normal(0.5, 1.2, size=(6, 2))
    tape = ad.Tape()
    node = tape.param(x)
    out = npm.mmd2_u_graph(node, y, spec)
    assert float(out.value) == pytest.approx(mmd.mmd2_u(x, y, spec), rel=1e-12, abs=1e-15)
    tape.backward(out)
    f = lambda v: mmd.mmd2_u(v.reshape(6, 2), y, spec)
    assert ad.finite_diff_check(f, x.reshape(-1), node.grad) < 1e-6


def gradient_error(seed, lam=1.0, n_coords=None):
    w = weights(seed)
    p = prompt(seed + 1)
    r = np.random.default_rng(seed + 2)
    xs, ys = r.normal(size=(6, 2)), r.normal(3.0, 1.0, size=(6, 2))
    keys = SMALL.keys()
    _, grads, _ = npm.loss_and_grad(w, p, xs, ys, lam)
    f = lambda v: npm.np_loss(w.with_arrays(ad.unpack(v, w.arrays, keys)), p, xs, ys, lam)
    point = ad.pack(w.arrays, keys)
    coords = None if n_coords is None else r.choice(point.size, n_coords, replace=False)
    return ad.finite_diff_check(f, point, ad.pack(grads, keys), coords=coords)


@pytest.mark.parametrize("seed", range(3))
def test_gradient_all_coordinates(seed):
    assert gradient_error(seed) < 1e-4


def test_json_round_trip():
    w = weights(8)
    back = npm.NonparametricWeights.from_json(w.to_json())
    assert back.config == w.config
    for k in w.arrays:
        np.testing.assert_array_equal(back[k], w[k])
    assert '"shape"' in w.to_json()


def test_init_deterministic():
    a, b = npm.init_weights(SMALL, 5), npm.init_weights(SMALL, 5)
    assert a.to_json() == b.to_json()
    assert a.to_json() != npm.init_weights(SMALL, 6).to_json()


def test_displacement_spread():
    x = np.random.default_rng(0).normal(size=(50, 2))
    assert npm.displacement_spread(x + [5.0, 4.0], x) == pytest.approx(0.0, abs=1e-14)
    assert npm.displacement_spread(2 * x, x) == pytest.approx(np.sqrt(np.mean(np.sum((x - x.mean(0)) ** 2, 1))))
