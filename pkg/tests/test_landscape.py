import numpy as np
import pytest

from slt_ga import landscape, net
from slt_ga.datasets import Dataset
from slt_ga.errors import ConfigError, NumericsError


def setup(seed=0, widths=(2, 3, 2), n=12):
    rng = np.random.default_rng(seed)
    params = net.init_network(net.NetworkArch(widths), net.Uniform(-1, 1), seed)
    data = Dataset(rng.normal(size=(n, widths[0])), rng.integers(0, widths[-1], n), widths[-1])
    return params, data


def loss_at(arch, data, theta):
    return net.cross_entropy(net.ParamVector.from_flat(arch, theta), data)


def fd_hessian(arch, data, theta, h=1e-4):
    """Second differences of the loss itself (no gradients involved)."""
    n = theta.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei, ej = np.zeros(n), np.zeros(n)
            ei[i], ej[j] = h, h
            v = (loss_at(arch, data, theta + ei + ej) - loss_at(arch, data, theta + ei - ej)
                 - loss_at(arch, data, theta - ei + ej) + loss_at(arch, data, theta - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def far_from_kinks(params, data, margin=0.05):
    h = data.features
    layers = list(params.layers())
    for w, b in layers[:-1]:
        pre = h @ w + b
        if np.min(np.abs(pre)) < margin:
            return False
        h = np.maximum(pre, 0)
    return True


def smooth_tiny(seed_start=0):
    seed = seed_start
    while True:
        params, data = setup(seed, (2, 2, 2), 8)
        if far_from_kinks(params, data):
            return params, data
        seed += 1


# -- directions --------------------------------------------------------------------------


def test_directions_seeded():
    a1, a2 = landscape.sample_directions(50, 3)
    b1, b2 = landscape.sample_directions(50, 3)
    assert np.array_equal(a1, b1) and np.array_equal(a2, b2)
    assert not np.array_equal(a1, a2)


def test_direction_norm_concentrates():
    d1, d2 = landscape.sample_directions(10_000, 0)
    for d in (d1, d2):
        assert 0.95 <= np.linalg.norm(d) / 100 <= 1.05


def test_layer_normalized_blocks():
    params, _ = setup(1, (3, 4, 2))
    d = landscape.random_direction(params.arch.param_count, 5, reference=params, layer_normalize=True)
    w = params.flat()
    for idx in landscape._blocks(params.arch):
        assert abs(np.linalg.norm(d[idx]) - np.linalg.norm(w[idx])) <= 1e-12
    with pytest.raises(ConfigError):
        landscape.random_direction(10, 0, layer_normalize=True)


def test_restrict_to_active():
    params, _ = setup(1)
    mask = np.zeros(params.arch.weight_count, bool)
    mask[::2] = True
    d = landscape.random_direction(params.arch.param_count, 2, active_mask=mask)
    assert not d[: mask.size][~mask].any()
    assert d[mask.size :].all()


# -- grids ------------------------------------------------------------------------------------


def test_center_equals_direct_metric():
    params, data = setup(2)
    mask = np.random.default_rng(0).random(params.arch.weight_count) < 0.5
    w_s = params.apply_mask(mask)
    d1, d2 = landscape.sample_directions(params.arch.param_count, 7)
    for metric, fn in ((landscape.LOSS, net.cross_entropy), (landscape.ACCURACY, net.accuracy)):
        grid = landscape.landscape_grid(w_s, d1, d2, -1, 1, 51, metric, data)
        assert grid.center() == fn(params, data, mask)


def test_zero_directions_constant_grid():
    params, data = setup(3)
    z = np.zeros(params.arch.param_count)
    grid = landscape.landscape_grid(params, z, z, -1, 1, 5, landscape.LOSS, data)
    assert np.all(grid.values == grid.values[0, 0])


def test_small_grid_pointwise():
    params, data = setup(4)
    d1, d2 = landscape.sample_directions(params.arch.param_count, 1)
    grid = landscape.landscape_grid(params, d1, d2, -0.5, 0.5, 3, landscape.LOSS, data)
    base = params.flat()
    for i, a in enumerate(grid.deltas):
        for j, b in enumerate(grid.etas):
            assert grid.values[i, j] == loss_at(params.arch, data, base + (a * d1 + b * d2))
    assert grid.deltas.tolist() == [-0.5, 0.0, 0.5]


def test_swapped_directions_transpose():
    params, data = setup(5)
    d1, d2 = landscape.sample_directions(params.arch.param_count, 2)
    g = landscape.landscape_grid(params, d1, d2, -1, 1, 7, landscape.LOSS, data)
    t = landscape.landscape_grid(params, d2, d1, -1, 1, 7, landscape.LOSS, data)
    assert np.array_equal(g.values, t.values.T)


def test_grid_export():
    params, data = setup(6)
    d1, d2 = landscape.sample_directions(params.arch.param_count, 4)
    g = landscape.landscape_grid(params, d1, d2, -1, 1, 3, landscape.ACCURACY, data, 4, 5)
    lines = g.to_csv().splitlines()
    assert lines[0] == "delta,eta,value" and len(lines) == 10
    assert g.header() == {"metric": "accuracy", "d1_seed": 4, "d2_seed": 5, "range": [-1.0, 1.0], "resolution": 3}


@pytest.mark.parametrize("res,lo,hi", [(1, -1, 1), (5, 1, 1)])
def test_grid_bad_axis(res, lo, hi):
    with pytest.raises(ConfigError):
        landscape.grid_axis(lo, hi, res)


# -- Hessian probes -------------------------------------------------------------------------------


def test_hvp_exact_on_quadratic():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(6, 6))
    A = m @ m.T
    w = rng.normal(size=6)
    v = rng.normal(size=6)
    hv = landscape.fd_hvp(lambda t: A @ t, w, v)
    assert np.allclose(hv, A @ v, rtol=0, atol=1e-6)
    assert np.allclose(landscape.fd_hvp(lambda t: A @ t, w, 2 * v), 2 * hv, rtol=0, atol=1e-6)


def test_hvp_zero_vector():
    with pytest.raises(NumericsError):
        landscape.fd_hvp(lambda t: t, np.ones(3), np.zeros(3))


def test_hvp_matches_fd_hessian_on_tiny_net():
    params, data = smooth_tiny()
    theta = params.flat()
    H = fd_hessian(params.arch, data, theta)
    v = np.random.default_rng(1).normal(size=theta.size)
    hv = landscape.hessian_vector_product(params, v, data)
    assert np.linalg.norm(hv - H @ v) / np.linalg.norm(H @ v) < 1e-4


def test_hvp_linearity_on_net():
    params, data = smooth_tiny(10)
    rng = np.random.default_rng(2)
    u, v = rng.normal(size=(2, params.arch.param_count))
    lhs = landscape.hessian_vector_product(params, 2 * u - 3 * v, data)
    rhs = 2 * landscape.hessian_vector_product(params, u, data) - 3 * landscape.hessian_vector_product(params, v, data)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-6)


def test_power_eigs_on_injected_quadratic():
    A = np.diag([5.0, 1.0, 0.1])
    probe = landscape.power_eigs(lambda v: landscape.fd_hvp(lambda t: A @ t, np.zeros(3), v), 3, 3, 2000, 1e-10, 0)
    assert np.allclose(probe.eigenvalues, [5.0, 1.0, 0.1], rtol=0, atol=1e-6)
    assert probe.converged.all() and np.all(probe.residuals <= 1e-10)


def test_top_eigenvalues_vs_dense():
    params, data = smooth_tiny(20)
    H = fd_hessian(params.arch, data, params.flat())
    ref = np.linalg.eigvalsh((H + H.T) / 2)
    ref = ref[np.argsort(-np.abs(ref))][:3]
    probe = landscape.top_eigenvalues(params, data, 3, 5000, 1e-9, 0)
    assert np.allclose(probe.eigenvalues, ref, rtol=1e-3, atol=1e-7)
    for r, ok in zip(probe.residuals, probe.converged):
        assert not ok or r <= 1e-9


def test_power_breakdown():
    with pytest.raises(NumericsError):
        landscape.power_eigs(lambda v: v, 2, 3, 10, 1e-8, 0)
    with pytest.raises(ConfigError):
        landscape.power_eigs(lambda v: v, 2, 0)
