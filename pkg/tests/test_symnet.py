import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiedgo.encoder import EncodingConfig, reflect_tensor
from tiedgo.symmetry import GROUP, IDENTITY, apply_point
from tiedgo.symnet import (
    Conv2D,
    Dense,
    InvalidTargetError,
    Network,
    NoLegalMoveError,
    OrbitMap,
    ShapeError,
    UnsupportedShapeError,
    backward,
    build_orbit_map_conv,
    build_orbit_map_dense,
    forward,
    masked_softmax,
    set_tying,
)
from tiedgo.symnet.network import masked_log_softmax
from tiedgo.trainer import DEFAULT_ARCH

LIB = EncodingConfig()


# -- independent orbit enumeration ---------------------------------------

def brute_orbits(points, act):
    """Partition ``points`` into orbits by closing each one under ``act(g, p)``."""
    remaining = set(points)
    orbits = []
    while remaining:
        p = min(remaining)
        orb = {act(g, p) for g in GROUP}
        orbits.append(orb)
        remaining -= orb
    return orbits


def conv_orbits(k):
    pts = [(r, c) for r in range(k) for c in range(k)]
    return brute_orbits(pts, lambda g, p: apply_point(*p, g, k))


def dense_orbits(n):
    pts = [((a, b), (c, d)) for a in range(n) for b in range(n) for c in range(n) for d in range(n)]
    return brute_orbits(pts, lambda g, pq: (apply_point(*pq[0], g, n), apply_point(*pq[1], g, n)))


def same_partition(orbit_map, orbits, index):
    ids = orbit_map.orbit_of
    for orb in orbits:
        got = {int(ids[index(p)]) for p in orb}
        if len(got) != 1:
            return False
    return orbit_map.orbit_count == len(orbits)


@pytest.mark.parametrize("k,count", [(1, 1), (3, 3), (5, 6), (7, 10)])
def test_conv_orbit_counts(k, count):
    assert len(conv_orbits(k)) == count
    om = build_orbit_map_conv(k)
    assert om.orbit_count == count
    assert same_partition(om, conv_orbits(k), lambda p: p[0] * k + p[1])


@pytest.mark.parametrize("k", [0, 2, 4])
def test_conv_even_kernel_rejected(k):
    with pytest.raises(UnsupportedShapeError):
        build_orbit_map_conv(k)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_dense_orbits_match_brute_force(n):
    w, b = build_orbit_map_dense((n, n), (1, n, n))
    m = n * n
    assert same_partition(w, dense_orbits(n), lambda pq: (pq[0][0] * n + pq[0][1]) * m + pq[1][0] * n + pq[1][1])
    assert same_partition(b, conv_orbits(n), lambda p: p[0] * n + p[1])


def test_dense_2x2_count():
    # 16 weights: (p, p) pairs, side-adjacent pairs and opposite corners
    w, _ = build_orbit_map_dense((2, 2), (1, 2, 2))
    assert w.orbit_count == len(dense_orbits(2)) == 3
    assert sorted(w.sizes) == [4, 4, 8]


def test_dense_rectangular_rejected():
    with pytest.raises(UnsupportedShapeError):
        build_orbit_map_dense((2, 3), (1, 2, 3))
    with pytest.raises(UnsupportedShapeError):
        build_orbit_map_dense((3, 3), (1, 5, 5))


def test_dense_19_reduction():
    w, b = build_orbit_map_dense((19, 19), (1, 19, 19))
    m = 361
    # exact count from Burnside's lemma over the 8 group elements
    fixed_pairs = [m * m]  # identity
    for g in GROUP[1:]:
        fixed = sum(1 for r in range(19) for c in range(19) if apply_point(r, c, g, 19) == (r, c))
        fixed_pairs.append(fixed * fixed)
    assert w.orbit_count == sum(fixed_pairs) // 8 == 16471
    assert w.orbit_count <= m * m / 7
    assert b.orbit_count == 55


@pytest.mark.parametrize("k", [1, 3, 5, 7, 9])
def test_orbit_invariance_and_sizes(k):
    om = build_orbit_map_conv(k)
    ids = om.orbit_of.reshape(k, k)
    for g in GROUP:
        for r in range(k):
            for c in range(k):
                assert ids[apply_point(r, c, g, k)] == ids[r, c]
    assert all(8 % s == 0 for s in om.sizes)
    assert om.sizes.sum() == k * k


def test_dense_orbit_sizes_divide_eight():
    w, b = build_orbit_map_dense((5, 5), (1, 5, 5))
    assert all(8 % s == 0 for s in w.sizes)
    assert all(8 % s == 0 for s in b.sizes)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1, 3, 5, 7]), st.integers(0, 2**31))
def test_expand_project_roundtrip(k, seed):
    om = build_orbit_map_conv(k)
    p = np.random.default_rng(seed).standard_normal((2, 3, om.orbit_count))
    raw = om.expand(p)
    assert np.allclose(om.project(raw), p, atol=1e-12)
    assert np.allclose(om.expand(om.project(raw)), raw, atol=1e-12)


def test_reduce_sums_over_members(rng):
    om = build_orbit_map_conv(5)
    g = rng.standard_normal((5, 5))
    red = om.reduce(g)
    for o, members in enumerate(om.orbit_members):
        assert np.isclose(red[o], g.ravel()[members].sum())


def test_identity_orbit_map():
    om = OrbitMap.identity((3, 3))
    assert om.is_identity and om.orbit_count == 9


# -- layers -------------------------------------------------------------------

def test_conv_unit_1x1_sums_channels(rng):
    layer = Conv2D(3, 1, 1, activation="linear", dtype=np.float64)
    layer.weight[:] = 1
    x = rng.standard_normal((2, 3, 6, 6))
    assert np.allclose(layer.forward(x)[:, 0], x.sum(axis=1))


def test_conv_zero_weights_gives_bias(rng):
    layer = Conv2D(2, 4, 3, activation="linear", dtype=np.float64)
    layer.bias[:] = np.arange(4)
    y = layer.forward(rng.standard_normal((1, 2, 7, 7)))
    assert y.shape == (1, 4, 7, 7)
    assert np.array_equal(y[0], np.broadcast_to(np.arange(4.0)[:, None, None], (4, 7, 7)))


def test_conv_matches_direct_loop(rng):
    layer = Conv2D(2, 3, 3, tied=False, activation="linear", dtype=np.float64)
    layer.weight = rng.standard_normal(layer.weight.shape)
    layer.bias = rng.standard_normal(3)
    x = rng.standard_normal((1, 2, 5, 5))
    y = layer.forward(x)
    f = layer.filters()
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for r in range(5):
            for c in range(5):
                want = (xp[0, :, r:r + 3, c:c + 3] * f[o]).sum() + layer.bias[o]
                assert np.isclose(y[0, o, r, c], want)


def test_conv_shape_error(rng):
    with pytest.raises(ShapeError):
        Conv2D(3, 1, 3).forward(rng.standard_normal((1, 2, 5, 5)))


@pytest.mark.parametrize("g", GROUP)
def test_tied_conv_layer_equivariance(g, rng):
    layer = Conv2D(4, 5, 5, activation="relu")
    layer.weight = (0.1 * rng.standard_normal(layer.weight.shape)).astype(np.float32)
    layer.bias = (0.1 * rng.standard_normal(5)).astype(np.float32)
    x = rng.standard_normal((2, 4, 19, 19)).astype(np.float32)
    assert np.abs(layer.forward(reflect_tensor(x, g)) - reflect_tensor(layer.forward(x), g)).max() <= 1e-5


def test_tied_filters_are_symmetric(rng):
    layer = Conv2D(1, 2, 7)
    layer.weight = rng.standard_normal(layer.weight.shape).astype(np.float32)
    f = layer.filters()
    for g in GROUP:
        assert np.array_equal(reflect_tensor(f, g), f)


def test_untied_parameter_counts():
    assert Conv2D(1, 1, 7, tied=False).weight.shape[-1] == 49
    assert Conv2D(1, 1, 7, tied=True).weight.shape[-1] == 10
    tied = Network(DEFAULT_ARCH, LIB, tied=True)
    untied = set_tying(tied, False)
    assert not untied.tied and untied.arch == tied.arch
    assert tied.num_params <= untied.num_params / 7


# -- masked softmax -----------------------------------------------------------

def test_softmax_examples():
    assert np.allclose(masked_softmax([0.0, 0.0], [True, True]), [0.5, 0.5])
    assert np.array_equal(masked_softmax([5.0, 100.0], [True, False]), [1.0, 0.0])
    assert np.allclose(masked_softmax([np.log(1), np.log(3)], [True, True]), [0.25, 0.75])
    assert np.allclose(masked_softmax(np.zeros(361), np.ones(361, bool)), 1 / 361)


def test_softmax_empty_mask():
    with pytest.raises(NoLegalMoveError):
        masked_softmax(np.zeros((2, 4)), np.array([[True] * 4, [False] * 4]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_softmax_properties(seed, shift):
    r = np.random.default_rng(seed)
    z = r.standard_normal(361) * r.uniform(0.1, 30)
    m = r.random(361) < r.uniform(0.01, 1)
    m[r.integers(361)] = True
    p = masked_softmax(z, m)
    assert np.all(p[~m] == 0)
    assert abs(p[m].sum() - 1) <= 1e-6
    assert np.abs(masked_softmax(z + shift, m) - p).max() <= 1e-6


# -- networks -------------------------------------------------------------------

SMALL = [{"type": "conv", "filters": 4, "kernel": 3}, {"type": "dense"}]


def toy_net(tied, arch=SMALL, size=5, dtype=np.float64, seed=0, std=0.3):
    net = Network(arch, LIB, tied=tied, board_size=size, dtype=dtype)
    net.init_params(np.random.default_rng(seed), std)
    r = np.random.default_rng(seed + 1)
    for layer in net.layers:
        layer.bias = (r.standard_normal(layer.bias.shape) * 0.1).astype(dtype)
    return net


def toy_batch(size=5, b=3, seed=2, density=0.5):
    r = np.random.default_rng(seed)
    x = (r.random((b, LIB.channels, size, size)) < 0.3).astype(np.float64)
    x[:, -1] = 0
    mask = r.random((b, size * size)) < density
    mask[:, 0] = True
    targets = np.array([r.choice(np.flatnonzero(m)) for m in mask])
    return x, mask, targets


def extended_loss(net, x, mask, targets):
    """Mean NLL evaluated entirely in the network's own dtype."""
    z = net.logits(x.astype(net.dtype))
    logp = masked_log_softmax(z, np.asarray(mask, bool))
    return -logp[np.arange(len(targets)), targets].mean()


def finite_difference_check(net, x, mask, targets, eps=1e-5):
    """Worst relative error of the analytic gradients against finite differences.

    The oracle is a five-point central difference evaluated on an extended
    precision copy of ``net``, so rounding noise (~1e-14) stays far below the
    smallest gradients of interest while eps is small enough never to step
    across a relu kink.  Gradients below 1e-12 on both sides are rounding
    residue of an exact zero (e.g. a bias that shifts every logit equally)
    and have no meaningful relative error.
    """
    _, grads = backward(net, x, mask, targets)
    ext = Network.from_spec({**net.spec(), "dtype": "longdouble"})
    for name, value in net.named_params().items():
        ext.set_param(name, value.astype(np.longdouble))
    worst = 0.0
    for name, param in ext.named_params().items():
        g = grads[name]
        for idx in np.ndindex(param.shape):
            old = param[idx]
            f = {}
            for step in (-2, -1, 1, 2):
                param[idx] = old + step * np.longdouble(eps)
                f[step] = extended_loss(ext, x, mask, targets)
            param[idx] = old
            num = float((f[-2] - 8 * f[-1] + 8 * f[1] - f[2]) / (12 * np.longdouble(eps)))
            scale = max(abs(num), abs(g[idx]))
            if scale < 1e-12:
                continue
            worst = max(worst, abs(num - g[idx]) / scale)
    return worst


@pytest.mark.parametrize("tied", [True, False])
@pytest.mark.parametrize("density", [1.0, 0.4])
def test_gradient_check(tied, density):
    net = toy_net(tied)
    x, mask, t = toy_batch(density=density)
    assert finite_difference_check(net, x, mask, t) <= 1e-5


def test_gradient_check_deeper_tanh_and_conv_top():
    arch = [{"type": "conv", "filters": 3, "kernel": 3}, {"type": "conv", "filters": 2, "kernel": 3},
            {"type": "conv", "filters": 1, "kernel": 1}]
    net = Network(arch, LIB, tied=True, board_size=5, activation="tanh", dtype=np.float64)
    net.init_params(np.random.default_rng(4), 0.3)
    x, mask, t = toy_batch(density=0.6)
    assert finite_difference_check(net, x, mask, t) <= 1e-5


def test_masked_out_logits_get_zero_gradient():
    net = Network([{"type": "dense"}], LIB, tied=False, board_size=5, dtype=np.float64)
    net.init_params(np.random.default_rng(0), 0.3)
    x, mask, t = toy_batch(b=1, density=0.3)
    backward(net, x, mask, t)
    # dense rows for illegal outputs receive no gradient
    gw = net.layers[0].grad_weight.reshape(LIB.channels, 25, 25)
    gb = net.layers[0].grad_bias.reshape(25)
    assert np.all(gw[:, ~mask[0], :] == 0)
    assert np.all(gb[~mask[0]] == 0)


def test_certain_target_has_zero_loss_and_gradient():
    net = Network([{"type": "dense"}], LIB, tied=False, board_size=5, dtype=np.float64)
    x, _, _ = toy_batch(b=1)
    mask = np.zeros((1, 25), bool)
    mask[0, 7] = True
    loss, grads = backward(net, x, mask, [7])
    assert loss == 0
    assert all(np.all(g == 0) for g in grads.values())


def test_masked_out_target_rejected():
    net = toy_net(True)
    x, mask, _ = toy_batch(b=1, density=0.5)
    bad = int(np.flatnonzero(~mask[0])[0])
    with pytest.raises(InvalidTargetError):
        backward(net, x, mask, [bad])


def test_forward_single_legal_point():
    net = toy_net(True)
    x, _, _ = toy_batch(b=1)
    mask = np.zeros((1, 25), bool)
    mask[0, 12] = True
    p = forward(net, x, mask)
    assert p[0, 12] == 1 and p.sum() == 1


def random_boards_batch(n, seed):
    r = np.random.default_rng(seed)
    occ = r.integers(0, 3, (n, 19, 19))
    x = np.zeros((n, LIB.channels, 19, 19), np.float32)
    for i in range(6):
        x[:, i] = (occ == 1 + i % 2) & (r.random((n, 19, 19)) < 0.5)
    x[:, 6] = 0
    x[np.arange(n), 6, r.integers(0, 19, n), r.integers(0, 19, n)] = 1
    mask = occ.reshape(n, -1) == 0
    mask[:, 180] = True
    return x, mask


def max_equivariance_error(net, x, mask):
    worst = 0.0
    p = net.forward(x, mask).reshape(-1, 19, 19)
    for g in GROUP:
        gx = reflect_tensor(x, g)
        gm = reflect_tensor(mask.reshape(-1, 19, 19), g).reshape(len(x), -1)
        pg = net.forward(gx, gm).reshape(-1, 19, 19)
        worst = max(worst, float(np.abs(pg - reflect_tensor(p, g)).max()))
    return worst


EQ_ARCH = [{"type": "conv", "filters": 8, "kernel": 5}, {"type": "conv", "filters": 8, "kernel": 5},
           {"type": "dense"}]


def test_tied_network_is_equivariant():
    net = Network(EQ_ARCH, LIB, tied=True)
    net.init_params(np.random.default_rng(1), 0.1)
    x, mask = random_boards_batch(20, 3)
    assert max_equivariance_error(net, x, mask) <= 1e-4


def test_untied_network_breaks_equivariance():
    net = Network(EQ_ARCH, LIB, tied=False)
    net.init_params(np.random.default_rng(1), 0.1)
    x, mask = random_boards_batch(4, 3)
    assert max_equivariance_error(net, x, mask) > 1e-3


def test_network_spec_roundtrip():
    net = Network(EQ_ARCH, LIB, tied=True, activation="tanh")
    again = Network.from_spec(net.spec())
    assert again.spec() == net.spec()
    assert {k: v.shape for k, v in again.named_params().items()} == \
           {k: v.shape for k, v in net.named_params().items()}


@pytest.mark.parametrize("arch", [
    [],
    [{"type": "dense"}, {"type": "dense"}],
    [{"type": "conv", "filters": 4, "kernel": 3}],
    [{"type": "pool"}],
])
def test_bad_architectures(arch):
    from tiedgo.symnet import ConfigError
    with pytest.raises(ConfigError):
        Network(arch, LIB)


def test_dense_layer_direct(rng):
    layer = Dense(2, 3, tied=True, dtype=np.float64)
    layer.weight = rng.standard_normal(layer.weight.shape)
    x = rng.standard_normal((1, 2, 3, 3))
    assert np.allclose(layer.forward(x), x.reshape(1, -1) @ layer.matrix().T)
    assert IDENTITY in GROUP
