import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hepnas import numerics as nm
from hepnas.grouping import (
    GmMatrix,
    cosine_matrix,
    draw_batches,
    gm_matrix,
    gm_vectors,
    min_cut_mask,
    min_cut_split,
    op_gradient,
    shared_param_names,
    write_gm_csv,
)
from hepnas.searchspace import CellSpec, OpKind
from hepnas.supernet import RegionError, Supernet

S, Z, P, R, T = OpKind.SKIP, OpKind.ZERO, OpKind.AVG_PAIR, OpKind.AFFINE_RELU, OpKind.AFFINE_TANH


def brute_min_cut(sim: np.ndarray) -> tuple[float, frozenset]:
    """Independent enumerator: every subset by size, cut via an indicator quadratic form."""
    n = sim.shape[0]
    best = None
    for size in range(1, n):
        for group in itertools.combinations(range(n), size):
            ind = np.zeros(n)
            ind[list(group)] = 1.0
            cut = float(ind @ sim @ (1.0 - ind))
            key = frozenset(group) if 0 in group else frozenset(set(range(n)) - set(group))
            if best is None or cut < best[0] - 1e-12:
                best = (cut, key)
    return best


def random_sim(rng, n):
    a = rng.uniform(-1, 1, size=(n, n))
    s = (a + a.T) / 2
    np.fill_diagonal(s, 1.0)
    return s


def test_two_ops_forced_split():
    sim = np.array([[1.0, 0.37], [0.37, 1.0]])
    s = min_cut_split(GmMatrix(3, (Z, S), sim, 1))
    assert s.group_a == (Z,) and s.group_b == (S,) and s.cut == pytest.approx(0.37)


def test_three_op_worked_example():
    # cuts enumerated by hand: {a}|{b,c} 0.7, {a,c}|{b} 0.8, {a,b}|{c} -0.3
    sim = np.array([[1.0, 0.9, -0.2], [0.9, 1.0, -0.1], [-0.2, -0.1, 1.0]])
    s = min_cut_split(GmMatrix(0, (Z, S, R), sim, 1))
    assert s.group_a == (Z, S) and s.group_b == (R,)
    assert s.cut == pytest.approx(-0.3, abs=1e-12)


def test_tie_break_lexicographic():
    sim = np.ones((3, 3))
    s = min_cut_split(GmMatrix(0, (Z, S, R), sim, 1))
    # all three cuts cost 2; membership (True, False, False) is smallest
    assert s.group_a == (Z,) and s.group_b == (S, R)


def test_op_count_range():
    with pytest.raises(ValueError):
        min_cut_split(GmMatrix(0, (Z,), np.ones((1, 1)), 1))


@pytest.mark.parametrize("seed", range(10))
def test_min_cut_beats_random_bipartitions(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    sim = random_sim(rng, n)
    best = min_cut_mask(sim)[0]
    for _ in range(100):
        mask = rng.integers(0, 2, size=n).astype(bool)
        if mask.all() or not mask.any():
            continue
        ind = mask.astype(float)
        assert best <= float(ind @ sim @ (1 - ind)) + 1e-12


def test_min_cut_matches_brute_force():
    rng = np.random.default_rng(123)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        sim = random_sim(rng, n)
        cut, mask = min_cut_mask(sim)
        ref_cut, group = brute_min_cut(sim)
        assert cut == pytest.approx(ref_cut, abs=1e-12)
        assert {i for i, f in enumerate(mask) if f} == set(group)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000))
def test_min_cut_relabel_invariance(n, seed):
    rng = np.random.default_rng(seed)
    sim = random_sim(rng, n)
    perm = rng.permutation(n)
    cut_a, mask_a = min_cut_mask(sim)
    cut_b, mask_b = min_cut_mask(sim[np.ix_(perm, perm)])
    assert cut_a == pytest.approx(cut_b, abs=1e-12)
    ga = {i for i, f in enumerate(mask_a) if f}
    gb = {int(perm[i]) for i, f in enumerate(mask_b) if f}
    # same unordered bipartition, modulo which side is called A
    assert ga == gb or ga == set(range(n)) - gb


# ------------------------------------------------------------ gradient probes


@pytest.fixture
def trained_net(oracle_spec, spiral_splits):
    net = Supernet.create(oracle_spec, seed=0)
    from hepnas.supernet import TrainConfig, train_epoch

    train_epoch(net, spiral_splits, TrainConfig(batch_size=64))
    return net


def test_zero_probe_on_only_path():
    spec = CellSpec(n_nodes=2, width=4, n_classes=3, in_dim=2, palette=(Z, S, R))
    net = Supernet.create(spec, seed=0)
    rng = np.random.default_rng(0)
    batches = [(rng.normal(size=(6, 2)), np.array([0, 1, 2, 0, 1, 2]))]
    g = op_gradient(net, 0, Z, batches)
    names = shared_param_names(net, 0)
    offsets = np.cumsum([0] + [net.params[k].size for k in names])
    seg = {k: g[offsets[i] : offsets[i + 1]] for i, k in enumerate(names)}
    assert np.all(seg["stem.W"] == 0) and np.all(seg["stem.b"] == 0)
    assert np.any(seg["head.b"] != 0)


def test_probe_is_deterministic_and_pure(trained_net, spiral_splits):
    batches = draw_batches(spiral_splits.train_w, 3, 32, seed=1)
    before = trained_net.checksum()
    a = op_gradient(trained_net, 2, R, batches)
    b = op_gradient(trained_net, 2, R, batches)
    assert a.tobytes() == b.tobytes()
    assert trained_net.checksum() == before
    with pytest.raises(RegionError):
        op_gradient(trained_net, 2, T, batches)


def test_probe_matches_finite_differences(trained_net, spiral_splits):
    net = trained_net
    xb, yb = draw_batches(spiral_splits.train_w, 1, 16, seed=5)[0]
    g = op_gradient(net, 1, S, [(xb, yb)])
    names = shared_param_names(net, 1)
    offsets = np.cumsum([0] + [net.params[k].size for k in names])
    rng = np.random.default_rng(2)
    eps = 1e-5
    for _ in range(15):
        i = int(rng.integers(len(names)))
        name = names[i]
        j = int(rng.integers(net.params[name].size))
        flat = net.params[name].reshape(-1)
        old = flat[j]
        flat[j] = old + eps
        up = nm.cross_entropy(net.forward(xb, override={1: S}), yb).item()
        flat[j] = old - eps
        down = nm.cross_entropy(net.forward(xb, override={1: S}), yb).item()
        flat[j] = old
        num, ana = (up - down) / (2 * eps), g[offsets[i] + j]
        assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana)) + 1e-7


def test_gm_matrix_properties(trained_net, spiral_splits):
    m = gm_matrix(trained_net, 3, spiral_splits.train_w, batch_count=4, seed=0)
    assert m.sim.shape == (3, 3)
    assert np.allclose(m.sim, m.sim.T, atol=1e-12)
    assert np.all(np.abs(np.diag(m.sim) - 1) == 0)
    assert np.all(np.abs(m.sim) <= 1 + 1e-12)
    vecs = gm_vectors(trained_net, 3, spiral_splits.train_w, batch_count=4, seed=0)
    for i in range(3):
        for j in range(3):
            if i != j:
                direct = vecs[i] @ vecs[j] / (np.linalg.norm(vecs[i]) * np.linalg.norm(vecs[j]))
                assert m.sim[i, j] == pytest.approx(direct, abs=1e-12)


def test_gm_singleton_rejected(oracle_spec, spiral_splits):
    net = Supernet.create(oracle_spec, oracle_spec.full_region().restrict(0, [S]))
    with pytest.raises(ValueError, match="single"):
        gm_matrix(net, 0, spiral_splits.train_w)


def test_identical_vectors_similarity_one():
    v = np.random.default_rng(0).normal(size=20)
    sim = cosine_matrix([v, v.copy(), -v])
    assert sim[0, 1] == pytest.approx(1.0, abs=1e-9)
    assert sim[0, 2] == pytest.approx(-1.0, abs=1e-9)


def test_zero_vector_convention():
    z = np.zeros(4)
    sim = cosine_matrix([z, z, np.ones(4)])
    assert sim[0, 1] == 1.0 and sim[0, 2] == 0.0 and not np.isnan(sim).any()


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_cosine_scale_invariance(seed, c):
    vecs = list(np.random.default_rng(seed).normal(size=(4, 10)))
    np.testing.assert_allclose(cosine_matrix(vecs), cosine_matrix([c * v for v in vecs]), atol=1e-12)


def test_gm_csv(tmp_path):
    sim = np.array([[1.0, 0.25], [0.25, 1.0]])
    path = tmp_path / "gm.csv"
    write_gm_csv([GmMatrix(4, (Z, S), sim, 2)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "edge,op_i,op_j,similarity"
    assert "4,zero,skip,0.25" in lines
