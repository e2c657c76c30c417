import pytest
from hypothesis import given
from hypothesis import strategies as st

from hepnas.searchspace import (
    ORACLE_PALETTE,
    Architecture,
    CellSpec,
    OpKind,
    Region,
    SpaceError,
    arch_index,
    decode,
    encode,
    enumerate_archs,
    hierarchies,
    region_size,
)


def test_four_node_hierarchies():
    hs = hierarchies(CellSpec(n_nodes=4))
    assert [len(h) for h in hs] == [1, 2, 3]
    assert sum(len(h) for h in hs) == 6


def test_two_node_single_hierarchy():
    hs = hierarchies(CellSpec(n_nodes=2))
    assert len(hs) == 1 and hs[0].edges == ((0, 1),)


@pytest.mark.parametrize("n", range(2, 7))
def test_hierarchy_partition(n):
    spec = CellSpec(n_nodes=n)
    hs = hierarchies(spec)
    assert [h.end_node for h in hs] == list(range(1, n))
    for h in hs:
        assert len(h) == h.end_node
        assert all(k == h.end_node and i < k for i, k in h.edges)
    flat = [e for h in hs for e in h.edges]
    assert len(flat) == len(set(flat)) == len(spec.edges) == n * (n - 1) // 2
    assert [spec.edge_index(e) for e in flat] == list(range(len(flat)))


def test_region_sizes():
    assert region_size(CellSpec(n_nodes=4).full_region()) == 15625
    assert region_size(Region(((OpKind.SKIP,), (OpKind.ZERO, OpKind.SKIP)))) == 2
    assert region_size(Region(((OpKind.ZERO, OpKind.SKIP), (OpKind.ZERO, OpKind.SKIP, OpKind.AVG_PAIR)))) == 6


def test_enumerate_small():
    r = Region(((OpKind.ZERO, OpKind.SKIP), (OpKind.ZERO, OpKind.SKIP, OpKind.AVG_PAIR)))
    archs = enumerate_archs(r)
    assert len(archs) == len(set(archs)) == 6
    assert [arch_index(a, r) for a in archs] == list(range(6))


def test_enumerate_cap():
    with pytest.raises(SpaceError, match="cap"):
        enumerate_archs(CellSpec(n_nodes=4).full_region())


def test_full_space_no_duplicates_at_raised_cap():
    spec = CellSpec(n_nodes=4)
    archs = enumerate_archs(spec.full_region(), cap=20000)
    assert len({encode(a) for a in archs}) == 15625


def test_round_trip_oracle_space():
    spec = CellSpec(n_nodes=4, palette=ORACLE_PALETTE)
    archs = enumerate_archs(spec.full_region())
    assert len(archs) == 729
    for a in archs:
        assert decode(encode(a), spec) == a


def test_encoding_format():
    a = Architecture((OpKind.SKIP, OpKind.ZERO, OpKind.AFFINE_RELU))
    assert encode(a) == "skip|zero|affine_relu"
    with pytest.raises(SpaceError):
        decode("skip|zero", CellSpec(n_nodes=3))


def test_palette_normalized_to_enum_order():
    spec = CellSpec(palette=(OpKind.AFFINE_RELU, OpKind.ZERO))
    assert spec.palette == (OpKind.ZERO, OpKind.AFFINE_RELU)


def test_region_validation():
    with pytest.raises(SpaceError):
        Region(((OpKind.SKIP,), ()))
    r = CellSpec(n_nodes=3, palette=ORACLE_PALETTE).full_region()
    with pytest.raises(SpaceError):
        r.restrict(0, [OpKind.AVG_PAIR])


ops_subset = st.sets(st.sampled_from(list(OpKind)), min_size=1)


@given(st.lists(ops_subset, min_size=3, max_size=3), st.lists(ops_subset, min_size=3, max_size=3))
def test_region_lattice(a, b):
    ra, rb = Region(tuple(tuple(x) for x in a)), Region(tuple(tuple(x) for x in b))
    if all(set(x) & set(y) for x, y in zip(a, b)):
        meet = ra.intersect(rb)
        assert meet.issubset(ra) and meet.issubset(rb)
        assert meet.size() <= min(ra.size(), rb.size())
    assert ra.issubset(ra)
    assert Region.decode(ra.encode()) == ra
