import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from suelogit.network import (
    Link,
    Network,
    NetworkError,
    ODDemand,
    PathSet,
    bpr_integral,
    bpr_travel_time,
    build_incidence,
    path_size_factors,
    path_size_log,
)
from suelogit.synthetic import builtin_network

links_st = st.builds(
    Link,
    id=st.just(1),
    from_node=st.just(1),
    to_node=st.just(2),
    free_flow_time=st.floats(0.1, 50),
    capacity=st.floats(1, 5000),
    bpr_alpha=st.floats(0, 2),
    bpr_beta=st.floats(1, 6),
)


def test_bpr_at_capacity_is_free_flow_times_one_plus_alpha():
    link = Link(1, 1, 2, free_flow_time=10.0, capacity=400.0)
    assert bpr_travel_time(link, 0.0) == 10.0
    assert bpr_travel_time(link, 400.0) == pytest.approx(11.5)


@given(links_st, st.floats(0, 1e4))
def test_bpr_integral_matches_quadrature(link, x):
    expected, _ = quad(lambda u: bpr_travel_time(link, u), 0.0, x, epsabs=1e-10, epsrel=1e-10, limit=200)
    assert bpr_integral(link, x) == pytest.approx(expected, rel=1e-8, abs=1e-8)


@given(links_st, st.floats(0, 1e4), st.floats(0, 1e4))
def test_bpr_is_nondecreasing(link, a, b):
    lo, hi = sorted((a, b))
    assert bpr_travel_time(link, lo) <= bpr_travel_time(link, hi)


def test_negative_flow_is_rejected():
    with pytest.raises(ValueError):
        bpr_travel_time(Link(1, 1, 2, 1.0, 1.0), -1.0)


@pytest.mark.parametrize("kwargs", [
    dict(from_node=1, to_node=1),
    dict(free_flow_time=0.0),
    dict(capacity=-1.0),
    dict(bpr_beta=0.5),
    dict(length=-2.0),
])
def test_invalid_links(kwargs):
    base = dict(id=1, from_node=1, to_node=2, free_flow_time=1.0, capacity=10.0)
    base.update(kwargs)
    with pytest.raises(NetworkError):
        Link(**base)


def test_network_rejects_duplicate_ids_and_bad_attributes():
    a = Link(1, 1, 2, 1.0, 1.0)
    with pytest.raises(NetworkError):
        Network([a, a])
    with pytest.raises(NetworkError):
        Network([a], np.ones((2, 1)))
    with pytest.raises(NetworkError):
        Network([a], [[np.nan]])


def test_connector_attributes_are_zeroed():
    links = [Link(1, 1, 2, 1.0, 10.0, is_connector=True), Link(2, 2, 3, 1.0, 10.0)]
    net = Network(links, [[5.0], [7.0]], ["c"])
    assert net.Z.tolist() == [[0.0], [7.0]]
    assert net.length.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        net.Z[1, 0] = 1.0


def test_attribute_selection_and_addition():
    net = Network([Link(1, 1, 2, 1.0, 1.0)], [[1.0, 2.0]], ["a", "b"])
    assert net.select_attributes(["b"]).Z.tolist() == [[2.0]]
    grown = net.add_attributes([[3.0]], ["c"])
    assert grown.attribute_names == ("a", "b", "c")
    assert grown.attribute("c").tolist() == [3.0]


def test_od_demand_validation():
    with pytest.raises(NetworkError):
        ODDemand(((1, 2),), [-1.0])
    with pytest.raises(NetworkError):
        ODDemand(((1, 2), (1, 2)), [1.0, 2.0])
    od = ODDemand.from_dict({(1, 2): 3.0, (2, 1): 0.0})
    assert od.positive().pairs == ((1, 2),)
    assert od.scaled(2.0).q.tolist() == [6.0, 0.0]
    assert od.total == 3.0


def test_pathset_drops_duplicate_paths():
    ps = PathSet({(1, 2): [(0, 1), (0, 1), (2,)]})
    assert ps[(1, 2)] == ((0, 1), (2,))
    assert ps.n_paths() == 2


def test_toy_incidence_matrices():
    toy = builtin_network("toy")
    inc = build_incidence(toy.network, toy.paths, toy.od)
    # OD-major order: (1,4) two paths, (2,4) two paths, (3,4) two paths
    assert inc.n_paths == 6
    assert inc.od_ptr.tolist() == [0, 2, 4, 6]
    dense = inc.delta_x.toarray()
    assert dense.sum(axis=0).tolist() == [2, 2, 2, 2, 1, 1]
    assert dense[0].tolist() == [1, 1, 0, 0, 0, 0]
    assert dense[2].tolist() == [1, 0, 1, 0, 1, 0]
    assert inc.delta_q.toarray().tolist() == [[1, 1, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0], [0, 0, 0, 0, 1, 1]]
    assert inc.od_sum(np.arange(6.0)).tolist() == [1.0, 5.0, 9.0]
    assert inc.expand([1, 2, 3]).tolist() == [1, 1, 2, 2, 3, 3]


def test_incidence_needs_a_path_per_od():
    toy = builtin_network("toy")
    with pytest.raises(NetworkError):
        build_incidence(toy.network, PathSet({}), toy.od)


def test_path_size_hand_example():
    # two paths sharing a link of length 2; private links of lengths 1 and 3
    lengths = np.array([2.0, 1.0, 3.0])
    ps = path_size_factors([(0, 1), (0, 2)], lengths)
    assert ps == pytest.approx([(2 / 3) / 2 + 1 / 3, (2 / 5) / 2 + 3 / 5])


@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
def test_path_size_is_one_for_disjoint_paths_and_within_bounds(lengths):
    lengths = np.array(lengths)
    assert path_size_factors([(0,), (1,), (2,)], lengths) == pytest.approx([1, 1, 1])
    ps = path_size_factors([(0, 1), (0, 2), (1, 2)], lengths)
    assert np.all(ps > 0) and np.all(ps <= 1 + 1e-12)


def test_single_path_od_has_zero_log_path_size():
    toy = builtin_network("toy")
    inc = build_incidence(toy.network, toy.paths, toy.od)
    lps = path_size_log(toy.network, inc)
    assert lps.shape == (6,)
    assert np.all(lps <= 1e-12)
