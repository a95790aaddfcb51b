import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epiforge.errors import ConfigError, DataError
from epiforge.netgen import (ContactNetwork, NetworkConfig, external_edge_mask, generate_network, load_network,
                             neighbors, save_network)


def test_single_household_is_a_clique():
    net = generate_network({"county_sizes": [10], "mean_household_size": 10, "mean_external_degree": 0}, 0)
    assert net.N == 10
    assert net.edge_u.size == 45


def test_county_populations_follow_config():
    net = generate_network({"county_sizes": [6, 4]}, 1)
    assert net.N == 10
    assert net.county_populations.tolist() == [6, 4]


def test_cross_county_fraction_near_mix():
    net = generate_network({"county_sizes": [500, 500], "cross_county_mix": 0.1}, 3)
    ext = external_edge_mask(net)
    cross = net.county[net.edge_u] != net.county[net.edge_v]
    assert cross[~ext].sum() == 0  # households never straddle counties
    assert abs(cross[ext].mean() - 0.1) <= 0.05


def test_neighbors_of_clique_and_isolated_node():
    net = ContactNetwork([0, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1], [1, 2, 2], [5.0, 5.0, 5.0])
    assert neighbors(net, 0) == [(1, 5.0), (2, 5.0)]
    assert neighbors(net, 3) == []
    with pytest.raises(IndexError):
        neighbors(net, 4)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=3), st.integers(0, 2**32), st.floats(0, 12))
def test_handshake_and_structure(sizes, seed, degree):
    net = generate_network({"county_sizes": sizes, "mean_external_degree": degree}, seed)
    total = sum(len(neighbors(net, v)) for v in range(net.N))
    assert total == 2 * net.edge_u.size
    assert np.all(net.edge_u < net.edge_v)
    assert np.all(net.edge_w > 0)
    pairs = set(zip(net.edge_u.tolist(), net.edge_v.tolist()))
    assert len(pairs) == net.edge_u.size


def test_generation_is_deterministic():
    cfg = {"county_sizes": [50, 30], "household_size_distribution": "poisson"}
    assert generate_network(cfg, 4) == generate_network(cfg, 4)
    assert generate_network(cfg, 4) != generate_network(cfg, 5)


def test_arrays_are_read_only():
    net = generate_network({"county_sizes": [20]}, 0)
    with pytest.raises(ValueError):
        net.county[0] = 1


def test_save_load_round_trip(tmp_path):
    net = generate_network({"county_sizes": [30, 20, 10]}, 2)
    save_network(net, tmp_path)
    back = load_network(tmp_path)
    assert back == net
    assert back.config_hash == net.config_hash
    assert (tmp_path / "edges.txt").read_text().startswith("# N=60 K=3")


def test_load_rejects_missing_and_corrupt(tmp_path):
    with pytest.raises(DataError):
        load_network(tmp_path / "nope")
    net = generate_network({"county_sizes": [10]}, 0)
    save_network(net, tmp_path)
    (tmp_path / "edges.txt").write_text("# N=10 K=1 config=x\n0 99 1.0\n")
    with pytest.raises(DataError):
        load_network(tmp_path)


@pytest.mark.parametrize("bad", [
    {"county_sizes": []},
    {"county_sizes": [0]},
    {"county_sizes": [10], "cross_county_mix": 1.5},
    {"county_sizes": [10], "household_size_distribution": "zipf"},
    {"county_sizes": [10], "K": 2},
    {"county_sizes": [10], "bogus": 1},
])
def test_bad_configs_raise_config_error(bad):
    with pytest.raises(ConfigError):
        NetworkConfig.from_dict(bad)
