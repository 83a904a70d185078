"""
Fixtures compartidas: redes pequeñas y un patrón con una zona densa
"""
import numpy as np
import pandas as pd
import pytest

from app.services.io_formats import PointSet, write_network_table
from app.services.network import SubNetwork, build_network
from app.services.simulation import simulate_arrays
from app.services.synthetic import long_line, y_network


@pytest.fixture
def unit_line():
    """Un solo segmento de (0, 0) a (1, 0)"""
    return build_network([((0.0, 0.0), (1.0, 0.0))])


@pytest.fixture
def y_net():
    return y_network(arm=1.0).network


@pytest.fixture
def clustered():
    """
    Poligonal de longitud 2000 con clutter en toda la red (λ = 0.05) y
    feature en los primeros 20 segmentos (λ = 0.5).
    """
    net = long_line(total_length=2000.0, n_segments=200, seed=0).network
    rng = np.random.default_rng(7)
    clutter = simulate_arrays(net, 0.05, rng)
    feature = simulate_arrays(SubNetwork(net, range(20)), 0.5, rng)
    segment_ids = np.concatenate([clutter[0], feature[0]])
    offsets = np.concatenate([clutter[1], feature[1]])
    truth = ["clutter"] * clutter[0].size + ["feature"] * feature[0].size
    return net, PointSet(segment_ids, offsets), truth


@pytest.fixture
def clustered_files(tmp_path, clustered):
    """Red y patrón del fixture `clustered` escritos como CSV"""
    net, points, truth = clustered
    network_path = tmp_path / "network.csv"
    points_path = tmp_path / "points.csv"
    write_network_table(net, str(network_path))
    pd.DataFrame({
        "segment_id": points.segment_ids,
        "offset": points.offsets,
    }).to_csv(points_path, index=False, float_format="%.17g")
    return str(network_path), str(points_path)
