"""
Tests para la construcción y las medidas de redes lineales
"""
import numpy as np
import pytest

from app.core.errors import EmptyInputError, InvalidInputError
from app.services.network import (
    SubNetwork,
    build_network,
    circumradius,
    extract_subnetwork,
    network_from_table,
    total_length,
)
from app.services.synthetic import city_grid

SQUARE = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 1.0)),
    ((1.0, 1.0), (0.0, 1.0)),
    ((0.0, 1.0), (0.0, 0.0)),
]


class TestBuildNetwork:
    """Tests para build_network"""

    def test_square(self):
        """Debe fundir los extremos compartidos en vértices únicos"""
        net = build_network(SQUARE)
        assert net.n_vertices == 4
        assert net.n_segments == 4
        assert total_length(net) == pytest.approx(4.0)
        assert net.n_components == 1

    def test_preserves_segment_order(self):
        """Debe conservar el orden de entrada de los segmentos"""
        net = build_network(SQUARE)
        np.testing.assert_array_equal(net.seg_a, [0, 1, 2, 3])
        np.testing.assert_array_equal(net.seg_b, [1, 2, 3, 0])

    def test_merge_tolerance(self):
        """Debe fundir extremos separados por menos que la tolerancia"""
        net = build_network([((0.0, 0.0), (1.0, 0.0)), ((1.0 + 1e-9, 0.0), (2.0, 0.0))])
        assert net.n_vertices == 3
        assert net.n_components == 1

    def test_explicit_merge_tolerance(self):
        """Debe respetar una tolerancia explícita"""
        raw = [((0.0, 0.0), (1.0, 0.0)), ((1.1, 0.0), (2.0, 0.0))]
        assert build_network(raw).n_components == 2
        assert build_network(raw, merge_tol=0.2).n_components == 1

    def test_drops_zero_length_segments(self):
        """Debe descartar segmentos de longitud cero"""
        net = build_network([((0.0, 0.0), (1.0, 0.0)), ((1.0, 0.0), (1.0, 0.0))])
        assert net.n_segments == 1
        assert net.dropped_segments == 1

    def test_empty_input(self):
        """Debe rechazar una red sin segmentos"""
        with pytest.raises(EmptyInputError):
            build_network([])

    def test_non_finite_input(self):
        """Debe rechazar coordenadas no finitas"""
        with pytest.raises(InvalidInputError):
            build_network([((0.0, 0.0), (np.nan, 1.0))])

    def test_wrong_shape(self):
        """Debe rechazar arreglos que no sean pares de puntos"""
        with pytest.raises(InvalidInputError):
            build_network(np.zeros((2, 3)))

    def test_immutable_arrays(self):
        """Los arreglos de la red no deben poder modificarse"""
        net = build_network(SQUARE)
        with pytest.raises(ValueError):
            net.seg_length[0] = 10.0


class TestNetworkMeasures:

    def test_components(self):
        """Debe etiquetar las componentes conexas por segmento"""
        net = build_network([((0.0, 0.0), (1.0, 0.0)), ((5.0, 0.0), (7.0, 0.0))])
        assert net.n_components == 2
        labels = net.connected_components()
        assert labels[0] != labels[1]
        assert sorted(net.component_lengths().tolist()) == pytest.approx([1.0, 2.0])

    def test_point_xy(self, unit_line):
        xy = unit_line.point_xy(np.array([0, 0]), np.array([0.25, 1.0]))
        np.testing.assert_allclose(xy, [[0.25, 0.0], [1.0, 0.0]])

    def test_to_networkx(self):
        graph = build_network(SQUARE).to_networkx()
        assert graph.number_of_nodes() == 4
        assert graph.number_of_edges() == 4

    def test_tables(self):
        net = build_network(SQUARE)
        assert list(net.segment_table().columns) == ["id", "a", "b", "length"]
        assert len(net.vertex_table()) == 4


class TestCircumradius:
    """Tests para circumradius"""

    def test_straight_line(self):
        """El centro de una recta de longitud 2 está a distancia 1 de ambos extremos"""
        net = build_network([((0.0, 0.0), (1.0, 0.0)), ((1.0, 0.0), (2.0, 0.0))])
        assert circumradius(net) == pytest.approx(1.0)

    def test_y_network(self, y_net):
        """En una red Y de brazos iguales el centro es el vértice común"""
        assert circumradius(y_net) == pytest.approx(1.0)

    def test_square_loop(self):
        """En un ciclo de longitud 4 el punto más lejano está a 2"""
        assert circumradius(build_network(SQUARE)) == pytest.approx(2.0)


class TestNetworkFromTable:
    """Tests para network_from_table"""

    def test_length_mismatch(self):
        """Debe rechazar longitudes que no coinciden con la geometría"""
        with pytest.raises(InvalidInputError):
            network_from_table([[0.0, 0.0], [1.0, 0.0]], [0], [1], [2.0])

    def test_accepts_self_loop(self):
        """Debe aceptar auto-lazos con longitud propia"""
        net = network_from_table([[0.0, 0.0], [1.0, 0.0]], [0, 1], [1, 1], [1.0, 3.0])
        assert net.self_loops == [1]
        assert net.total_length == pytest.approx(4.0)

    def test_unknown_vertex(self):
        with pytest.raises(InvalidInputError):
            network_from_table([[0.0, 0.0], [1.0, 0.0]], [0], [5], [1.0])


class TestSubNetwork:
    """Tests para extract_subnetwork y SubNetwork"""

    def test_total_length_and_complement(self):
        """La sub-red y su complemento deben sumar la longitud total"""
        net = build_network(SQUARE)
        sub = extract_subnetwork(net, [0, 2])
        assert sub.total_length == pytest.approx(2.0)
        assert sub.total_length + sub.complement().total_length == pytest.approx(net.total_length)

    def test_unknown_segment(self):
        """Debe rechazar ids de segmentos inexistentes"""
        with pytest.raises(InvalidInputError):
            extract_subnetwork(build_network(SQUARE), [0, 9])

    def test_empty_subnetwork(self):
        """Debe rechazar el conjunto vacío salvo que se permita"""
        net = build_network(SQUARE)
        with pytest.raises(EmptyInputError):
            extract_subnetwork(net, [])
        sub = extract_subnetwork(net, [], allow_empty=True)
        assert sub.is_empty
        assert sub.total_length == 0.0

    def test_materialize_all_segments_is_identical(self):
        """Materializar todos los segmentos debe reproducir la red"""
        net = build_network(SQUARE + [((1.0, 1.0), (3.0, 1.0))])
        copy, mapping = SubNetwork(net, net.segment_ids).materialize()
        np.testing.assert_array_equal(copy.vertex_xy, net.vertex_xy)
        np.testing.assert_array_equal(copy.seg_a, net.seg_a)
        np.testing.assert_array_equal(copy.seg_b, net.seg_b)
        np.testing.assert_array_equal(copy.seg_length, net.seg_length)
        np.testing.assert_array_equal(mapping, net.segment_ids)

    def test_materialize_subset(self):
        """Debe renumerar vértices y conservar longitudes"""
        net = build_network(SQUARE)
        sub_net, mapping = SubNetwork(net, [3, 1]).materialize()
        np.testing.assert_array_equal(mapping, [1, 3])
        assert sub_net.n_segments == 2
        assert sub_net.n_vertices == 4
        assert sub_net.total_length == pytest.approx(2.0)

    def test_materialize_empty(self):
        with pytest.raises(EmptyInputError):
            SubNetwork(build_network(SQUARE), []).materialize()


class TestRebuild:
    """build_network aplicado sobre sus propios segmentos"""

    @pytest.mark.parametrize("seed", range(20))
    def test_idempotent(self, seed):
        """Reconstruir desde los segmentos emitidos debe dar la misma red"""
        rng = np.random.default_rng(seed)
        raw = rng.integers(0, 6, size=(15, 2, 2)).astype(float) * 10.0
        raw[:, 1] += rng.normal(scale=1e-9, size=(15, 2))
        first = build_network(raw)
        second = build_network(first.raw_segments())
        assert second.n_segments == first.n_segments
        np.testing.assert_array_equal(second.seg_length, first.seg_length)
        assert second.total_length == first.total_length

    def test_idempotent_on_city_grid(self):
        net = city_grid(cells=8, spacing=25.0).network
        rebuilt = build_network(net.raw_segments())
        np.testing.assert_array_equal(rebuilt.seg_length, net.seg_length)
        assert rebuilt.n_components == net.n_components
