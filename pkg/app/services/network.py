"""
Red lineal como grafo medido: construcción, validación, medidas globales
y sub-redes.
"""
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from app.core.config import get_settings
from app.core.errors import EmptyInputError, InvalidInputError
from app.models.schemas import Segment, Vertex
from app.utils.validators import validate_finite_coordinates, validate_non_negative

logger = logging.getLogger(__name__)


class LinearNetwork:
    """
    Unión finita de segmentos rectos, almacenada como grafo medido.

    Los vértices tienen ids densos desde 0 y los segmentos guardan los ids de
    sus extremos y su longitud. La instancia es inmutable después de construida.
    """

    def __init__(self, vertex_xy: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray,
                 seg_length: np.ndarray, merge_tol: float = 0.0, unit: Optional[str] = None,
                 dropped_segments: int = 0):
        self.vertex_xy = np.asarray(vertex_xy, dtype=float).reshape(-1, 2)
        self.seg_a = np.asarray(seg_a, dtype=np.int64)
        self.seg_b = np.asarray(seg_b, dtype=np.int64)
        self.seg_length = np.asarray(seg_length, dtype=float)
        self.merge_tol = float(merge_tol)
        self.unit = unit
        self.dropped_segments = int(dropped_segments)

        for array in (self.vertex_xy, self.seg_a, self.seg_b, self.seg_length):
            array.setflags(write=False)

    # --- tamaños y medidas ---

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_xy)

    @property
    def n_segments(self) -> int:
        return len(self.seg_length)

    @cached_property
    def total_length(self) -> float:
        return float(np.sum(self.seg_length))

    @property
    def segment_ids(self) -> np.ndarray:
        return np.arange(self.n_segments)

    @cached_property
    def self_loops(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.seg_a == self.seg_b)]

    @property
    def has_self_loops(self) -> bool:
        return bool(self.self_loops)

    @cached_property
    def bbox_diagonal(self) -> float:
        extent = self.vertex_xy.max(axis=0) - self.vertex_xy.min(axis=0)
        return float(np.hypot(*extent))

    # --- vistas como modelos del dominio ---

    @cached_property
    def vertices(self) -> List[Vertex]:
        return [Vertex(id=i, x=float(x), y=float(y)) for i, (x, y) in enumerate(self.vertex_xy)]

    @cached_property
    def segments(self) -> List[Segment]:
        return [
            Segment(id=i, a=int(a), b=int(b), length=float(length))
            for i, (a, b, length) in enumerate(zip(self.seg_a, self.seg_b, self.seg_length))
        ]

    @cached_property
    def adjacency(self) -> Dict[int, List[int]]:
        """Mapa vértice -> ids de segmentos incidentes"""
        adjacency: Dict[int, List[int]] = {v: [] for v in range(self.n_vertices)}
        for seg_id, (a, b) in enumerate(zip(self.seg_a.tolist(), self.seg_b.tolist())):
            adjacency[a].append(seg_id)
            if b != a:
                adjacency[b].append(seg_id)
        return adjacency

    @cached_property
    def vertex_components(self) -> np.ndarray:
        graph = coo_matrix(
            (np.ones(self.n_segments), (self.seg_a, self.seg_b)),
            shape=(self.n_vertices, self.n_vertices)
        )
        _, labels = connected_components(graph, directed=False)
        return labels

    @property
    def n_components(self) -> int:
        return int(self.vertex_components.max()) + 1

    def connected_components(self) -> np.ndarray:
        """Etiqueta de componente conexa para cada segmento"""
        return self.vertex_components[self.seg_a]

    def component_lengths(self) -> np.ndarray:
        return np.bincount(self.connected_components(), weights=self.seg_length,
                           minlength=self.n_components)

    # --- geometría ---

    def point_xy(self, segment_ids: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        """Coordenadas planas de puntos dados como (segmento, offset)"""
        segment_ids = np.asarray(segment_ids, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=float)
        start = self.vertex_xy[self.seg_a[segment_ids]]
        end = self.vertex_xy[self.seg_b[segment_ids]]
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(self.seg_length[segment_ids] > 0, offsets / self.seg_length[segment_ids], 0.0)
        return start + (end - start) * t[:, None]

    def raw_segments(self) -> np.ndarray:
        """Segmentos como pares de coordenadas, entrada válida de build_network"""
        return np.stack([self.vertex_xy[self.seg_a], self.vertex_xy[self.seg_b]], axis=1)

    def segment_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "id": np.arange(self.n_segments),
            "a": self.seg_a,
            "b": self.seg_b,
            "length": self.seg_length,
        })

    def vertex_table(self) -> pd.DataFrame:
        return pd.DataFrame({
            "id": np.arange(self.n_vertices),
            "x": self.vertex_xy[:, 0],
            "y": self.vertex_xy[:, 1],
        })

    def to_networkx(self):
        """Exporta la red como networkx.MultiGraph (aristas con peso 'weight')"""
        import networkx as nx

        graph = nx.MultiGraph()
        for v, (x, y) in enumerate(self.vertex_xy.tolist()):
            graph.add_node(v, x=x, y=y)
        for seg_id, (a, b, length) in enumerate(zip(self.seg_a.tolist(), self.seg_b.tolist(),
                                                    self.seg_length.tolist())):
            graph.add_edge(a, b, key=seg_id, weight=length)
        return graph

    def __repr__(self) -> str:
        return (f"LinearNetwork(vertices={self.n_vertices}, segments={self.n_segments}, "
                f"total_length={self.total_length:.6g})")


class SubNetwork:
    """Subconjunto de segmentos de una red padre"""

    def __init__(self, parent: LinearNetwork, segment_ids: Iterable[int]):
        self.parent = parent
        self.segment_ids = np.unique(np.asarray(list(segment_ids), dtype=np.int64))

    @cached_property
    def total_length(self) -> float:
        if self.segment_ids.size == 0:
            return 0.0
        return float(np.sum(self.parent.seg_length[self.segment_ids]))

    @property
    def is_empty(self) -> bool:
        return self.segment_ids.size == 0

    def contains(self, segment_ids: np.ndarray) -> np.ndarray:
        return np.isin(np.asarray(segment_ids), self.segment_ids)

    def complement(self) -> "SubNetwork":
        rest = np.setdiff1d(self.parent.segment_ids, self.segment_ids)
        return SubNetwork(self.parent, rest)

    def materialize(self) -> Tuple[LinearNetwork, np.ndarray]:
        """
        Construye la sub-red como red independiente.

        Los segmentos conservan el orden de ids del padre y los vértices el
        orden de sus ids, así que materializar todos los segmentos devuelve
        una red idéntica a la original.

        Returns:
            (red, arreglo local -> id de segmento del padre)
        """
        if self.is_empty:
            raise EmptyInputError("No se puede materializar una sub-red vacía")
        parent = self.parent
        a = parent.seg_a[self.segment_ids]
        b = parent.seg_b[self.segment_ids]
        used = np.unique(np.concatenate([a, b]))
        remap = np.full(parent.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        network = LinearNetwork(
            parent.vertex_xy[used], remap[a], remap[b], parent.seg_length[self.segment_ids],
            merge_tol=parent.merge_tol, unit=parent.unit
        )
        return network, self.segment_ids.copy()

    def __repr__(self) -> str:
        return f"SubNetwork(segments={self.segment_ids.size}, total_length={self.total_length:.6g})"


def default_merge_tol(coords: np.ndarray) -> float:
    points = np.asarray(coords, dtype=float).reshape(-1, 2)
    extent = points.max(axis=0) - points.min(axis=0)
    return get_settings().merge_tol_factor * float(np.hypot(*extent))


def build_network(raw_segments: Sequence, merge_tol: Optional[float] = None,
                  unit: Optional[str] = None) -> LinearNetwork:
    """
    Construye una red lineal a partir de segmentos ((x1, y1), (x2, y2)).

    Los extremos a distancia <= merge_tol se funden en un solo vértice (el
    primero que aparece es el representante). Los segmentos que quedan con
    longitud cero se descartan.

    Raises:
        EmptyInputError: Si no hay segmentos
        InvalidInputError: Si hay coordenadas no finitas o la forma no es válida
    """
    if raw_segments is None or len(raw_segments) == 0:
        raise EmptyInputError("Se requiere al menos un segmento para construir la red")
    coords = validate_finite_coordinates(raw_segments)
    if coords.ndim != 3 or coords.shape[1:] != (2, 2):
        raise InvalidInputError(
            f"Los segmentos deben tener forma (n, 2, 2); recibido {coords.shape}"
        )

    if merge_tol is None:
        merge_tol = default_merge_tol(coords)
    merge_tol = validate_non_negative("merge_tol", merge_tol)

    endpoints = coords.reshape(-1, 2)
    tree = cKDTree(endpoints)
    pairs = tree.query_pairs(r=merge_tol, output_type='ndarray').reshape(-1, 2)
    graph = coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
        shape=(len(endpoints), len(endpoints))
    )
    _, labels = connected_components(graph, directed=False)

    # Vértices en orden de primera aparición
    _, first_index = np.unique(labels, return_index=True)
    order = np.argsort(first_index, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    vertex_of_endpoint = rank[labels]
    vertex_xy = endpoints[first_index[order]]

    seg_a = vertex_of_endpoint[0::2]
    seg_b = vertex_of_endpoint[1::2]
    lengths = np.hypot(*(vertex_xy[seg_b] - vertex_xy[seg_a]).T)

    keep = lengths > 0
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.warning(f"Se descartaron {dropped} segmentos de longitud cero tras fundir extremos")
    if not np.any(keep):
        raise EmptyInputError("Todos los segmentos tienen longitud cero")

    seg_a, seg_b, lengths = seg_a[keep], seg_b[keep], lengths[keep]
    used = np.unique(np.concatenate([seg_a, seg_b]))
    if used.size != len(vertex_xy):
        remap = np.full(len(vertex_xy), -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        vertex_xy, seg_a, seg_b = vertex_xy[used], remap[seg_a], remap[seg_b]

    network = LinearNetwork(vertex_xy, seg_a, seg_b, lengths, merge_tol=merge_tol,
                            unit=unit, dropped_segments=dropped)
    logger.info(f"Red construida: {network}")
    return network


def network_from_table(vertex_xy: np.ndarray, seg_a: Sequence[int], seg_b: Sequence[int],
                       seg_length: Sequence[float], length_tol: Optional[float] = None,
                       unit: Optional[str] = None) -> LinearNetwork:
    """
    Reconstruye una red desde tablas de vértices y segmentos (id, a, b, length).

    Los auto-lazos se aceptan y se registran; para el resto de segmentos la
    longitud debe coincidir con la distancia entre sus vértices.
    """
    vertex_xy = validate_finite_coordinates(vertex_xy).reshape(-1, 2)
    seg_a = np.asarray(seg_a, dtype=np.int64)
    seg_b = np.asarray(seg_b, dtype=np.int64)
    seg_length = np.asarray(seg_length, dtype=float)
    if seg_length.size == 0:
        raise EmptyInputError("La tabla de segmentos está vacía")
    n_vertices = len(vertex_xy)
    if np.any((seg_a < 0) | (seg_a >= n_vertices) | (seg_b < 0) | (seg_b >= n_vertices)):
        raise InvalidInputError("La tabla de segmentos referencia vértices inexistentes")
    if np.any(~np.isfinite(seg_length)) or np.any(seg_length <= 0):
        raise InvalidInputError("Todas las longitudes de segmento deben ser > 0")

    if length_tol is None:
        length_tol = max(default_merge_tol(vertex_xy), 1e-9)
    euclid = np.hypot(*(vertex_xy[seg_b] - vertex_xy[seg_a]).T)
    loops = seg_a == seg_b
    mismatch = ~loops & (np.abs(euclid - seg_length) > length_tol)
    if np.any(mismatch):
        first = int(np.flatnonzero(mismatch)[0])
        raise InvalidInputError(
            f"Segmento {first}: longitud {seg_length[first]} no coincide con la distancia "
            f"entre vértices {euclid[first]}"
        )
    if np.any(loops):
        logger.warning(f"La red contiene {int(np.count_nonzero(loops))} auto-lazos")

    return LinearNetwork(vertex_xy, seg_a, seg_b, seg_length, merge_tol=length_tol, unit=unit)


def total_length(net: Union[LinearNetwork, SubNetwork]) -> float:
    return net.total_length


def extract_subnetwork(net: LinearNetwork, segment_ids: Iterable[int],
                       allow_empty: Optional[bool] = None) -> SubNetwork:
    """
    Extrae la sub-red formada por los segmentos indicados

    Raises:
        InvalidInputError: Si algún id no existe
        EmptyInputError: Si el conjunto es vacío y no se permite
    """
    ids = np.asarray(list(segment_ids), dtype=np.int64)
    if allow_empty is None:
        allow_empty = get_settings().allow_empty
    if ids.size == 0 and not allow_empty:
        raise EmptyInputError("El conjunto de segmentos de la sub-red está vacío")
    unknown = ids[(ids < 0) | (ids >= net.n_segments)]
    if unknown.size:
        raise InvalidInputError(f"Segmentos inexistentes en la red: {sorted(set(unknown.tolist()))[:10]}")
    return SubNetwork(net, ids)


def circumradius(net: LinearNetwork) -> float:
    """
    Radio del menor disco de la red que la contiene.

    Se evalúa sobre los candidatos vértices + puntos medios de segmentos, por
    lo que el resultado es una cota superior del óptimo exacto con error menor
    que la mitad del segmento más largo. Para redes no conexas devuelve el
    mínimo de los circunradios por componente.
    """
    from scipy.sparse.csgraph import dijkstra

    from app.services.geodesics import insert_points
    from app.models.schemas import NetPoint

    midpoints = [NetPoint.model_construct(segment_id=i, offset=float(length) / 2.0)
                 for i, length in enumerate(net.seg_length)]
    graph = insert_points(net, midpoints)
    matrix = graph.to_csgraph()
    candidates = np.arange(graph.n_nodes)

    best = np.inf
    block = 256
    for start in range(0, candidates.size, block):
        dist = dijkstra(matrix, directed=False, indices=candidates[start:start + block])
        du = dist[:, graph.edge_u]
        dv = dist[:, graph.edge_v]
        farthest = (du + dv + graph.edge_len[None, :]) / 2.0
        farthest[~(np.isfinite(du) & np.isfinite(dv))] = -np.inf
        best = min(best, float(farthest.max(axis=1).min()))
    return best
