"""
Distancias geodésicas sobre la red, volúmenes de discos b_L(u, r) y
volúmenes del K-ésimo vecino más cercano S_K.
"""
from concurrent.futures import ProcessPoolExecutor
from heapq import heappop, heappush
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import math
import time

import numpy as np
from scipy.sparse import coo_matrix

from app.core.config import get_settings
from app.core.errors import InsufficientPointsError, InvalidInputError, ResourceLimitError
from app.models.schemas import NetPoint, VolumeSample
from app.services.network import LinearNetwork
from app.utils.validators import validate_k, validate_netpoints, validate_non_negative

logger = logging.getLogger(__name__)

# Offsets a menos de esta distancia de un extremo se ubican en el vértice
ENDPOINT_TOL = 1e-9

PointsLike = Union[Sequence[NetPoint], Tuple[np.ndarray, np.ndarray]]


def point_arrays(pts: PointsLike) -> Tuple[np.ndarray, np.ndarray]:
    """Convierte una secuencia de NetPoint (o un par de arreglos) en (segmentos, offsets)"""
    if isinstance(pts, tuple) and len(pts) == 2 and isinstance(pts[0], np.ndarray):
        return np.asarray(pts[0], dtype=np.int64), np.asarray(pts[1], dtype=float)
    n = len(pts)
    segment_ids = np.fromiter((p.segment_id for p in pts), dtype=np.int64, count=n)
    offsets = np.fromiter((p.offset for p in pts), dtype=float, count=n)
    return segment_ids, offsets


def to_netpoints(segment_ids: np.ndarray, offsets: np.ndarray) -> List[NetPoint]:
    return [NetPoint.model_construct(segment_id=int(s), offset=float(o))
            for s, o in zip(segment_ids.tolist(), offsets.tolist())]


class AugmentedGraph:
    """
    Red con los puntos del patrón insertados como nodos.

    Los nodos 0..V-1 son los vértices de la red; los nodos sintéticos siguen
    ordenados por (segmento, offset). Cada segmento original queda partido en
    una cadena ordenada de sub-aristas cuyas longitudes suman la del segmento.
    """

    def __init__(self, base: LinearNetwork, segment_ids: np.ndarray, offsets: np.ndarray,
                 point_node: np.ndarray, inserted_segment: np.ndarray, inserted_offset: np.ndarray,
                 edge_u: np.ndarray, edge_v: np.ndarray, edge_len: np.ndarray,
                 edge_segment: np.ndarray):
        self.base = base
        self.segment_ids = segment_ids
        self.offsets = offsets
        self.point_node = point_node
        self.inserted_segment = inserted_segment
        self.inserted_offset = inserted_offset
        self.edge_u = edge_u
        self.edge_v = edge_v
        self.edge_len = edge_len
        self.edge_segment = edge_segment
        self.n_nodes = base.n_vertices + len(inserted_segment)

        self.chain_start = np.searchsorted(edge_segment, np.arange(base.n_segments + 1))
        self.node_point_count = np.bincount(point_node, minlength=self.n_nodes)

        # Incidencia nodo -> sub-aristas (formato CSR)
        loops = edge_u == edge_v
        ends = np.concatenate([edge_u, edge_v[~loops]])
        ids = np.concatenate([np.arange(edge_u.size), np.flatnonzero(~loops)])
        order = np.argsort(ends, kind="stable")
        self.inc_edges = ids[order]
        self.inc_start = np.searchsorted(ends[order], np.arange(self.n_nodes + 1))

        self.adjacency: List[List[Tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for u, v, w in zip(edge_u.tolist(), edge_v.tolist(), edge_len.tolist()):
            if u == v:
                continue
            self.adjacency[u].append((v, w))
            self.adjacency[v].append((u, w))

    @property
    def n_points(self) -> int:
        return len(self.point_node)

    @property
    def inserted(self) -> List[NetPoint]:
        return to_netpoints(self.inserted_segment, self.inserted_offset)

    def chain(self, segment_id: int) -> np.ndarray:
        """Ids de las sub-aristas del segmento, en orden desde su vértice a"""
        return np.arange(self.chain_start[segment_id], self.chain_start[segment_id + 1])

    def subedge_length_by_segment(self) -> np.ndarray:
        return np.bincount(self.edge_segment, weights=self.edge_len, minlength=self.base.n_segments)

    def node_points(self, node: int) -> List[int]:
        return np.flatnonzero(self.point_node == node).tolist()

    def incident_edges(self, nodes: np.ndarray) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        starts = self.inc_start[nodes]
        counts = self.inc_start[nodes + 1] - starts
        total = int(counts.sum())
        if total == 0:
            return np.zeros(0, dtype=np.int64)
        shift = np.repeat(starts - (np.cumsum(counts) - counts), counts)
        return np.unique(self.inc_edges[shift + np.arange(total)])

    def to_csgraph(self):
        """Matriz dispersa simétrica con la arista más corta entre cada par de nodos"""
        keep = self.edge_u != self.edge_v
        u = np.minimum(self.edge_u[keep], self.edge_v[keep])
        v = np.maximum(self.edge_u[keep], self.edge_v[keep])
        w = self.edge_len[keep]
        order = np.lexsort((w, v, u))
        u, v, w = u[order], v[order], w[order]
        first = np.ones(u.size, dtype=bool)
        first[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
        u, v, w = u[first], v[first], w[first]
        matrix = coo_matrix((np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                            shape=(self.n_nodes, self.n_nodes))
        return matrix.tocsr()


def insert_points(net: LinearNetwork, pts: PointsLike) -> AugmentedGraph:
    """
    Inserta los puntos como nodos que parten sus segmentos.

    Puntos con idéntico (segmento, offset) comparten un nodo y conservan sus
    índices; puntos sobre un extremo usan el vértice correspondiente.

    Raises:
        InvalidInputError: Si algún punto no es válido en la red
    """
    segment_ids, offsets = point_arrays(pts)
    validate_netpoints(net.seg_length, segment_ids, offsets, tol=ENDPOINT_TOL)
    lengths = net.seg_length[segment_ids] if segment_ids.size else np.zeros(0)
    offsets = np.clip(offsets, 0.0, lengths)

    at_a = offsets <= ENDPOINT_TOL
    at_b = ~at_a & (offsets >= lengths - ENDPOINT_TOL)
    interior = ~(at_a | at_b)

    n_vertices = net.n_vertices
    point_node = np.empty(segment_ids.size, dtype=np.int64)
    point_node[at_a] = net.seg_a[segment_ids[at_a]]
    point_node[at_b] = net.seg_b[segment_ids[at_b]]

    iseg, ioff = segment_ids[interior], offsets[interior]
    order = np.lexsort((ioff, iseg))
    s_sorted, o_sorted = iseg[order], ioff[order]
    is_new = np.ones(s_sorted.size, dtype=bool)
    is_new[1:] = (s_sorted[1:] != s_sorted[:-1]) | (o_sorted[1:] != o_sorted[:-1])
    unique_rank = np.cumsum(is_new) - 1
    interior_node = np.empty(s_sorted.size, dtype=np.int64)
    interior_node[order] = n_vertices + unique_rank
    point_node[interior] = interior_node

    useg, uoff = s_sorted[is_new], o_sorted[is_new]
    m = useg.size
    synthetic = n_vertices + np.arange(m)
    first_in_seg = np.ones(m, dtype=bool)
    first_in_seg[1:] = useg[1:] != useg[:-1]
    last_in_seg = np.ones(m, dtype=bool)
    last_in_seg[:-1] = useg[1:] != useg[:-1]

    prev_node = np.where(first_in_seg, net.seg_a[useg], np.roll(synthetic, 1))
    prev_off = np.where(first_in_seg, 0.0, np.roll(uoff, 1))

    untouched = np.setdiff1d(net.segment_ids, useg)
    edge_u = np.concatenate([prev_node, synthetic[last_in_seg], net.seg_a[untouched]])
    edge_v = np.concatenate([synthetic, net.seg_b[useg[last_in_seg]], net.seg_b[untouched]])
    edge_len = np.concatenate([uoff - prev_off, net.seg_length[useg[last_in_seg]] - uoff[last_in_seg],
                               net.seg_length[untouched]])
    edge_segment = np.concatenate([useg, useg[last_in_seg], untouched])
    edge_start = np.concatenate([prev_off, uoff[last_in_seg], np.zeros(untouched.size)])

    order = np.lexsort((edge_start, edge_segment))
    return AugmentedGraph(
        net, segment_ids, offsets, point_node, useg, uoff,
        edge_u[order], edge_v[order], edge_len[order], edge_segment[order]
    )


def _dijkstra(adjacency: List[List[Tuple[int, float]]], source: int,
              cutoff: float = math.inf) -> Dict[int, float]:
    """Dijkstra con cola de prioridad binaria; devuelve los nodos asentados con d <= cutoff"""
    best = {source: 0.0}
    settled: Dict[int, float] = {}
    heap = [(0.0, source)]
    while heap:
        d, u = heappop(heap)
        if u in settled:
            continue
        if d > cutoff:
            break
        settled[u] = d
        for v, w in adjacency[u]:
            if v in settled:
                continue
            nd = d + w
            if nd < best.get(v, math.inf):
                best[v] = nd
                heappush(heap, (nd, v))
    return settled


def distances_from(g: AugmentedGraph, source: int) -> np.ndarray:
    """
    Distancias de camino mínimo desde un nodo a todos los nodos del grafo.

    Returns:
        Arreglo indexado por nodo; los nodos no alcanzables valen +inf
    """
    if not 0 <= source < g.n_nodes:
        raise InvalidInputError(f"Nodo {source} fuera del grafo")
    dist = np.full(g.n_nodes, np.inf)
    settled = _dijkstra(g.adjacency, source)
    dist[list(settled.keys())] = list(settled.values())
    return dist


def _coverage(edge_len: np.ndarray, du: np.ndarray, dv: np.ndarray, r) -> np.ndarray:
    return np.minimum(edge_len, np.maximum(0.0, r - du) + np.maximum(0.0, r - dv))


def disc_volume(g: AugmentedGraph, u: int, r: float) -> float:
    """
    Medida de {v en L : d_L(u, v) <= r}.

    Cada sub-arista aporta min(l, max(0, r - d_a) + max(0, r - d_b)).
    """
    r = validate_non_negative("r", r)
    if not 0 <= u < g.n_nodes:
        raise InvalidInputError(f"Nodo {u} fuera del grafo")
    dist = np.full(g.n_nodes, np.inf)
    settled = _dijkstra(g.adjacency, u, cutoff=r)
    dist[list(settled.keys())] = list(settled.values())
    return float(np.sum(_coverage(g.edge_len, dist[g.edge_u], dist[g.edge_v], r)))


def _neighbour_search(g: AugmentedGraph, i: int, k_max: int):
    """
    Dijkstra desde el punto i que se detiene al asentar todos los nodos con
    distancia <= D_kmax. Co-ubicados cuentan como vecinos a distancia 0.

    Returns:
        (distancias a los k_max vecinos con +inf de relleno,
         sub-aristas locales, distancias de sus extremos u y v)
    """
    source = int(g.point_node[i])
    counts = g.node_point_count
    adjacency = g.adjacency
    neighbours: List[float] = []
    radius = math.inf
    best = {source: 0.0}
    settled: Dict[int, float] = {}
    heap = [(0.0, source)]
    while heap:
        d, u = heappop(heap)
        if u in settled:
            continue
        if d > radius:
            break
        settled[u] = d
        found = int(counts[u]) - (1 if u == source else 0)
        if found and len(neighbours) < k_max:
            neighbours.extend([d] * min(found, k_max - len(neighbours)))
            if len(neighbours) == k_max:
                radius = d
        for v, w in adjacency[u]:
            if v in settled:
                continue
            nd = d + w
            if nd < best.get(v, math.inf):
                best[v] = nd
                heappush(heap, (nd, v))

    knn = np.full(k_max, np.inf)
    knn[:len(neighbours)] = neighbours

    nodes = np.fromiter(settled.keys(), dtype=np.int64, count=len(settled))
    dists = np.fromiter(settled.values(), dtype=float, count=len(settled))
    order = np.argsort(nodes)
    nodes, dists = nodes[order], dists[order]
    edges = g.incident_edges(nodes)

    def lookup(query: np.ndarray) -> np.ndarray:
        pos = np.clip(np.searchsorted(nodes, query), 0, nodes.size - 1)
        return np.where(nodes[pos] == query, dists[pos], np.inf)

    return knn, edges, lookup(g.edge_u[edges]), lookup(g.edge_v[edges])


_WORKER_GRAPH: Optional[AugmentedGraph] = None


def _init_worker(g: AugmentedGraph) -> None:
    global _WORKER_GRAPH
    _WORKER_GRAPH = g


def _search_chunk(indices: List[int], k_max: int):
    return [_neighbour_search(_WORKER_GRAPH, i, k_max) for i in indices]


class NeighbourTable:
    """
    Resultado de una pasada de búsqueda de vecinos para todos los puntos.

    Guarda las k_max distancias ordenadas de cada punto y las sub-aristas
    alcanzadas hasta D_kmax, de modo que S_K se obtiene para cualquier
    K <= k_max sin repetir Dijkstra.
    """

    def __init__(self, graph: AugmentedGraph, k_max: int, results):
        self.graph = graph
        self.k_max = k_max
        n = len(results)
        self.knn = np.vstack([r[0] for r in results]) if n else np.zeros((0, k_max))
        counts = np.array([r[1].size for r in results], dtype=np.int64)
        self.edge_counts = counts
        self.edge_starts = np.concatenate([[0], np.cumsum(counts)[:-1]]) if n else np.zeros(0, dtype=np.int64)
        edges = np.concatenate([r[1] for r in results]) if n else np.zeros(0, dtype=np.int64)
        self.edge_len = graph.edge_len[edges]
        self.edge_du = np.concatenate([r[2] for r in results]) if n else np.zeros(0)
        self.edge_dv = np.concatenate([r[3] for r in results]) if n else np.zeros(0)

    @property
    def n_points(self) -> int:
        return self.knn.shape[0]

    def _check_k(self, K: int) -> int:
        K = validate_k(K)
        if K > self.k_max:
            raise InvalidInputError(f"K={K} supera k_max={self.k_max} de la tabla de vecinos")
        return K

    def distances(self, K: int) -> np.ndarray:
        """D_K para cada punto (+inf si no hay K vecinos alcanzables)"""
        return self.knn[:, self._check_k(K) - 1]

    def complete(self, K: int) -> np.ndarray:
        return np.isfinite(self.distances(K))

    def volumes(self, K: int, min_volume: Optional[float] = None) -> np.ndarray:
        """
        S_K para cada punto; NaN donde D_K es infinito.

        Volúmenes nulos (K vecinos co-ubicados) se elevan a min_volume.
        """
        if min_volume is None:
            min_volume = get_settings().min_volume
        r = self.distances(K)
        finite = np.isfinite(r)
        rr = np.repeat(np.where(finite, r, 0.0), self.edge_counts)
        covered = _coverage(self.edge_len, self.edge_du, self.edge_dv, rr)
        volumes = np.add.reduceat(covered, self.edge_starts) if covered.size else np.zeros(self.n_points)
        volumes = np.where(finite, volumes, np.nan)
        floored = finite & (volumes < min_volume)
        if np.any(floored):
            logger.warning(f"K={K}: {int(floored.sum())} volúmenes nulos elevados a {min_volume}")
            volumes[floored] = min_volume
        return volumes

    def samples(self, K: int, drop_incomplete: bool = False,
                min_volume: Optional[float] = None) -> List[VolumeSample]:
        d_k = self.distances(K)
        s_k = self.volumes(K, min_volume=min_volume)
        incomplete = np.flatnonzero(~np.isfinite(d_k))
        if incomplete.size and not drop_incomplete:
            raise InsufficientPointsError(
                f"{incomplete.size} puntos con menos de {K} vecinos alcanzables",
                point_indices=incomplete.tolist()
            )
        return [
            VolumeSample(point_index=i, K=K, d_k=float(d_k[i]), s_k=float(s_k[i]))
            for i in range(self.n_points) if np.isfinite(d_k[i])
        ]


def neighbour_table(net: Union[LinearNetwork, AugmentedGraph], pts: Optional[PointsLike], k_max: int,
                    threads: Optional[int] = None, time_budget_s: Optional[float] = None) -> NeighbourTable:
    """
    Una búsqueda de Dijkstra truncada por punto sobre un único grafo aumentado.

    Raises:
        ResourceLimitError: Si se supera el presupuesto de tiempo
    """
    k_max = validate_k(k_max)
    graph = net if isinstance(net, AugmentedGraph) else insert_points(net, pts)
    settings = get_settings()
    threads = threads or settings.threads
    time_budget_s = time_budget_s if time_budget_s is not None else settings.time_budget_s
    deadline = time.monotonic() + time_budget_s if time_budget_s else None
    n = graph.n_points
    start = time.monotonic()

    def check_deadline(done: int) -> None:
        if deadline is not None and time.monotonic() > deadline:
            raise ResourceLimitError(
                f"Se superó el presupuesto de {time_budget_s}s tras {done}/{n} búsquedas de vecinos"
            )

    results = []
    if threads > 1 and n >= 4 * threads:
        chunks = [c.tolist() for c in np.array_split(np.arange(n), threads * 4)]
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(graph,)) as pool:
            for chunk_result in pool.map(_search_chunk, chunks, [k_max] * len(chunks)):
                results.extend(chunk_result)
                check_deadline(len(results))
    else:
        for i in range(n):
            results.append(_neighbour_search(graph, i, k_max))
            if i % 256 == 255:
                check_deadline(i + 1)
        check_deadline(n)

    logger.info(f"Búsqueda de vecinos: {n} puntos, k_max={k_max}, "
                f"{(time.monotonic() - start) * 1000:.1f}ms")
    return NeighbourTable(graph, k_max, results)


def knn_distance(g: AugmentedGraph, i: int, K: int) -> float:
    """
    Distancia al K-ésimo vecino más cercano del punto i.

    Devuelve +inf (y registra un aviso) si hay menos de K vecinos alcanzables.
    """
    K = validate_k(K)
    if not 0 <= i < g.n_points:
        raise InvalidInputError(f"Punto {i} fuera del patrón")
    if g.n_points < K + 1:
        raise InsufficientPointsError(f"el patrón tiene {g.n_points} puntos y K={K}")
    knn, _, _, _ = _neighbour_search(g, i, K)
    if not np.isfinite(knn[K - 1]):
        logger.warning(f"Punto {i}: menos de {K} vecinos alcanzables")
    return float(knn[K - 1])


def knn_volumes(net: LinearNetwork, pts: PointsLike, K: int, threads: Optional[int] = None,
                drop_incomplete: bool = False, min_volume: Optional[float] = None) -> List[VolumeSample]:
    """
    D_K y S_K = |b_L(x_i, D_K)| para cada punto del patrón

    Raises:
        InsufficientPointsError: Si n < K + 1 o algún punto no tiene K vecinos
    """
    K = validate_k(K)
    segment_ids, offsets = point_arrays(pts)
    if segment_ids.size < K + 1:
        raise InsufficientPointsError(f"el patrón tiene {segment_ids.size} puntos y K={K}")
    table = neighbour_table(net, (segment_ids, offsets), K, threads=threads)
    return table.samples(K, drop_incomplete=drop_incomplete, min_volume=min_volume)


def snap_points(net: LinearNetwork, xy: np.ndarray,
                snap_tol: Optional[float] = None) -> Tuple[List[NetPoint], List[int]]:
    """
    Proyecta puntos planos sobre el segmento más cercano de la red.

    Los puntos a más de snap_tol de todo segmento se descartan.

    Returns:
        (NetPoints de los puntos aceptados en orden de entrada, índices descartados)
    """
    import shapely
    from shapely.strtree import STRtree

    snap_tol = validate_non_negative("snap_tol", get_settings().snap_tol if snap_tol is None else snap_tol)
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if xy.size == 0:
        return [], []
    if not np.all(np.isfinite(xy)):
        raise InvalidInputError("Coordenadas de puntos no finitas")

    candidates = np.flatnonzero(net.seg_a != net.seg_b)
    lines = shapely.linestrings(net.raw_segments()[candidates])
    tree = STRtree(lines)
    points = shapely.points(xy)
    (point_idx, line_idx), _ = tree.query_nearest(
        points, max_distance=max(snap_tol, 1e-12), return_distance=True, all_matches=False
    )

    segment_ids = candidates[line_idx]
    along = shapely.line_locate_point(lines[line_idx], points[point_idx])
    geometric = shapely.length(lines[line_idx])
    offsets = np.clip(along * net.seg_length[segment_ids] / geometric, 0.0, net.seg_length[segment_ids])

    order = np.argsort(point_idx, kind="stable")
    accepted = point_idx[order]
    rejected = np.setdiff1d(np.arange(len(xy)), accepted).tolist()
    if rejected:
        logger.warning(f"{len(rejected)} puntos a más de {snap_tol} de la red fueron descartados")
    return to_netpoints(segment_ids[order], offsets[order]), rejected
