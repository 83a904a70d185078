"""
Redes sintéticas con regiones con nombre para los escenarios de simulación.

Reemplazan a las redes reales (chicago, dendrite, Antonio Nariño) con la
misma longitud total y regiones de longitud parecida.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple
import logging

import numpy as np

from app.core.errors import InvalidInputError
from app.services.network import LinearNetwork, SubNetwork, build_network
from app.utils.validators import validate_positive

logger = logging.getLogger(__name__)


@dataclass
class SyntheticNetwork:
    network: LinearNetwork
    regions: Dict[str, np.ndarray] = field(default_factory=dict)

    def region(self, name: str) -> SubNetwork:
        if name not in self.regions:
            raise InvalidInputError(
                f"Región desconocida: {name}. Disponibles: {', '.join(sorted(self.regions)) or 'ninguna'}"
            )
        return SubNetwork(self.network, self.regions[name])


def _grid(cells_x: int, cells_y: int, spacing: float) -> Tuple[np.ndarray, Dict[Tuple[str, int, int], int]]:
    """Segmentos de una grilla y el índice ('h'|'v', columna, fila) -> segmento"""
    segments: List[Tuple[Tuple[float, float], Tuple[float, float]]] = []
    index: Dict[Tuple[str, int, int], int] = {}
    for j in range(cells_y + 1):
        for i in range(cells_x):
            index[("h", i, j)] = len(segments)
            segments.append(((i * spacing, j * spacing), ((i + 1) * spacing, j * spacing)))
    for i in range(cells_x + 1):
        for j in range(cells_y):
            index[("v", i, j)] = len(segments)
            segments.append(((i * spacing, j * spacing), (i * spacing, (j + 1) * spacing)))
    return np.asarray(segments, dtype=float), index


def _prefix_region(order: np.ndarray, lengths: np.ndarray, target: float) -> np.ndarray:
    """Primeros segmentos de `order` hasta acumular al menos `target` de longitud"""
    cumulative = np.cumsum(lengths[order])
    stop = int(np.searchsorted(cumulative, target)) + 1
    return np.sort(order[:stop])


def _central_order(net: LinearNetwork) -> np.ndarray:
    ends = net.raw_segments()
    midpoints = ends.mean(axis=1)
    centre = net.vertex_xy.mean(axis=0)
    return np.argsort(np.hypot(*(midpoints - centre).T), kind="stable")


def grid_with_loops(total_length: float = 31150.0, cells: int = 10,
                    feature_length: float = 2991.0, nested_length: float = 11731.0) -> SyntheticNetwork:
    """
    Grilla cuadrada (muchos ciclos) con la longitud total de chicago.

    Regiones `feature` y `nested` formadas por los segmentos más cercanos al
    centro; `nested` contiene a `feature`.
    """
    validate_positive("total_length", total_length)
    if cells < 2:
        raise InvalidInputError("cells debe ser >= 2")
    spacing = total_length / (2 * cells * (cells + 1))
    raw, _ = _grid(cells, cells, spacing)
    net = build_network(raw, unit="feet")
    order = _central_order(net)
    return SyntheticNetwork(net, {
        "feature": _prefix_region(order, net.seg_length, feature_length),
        "nested": _prefix_region(order, net.seg_length, nested_length),
    })


def random_tree(total_length: float = 1934.0, n_segments: int = 80,
                feature_length: float = 778.0, seed: int = 0) -> SyntheticNetwork:
    """
    Árbol aleatorio (sin ciclos) con la longitud total de dendrite.

    Cada segmento nuevo cuelga de un vértice existente, así que cualquier
    prefijo de segmentos es conexo; `feature` es el prefijo que acumula
    feature_length.
    """
    validate_positive("total_length", total_length)
    if n_segments < 2:
        raise InvalidInputError("n_segments debe ser >= 2")
    rng = np.random.default_rng(seed)
    vertices = [np.zeros(2)]
    headings = [np.pi / 2]
    segments = []
    for _ in range(n_segments):
        parent = int(rng.integers(len(vertices)))
        heading = headings[parent] + rng.uniform(-np.pi / 3, np.pi / 3)
        step = rng.uniform(0.5, 1.5)
        child = vertices[parent] + step * np.array([np.cos(heading), np.sin(heading)])
        segments.append((vertices[parent], child))
        vertices.append(child)
        headings.append(heading)

    raw = np.asarray(segments, dtype=float)
    raw *= total_length / float(np.sum(np.hypot(*(raw[:, 1] - raw[:, 0]).T)))
    net = build_network(raw, unit="microns")
    order = np.arange(net.n_segments)
    return SyntheticNetwork(net, {"feature": _prefix_region(order, net.seg_length, feature_length)})


def _snake(index: Dict[Tuple[str, int, int], int], cells: int, rows: range) -> np.ndarray:
    """Camino en zigzag por las filas dadas: tramo horizontal completo y subida a la fila siguiente"""
    path = []
    rows = list(rows)
    for turn, j in enumerate(rows):
        columns = range(cells) if turn % 2 == 0 else range(cells - 1, -1, -1)
        path.extend(index[("h", i, j)] for i in columns)
        if turn + 1 < len(rows):
            column = cells if turn % 2 == 0 else 0
            lower = min(j, rows[turn + 1])
            path.append(index[("v", column, lower)])
    return np.asarray(path, dtype=np.int64)


def two_road_grid(total_length: float = 128690.0, cells: int = 20,
                  road1_length: float = 8320.0, road2_length: float = 3680.0) -> SyntheticNetwork:
    """
    Grilla homogénea con la longitud de Antonio Nariño y dos caminos
    disjuntos (`road1` arriba, `road2` abajo).
    """
    validate_positive("total_length", total_length)
    if cells < 4:
        raise InvalidInputError("cells debe ser >= 4")
    spacing = total_length / (2 * cells * (cells + 1))
    raw, index = _grid(cells, cells, spacing)
    net = build_network(raw, unit="meters")
    half = cells // 2
    road1 = _snake(index, cells, range(cells, half, -1))
    road2 = _snake(index, cells, range(0, half))
    regions = {
        "road1": _prefix_region(road1, net.seg_length, road1_length),
        "road2": _prefix_region(road2, net.seg_length, road2_length),
    }
    if np.intersect1d(regions["road1"], regions["road2"]).size:
        raise InvalidInputError("Los caminos se superponen: aumente cells o reduzca sus longitudes")
    return SyntheticNetwork(net, regions)


def long_line(total_length: float = 20000.0, n_segments: int = 200, wiggle: float = 0.05,
              seed: int = 0) -> SyntheticNetwork:
    """Poligonal casi recta; `wiggle` es la desviación lateral relativa al paso"""
    validate_positive("total_length", total_length)
    rng = np.random.default_rng(seed)
    xs = np.arange(n_segments + 1, dtype=float)
    ys = rng.uniform(-wiggle, wiggle, n_segments + 1)
    ys[0] = ys[-1] = 0.0
    coords = np.column_stack([xs, ys])
    raw = np.stack([coords[:-1], coords[1:]], axis=1)
    raw *= total_length / float(np.sum(np.hypot(*(raw[:, 1] - raw[:, 0]).T)))
    return SyntheticNetwork(build_network(raw))


def y_network(arm: float = 1.0) -> SyntheticNetwork:
    """Tres brazos de longitud `arm` desde el origen"""
    validate_positive("arm", arm)
    angles = np.array([np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3])
    tips = arm * np.column_stack([np.cos(angles), np.sin(angles)])
    raw = np.stack([np.zeros_like(tips), tips], axis=1)
    return SyntheticNetwork(build_network(raw))


def city_grid(cells: int = 70, spacing: float = 100.0, zones: int = 1) -> SyntheticNetwork:
    """
    Grilla grande para pruebas de escala; con zones > 1 agrega regiones
    `zone0..` en franjas verticales que cubren toda la red.
    """
    validate_positive("spacing", spacing)
    raw, _ = _grid(cells, cells, spacing)
    net = build_network(raw, unit="meters")
    regions: Dict[str, np.ndarray] = {}
    if zones > 1:
        midpoints_x = net.raw_segments().mean(axis=1)[:, 0]
        width = cells * spacing / zones
        band = np.minimum((midpoints_x // width).astype(np.int64), zones - 1)
        regions = {f"zone{z}": np.flatnonzero(band == z) for z in range(zones)}
    return SyntheticNetwork(net, regions)


GENERATORS: Dict[str, Callable[..., SyntheticNetwork]] = {
    "grid_with_loops": grid_with_loops,
    "random_tree": random_tree,
    "two_road_grid": two_road_grid,
    "long_line": long_line,
    "y_network": y_network,
    "city_grid": city_grid,
}


def generate(name: str, **params) -> SyntheticNetwork:
    if name not in GENERATORS:
        raise InvalidInputError(
            f"Generador desconocido: {name}. Disponibles: {', '.join(sorted(GENERATORS))}"
        )
    synthetic = GENERATORS[name](**params)
    logger.info(f"Red sintética '{name}': {synthetic.network}, regiones={sorted(synthetic.regions)}")
    return synthetic
