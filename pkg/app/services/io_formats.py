"""
Lectura de redes, patrones de puntos y particiones, y escritura de tablas,
reportes JSON y gráficos SVG.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence
import json
import logging
import os

from matplotlib.collections import LineCollection
from matplotlib.figure import Figure
import numpy as np
import pandas as pd
from shapely.errors import ShapelyError
from shapely.geometry import shape
from shapely.geometry.base import BaseGeometry

from app.core.errors import EmptyInputError, InvalidInputError
from app.models.schemas import (
    FEATURE,
    CLUTTER,
    NETWORK_FORMATS,
    POINT_FORMATS,
    EntropyCurve,
    SegmentedFit,
)
from app.services.geodesics import point_arrays, snap_points
from app.services.network import LinearNetwork, build_network, network_from_table
from app.utils.validators import (
    NETWORK_EXTENSIONS,
    POINT_EXTENSIONS,
    validate_existing_file,
    validate_file_extension,
    validate_netpoints,
)

logger = logging.getLogger(__name__)

SEGMENT_TABLE_COLUMNS = ["id", "a", "b", "length", "xa", "ya", "xb", "yb"]
LABELLED_COLUMNS = ["index", "segment_id", "offset", "x", "y", "s_K", "delta", "label"]


@dataclass
class PointSet:
    """Patrón leído: ubicaciones sobre la red y, si el archivo las trae, etiquetas"""
    segment_ids: np.ndarray
    offsets: np.ndarray
    labels: Optional[List[Optional[str]]] = None
    source_index: Optional[np.ndarray] = None
    rejected: Optional[List[int]] = None

    @property
    def n(self) -> int:
        return int(self.segment_ids.size)

    def arrays(self):
        return self.segment_ids, self.offsets

    def subset(self, mask: np.ndarray) -> "PointSet":
        index = np.flatnonzero(mask)
        return PointSet(
            self.segment_ids[index], self.offsets[index],
            labels=[self.labels[i] for i in index] if self.labels is not None else None,
            source_index=(self.source_index if self.source_index is not None else np.arange(self.n))[index],
        )


def _read_csv(path: str, required: Sequence[str]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise InvalidInputError(f"No se pudo leer {os.path.basename(path)}: {e}") from e
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InvalidInputError(
            f"{os.path.basename(path)}: faltan columnas {', '.join(missing)}"
        )
    return df


def _read_geojson_features(path: str) -> List[Dict[str, Any]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InvalidInputError(f"GeoJSON inválido en {os.path.basename(path)}: {e}") from e
    if not isinstance(data, dict):
        raise InvalidInputError(f"{os.path.basename(path)}: se esperaba un objeto GeoJSON")
    if data.get("type") == "FeatureCollection":
        features = data.get("features", [])
    elif data.get("type") == "Feature":
        features = [data]
    else:
        features = [{"type": "Feature", "geometry": data, "properties": {}}]
    if not isinstance(features, list) or not all(isinstance(f, dict) for f in features):
        raise InvalidInputError(f"{os.path.basename(path)}: features debe ser una lista de objetos")
    return features


def _geometry(feature: Dict[str, Any]) -> Optional[BaseGeometry]:
    """Geometría shapely del feature, o None si no tiene"""
    geometry = feature.get("geometry")
    if not geometry:
        return None
    try:
        return shape(geometry)
    except (ShapelyError, ValueError, KeyError, TypeError, AttributeError) as e:
        raise InvalidInputError(f"Geometría GeoJSON inválida: {e}") from e


# --- Redes ---

def detect_network_format(path: str) -> str:
    ext = validate_file_extension(path, NETWORK_EXTENSIONS)
    if ext in (".geojson", ".json"):
        return "geojson"
    header = pd.read_csv(path, nrows=0).columns
    return "segments" if {"a", "b", "length"}.issubset(header) else "csv"


def read_network(path: str, fmt: Optional[str] = None, merge_tol: Optional[float] = None) -> LinearNetwork:
    """
    Lee una red en uno de los formatos soportados:

    - geojson: LineString / MultiLineString; cada par de coordenadas
      consecutivas es un segmento
    - csv: columnas x1, y1, x2, y2
    - segments: tabla emitida por write_network_table
    """
    validate_existing_file(path)
    fmt = fmt or detect_network_format(path)
    if fmt not in NETWORK_FORMATS:
        raise InvalidInputError(f"Formato de red no soportado: {fmt}")

    if fmt == "segments":
        df = _read_csv(path, SEGMENT_TABLE_COLUMNS).sort_values("id")
        vertices = pd.concat([
            df[["a", "xa", "ya"]].set_axis(["v", "x", "y"], axis=1),
            df[["b", "xb", "yb"]].set_axis(["v", "x", "y"], axis=1),
        ]).drop_duplicates("v").sort_values("v")
        if not np.array_equal(vertices["v"].to_numpy(), np.arange(len(vertices))):
            raise InvalidInputError("Los ids de vértices de la tabla deben ser densos desde 0")
        return network_from_table(vertices[["x", "y"]].to_numpy(), df["a"], df["b"], df["length"])

    if fmt == "csv":
        df = _read_csv(path, ["x1", "y1", "x2", "y2"])
        raw = df[["x1", "y1", "x2", "y2"]].to_numpy(dtype=float).reshape(-1, 2, 2)
        return build_network(raw, merge_tol=merge_tol)

    segments = []
    for feature in _read_geojson_features(path):
        geom = _geometry(feature)
        if geom is None:
            continue
        parts = geom.geoms if geom.geom_type == "MultiLineString" else [geom]
        for part in parts:
            if part.geom_type != "LineString":
                raise InvalidInputError(f"Geometría no soportada para redes: {part.geom_type}")
            coords = np.asarray(part.coords)[:, :2]
            segments.extend(np.stack([coords[:-1], coords[1:]], axis=1))
    if not segments:
        raise EmptyInputError(f"{os.path.basename(path)} no contiene LineStrings")
    return build_network(np.asarray(segments), merge_tol=merge_tol)


def write_network_table(net: LinearNetwork, path: str) -> str:
    df = net.segment_table()
    df["xa"], df["ya"] = net.vertex_xy[net.seg_a].T
    df["xb"], df["yb"] = net.vertex_xy[net.seg_b].T
    df[SEGMENT_TABLE_COLUMNS].to_csv(path, index=False, float_format="%.17g")
    return path


# --- Puntos ---

def detect_points_format(path: str) -> str:
    ext = validate_file_extension(path, POINT_EXTENSIONS)
    if ext in (".geojson", ".json"):
        return "geojson"
    header = set(pd.read_csv(path, nrows=0).columns)
    if {"segment_id", "offset"}.issubset(header) and header & {"label", "truth"}:
        return "labelled"
    if {"segment_id", "offset"}.issubset(header):
        return "netpoint"
    return "xy"


def _snapped(net: LinearNetwork, xy: np.ndarray, snap_tol: Optional[float]) -> PointSet:
    points, rejected = snap_points(net, xy, snap_tol)
    segment_ids, offsets = point_arrays(points)
    keep = np.setdiff1d(np.arange(len(xy)), rejected)
    return PointSet(segment_ids, offsets, source_index=keep, rejected=rejected)


def read_points(path: str, net: LinearNetwork, fmt: Optional[str] = None,
                snap_tol: Optional[float] = None) -> PointSet:
    """
    Lee un patrón de puntos:

    - xy: columnas x, y (se proyectan sobre la red)
    - netpoint: columnas segment_id, offset
    - labelled: CSV etiquetado con columnas segment_id, offset y label (o truth)
    - geojson: Features Point (se proyectan sobre la red)
    """
    validate_existing_file(path)
    fmt = fmt or detect_points_format(path)
    if fmt not in POINT_FORMATS:
        raise InvalidInputError(f"Formato de puntos no soportado: {fmt}")

    if fmt == "xy":
        df = _read_csv(path, ["x", "y"])
        return _snapped(net, df[["x", "y"]].to_numpy(dtype=float), snap_tol)

    if fmt == "geojson":
        xy = []
        for feature in _read_geojson_features(path):
            geom = _geometry(feature)
            if geom is None:
                raise InvalidInputError("Hay un feature de puntos sin geometría")
            parts = geom.geoms if geom.geom_type == "MultiPoint" else [geom]
            for part in parts:
                if part.geom_type != "Point":
                    raise InvalidInputError(f"Geometría no soportada para puntos: {part.geom_type}")
                xy.append((part.x, part.y))
        return _snapped(net, np.asarray(xy, dtype=float).reshape(-1, 2), snap_tol)

    df = _read_csv(path, ["segment_id", "offset"])
    segment_ids = df["segment_id"].to_numpy(dtype=np.int64)
    offsets = df["offset"].to_numpy(dtype=float)
    validate_netpoints(net.seg_length, segment_ids, offsets)
    labels = None
    if fmt == "labelled":
        column = "label" if "label" in df.columns else "truth"
        if column not in df.columns:
            raise InvalidInputError(f"{os.path.basename(path)}: falta la columna label")
        # celdas vacías: puntos sin clasificar (zonas omitidas o fallidas)
        labels = [
            None if pd.isna(value) or not str(value).strip() else str(value).strip().lower()
            for value in df[column]
        ]
        unknown = sorted(set(labels) - {FEATURE, CLUTTER, None})
        if unknown:
            raise InvalidInputError(f"Etiquetas desconocidas: {', '.join(unknown)}")
    return PointSet(segment_ids, offsets, labels=labels, source_index=np.arange(len(df)))


def read_partition(path: str, net: LinearNetwork) -> np.ndarray:
    """
    Lee la partición segmento -> zona (columnas segment_id, zone).

    Raises:
        InvalidInputError: Si algún segmento queda sin zona, aparece dos veces o no existe
    """
    validate_existing_file(path)
    df = _read_csv(path, ["segment_id", "zone"])
    ids = df["segment_id"].to_numpy(dtype=np.int64)
    if np.any((ids < 0) | (ids >= net.n_segments)):
        raise InvalidInputError("La partición referencia segmentos inexistentes")
    if pd.Series(ids).duplicated().any():
        raise InvalidInputError("La partición asigna algún segmento a más de una zona")
    missing = np.setdiff1d(net.segment_ids, ids)
    if missing.size:
        raise InvalidInputError(
            f"La partición no cubre {missing.size} segmentos (p.ej. {missing[:5].tolist()})"
        )
    zones = np.empty(net.n_segments, dtype=object)
    zones[ids] = df["zone"].astype(str).to_numpy()
    return zones


# --- Salidas ---

def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_json(path: str, payload: Dict[str, Any]) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, default=_json_default)
    return path


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Tipo no serializable: {type(value).__name__}")


def write_table(df: pd.DataFrame, path_stem: str, fmt: str = "csv") -> str:
    """Escribe la tabla como CSV o JSON (lista de registros) según fmt"""
    if fmt == "json":
        path = f"{path_stem}.json"
        df.to_json(path, orient="records", indent=2)
    else:
        path = f"{path_stem}.csv"
        df.to_csv(path, index=False, float_format="%.17g")
    return path


def labelled_frame(net: LinearNetwork, segment_ids: np.ndarray, offsets: np.ndarray,
                   volumes: np.ndarray, delta: Sequence[float], labels: Sequence[str],
                   index: Optional[np.ndarray] = None) -> pd.DataFrame:
    xy = net.point_xy(segment_ids, offsets)
    return pd.DataFrame({
        "index": np.arange(len(segment_ids)) if index is None else index,
        "segment_id": segment_ids,
        "offset": offsets,
        "x": xy[:, 0],
        "y": xy[:, 1],
        "s_K": volumes,
        "delta": np.asarray(delta, dtype=float),
        "label": list(labels),
    })


def histogram_table(volumes: np.ndarray, bins: Any = "auto") -> pd.DataFrame:
    volumes = np.asarray(volumes, dtype=float)
    volumes = volumes[np.isfinite(volumes)]
    if volumes.size == 0:
        raise EmptyInputError("No hay volúmenes para el histograma")
    counts, edges = np.histogram(volumes, bins=bins)
    widths = np.diff(edges)
    return pd.DataFrame({
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
        "count": counts,
        "density": counts / (volumes.size * widths),
    })


def plot_histogram(table: pd.DataFrame, K: int, path: str) -> str:
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    ax.bar(table["bin_left"], table["density"], width=table["bin_right"] - table["bin_left"],
           align="edge", color="lightgray", edgecolor="black", linewidth=0.5)
    ax.set_xlabel(f"S_{K}")
    ax.set_ylabel("Densidad")
    ax.set_title(f"K = {K}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return path


def plot_entropy_curve(curve: EntropyCurve, fit: Optional[SegmentedFit], path: str) -> str:
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    ax.plot(curve.ks, curve.entropies, "o", color="black", markersize=3)
    if fit is not None and fit.fitted:
        ax.plot(curve.ks, fit.fitted, "-", color="tab:blue")
        ax.axvline(fit.psi, color="tab:red", linestyle="--", label=f"K̂ = {fit.k_hat}")
        ax.legend()
    ax.set_xlabel("K")
    ax.set_ylabel("Entropía")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return path


def plot_classification(net: LinearNetwork, frame: pd.DataFrame, path: str) -> str:
    """Red en gris, feature en rojo y clutter en negro"""
    fig = Figure(figsize=(6, 6))
    ax = fig.subplots()
    ax.add_collection(LineCollection(net.raw_segments(), colors="lightgray", linewidths=0.5))
    ax.autoscale_view()
    for label, color in ((CLUTTER, "black"), (FEATURE, "tab:red")):
        subset = frame[frame["label"] == label]
        ax.scatter(subset["x"], subset["y"], s=4, color=color, label=label)
    ax.set_aspect("equal")
    ax.legend(loc="upper right")
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    return path
