"""
Utilidades de validación para redes lineales, patrones de puntos y archivos
"""
import os
import re
from typing import Iterable, Sequence, Set
import logging

import numpy as np

from app.core.errors import EmptyInputError, InvalidInputError

logger = logging.getLogger(__name__)

# Configuración de validación
NETWORK_EXTENSIONS: Set[str] = {'.geojson', '.json', '.csv'}
POINT_EXTENSIONS: Set[str] = {'.geojson', '.json', '.csv'}
DESIGN_EXTENSIONS: Set[str] = {'.toml', '.json'}

# Caracteres peligrosos en nombres de archivo
DANGEROUS_FILENAME_CHARS = r'[<>:"/\\|?*\x00-\x1f]'


def sanitize_filename(filename: str) -> str:
    """
    Sanitiza un nombre (p.ej. de un diseño) para usarlo como nombre de archivo

    Args:
        filename: Nombre original

    Returns:
        Nombre sanitizado
    """
    safe_name = re.sub(DANGEROUS_FILENAME_CHARS, '_', filename)
    safe_name = re.sub(r'\s+', '_', safe_name)

    name, ext = os.path.splitext(safe_name)
    if len(name) > 200:
        name = name[:200]

    return f"{name}{ext}"


def validate_file_extension(filename: str, allowed: Set[str]) -> str:
    """
    Valida que la extensión del archivo sea permitida

    Args:
        filename: Nombre del archivo
        allowed: Extensiones aceptadas

    Returns:
        Extensión del archivo (lowercase)

    Raises:
        InvalidInputError: Si la extensión no es válida
    """
    file_ext = os.path.splitext(filename.lower())[1]

    if not file_ext:
        raise InvalidInputError("El archivo debe tener una extensión válida")

    if file_ext not in allowed:
        raise InvalidInputError(
            f"Formato no soportado: {file_ext}. Formatos válidos: {', '.join(sorted(allowed))}"
        )

    return file_ext


def validate_existing_file(path: str) -> str:
    if not path or not os.path.isfile(path):
        raise InvalidInputError(f"Archivo no encontrado: {path}")
    return path


def validate_finite_coordinates(coords: np.ndarray) -> np.ndarray:
    """
    Valida un arreglo de coordenadas (NaN o infinitos no permitidos)

    Raises:
        EmptyInputError: Si no hay coordenadas
        InvalidInputError: Si alguna coordenada no es finita
    """
    coords = np.asarray(coords, dtype=float)
    if coords.size == 0:
        raise EmptyInputError("Se requiere al menos un segmento")
    if not np.all(np.isfinite(coords)):
        bad = int(np.count_nonzero(~np.isfinite(coords)))
        raise InvalidInputError(f"Coordenadas no finitas en la entrada ({bad} valores)")
    return coords


def validate_non_negative(name: str, value: float) -> float:
    if not np.isfinite(value) or value < 0:
        raise InvalidInputError(f"{name} debe ser finito y >= 0 (recibido: {value})")
    return float(value)


def validate_positive(name: str, value: float) -> float:
    if not np.isfinite(value) or value <= 0:
        raise InvalidInputError(f"{name} debe ser finito y > 0 (recibido: {value})")
    return float(value)


def validate_k(k: int) -> int:
    if int(k) != k or k < 1:
        raise InvalidInputError(f"K debe ser un entero positivo (recibido: {k})")
    return int(k)


def validate_volumes(volumes: Sequence[float]) -> np.ndarray:
    """
    Valida volúmenes de discos: no vacíos, finitos y estrictamente positivos
    """
    values = np.asarray(volumes, dtype=float).ravel()
    if values.size == 0:
        raise EmptyInputError("Se requiere al menos un volumen")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise InvalidInputError("Todos los volúmenes deben ser finitos y > 0")
    return values


def validate_probabilities(delta: Iterable[float]) -> np.ndarray:
    values = np.asarray(list(delta) if not isinstance(delta, np.ndarray) else delta, dtype=float).ravel()
    if np.any(~np.isfinite(values)) or np.any(values < 0) or np.any(values > 1):
        raise InvalidInputError("Las probabilidades deben estar en [0, 1]")
    return values


def validate_netpoints(segment_lengths: np.ndarray, segment_ids: np.ndarray,
                       offsets: np.ndarray, tol: float = 1e-9) -> None:
    """
    Valida que cada punto caiga dentro de un segmento existente

    Raises:
        InvalidInputError: Si algún segmento no existe o el offset está fuera de rango
    """
    n_segments = len(segment_lengths)
    bad_ids = (segment_ids < 0) | (segment_ids >= n_segments)
    if np.any(bad_ids):
        first = int(np.flatnonzero(bad_ids)[0])
        raise InvalidInputError(
            f"Punto {first}: segmento {int(segment_ids[first])} no existe en la red"
        )
    limits = segment_lengths[segment_ids]
    bad_offsets = ~np.isfinite(offsets) | (offsets < -tol) | (offsets > limits + tol)
    if np.any(bad_offsets):
        first = int(np.flatnonzero(bad_offsets)[0])
        raise InvalidInputError(
            f"Punto {first}: offset {float(offsets[first])} fuera de [0, {float(limits[first])}]"
        )
