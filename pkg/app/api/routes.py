from collections import Counter
from typing import Tuple
import logging

from fastapi import APIRouter, HTTPException
import numpy as np

from app.core.config import get_settings
from app.core.errors import DegenerateFitError, InsufficientPointsError, InvalidInputError
from app.models.schemas import (
    ClassifyRequest,
    ClassifyResponse,
    KPolicy,
    NetworkPayload,
    PatternRequest,
    SelectKRequest,
    SelectKResponse,
    SimulateRequest,
    SimulateResponse,
    VolumesRequest,
    VolumesResponse,
)
from app.services.geodesics import neighbour_table, point_arrays, snap_points
from app.services.io_formats import PointSet
from app.services.k_selection import choose_k
from app.services.network import LinearNetwork, build_network
from app.services.pipeline import classify_pattern
from app.services.simulation import rpoislpp
from app.utils.validators import NETWORK_EXTENSIONS, POINT_EXTENSIONS

logger = logging.getLogger(__name__)

router = APIRouter()
settings = get_settings()

request_counts: Counter = Counter()


def _http_error(e: Exception) -> HTTPException:
    """Traduce errores del dominio a códigos HTTP"""
    if isinstance(e, HTTPException):
        return e
    if isinstance(e, DegenerateFitError):
        return HTTPException(status_code=409, detail=str(e))
    if isinstance(e, InvalidInputError):
        return HTTPException(status_code=400, detail=str(e))
    logger.error(f"Error inesperado: {str(e)}", exc_info=True)
    return HTTPException(status_code=500, detail=f"Error inesperado: {str(e)}")


def _network(payload: NetworkPayload) -> LinearNetwork:
    return build_network(np.asarray(payload.segments, dtype=float), merge_tol=payload.merge_tol)


def _pattern(net: LinearNetwork, request: PatternRequest) -> Tuple[PointSet, int]:
    """Puntos del request como PointSet; los xy se proyectan sobre la red"""
    if request.points:
        segment_ids, offsets = point_arrays(request.points)
        return PointSet(segment_ids, offsets), 0
    points, rejected = snap_points(net, np.asarray(request.xy, dtype=float), request.snap_tol)
    segment_ids, offsets = point_arrays(points)
    return PointSet(segment_ids, offsets, rejected=rejected), len(rejected)


@router.post("/volumes", response_model=VolumesResponse)
def compute_volumes(request: VolumesRequest):
    """Calcula D_K y S_K para cada punto del patrón"""
    request_counts["volumes"] += 1
    try:
        net = _network(request.network)
        points, _ = _pattern(net, request)
        if points.n < request.k + 1:
            raise InsufficientPointsError(f"el patrón tiene {points.n} puntos y K={request.k}")
        table = neighbour_table(net, points.arrays(), request.k)
        samples = table.samples(request.k)
        logger.info(f"Volúmenes calculados: {len(samples)} puntos, K={request.k}")
        return VolumesResponse(K=request.k, samples=samples)
    except Exception as e:
        raise _http_error(e)


@router.post("/select-k", response_model=SelectKResponse)
def select_k(request: SelectKRequest):
    """Curva de entropía y regresión segmentada para elegir K automáticamente"""
    request_counts["select-k"] += 1
    try:
        net = _network(request.network)
        points, _ = _pattern(net, request)
        selection = choose_k(net, points.arrays(), KPolicy(mode="auto", k_max=request.k_max))
        return SelectKResponse(curve=selection.curve, fit=selection.fit)
    except Exception as e:
        raise _http_error(e)


@router.post("/classify", response_model=ClassifyResponse)
def classify_points(request: ClassifyRequest):
    """Clasifica el patrón en feature y clutter con K fijo o automático"""
    request_counts["classify"] += 1
    try:
        net = _network(request.network)
        points, rejected = _pattern(net, request)
        if request.k is not None:
            policy = KPolicy(mode="fixed", k=request.k)
        else:
            policy = KPolicy(mode="auto", k_max=request.k_max)
        result = classify_pattern(net, points, policy)
        classification = result.classification
        if rejected:
            logger.warning(f"Clasificación: {rejected} puntos fuera de la tolerancia de proyección")
        return ClassifyResponse(
            K=result.K,
            labels=classification.labels,
            fit=classification.fit.report(),
            threshold=classification.threshold,
            n_features=classification.n_features,
        )
    except Exception as e:
        raise _http_error(e)


@router.post("/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest):
    """Simula un proceso de Poisson homogéneo sobre la red completa"""
    request_counts["simulate"] += 1
    try:
        net = _network(request.network)
        points = rpoislpp(net, request.rate, np.random.default_rng(request.seed))
        return SimulateResponse(
            total_length=net.total_length,
            expected_count=request.rate * net.total_length,
            points=points,
        )
    except Exception as e:
        raise _http_error(e)


@router.get("/stats")
async def get_stats():
    """Retorna la configuración activa y el número de solicitudes atendidas"""
    return {
        "app_name": settings.app_name,
        "version": settings.app_version,
        "k_max": settings.k_max,
        "default_k": settings.default_k,
        "em_tol": settings.em_tol,
        "em_max_iter": settings.em_max_iter,
        "snap_tol": settings.snap_tol,
        "network_formats": sorted(NETWORK_EXTENSIONS),
        "point_formats": sorted(POINT_EXTENSIONS),
        "requests": dict(request_counts),
    }
