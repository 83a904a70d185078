"""
Selección automática de K: curva de entropía de clasificación contra K y
regresión segmentada con pendiente nula después del punto de cambio.
"""
from typing import Optional, Union
import logging

import numpy as np

from app.core.config import get_settings
from app.core.errors import InsufficientPointsError, InvalidInputError
from app.models.schemas import EntropyCurve, KPolicy, KSelection, SegmentedFit
from app.services.geodesics import NeighbourTable, PointsLike, neighbour_table, point_arrays
from app.services.mixture_em import em_fit, entropy
from app.services.network import LinearNetwork
from app.utils.validators import validate_k, validate_positive

logger = logging.getLogger(__name__)

MIN_CURVE_POINTS = 4


def entropy_curve_from_table(table: NeighbourTable, k_max: Optional[int] = None) -> EntropyCurve:
    """
    Entropía de la clasificación EM para K = 1..k_max usando una tabla de
    vecinos ya calculada. Los K con ajuste degenerado quedan en `skipped`.
    """
    k_max = table.k_max if k_max is None else validate_k(k_max)
    if k_max > table.k_max:
        raise InvalidInputError(f"k_max={k_max} supera el de la tabla de vecinos ({table.k_max})")
    if k_max < 2:
        raise InvalidInputError("k_max debe ser >= 2")
    if table.n_points < k_max + 1:
        raise InsufficientPointsError(f"el patrón tiene {table.n_points} puntos y k_max={k_max}")

    ks, entropies, skipped = [], [], []
    for K in range(1, k_max + 1):
        volumes = table.volumes(K)
        volumes = volumes[np.isfinite(volumes)]
        if volumes.size < 2:
            skipped.append(K)
            continue
        fit = em_fit(volumes, K)
        if fit.degenerate:
            skipped.append(K)
            continue
        ks.append(K)
        entropies.append(entropy(fit.delta))

    if skipped:
        logger.warning(f"Curva de entropía: K omitidos por ajuste degenerado: {skipped}")
    logger.info(f"Curva de entropía calculada para {len(ks)} valores de K")
    return EntropyCurve(ks=ks, entropies=entropies, skipped=skipped)


def entropy_curve(net: LinearNetwork, pts: PointsLike, k_max: int,
                  threads: Optional[int] = None) -> EntropyCurve:
    """Una sola pasada de distancias y un ajuste EM por cada K en 1..k_max"""
    k_max = validate_k(k_max)
    segment_ids, offsets = point_arrays(pts)
    if segment_ids.size < k_max + 1:
        raise InsufficientPointsError(f"el patrón tiene {segment_ids.size} puntos y k_max={k_max}")
    table = neighbour_table(net, (segment_ids, offsets), k_max, threads=threads)
    return entropy_curve_from_table(table, k_max)


def fit_segmented(curve: EntropyCurve, grid_step: Optional[float] = None) -> SegmentedFit:
    """
    Ajusta Y = β + γ(x - ψ)·1{x < ψ} por mínimos cuadrados en una grilla de ψ.

    La grilla cubre [min ks, max ks] con paso grid_step; ante empates gana el
    ψ más chico. K̂ es ψ redondeado (mitades hacia arriba) y acotado al rango
    de ks.

    Raises:
        InvalidInputError: Si la curva tiene menos de 4 puntos utilizables
    """
    grid_step = validate_positive("grid_step", grid_step or get_settings().segmented_grid_step)
    x = np.asarray(curve.ks, dtype=float)
    y = np.asarray(curve.entropies, dtype=float)
    if x.size < MIN_CURVE_POINTS:
        raise InvalidInputError(
            f"La regresión segmentada requiere al menos {MIN_CURVE_POINTS} puntos (hay {x.size})"
        )
    lo, hi = float(x.min()), float(x.max())

    if np.ptp(y) == 0:
        logger.warning("Curva de entropía plana: K̂ = min(ks)")
        return SegmentedFit(beta=float(y[0]), gamma=0.0, psi=lo, rss=0.0, k_hat=int(lo),
                            flat=True, fitted=y.tolist())

    grid = np.round(np.arange(lo, hi + grid_step / 2, grid_step), 10)
    grid = grid[grid <= hi]
    Z = (x[None, :] - grid[:, None]) * (x[None, :] < grid[:, None])
    z_mean = Z.mean(axis=1)
    zc = Z - z_mean[:, None]
    szz = np.einsum("ij,ij->i", zc, zc)
    szy = zc @ (y - y.mean())
    slope = np.divide(szy, szz, out=np.zeros_like(szy), where=szz > 0)
    intercept = y.mean() - slope * z_mean
    residuals = y[None, :] - intercept[:, None] - slope[:, None] * Z
    rss = np.einsum("ij,ij->i", residuals, residuals)

    best = int(np.argmin(rss))
    psi = float(grid[best])
    beta, gamma = float(intercept[best]), float(slope[best])
    k_hat = int(min(max(np.floor(psi + 0.5), lo), hi))
    suspicious = gamma > 0
    if suspicious:
        logger.warning(f"Pendiente positiva antes del cambio (γ={gamma:.4g}); K̂={k_hat} es sospechoso")

    fit = SegmentedFit(
        beta=beta, gamma=gamma, psi=psi, rss=max(float(rss[best]), 0.0), k_hat=k_hat,
        flat=psi == lo, suspicious=suspicious,
        fitted=(beta + gamma * Z[best]).tolist()
    )
    logger.info(f"Punto de cambio ψ={psi:.1f}, K̂={k_hat}")
    return fit


def choose_k(net: LinearNetwork, pts: PointsLike, policy: Union[KPolicy, str, int],
             table: Optional[NeighbourTable] = None, threads: Optional[int] = None) -> KSelection:
    """Aplica una política de K; en modo automático devuelve también la curva y el ajuste"""
    policy = KPolicy.parse(policy)
    if policy.mode == "fixed":
        return KSelection(K=policy.k, mode="fixed")
    if table is None:
        curve = entropy_curve(net, pts, policy.k_max, threads=threads)
    else:
        curve = entropy_curve_from_table(table, policy.k_max)
    fit = fit_segmented(curve)
    return KSelection(K=fit.k_hat, mode="auto", curve=curve, fit=fit)


def select_k(net: LinearNetwork, pts: PointsLike, k_max: Optional[int] = None,
             mode: Union[KPolicy, str, int] = "auto", threads: Optional[int] = None) -> int:
    """
    K fijo tal cual, o K̂ = round(ψ̂) de la regresión segmentada sobre la
    curva de entropía hasta k_max.
    """
    policy = KPolicy.parse(mode)
    if policy.mode == "auto" and k_max is not None:
        policy = KPolicy(mode="auto", k_max=k_max)
    return choose_k(net, pts, policy, threads=threads).K
