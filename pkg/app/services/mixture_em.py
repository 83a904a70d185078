"""
Densidad Gamma de S_K, estimador de máxima verosimilitud de la tasa, EM para
la mezcla de dos Gammas de forma K conocida y regla de clasificación por
densidad más alta.
"""
from typing import Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.special import expit, gammaln, xlogy
from scipy.stats import gamma

from app.core.config import get_settings
from app.core.errors import DegenerateFitError, InvalidInputError
from app.models.schemas import FEATURE, CLUTTER, Classification, GammaComponent, MixtureFit
from app.utils.validators import (
    validate_k,
    validate_positive,
    validate_probabilities,
    validate_volumes,
)

logger = logging.getLogger(__name__)

# Fracción mínima de masa posterior por componente antes de declararla muerta
COMPONENT_DEATH = 1e-10


def gamma_pdf(x: float, K: int, lam: float) -> float:
    """λ^K x^(K-1) e^(-λx) / Γ(K), evaluada en escala logarítmica"""
    x = validate_positive("x", x)
    K = validate_k(K)
    lam = validate_positive("lambda", lam)
    return float(np.exp(gamma.logpdf(x, a=K, scale=1.0 / lam)))


def _log_density(s: np.ndarray, K: int, lam: float) -> np.ndarray:
    return K * math.log(lam) + xlogy(K - 1, s) - lam * s - gammaln(K)


def mle_rate(volumes: Sequence[float], K: int) -> float:
    """λ̂ = nK / Σ s_i"""
    s = validate_volumes(volumes)
    K = validate_k(K)
    return float(s.size * K / np.sum(s))


def fit_single(volumes: Sequence[float], K: int) -> GammaComponent:
    return GammaComponent(shape=validate_k(K), rate=mle_rate(volumes, K))


def mixture_loglik(volumes: Sequence[float], K: int, lambda1: float, lambda2: float, p: float) -> float:
    """Log-verosimilitud observada de p·Γ(K, λ1) + (1 - p)·Γ(K, λ2)"""
    s = validate_volumes(volumes)
    _, ll = e_step(s, validate_k(K), lambda1, lambda2, p)
    return ll


def e_step(s: np.ndarray, K: int, lambda1: float, lambda2: float, p: float) -> Tuple[np.ndarray, float]:
    """
    Probabilidades posteriores de pertenecer a la componente 1 y la
    log-verosimilitud observada en los parámetros actuales.
    """
    with np.errstate(divide="ignore"):
        log_a = math.log(p) if p > 0 else -np.inf
        log_b = math.log1p(-p) if p < 1 else -np.inf
    log_a = log_a + _log_density(s, K, lambda1)
    log_b = log_b + _log_density(s, K, lambda2)
    delta = expit(log_a - log_b)
    ll = float(np.sum(np.logaddexp(log_a, log_b)))
    return delta, ll


def initial_parameters(s: np.ndarray, K: int) -> Tuple[float, float, float]:
    """Parte los volúmenes en la mediana: mitad baja -> λ1, mitad alta -> λ2, p = 0.5"""
    ordered = np.sort(s)
    half = ordered.size // 2
    lower, upper = ordered[:half], ordered[half:]
    return K / float(np.mean(lower)), K / float(np.mean(upper)), 0.5


def em_fit(volumes: Sequence[float], K: int, init: Optional[Tuple[float, float, float]] = None,
           tol: Optional[float] = None, max_iter: Optional[int] = None) -> MixtureFit:
    """
    Ajusta la mezcla de dos Gammas con forma K conocida mediante EM.

    Se detiene cuando el cambio de log-verosimilitud por observación es menor
    que tol o al llegar a max_iter. Al final las etiquetas se ordenan para que
    lambda1 >= lambda2 (la componente de feature es la de mayor intensidad).
    Si una componente pierde toda su masa se devuelve el ajuste con
    degenerate=True y converged=False.
    """
    settings = get_settings()
    tol = settings.em_tol if tol is None else tol
    max_iter = settings.em_max_iter if max_iter is None else max_iter
    s = validate_volumes(volumes)
    K = validate_k(K)
    n = s.size
    if n < 2:
        raise InvalidInputError("El EM requiere al menos dos volúmenes")

    if init is None:
        lambda1, lambda2, p = initial_parameters(s, K)
    else:
        lambda1, lambda2, p = init
        validate_positive("lambda1", lambda1)
        validate_positive("lambda2", lambda2)
        if not 0.0 < p < 1.0:
            raise InvalidInputError(f"p inicial debe estar en (0, 1) (recibido: {p})")

    delta, ll = e_step(s, K, lambda1, lambda2, p)
    trace = [ll]
    converged = False
    degenerate = False
    iterations = 0

    while iterations < max_iter:
        w1 = float(np.sum(delta))
        w2 = float(np.sum(1.0 - delta))
        if w1 <= n * COMPONENT_DEATH or w2 <= n * COMPONENT_DEATH:
            degenerate = True
            break
        new_lambda1 = K * w1 / float(np.dot(s, delta))
        new_lambda2 = K * w2 / float(np.dot(s, 1.0 - delta))
        if not (math.isfinite(new_lambda1) and math.isfinite(new_lambda2)):
            degenerate = True
            break
        lambda1, lambda2, p = new_lambda1, new_lambda2, w1 / n
        iterations += 1

        delta, new_ll = e_step(s, K, lambda1, lambda2, p)
        trace.append(new_ll)
        if abs(new_ll - ll) <= tol * n:
            converged = True
            break
        ll = new_ll

    if lambda1 < lambda2:
        lambda1, lambda2, p = lambda2, lambda1, 1.0 - p
        delta = 1.0 - delta

    if degenerate:
        logger.warning(f"EM degenerado con K={K}: una componente perdió su masa tras {iterations} iteraciones")
    elif not converged:
        logger.warning(f"EM sin convergencia con K={K} tras {iterations} iteraciones")
    else:
        logger.debug(f"EM convergió con K={K} en {iterations} iteraciones: "
                     f"λ1={lambda1:.6g}, λ2={lambda2:.6g}, p={p:.4f}")

    return MixtureFit(
        K=K, lambda1=lambda1, lambda2=lambda2, p=min(max(p, 0.0), 1.0),
        delta=delta.tolist(), loglik_trace=trace, iterations=iterations,
        converged=converged and not degenerate, degenerate=degenerate
    )


def density_threshold(lambda1: float, lambda2: float, K: int) -> Optional[float]:
    """Volumen s* donde se cruzan las densidades; None si las tasas coinciden"""
    if lambda1 == lambda2:
        return None
    return K * (math.log(lambda1) - math.log(lambda2)) / (lambda1 - lambda2)


def classify(fit: MixtureFit, volumes: Sequence[float], allow_degenerate: bool = False) -> Classification:
    """
    Etiqueta como feature los puntos cuya densidad bajo la componente 1 es
    mayor o igual que bajo la componente 2 (empate -> feature).

    Raises:
        DegenerateFitError: Si el ajuste colapsó y no se permite continuar
    """
    s = validate_volumes(volumes)
    if fit.degenerate and not allow_degenerate:
        raise DegenerateFitError(f"El ajuste EM con K={fit.K} es degenerado")

    identical = fit.lambda1 == fit.lambda2 or not (
        math.isfinite(fit.lambda1) and math.isfinite(fit.lambda2) and fit.lambda1 > 0 and fit.lambda2 > 0
    )
    if identical:
        logger.warning("Componentes con la misma tasa: todos los puntos se etiquetan como feature")
        return Classification(labels=[FEATURE] * s.size, fit=fit, K=fit.K, threshold=None, degenerate=True)

    is_feature = _log_density(s, fit.K, fit.lambda1) >= _log_density(s, fit.K, fit.lambda2)
    labels = [FEATURE if flag else CLUTTER for flag in is_feature.tolist()]
    return Classification(
        labels=labels, fit=fit, K=fit.K,
        threshold=density_threshold(fit.lambda1, fit.lambda2, fit.K),
        degenerate=fit.degenerate
    )


def entropy(delta: Sequence[float]) -> float:
    """E = -Σ δ_i log2(δ_i), con 0·log2(0) = 0"""
    d = validate_probabilities(delta)
    return float(-np.sum(xlogy(d, d)) / math.log(2.0))
