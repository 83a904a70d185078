"""
Simulación de procesos de Poisson homogéneos sobre redes y sub-redes,
superposición de capas de clutter y feature, y tasas TPR/FPR/ACC promediadas
sobre réplicas de un diseño.
"""
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple, Union
import json
import logging
import os
import time
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pandas as pd

from app.core.config import get_settings
from app.core.errors import (
    DegenerateFitError,
    InsufficientPointsError,
    InvalidInputError,
    ResourceLimitError,
)
from app.models.schemas import (
    CLUTTER,
    FEATURE,
    ConfusionRates,
    DesignEntry,
    DesignSpec,
    KPolicy,
    Label,
    LabelledPattern,
    NetPoint,
    PolicyRates,
    RatesReport,
    RepResult,
)
from app.services.geodesics import PointsLike, neighbour_table, point_arrays, to_netpoints
from app.services.k_selection import choose_k
from app.services.mixture_em import classify, em_fit
from app.services.network import LinearNetwork, SubNetwork
from app.services.synthetic import SyntheticNetwork, generate
from app.utils.validators import (
    DESIGN_EXTENSIONS,
    validate_existing_file,
    validate_file_extension,
    validate_positive,
)

logger = logging.getLogger(__name__)

Region = Union[LinearNetwork, SubNetwork]


def _region_arrays(region: Region) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(region, SubNetwork):
        ids = region.segment_ids
        return ids, region.parent.seg_length[ids]
    return region.segment_ids, region.seg_length


def simulate_arrays(region: Region, lam: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Proceso de Poisson homogéneo de intensidad lam sobre la región, como
    arreglos (segmentos, offsets) con ids de la red padre.

    Raises:
        ResourceLimitError: Si lam·|región| supera max_expected_points
    """
    lam = validate_positive("lambda", lam)
    ids, lengths = _region_arrays(region)
    total = float(np.sum(lengths)) if lengths.size else 0.0
    expected = lam * total
    limit = get_settings().max_expected_points
    if expected > limit:
        raise ResourceLimitError(
            f"Número esperado de puntos {expected:.3g} supera el límite {limit:.3g}"
        )
    n = int(rng.poisson(expected)) if expected > 0 else 0
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    chosen = rng.choice(ids.size, size=n, p=lengths / total)
    offsets = rng.uniform(0.0, 1.0, size=n) * lengths[chosen]
    return ids[chosen], offsets


def rpoislpp(region: Region, lam: float, rng: Optional[np.random.Generator] = None) -> List[NetPoint]:
    """
    N ~ Poisson(λ·|región|); cada punto elige segmento con probabilidad
    proporcional a su longitud y offset uniforme.
    """
    rng = rng if rng is not None else np.random.default_rng(get_settings().seed)
    segment_ids, offsets = simulate_arrays(region, lam, rng)
    return to_netpoints(segment_ids, offsets)


def superpose(layers: Sequence[Tuple[PointsLike, Label]]) -> LabelledPattern:
    """Concatena las capas; la verdad de cada punto es el rol de su capa"""
    points: List[NetPoint] = []
    truth: List[Label] = []
    layer_index: List[int] = []
    for index, (layer_points, role) in enumerate(layers):
        if role not in (FEATURE, CLUTTER):
            raise InvalidInputError(f"Rol de capa no válido: {role}")
        segment_ids, offsets = point_arrays(layer_points)
        points.extend(to_netpoints(segment_ids, offsets))
        truth.extend([role] * segment_ids.size)
        layer_index.extend([index] * segment_ids.size)
    return LabelledPattern(points=points, truth=truth, layer=layer_index)


def _rate(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator else None


def confusion(truth: Sequence[Label], predicted: Sequence[Label]) -> ConfusionRates:
    """
    Matriz de confusión con feature como clase positiva.

    TPR o FPR quedan en None cuando su denominador es cero.
    """
    if len(truth) != len(predicted):
        raise InvalidInputError(
            f"truth y predicted deben tener la misma longitud ({len(truth)} != {len(predicted)})"
        )
    if len(truth) == 0:
        raise InvalidInputError("Se requiere al menos un punto para calcular tasas")
    t = np.asarray(truth) == FEATURE
    p = np.asarray(predicted) == FEATURE
    tp = int(np.count_nonzero(t & p))
    fn = int(np.count_nonzero(t & ~p))
    fp = int(np.count_nonzero(~t & p))
    tn = int(np.count_nonzero(~t & ~p))
    return ConfusionRates(
        tp=tp, fp=fp, tn=tn, fn=fn,
        tpr=_rate(tp, tp + fn), fpr=_rate(fp, fp + tn), acc=(tp + tn) / t.size
    )


# --- Diseños ---

def _simulate_pattern(spec: DesignSpec, rng: np.random.Generator):
    segment_ids, offsets, truth, counts = [], [], [], []
    for region, rate, role in spec.layers:
        seg, off = simulate_arrays(spec.network if region is None else region, rate, rng)
        segment_ids.append(seg)
        offsets.append(off)
        truth.extend([role] * seg.size)
        counts.append(int(seg.size))
    return np.concatenate(segment_ids), np.concatenate(offsets), truth, counts


def simulate_design(spec: DesignSpec, rep: int = 0) -> LabelledPattern:
    """Patrón etiquetado de la réplica `rep` (mismo flujo aleatorio que run_design)"""
    child = np.random.SeedSequence(spec.seed).spawn(rep + 1)[rep]
    rng = np.random.default_rng(child)
    layers = [
        (simulate_arrays(spec.network if region is None else region, rate, rng), role)
        for region, rate, role in spec.layers
    ]
    return superpose(layers)


def _run_rep(spec: DesignSpec, rep: int, seed: np.random.SeedSequence) -> RepResult:
    rng = np.random.default_rng(seed)
    segment_ids, offsets, truth, counts = _simulate_pattern(spec, rng)
    n = int(segment_ids.size)
    rates: Dict[str, Optional[ConfusionRates]] = {policy.label: None for policy in spec.k_policies}
    k_hat = None

    usable = [policy for policy in spec.k_policies if n >= policy.needed_k + 1]
    for policy in spec.k_policies:
        if policy not in usable:
            logger.warning(f"Réplica {rep}, política {policy.label}: {n} puntos, "
                           f"insuficientes para K={policy.needed_k}")
    if not usable:
        return RepResult(rep=rep, n=n, layer_counts=counts, rates=rates)

    k_needed = max(policy.needed_k for policy in usable)
    table = neighbour_table(spec.network, (segment_ids, offsets), k_needed, threads=1)
    for policy in usable:
        try:
            selection = choose_k(spec.network, None, policy, table=table)
            if selection.mode == "auto":
                k_hat = selection.K
            volumes = table.volumes(selection.K)
            if not np.all(np.isfinite(volumes)):
                raise InsufficientPointsError(f"puntos sin {selection.K} vecinos alcanzables")
            fit = em_fit(volumes, selection.K)
            result = classify(fit, volumes)
            rates[policy.label] = confusion(truth, result.labels)
        except (DegenerateFitError, InvalidInputError) as e:
            logger.warning(f"Réplica {rep}, política {policy.label}: fallida ({e})")

    return RepResult(rep=rep, n=n, layer_counts=counts, rates=rates, k_hat=k_hat)


_WORKER_SPEC: Optional[DesignSpec] = None


def _init_worker(spec: DesignSpec) -> None:
    global _WORKER_SPEC
    _WORKER_SPEC = spec


def _run_rep_in_worker(rep: int, seed: np.random.SeedSequence) -> RepResult:
    return _run_rep(_WORKER_SPEC, rep, seed)


def _mean(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


def _aggregate(spec: DesignSpec, results: List[RepResult]) -> RatesReport:
    policies = []
    for policy in spec.k_policies:
        ok = [r.rates[policy.label] for r in results if r.rates.get(policy.label) is not None]
        entry = PolicyRates(
            policy=policy.label,
            tpr=_mean([c.tpr for c in ok if c.tpr is not None]),
            fpr=_mean([c.fpr for c in ok if c.fpr is not None]),
            acc=_mean([c.acc for c in ok]),
            successes=len(ok),
            failures=len(results) - len(ok),
        )
        if policy.mode == "auto":
            ks = [r.k_hat for r in results if r.k_hat is not None and r.rates.get(policy.label) is not None]
            if ks:
                entry.k_mean = float(np.mean(ks))
                entry.k_sd = float(np.std(ks, ddof=1)) if len(ks) > 1 else 0.0
        if entry.failures:
            logger.warning(f"Diseño '{spec.name}', política {policy.label}: "
                           f"{entry.failures}/{len(results)} réplicas fallidas")
        policies.append(entry)

    counts = np.array([r.layer_counts for r in results], dtype=float)
    expected = []
    for (region, rate, _), stated in zip(spec.layers, spec.expected_counts or [None] * len(spec.layers)):
        length = spec.network.total_length if region is None else region.total_length
        expected.append(stated if stated is not None else rate * length)

    return RatesReport(
        design=spec.name, seed=spec.seed, reps=spec.reps,
        lambdas=[rate for _, rate, _ in spec.layers],
        roles=[role for _, _, role in spec.layers],
        expected_counts=expected,
        mean_counts=counts.mean(axis=0).tolist(),
        policies=policies,
        per_rep=results,
    )


def run_design(spec: DesignSpec, threads: Optional[int] = None) -> RatesReport:
    """
    Simula spec.reps patrones, clasifica cada uno con cada política de K y
    promedia las tasas sobre las réplicas exitosas.

    Cada réplica usa su propio flujo derivado de SeedSequence(seed), de modo
    que el resultado no depende del número de procesos.
    """
    threads = threads or get_settings().threads
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.reps)
    start = time.monotonic()

    if threads > 1 and spec.reps > 1:
        with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                                 initargs=(spec,)) as pool:
            results = list(pool.map(_run_rep_in_worker, range(spec.reps), seeds))
    else:
        results = []
        for rep, seed in enumerate(seeds):
            results.append(_run_rep(spec, rep, seed))
            logger.debug(f"Diseño '{spec.name}': réplica {rep + 1}/{spec.reps} terminada")

    results.sort(key=lambda r: r.rep)
    report = _aggregate(spec, results)
    logger.info(f"Diseño '{spec.name}': {spec.reps} réplicas en {time.monotonic() - start:.1f}s")
    return report


# --- Archivos de diseño ---

def load_design_entries(path: str) -> List[DesignEntry]:
    """
    Lee un archivo de diseños TOML (tablas [[design]]) o JSON (lista u
    objeto con clave "design").
    """
    validate_existing_file(path)
    ext = validate_file_extension(path, DESIGN_EXTENSIONS)
    if ext == ".toml":
        with open(path, "rb") as f:
            data = tomllib.load(f)
    else:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)

    entries = data if isinstance(data, list) else data.get("design", [])
    if isinstance(entries, dict):
        entries = [entries]
    if not entries:
        raise InvalidInputError(f"El archivo {os.path.basename(path)} no define diseños")
    try:
        return [DesignEntry(**entry) for entry in entries]
    except (TypeError, ValueError) as e:
        raise InvalidInputError(f"Diseño inválido en {os.path.basename(path)}: {e}") from e


def _load_source(entry: DesignEntry, base_dir: str) -> SyntheticNetwork:
    source = entry.network
    if source.generator is not None:
        synthetic = generate(source.generator, **source.params)
    else:
        from app.services.io_formats import read_network

        path = source.path if os.path.isabs(source.path) else os.path.join(base_dir, source.path)
        synthetic = SyntheticNetwork(read_network(path, source.format))
    for name, region in source.regions.items():
        if isinstance(region, str):
            synthetic.regions[name] = synthetic.region(region).segment_ids
        else:
            synthetic.regions[name] = np.asarray(region, dtype=np.int64)
    return synthetic


def resolve_design(entry: DesignEntry, base_dir: str = ".",
                   cache: Optional[Dict[str, SyntheticNetwork]] = None) -> DesignSpec:
    """Construye la red del diseño y materializa sus regiones"""
    key = entry.network.model_dump_json()
    if cache is not None and key in cache:
        synthetic = cache[key]
    else:
        synthetic = _load_source(entry, base_dir)
        if cache is not None:
            cache[key] = synthetic

    layers = []
    for layer in entry.layers:
        if isinstance(layer.region, list):
            region = SubNetwork(synthetic.network, layer.region)
        elif layer.region == "full":
            region = None
        else:
            region = synthetic.region(layer.region)
        layers.append((region, layer.rate, layer.role))

    return DesignSpec(
        name=entry.name, network=synthetic.network, layers=layers, reps=entry.reps,
        k_policies=[KPolicy.parse(p) for p in entry.k_policies], seed=entry.seed,
        expected_counts=[layer.expected_count for layer in entry.layers],
    )


def load_designs(path: str) -> List[DesignSpec]:
    cache: Dict[str, SyntheticNetwork] = {}
    base_dir = os.path.dirname(os.path.abspath(path))
    specs = [resolve_design(entry, base_dir, cache) for entry in load_design_entries(path)]
    logger.info(f"{len(specs)} diseños cargados desde {path}")
    return specs


def rates_table(reports: Sequence[RatesReport]) -> pd.DataFrame:
    """
    Una fila por diseño con las columnas de las tablas de resultados:
    λ y E[n] por capa, media realizada de puntos, K̄ y sd(K) de la política
    automática, y TPR/FPR/ACC por política.
    """
    rows = []
    for report in reports:
        row: Dict[str, object] = {"design": report.design, "reps": report.reps, "seed": report.seed}
        role_seen: Dict[str, int] = {}
        for role, lam, expected, mean in zip(report.roles, report.lambdas,
                                             report.expected_counts, report.mean_counts):
            role_seen[role] = role_seen.get(role, 0) + 1
            tag = f"{role}{role_seen[role]}"
            row[f"lambda_{tag}"] = lam
            row[f"expected_n_{tag}"] = expected
            row[f"mean_n_{tag}"] = mean
        for entry in report.policies:
            if entry.k_mean is not None:
                row["K_mean"] = entry.k_mean
                row["K_sd"] = entry.k_sd
        for entry in report.policies:
            row[f"TPR_{entry.policy}"] = entry.tpr
            row[f"FPR_{entry.policy}"] = entry.fpr
            row[f"ACC_{entry.policy}"] = entry.acc
            row[f"failures_{entry.policy}"] = entry.failures
        rows.append(row)
    return pd.DataFrame(rows)
