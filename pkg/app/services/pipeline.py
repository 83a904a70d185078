"""
Procedimiento de clasificación completo (elegir K, volúmenes, EM, etiquetar)
sobre la red entera o por zonas, con escritura de artefactos.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence
import hashlib
import json
import logging
import os

import numpy as np
import pandas as pd

from app.core.errors import (
    InsufficientPointsError,
    NetworkFeatureError,
    PartialResultsError,
)
from app.models.schemas import (
    SCHEMA_VERSION,
    Classification,
    KPolicy,
    KSelection,
    RunConfig,
)
from app.services import io_formats
from app.services.geodesics import NeighbourTable, neighbour_table
from app.services.io_formats import PointSet
from app.services.k_selection import choose_k
from app.services.mixture_em import classify, em_fit
from app.services.network import LinearNetwork, SubNetwork
from app.services.simulation import confusion

logger = logging.getLogger(__name__)


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def provenance(config: RunConfig) -> Dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(config), "seed": config.seed}


def evaluate_labels(truth: Optional[Sequence[Optional[str]]],
                    predicted: Sequence[Optional[str]]) -> Optional[Dict[str, Any]]:
    """
    TPR/FPR/ACC contra las etiquetas verdaderas del archivo de entrada, sobre
    los puntos que tienen etiqueta verdadera y predicha. None si no hay ninguno.
    """
    if truth is None:
        return None
    pairs = [(t, p) for t, p in zip(truth, predicted) if t is not None and p is not None]
    if not pairs:
        return None
    rates = confusion([t for t, _ in pairs], [p for _, p in pairs])
    return {**rates.model_dump(), "n_evaluated": len(pairs)}


@dataclass
class PatternResult:
    selection: KSelection
    classification: Classification
    volumes: np.ndarray
    table: NeighbourTable

    @property
    def K(self) -> int:
        return self.selection.K


@dataclass
class ZoneReport:
    zone: str
    n_points: int
    status: str
    K: Optional[int] = None
    mode: Optional[str] = None
    n_features: Optional[int] = None
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    p: Optional[float] = None
    message: str = ""


@dataclass
class PartitionedResult:
    labels: List[Optional[str]]
    volumes: np.ndarray
    delta: np.ndarray
    zone_of_point: np.ndarray
    zones: List[ZoneReport] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(label is not None for label in self.labels)


def classify_pattern(net: LinearNetwork, points: PointSet, policy: KPolicy, hist_ks: Sequence[int] = (),
                     threads: Optional[int] = None, time_budget_s: Optional[float] = None,
                     em_tol: Optional[float] = None, em_max_iter: Optional[int] = None,
                     allow_degenerate: bool = False) -> PatternResult:
    """
    Pasos del procedimiento en orden: elegir K, calcular S_K, ajustar EM y
    etiquetar. Una sola pasada de vecinos sirve para la curva de entropía,
    el K elegido y los histogramas.

    Raises:
        InsufficientPointsError: Si n < K + 1 o algún punto no tiene K vecinos
        DegenerateFitError: Si el ajuste EM colapsa y no se permite continuar
    """
    k_needed = max([policy.needed_k, *hist_ks])
    if points.n < k_needed + 1:
        raise InsufficientPointsError(f"el patrón tiene {points.n} puntos y se requieren {k_needed + 1}")

    table = neighbour_table(net, points.arrays(), k_needed, threads=threads, time_budget_s=time_budget_s)
    selection = choose_k(net, None, policy, table=table)
    logger.info(f"K seleccionado: {selection.K} (modo {selection.mode})")

    volumes = table.volumes(selection.K)
    incomplete = np.flatnonzero(~np.isfinite(volumes))
    if incomplete.size:
        raise InsufficientPointsError(
            f"{incomplete.size} puntos con menos de {selection.K} vecinos alcanzables",
            point_indices=incomplete.tolist()
        )
    fit = em_fit(volumes, selection.K, tol=em_tol, max_iter=em_max_iter)
    result = classify(fit, volumes, allow_degenerate=allow_degenerate)
    logger.info(f"Clasificación: {result.n_features} feature de {points.n} puntos")
    return PatternResult(selection=selection, classification=result, volumes=volumes, table=table)


def pattern_options(config: RunConfig) -> Dict[str, Any]:
    return {
        "hist_ks": config.hist_ks, "threads": config.threads, "time_budget_s": config.time_budget_s,
        "em_tol": config.em_tol, "em_max_iter": config.em_max_iter,
        "allow_degenerate": config.allow_degenerate,
    }


def _write_selection(out: str, selection: KSelection, config: RunConfig) -> Dict[str, str]:
    artifacts = {}
    if selection.curve is None:
        return artifacts
    curve = pd.DataFrame({"K": selection.curve.ks, "entropy": selection.curve.entropies})
    artifacts["entropy_curve"] = io_formats.write_table(curve, os.path.join(out, "entropy_curve"),
                                                        config.output_format)
    payload = {**selection.fit.report(), **provenance(config), "skipped": selection.curve.skipped}
    artifacts["segmented_fit"] = io_formats.write_json(os.path.join(out, "segmented_fit.json"), payload)
    if config.plots:
        artifacts["entropy_curve_svg"] = io_formats.plot_entropy_curve(
            selection.curve, selection.fit, os.path.join(out, "entropy_curve.svg"))
    return artifacts


def write_histograms(out: str, table: NeighbourTable, ks: Sequence[int], fmt: str = "csv",
                     plots: bool = True) -> Dict[str, str]:
    """Tabla de bins (y SVG) de S_K para cada K pedido"""
    artifacts = {}
    for K in ks:
        bins = io_formats.histogram_table(table.volumes(K))
        artifacts[f"hist_{K}"] = io_formats.write_table(bins, os.path.join(out, f"hist_K{K}"), fmt)
        if plots:
            artifacts[f"hist_{K}_svg"] = io_formats.plot_histogram(bins, K, os.path.join(out, f"hist_K{K}.svg"))
    return artifacts


def pipeline(config: RunConfig) -> Dict[str, Any]:
    """
    Corre el procedimiento sobre la red completa y escribe: ajuste EM (JSON),
    patrón etiquetado, curva de entropía y ajuste segmentado (modo automático)
    e histogramas de volúmenes.

    Returns:
        Diccionario con la clasificación, la selección de K y las rutas escritas
    """
    out = io_formats.ensure_dir(config.output_dir)
    net = io_formats.read_network(config.network_path, config.network_format, config.merge_tol)
    points = io_formats.read_points(config.points_path, net, config.points_format, config.snap_tol)
    result = classify_pattern(net, points, config.policy, **pattern_options(config))

    artifacts = _write_selection(out, result.selection, config)
    classification = result.classification
    frame = io_formats.labelled_frame(net, points.segment_ids, points.offsets, result.volumes,
                                      classification.fit.delta, classification.labels,
                                      index=points.source_index)
    if points.labels is not None:
        frame["truth"] = points.labels
    artifacts["labelled"] = io_formats.write_table(frame, os.path.join(out, "labelled"), config.output_format)

    evaluation = evaluate_labels(points.labels, classification.labels)
    if evaluation is not None:
        logger.info(f"Contra las etiquetas de entrada: TPR={evaluation['tpr']}, "
                    f"FPR={evaluation['fpr']}, ACC={evaluation['acc']:.3f}")

    report = {
        **classification.fit.report(),
        **provenance(config),
        "mode": result.selection.mode,
        "threshold": classification.threshold,
        "n_points": points.n,
        "n_features": classification.n_features,
        "rejected_points": len(points.rejected or []),
        "evaluation": evaluation,
    }
    artifacts["fit"] = io_formats.write_json(os.path.join(out, "fit.json"), report)

    hist_ks = config.hist_ks or [result.K]
    artifacts.update(write_histograms(out, result.table, hist_ks, config.output_format, config.plots))
    if config.plots:
        artifacts["classified_svg"] = io_formats.plot_classification(net, frame, os.path.join(out, "classified.svg"))

    logger.info(f"Artefactos escritos en {out}: {sorted(artifacts)}")
    return {"classification": classification, "selection": result.selection, "result": result,
            "points": points, "network": net, "artifacts": artifacts}


# --- Por zonas ---

def _zone_task(args):
    zone, sub_net, zone_points, config = args
    return _classify_zone(zone, sub_net, zone_points, config, threads=1)


def _classify_zone(zone: str, sub_net: LinearNetwork, zone_points: PointSet, config: RunConfig,
                   threads: Optional[int] = None):
    try:
        options = pattern_options(config)
        if threads is not None:
            options["threads"] = threads
        result = classify_pattern(sub_net, zone_points, config.policy, **options)
    except NetworkFeatureError as e:
        logger.warning(f"Zona {zone}: fallida ({e})")
        return ZoneReport(zone=zone, n_points=zone_points.n, status="failed", message=str(e)), None
    fit = result.classification.fit
    report = ZoneReport(
        zone=zone, n_points=zone_points.n, status="ok", K=result.K, mode=result.selection.mode,
        n_features=result.classification.n_features, lambda1=fit.lambda1, lambda2=fit.lambda2, p=fit.p
    )
    return report, (result.classification.labels, result.volumes, np.asarray(fit.delta))


def classify_partitioned(net: LinearNetwork, points: PointSet, zones: np.ndarray,
                         config: RunConfig) -> PartitionedResult:
    """
    Aplica el procedimiento de forma independiente en cada zona (sub-red
    inducida y sus puntos) y une las etiquetas.

    Las zonas con menos de K + 1 puntos se informan y se omiten. Los puntos de
    zonas omitidas o fallidas quedan sin etiqueta.
    """
    n = points.n
    point_zone = zones[points.segment_ids] if n else np.zeros(0, dtype=object)
    labels: List[Optional[str]] = [None] * n
    volumes = np.full(n, np.nan)
    delta = np.full(n, np.nan)
    reports: List[ZoneReport] = []
    tasks = []

    for zone in pd.unique(zones):
        zone_ids = np.flatnonzero(zones == zone)
        mask = point_zone == zone
        count = int(np.count_nonzero(mask))
        if count < config.needed_k + 1:
            logger.warning(f"Zona {zone}: {count} puntos, se omite (se requieren {config.needed_k + 1})")
            reports.append(ZoneReport(zone=str(zone), n_points=count, status="skipped",
                                      message=f"insufficient points: {count} < {config.needed_k + 1}"))
            continue
        sub_net, local_to_parent = SubNetwork(net, zone_ids).materialize()
        parent_to_local = np.full(net.n_segments, -1, dtype=np.int64)
        parent_to_local[local_to_parent] = np.arange(local_to_parent.size)
        zone_points = points.subset(mask)
        zone_points.segment_ids = parent_to_local[zone_points.segment_ids]
        tasks.append((str(zone), sub_net, zone_points, config, mask))

    if config.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(_zone_task, [task[:4] for task in tasks]))
    else:
        outcomes = [_classify_zone(*task[:4]) for task in tasks]

    for task, (report, payload) in zip(tasks, outcomes):
        reports.append(report)
        if payload is None:
            continue
        mask = task[4]
        zone_labels, zone_volumes, zone_delta = payload
        for i, label in zip(np.flatnonzero(mask).tolist(), zone_labels):
            labels[i] = label
        volumes[mask] = zone_volumes
        delta[mask] = zone_delta

    done = sum(1 for r in reports if r.status == "ok")
    logger.info(f"Clasificación por zonas: {done}/{len(reports)} zonas clasificadas")
    return PartitionedResult(labels=labels, volumes=volumes, delta=delta,
                             zone_of_point=point_zone, zones=reports)


def run_partitioned(config: RunConfig) -> Dict[str, Any]:
    """
    Clasificación por zonas con escritura de artefactos.

    Raises:
        PartialResultsError: Si alguna zona falló y no se permiten resultados parciales
    """
    out = io_formats.ensure_dir(config.output_dir)
    net = io_formats.read_network(config.network_path, config.network_format, config.merge_tol)
    points = io_formats.read_points(config.points_path, net, config.points_format, config.snap_tol)
    zones = io_formats.read_partition(config.partition_path, net)
    result = classify_partitioned(net, points, zones, config)

    artifacts = {}
    zone_table = pd.DataFrame([vars(r) for r in result.zones])
    artifacts["zones"] = io_formats.write_table(zone_table, os.path.join(out, "zones"), config.output_format)
    failed = [r.zone for r in result.zones if r.status == "failed"]
    summary = {
        **provenance(config),
        "n_points": points.n,
        "zones": len(result.zones),
        "classified_zones": sum(1 for r in result.zones if r.status == "ok"),
        "skipped_zones": [r.zone for r in result.zones if r.status == "skipped"],
        "failed_zones": failed,
        "evaluation": evaluate_labels(points.labels, result.labels),
    }
    artifacts["summary"] = io_formats.write_json(os.path.join(out, "zones_summary.json"), summary)

    if failed and not config.allow_partial:
        raise PartialResultsError(f"Fallaron {len(failed)} zonas: {', '.join(failed)}")

    frame = io_formats.labelled_frame(net, points.segment_ids, points.offsets, result.volumes,
                                      result.delta, [label or "" for label in result.labels],
                                      index=points.source_index)
    if points.labels is not None:
        frame["truth"] = [label or "" for label in points.labels]
    frame["zone"] = result.zone_of_point
    artifacts["labelled"] = io_formats.write_table(frame, os.path.join(out, "labelled"), config.output_format)
    logger.info(f"Artefactos escritos en {out}: {sorted(artifacts)}")
    return {"result": result, "points": points, "network": net, "artifacts": artifacts,
            "partial": bool(failed)}
