"""
Interfaz de línea de comandos: `python -m app <subcomando> ...`

Códigos de salida: 0 ok, 2 error de entrada, 3 ajuste degenerado,
4 resultados parciales. Ante un error se escribe error.json en el
directorio de salida.
"""
from typing import Any, Dict, List, Optional, Sequence
import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.config import get_settings
from app.core.errors import (
    EXIT_INPUT_ERROR,
    EXIT_OK,
    EXIT_PARTIAL,
    InsufficientPointsError,
    InvalidInputError,
    NetworkFeatureError,
)
from app.models.schemas import SCHEMA_VERSION, KPolicy, RunConfig
from app.services import io_formats
from app.services.geodesics import neighbour_table
from app.services.k_selection import entropy_curve_from_table, fit_segmented
from app.services.pipeline import pipeline, provenance, run_partitioned, write_histograms
from app.services.simulation import (
    load_designs,
    rates_table,
    run_design,
    simulate_arrays,
    simulate_design,
)
from app.services.synthetic import SyntheticNetwork, generate
from app.utils.logging import setup_logging
from app.utils.validators import sanitize_filename

logger = logging.getLogger(__name__)

DEFAULT_HIST_KS = list(range(27, 33))


def parse_ks(text: str) -> List[int]:
    """'27-32' o '5,10,15'"""
    values: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            values.extend(range(lo, hi + 1))
        else:
            values.append(int(part))
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"Lista de K no válida: {text}")
    return sorted(set(values))


def parse_param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"Parámetro no válido (use clave=valor): {text}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def args_hash(args: argparse.Namespace) -> str:
    payload = {k: v for k, v in vars(args).items() if k != "handler"}
    canonical = json.dumps(payload, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def args_provenance(args: argparse.Namespace) -> Dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, "config_hash": args_hash(args), "seed": args.seed}


def run_config(args: argparse.Namespace, **extra) -> RunConfig:
    return RunConfig(
        network_path=args.network, network_format=args.network_format,
        points_path=args.points, points_format=args.points_format,
        k=getattr(args, "k", None), k_max=args.k_max, snap_tol=args.snap_tol,
        merge_tol=args.merge_tol, em_tol=args.em_tol, em_max_iter=args.em_max_iter,
        output_dir=args.output_dir, seed=args.seed, threads=args.threads,
        allow_degenerate=args.allow_degenerate, time_budget_s=args.time_budget,
        output_format=args.format, plots=not args.no_plots, **extra
    )


def _load_pattern(args: argparse.Namespace):
    net = io_formats.read_network(args.network, args.network_format, args.merge_tol)
    points = io_formats.read_points(args.points, net, args.points_format, args.snap_tol)
    return net, points


# --- Subcomandos ---

def cmd_simulate(args: argparse.Namespace) -> int:
    out = io_formats.ensure_dir(args.output_dir)
    if args.design:
        specs = load_designs(args.design)
        if args.name:
            specs = [s for s in specs if s.name == args.name]
            if not specs:
                raise InvalidInputError(f"Diseño no encontrado: {args.name}")
        for spec in specs:
            stem = sanitize_filename(spec.name)
            io_formats.write_network_table(spec.network, os.path.join(out, f"{stem}_network.csv"))
            for rep in range(args.patterns):
                pattern = simulate_design(spec, rep)
                segment_ids = np.array([p.segment_id for p in pattern.points], dtype=np.int64)
                offsets = np.array([p.offset for p in pattern.points], dtype=float)
                _write_simulated(spec.network, segment_ids, offsets, pattern.truth,
                                 os.path.join(out, f"{stem}_pattern_{rep}"), args.format)
                logger.info(f"Diseño '{spec.name}', patrón {rep}: {len(pattern.points)} puntos")
            if args.rates:
                report = run_design(spec, threads=args.threads)
                io_formats.write_json(os.path.join(out, f"{stem}_rates.json"),
                                      {**report.model_dump(exclude={"per_rep"}), **args_provenance(args)})
                io_formats.write_table(rates_table([report]), os.path.join(out, f"{stem}_rates"), args.format)
        return EXIT_OK

    if args.rate is None:
        raise InvalidInputError("Indique --design o --lambda")
    if args.generator:
        synthetic = generate(args.generator, **dict(args.param or []))
    elif args.network:
        synthetic = SyntheticNetwork(io_formats.read_network(args.network, args.network_format, args.merge_tol))
    else:
        raise InvalidInputError("Indique --generator o --network")
    net = synthetic.network
    region = synthetic.region(args.region) if args.region else net
    rng = np.random.default_rng(args.seed)
    segment_ids, offsets = simulate_arrays(region, args.rate, rng)
    io_formats.write_network_table(net, os.path.join(out, "network.csv"))
    _write_simulated(net, segment_ids, offsets, ["clutter"] * segment_ids.size,
                     os.path.join(out, "pattern"), args.format)
    length = region.total_length
    summary = {
        **args_provenance(args),
        "total_length": length,
        "lambda": args.rate,
        "expected_count": args.rate * length,
        "n_points": int(segment_ids.size),
    }
    io_formats.write_json(os.path.join(out, "simulation.json"), summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _write_simulated(net, segment_ids, offsets, truth, stem: str, fmt: str) -> str:
    xy = net.point_xy(segment_ids, offsets)
    frame = pd.DataFrame({
        "index": np.arange(segment_ids.size),
        "segment_id": segment_ids,
        "offset": offsets,
        "x": xy[:, 0],
        "y": xy[:, 1],
        "truth": list(truth),
    })
    return io_formats.write_table(frame, stem, fmt)


def cmd_volumes(args: argparse.Namespace) -> int:
    out = io_formats.ensure_dir(args.output_dir)
    net, points = _load_pattern(args)
    if points.n < args.k + 1:
        raise InsufficientPointsError(f"el patrón tiene {points.n} puntos y K={args.k}")
    table = neighbour_table(net, points.arrays(), args.k, threads=args.threads, time_budget_s=args.time_budget)
    frame = pd.DataFrame({
        "index": np.arange(points.n),
        "segment_id": points.segment_ids,
        "offset": points.offsets,
        "d_K": table.distances(args.k),
        "s_K": table.volumes(args.k),
    })
    io_formats.write_table(frame, os.path.join(out, f"volumes_K{args.k}"), args.format)
    return EXIT_OK


def cmd_select_k(args: argparse.Namespace) -> int:
    out = io_formats.ensure_dir(args.output_dir)
    net, points = _load_pattern(args)
    if points.n < args.k_max + 1:
        raise InsufficientPointsError(f"el patrón tiene {points.n} puntos y k_max={args.k_max}")
    table = neighbour_table(net, points.arrays(), args.k_max, threads=args.threads,
                            time_budget_s=args.time_budget)
    curve = entropy_curve_from_table(table, args.k_max)
    fit = fit_segmented(curve)
    frame = pd.DataFrame({"K": curve.ks, "entropy": curve.entropies})
    io_formats.write_table(frame, os.path.join(out, "entropy_curve"), args.format)
    payload = {**fit.report(), **args_provenance(args), "skipped": curve.skipped}
    io_formats.write_json(os.path.join(out, "segmented_fit.json"), payload)
    if not args.no_plots:
        io_formats.plot_entropy_curve(curve, fit, os.path.join(out, "entropy_curve.svg"))
    print(json.dumps(fit.report(), indent=2))
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    config = run_config(args, hist_ks=args.hist_ks or [])
    outcome = pipeline(config)
    classification = outcome["classification"]
    print(json.dumps({**classification.fit.report(), **provenance(config),
                      "n_features": classification.n_features}, indent=2))
    return EXIT_OK


def cmd_classify_zones(args: argparse.Namespace) -> int:
    config = run_config(args, partition_path=args.partition, allow_partial=args.allow_partial)
    outcome = run_partitioned(config)
    return EXIT_PARTIAL if outcome["partial"] else EXIT_OK


def cmd_rates(args: argparse.Namespace) -> int:
    out = io_formats.ensure_dir(args.output_dir)
    specs = load_designs(args.design)
    if args.name:
        specs = [s for s in specs if s.name in args.name]
        if not specs:
            raise InvalidInputError(f"Diseños no encontrados: {', '.join(args.name)}")
    reports = []
    for spec in specs:
        if args.reps:
            spec = spec.model_copy(update={"reps": args.reps})
        if args.policies:
            spec = spec.model_copy(update={"k_policies": [KPolicy.parse(p) for p in args.policies]})
        if args.override_seed:
            spec = spec.model_copy(update={"seed": args.seed})
        report = run_design(spec, threads=args.threads)
        reports.append(report)
        io_formats.write_json(
            os.path.join(out, f"{sanitize_filename(spec.name)}_report.json"),
            {**report.model_dump(exclude=set() if args.per_rep else {"per_rep"}), **args_provenance(args)}
        )
    stem = os.path.splitext(os.path.basename(args.design))[0]
    path = io_formats.write_table(rates_table(reports), os.path.join(out, f"rates_{stem}"), args.format)
    logger.info(f"Tabla de tasas escrita en {path}")
    return EXIT_OK


def cmd_hist(args: argparse.Namespace) -> int:
    out = io_formats.ensure_dir(args.output_dir)
    net, points = _load_pattern(args)
    ks = args.ks or DEFAULT_HIST_KS
    if points.n < max(ks) + 1:
        raise InsufficientPointsError(f"el patrón tiene {points.n} puntos y K={max(ks)}")
    table = neighbour_table(net, points.arrays(), max(ks), threads=args.threads, time_budget_s=args.time_budget)
    write_histograms(out, table, ks, args.format, plots=not args.no_plots)
    return EXIT_OK


# --- Parser ---

def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.seed)
    common.add_argument("--threads", type=int, default=settings.threads)
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--output-dir", default=settings.output_dir)
    common.add_argument("--log-level", default=settings.log_level)
    common.add_argument("--no-plots", action="store_true", help="No escribir gráficos SVG")

    pattern = argparse.ArgumentParser(add_help=False)
    pattern.add_argument("--network", required=True, help="Archivo de red (GeoJSON, CSV o tabla de segmentos)")
    pattern.add_argument("--network-format", choices=["geojson", "csv", "segments"])
    pattern.add_argument("--points", required=True, help="Archivo de puntos")
    pattern.add_argument("--points-format", choices=["xy", "netpoint", "geojson", "labelled"])
    pattern.add_argument("--snap-tol", type=float, default=settings.snap_tol)
    pattern.add_argument("--merge-tol", type=float, default=None)
    pattern.add_argument("--time-budget", type=float, default=settings.time_budget_s,
                         help="Segundos máximos para la pasada de vecinos")

    fitting = argparse.ArgumentParser(add_help=False)
    fitting.add_argument("--k", type=int, default=None, help="K fijo; sin --k se elige automáticamente")
    fitting.add_argument("--k-max", type=int, default=settings.k_max)
    fitting.add_argument("--em-tol", type=float, default=settings.em_tol)
    fitting.add_argument("--em-max-iter", type=int, default=settings.em_max_iter)
    fitting.add_argument("--allow-degenerate", action="store_true", default=settings.allow_degenerate)

    parser = argparse.ArgumentParser(prog="python -m app",
                                     description="Clasificación feature/clutter en redes lineales")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Simular patrones (diseño o λ sobre una red)")
    p.add_argument("--design", help="Archivo de diseños TOML/JSON")
    p.add_argument("--name", help="Simular solo este diseño")
    p.add_argument("--patterns", type=int, default=1, help="Patrones a escribir por diseño")
    p.add_argument("--rates", action="store_true", help="Calcular además la tabla de tasas")
    p.add_argument("--lambda", dest="rate", type=float, help="Intensidad por unidad de longitud")
    p.add_argument("--generator", help="Red sintética (grid_with_loops, random_tree, ...)")
    p.add_argument("--param", type=parse_param, action="append", help="Parámetro del generador clave=valor")
    p.add_argument("--network", help="Archivo de red")
    p.add_argument("--network-format", choices=["geojson", "csv", "segments"])
    p.add_argument("--merge-tol", type=float, default=None)
    p.add_argument("--region", help="Región con nombre de la red sintética")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("volumes", parents=[common, pattern], help="Tabla de D_K y S_K")
    p.add_argument("--k", type=int, default=settings.default_k)
    p.set_defaults(handler=cmd_volumes)

    p = sub.add_parser("select-k", parents=[common, pattern], help="Curva de entropía y K̂")
    p.add_argument("--k-max", type=int, default=settings.k_max)
    p.set_defaults(handler=cmd_select_k)

    p = sub.add_parser("classify", parents=[common, pattern, fitting], help="Clasificación sobre toda la red")
    p.add_argument("--hist-ks", type=parse_ks, default=None, help="K para histogramas, p.ej. 27-32")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("classify-zones", parents=[common, pattern, fitting], help="Clasificación por zonas")
    p.add_argument("--partition", required=True, help="CSV segment_id,zone")
    p.add_argument("--allow-partial", action="store_true", default=settings.allow_partial)
    p.set_defaults(handler=cmd_classify_zones)

    p = sub.add_parser("rates", parents=[common], help="Tasas TPR/FPR/ACC de un archivo de diseños")
    p.add_argument("--design", required=True)
    p.add_argument("--name", action="append", help="Limitar a estos diseños")
    p.add_argument("--reps", type=int, default=None, help="Reemplaza el número de réplicas")
    p.add_argument("--policies", nargs="+", help="Reemplaza las políticas de K (p.ej. 5 10 auto:35)")
    p.add_argument("--override-seed", action="store_true", help="Usar --seed en lugar de la semilla del diseño")
    p.add_argument("--per-rep", action="store_true", help="Incluir resultados por réplica en el JSON")
    p.set_defaults(handler=cmd_rates)

    p = sub.add_parser("hist", parents=[common, pattern], help="Histogramas de S_K")
    p.add_argument("--ks", type=parse_ks, default=None, help="K a graficar (por defecto 27-32)")
    p.set_defaults(handler=cmd_hist)

    return parser


def _write_error(output_dir: Optional[str], error: Exception, exit_code: int) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "error": type(error).__name__,
        "message": str(error),
        "exit_code": exit_code,
    }
    print(json.dumps(payload), file=sys.stderr)
    if output_dir:
        try:
            io_formats.write_json(os.path.join(io_formats.ensure_dir(output_dir), "error.json"), payload)
        except OSError as e:
            logger.error(f"No se pudo escribir error.json: {e}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except NetworkFeatureError as e:
        logger.error(f"{type(e).__name__}: {e}")
        _write_error(args.output_dir, e, e.exit_code)
        return e.exit_code
    except (ValidationError, ValueError, FileNotFoundError) as e:
        logger.error(f"Entrada no válida: {e}")
        _write_error(args.output_dir, e, EXIT_INPUT_ERROR)
        return EXIT_INPUT_ERROR
