"""Command-line experiment runner.

    coopfusion generate --config t_junction --frames 200 --seed 1 --out data/tj
    coopfusion compare  --data data/tj --out reports/tj
    coopfusion sweep    --data data/tj --sensors all_subsets --out reports/tj
    coopfusion roi      --data data/tj --sensors 1,5 --roi -40,-20,0,0 --out reports/tj
    coopfusion density  --data data/tj --out reports/tj

Every table is tab-separated with a header row.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .dataset import Dataset, DatasetError, write_dataset
from .detector import DetectorParams, OracleDetector
from .experiments import (DEFAULT_KAPPAS, SchemeRunner, all_subsets, best_per_cardinality,
                          compare_schemes, density_iou_pairs, densities, load_observations,
                          roi_study, sensor_sweep, write_pr_curve, write_table)
from .fusion import SCHEMES, FusionConfig
from .metrics import density_cdf, iou_vs_density, recall_at_precision
from .scene import resolve_scenario

log = logging.getLogger("coopfusion")


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _sensor_sets(text: Optional[str]):
    """``"0,1,2"`` -> one set, ``"0,1;3,4"`` -> two sets, ``all_subsets`` as is."""
    if text is None:
        return None
    if text.strip() == "all_subsets":
        return "all_subsets"
    return [tuple(int(t) for t in part.split(",") if t.strip()) for part in text.split(";")]


def _set_name(ids: Sequence[int]) -> str:
    return "-".join(str(i) for i in ids)


def _detector(args) -> OracleDetector:
    params = DetectorParams.perfect() if args.detector == "perfect" else DetectorParams()
    return OracleDetector(params, seed=args.seed if args.seed is not None else 0)


def _observations(ds: Dataset, radius, args):
    return load_observations(ds, radius, args.frames, args.workers)


def _validate_ids(ds: Dataset, sets) -> None:
    known = set(ds.scenario.sensor_ids)
    for ids in sets:
        bad = set(ids) - known
        if bad or not ids:
            raise SystemExit(f"invalid sensor set {ids} for scenario {ds.scenario.name}")


def _out_dir(args, ds: Dataset) -> Path:
    out = Path(args.out) if args.out else ds.root / "reports"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _open(args) -> Dataset:
    root = args.data or args.out
    if root is None:
        raise SystemExit("--data DIR is required")
    try:
        return Dataset(root)
    except DatasetError as e:
        raise SystemExit(f"missing dataset: {e}")


def cmd_generate(args) -> int:
    cfg = resolve_scenario(args.config)
    if args.out is None:
        raise SystemExit("--out DIR is required")
    seed = args.seed if args.seed is not None else 0
    try:
        write_dataset(args.out, cfg, args.frames or 1, seed)
    except DatasetError as e:
        raise SystemExit(str(e))
    log.info("wrote %d frames of %s to %s", args.frames or 1, cfg.name, args.out)
    return 0


def cmd_compare(args) -> int:
    ds = _open(args)
    radius = args.radius if args.radius is not None else ds.scenario.hybrid_radius
    kappas = tuple(args.kappa) if args.kappa else DEFAULT_KAPPAS
    schemes = tuple(args.scheme) if args.scheme else ("early", "hybrid", "late")
    sets = _sensor_sets(args.sensors)
    ids = None
    if sets and sets != "all_subsets":
        _validate_ids(ds, sets)
        ids = sets[0]
    obs = _observations(ds, radius, args)
    runner = SchemeRunner(_detector(args), FusionConfig(hybrid_radius=radius))
    results = compare_schemes(obs, ds.scenario.detection_area, runner, schemes, kappas, ids)
    out = _out_dir(args, ds)
    write_table(out / "compare.tsv", ("scheme", "kappa", "ap", "kbit_per_sensor"),
                [(r.scheme, f"{k:g}", r.ap[k], r.kbit_per_sensor) for r in results for k in kappas])
    # wall-clock numbers vary run to run, so they live apart from the AP table
    write_table(out / "timing.tsv", ("scheme", "ms_per_frame"),
                [(r.scheme, r.ms_per_frame) for r in results])
    for r in results:
        print(f"{r.scheme:7s} " + " ".join(f"AP@{k:g}={r.ap[k]:.4f}" for k in kappas)
              + f"  {r.kbit_per_sensor:.2f} kbit/sensor  {r.ms_per_frame:.1f} ms/frame")
    return 0


def cmd_sweep(args) -> int:
    ds = _open(args)
    sets = _sensor_sets(args.sensors) or "all_subsets"
    if sets == "all_subsets":
        sets = all_subsets(ds.scenario.sensor_ids)
    _validate_ids(ds, sets)
    kappa = args.kappa[0] if args.kappa else 0.7
    obs = _observations(ds, args.radius, args)
    runner = SchemeRunner(_detector(args))
    rows = sensor_sweep(obs, ds.scenario.detection_area, runner, sets, kappa)
    out = _out_dir(args, ds)
    write_table(out / "sweep.tsv", ("n_sensors", "sensor_set", "ap_early", "ap_late"),
                [(len(r.sensors), r.sensors, r.ap_early, r.ap_late) for r in rows])
    top = best_per_cardinality(rows)
    table = []
    for k, best in top.items():
        for rank, r in enumerate(best, 1):
            table.append((k, rank, r.sensors, r.ap_early, r.ap_late,
                          recall_at_precision(r.curve_early, 0.95)))
        write_pr_curve(out / f"pr_best_{k}.tsv", best[0].curve_early)
    write_table(out / "sweep_top3.tsv", ("n_sensors", "rank", "sensor_set", "ap_early", "ap_late",
                                         "recall_at_p95"), table)
    for row in table:
        print(f"{row[0]} #{row[1]} {_set_name(row[2]):>12s}  EF={row[3]:.4f}  LF={row[4]:.4f}")
    return 0


def cmd_roi(args) -> int:
    ds = _open(args)
    if not args.roi or len(args.roi) != 4:
        raise SystemExit("--roi xmin,ymin,xmax,ymax is required")
    sets = _sensor_sets(args.sensors)
    if not sets or sets == "all_subsets" or len(sets[0]) != 2:
        raise SystemExit("--sensors must name a sensor pair, e.g. 1,5")
    _validate_ids(ds, sets)
    kappa = args.kappa[0] if args.kappa else 0.7
    obs = _observations(ds, args.radius, args)
    rows = roi_study(obs, tuple(args.roi), SchemeRunner(_detector(args)), sets[0], kappa)
    out = _out_dir(args, ds)
    write_table(out / f"roi_{_set_name(sets[0])}.tsv", ("sensor_set", "ap"), rows)
    for ids, ap in rows:
        print(f"{_set_name(ids):>6s}  " + ("AP=n/a (no objects in ROI)" if math.isnan(ap) else f"AP={ap:.4f}"))
    return 0


def cmd_density(args) -> int:
    ds = _open(args)
    ids_all = tuple(ds.scenario.sensor_ids)
    sets = _sensor_sets(args.sensors)
    if sets is None or sets == "all_subsets":
        sets = [(i,) for i in ids_all] + [ids_all]
    _validate_ids(ds, sets)
    area = ds.scenario.detection_area
    obs = _observations(ds, args.radius, args)
    out = _out_dir(args, ds)
    for ids in sets:
        table = density_cdf(densities(obs, ids, area))
        write_table(out / f"density_cdf_{_set_name(ids)}.tsv", ("density", "cdf"),
                    [(int(d), float(f)) for d, f in table])
        f0 = table[0, 1] if len(table) and table[0, 0] == 0 else 0.0
        print(f"{_set_name(ids):>12s}  F(0)={f0:.3f}")
    runner = SchemeRunner(_detector(args))
    d, v = density_iou_pairs(obs, ids_all, area, runner)
    write_table(out / "iou_vs_density.tsv", ("density", "mean_iou", "count"),
                [(float(c), float(m), int(n)) for c, m, n in iou_vs_density(d, v, 200)])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopfusion", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="t_junction",
                        help="shipped scenario name or scenario YAML path")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--frames", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--data", default=None, help="dataset directory (analysis commands)")
    common.add_argument("--scheme", action="append", choices=SCHEMES)
    common.add_argument("--sensors", default=None,
                        help='sensor set "0,1,2", several "0,1;3,4", or all_subsets')
    common.add_argument("--kappa", type=_floats, default=None, help="IOU thresholds, e.g. 0.7,0.8")
    common.add_argument("--radius", type=float, default=None, help="hybrid fusion radius in meters")
    common.add_argument("--roi", type=_floats, default=None, help="xmin,ymin,xmax,ymax")
    common.add_argument("--detector", choices=("calibrated", "perfect"), default="calibrated")
    common.add_argument("--workers", type=int, default=1, help="processes for frame preprocessing")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, fn in [("generate", cmd_generate), ("compare", cmd_compare), ("sweep", cmd_sweep),
                     ("roi", cmd_roi), ("density", cmd_density)]:
        sp = sub.add_parser(name, parents=[common])
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
