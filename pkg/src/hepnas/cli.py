"""Command-line entry point: ``hepnas search|oracle|report|ablate``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .oracle import build_table, estimate_archs, load_table, rank_report, write_report
from .partition_search import SearchResult, run_search
from .searchspace import Region, SpaceError, decode, enumerate_archs
from .smd import SmdWeights
from .supernet import eval_accuracy, load_checkpoint, save_checkpoint

log = logging.getLogger("hepnas")

RESULT_FILE = "result.json"
SEARCH_LOG_FILE = "search_log.csv"
CHECKPOINT_FILE = "supernet.json"
ORACLE_FILE = "oracle_table.csv"
REPORT_FILE = "rank_report.json"
SUMMARY_FILE = "stage_summary.csv"
ABLATION_FILE = "ablation.csv"
MANIFEST_FILE = "manifest.jsonl"

SMD_GRID = {"A": (0.0, 0.0), "B": (1.0, 0.0), "C": (0.0, 1.0), "D": (1.0, 1.0)}


class InputError(Exception):
    """Bad user input discovered after parsing (missing files, cap violations)."""


# ----------------------------------------------------------------- artifacts


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_manifest(out: Path, artifacts: Sequence[str], cfg: RunConfig, seed: int | None) -> None:
    """One line per artifact: file hash, config hash, seed and package version."""
    lines = []
    for name in artifacts:
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        entry = {"artifact": name, "sha256": digest, "config_sha256": cfg.sha256(), "seed": seed, "version": __version__}
        lines.append(json.dumps(entry, sort_keys=True))
    (out / MANIFEST_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


# ------------------------------------------------------------------- search


def _search(cfg: RunConfig, seed: int, **overrides) -> SearchResult:
    smd = overrides.pop("smd", cfg.smd)
    opts = {"order": cfg.mode.split_order, "baseline": cfg.mode.baseline, "select_mode": cfg.mode.select, **overrides}
    return run_search(
        cfg.cell_spec(), cfg.make_splits(), cfg.train_config(), cfg.stage_schedule(), smd, seed,
        gm=cfg.gm_config(), **opts,
    )


def cmd_search(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    cfg = dataclasses.replace(cfg, seed=seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = _search(cfg, seed)
    valid = cfg.make_splits().valid
    doc = {
        "format": "hepnas-search",
        "version": __version__,
        "seed": seed,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_dict(),
        "architecture": result.architecture.encode(),
        "final_region": result.supernet.region.encode(),
        "final_region_size": result.supernet.region.size(),
        "final_valid_acc": eval_accuracy(result.supernet, valid, result.architecture),
        "selections": [s.selected for s in result.stages],
        "stages": [s.to_dict() for s in result.stages],
    }
    _write_json(out / RESULT_FILE, doc)
    rows = []
    for s in result.stages:
        for i, (reg, size, acc) in enumerate(zip(s.regions, s.sizes, s.val_accs)):
            rows.append([s.stage, i, reg, size, repr(float(acc)), int(i == s.selected)])
    _write_csv(out / SEARCH_LOG_FILE, ["stage", "child_id", "region", "region_size", "val_acc", "selected"], rows)
    save_checkpoint(result.supernet, out / CHECKPOINT_FILE)
    _write_manifest(out, [RESULT_FILE, SEARCH_LOG_FILE, CHECKPOINT_FILE], cfg, seed)
    print(f"architecture {doc['architecture']}  final region size {doc['final_region_size']}")
    return 0


# ------------------------------------------------------------------- oracle


def _workers(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("HEPNAS_WORKERS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise InputError(f"HEPNAS_WORKERS must be an integer, got {env!r}") from None


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.cell_spec()
    region = spec.full_region()
    if region.size() > cfg.oracle.cap:
        raise ConfigError("oracle.cap", f"region has {region.size()} architectures, cap is {cfg.oracle.cap}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / ORACLE_FILE
    if path.exists() and not args.resume:
        path.unlink()
    table = build_table(
        spec, region, cfg.make_splits(), cfg.oracle_config(), cfg.oracle.base_seed,
        path=path, workers=_workers(args.workers), cap=cfg.oracle.cap, limit=args.limit,
    )
    _write_manifest(out, [ORACLE_FILE], cfg, cfg.oracle.base_seed)
    vals = table.values()
    print(f"{len(table.accuracies)}/{region.size()} rows  min {vals.min():.4f}  mean {vals.mean():.4f}  max {vals.max():.4f}")
    return 0


# ------------------------------------------------------------------- report


def _load_search(directory: Path) -> tuple[dict, RunConfig]:
    path = directory / RESULT_FILE
    if not path.exists():
        raise InputError(f"missing search result {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    return doc, parse_config(doc["config"])


def _load_oracle(directory: Path, cfg: RunConfig):
    path = directory / ORACLE_FILE
    if not path.exists():
        raise InputError(f"missing oracle table {path}")
    region = cfg.cell_spec().full_region()
    table = load_table(path, region, cfg.oracle_config())
    if len(table.accuracies) != region.size():
        raise InputError(f"{path} has {len(table.accuracies)} rows, region needs {region.size()}")
    return table


def _region_stats(region: Region, table) -> list[str]:
    vals = np.array([table.accuracies[a.encode()] for a in enumerate_archs(region)])
    return [_fmt(vals.mean()), _fmt(np.median(vals)), _fmt(vals.min()), _fmt(vals.max())]


def cmd_report(args) -> int:
    doc, cfg = _load_search(Path(args.search))
    table = _load_oracle(Path(args.oracle), cfg)
    net = load_checkpoint(Path(args.search) / CHECKPOINT_FILE)
    spec = cfg.cell_spec()
    valid = cfg.make_splits().valid
    estimates = estimate_archs(net, valid, enumerate_archs(net.region))
    try:
        report = rank_report(decode(doc["architecture"], spec), table, estimates)
    except SpaceError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / REPORT_FILE)

    rows = []
    full = spec.full_region()
    rows.append([0, full.encode(), full.size(), "", *_region_stats(full, table)])
    for s in doc["stages"]:
        sel = s["selected"]
        region = Region.decode(s["regions"][sel])
        rows.append([s["stage"] + 1, s["regions"][sel], s["sizes"][sel], _fmt(s["val_accs"][sel]), *_region_stats(region, table)])
    _write_csv(
        out / SUMMARY_FILE,
        ["stage", "region", "region_size", "val_acc", "oracle_mean", "oracle_median", "oracle_min", "oracle_max"],
        rows,
    )
    _write_manifest(out, [REPORT_FILE, SUMMARY_FILE], cfg, doc["seed"])
    rho = "absent" if report.spearman is None else f"{report.spearman:.4f}"
    print(f"spearman {rho} over {report.n_estimates}  selected {report.selected_acc:.4f}  regret {report.regret:.4f}")
    return 0


# ------------------------------------------------------------------- ablate


def _grid_settings(grid: str, cfg: RunConfig) -> list[tuple[str, dict]]:
    if grid == "smd":
        return [(f"{k}:{lp:g},{lq:g}", {"smd": SmdWeights(lp, lq)}) for k, (lp, lq) in SMD_GRID.items()]
    if grid == "order":
        return [(o, {"order": o}) for o in ("ascending", "reverse", "random")]
    if grid == "hierarchies":
        return [(f"stages={k}", {"max_stages": k}) for k in range(1, cfg.space.n_nodes)]
    if grid == "baseline":
        return [(b, {"baseline": b}) for b in ("hepnas", "oneshot", "edgewise")]
    raise InputError(f"unknown grid {grid!r}")


def _parse_seeds(text: str | None, default: int) -> list[int]:
    if not text:
        return [default]
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"--seeds must be comma-separated integers, got {text!r}") from None


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    seeds = _parse_seeds(args.seeds, cfg.seed)
    table = _load_oracle(Path(args.oracle), cfg) if args.oracle else None
    settings = _grid_settings(args.grid, cfg)
    valid = cfg.make_splits().valid
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        for name, overrides in settings:
            result = _search(cfg, seed, **overrides)
            arch = result.architecture
            oracle_acc = table.accuracies.get(arch.encode()) if table else None
            rows.append([
                args.grid, name, seed, arch.encode(), result.supernet.region.size(), len(result.stages),
                _fmt(eval_accuracy(result.supernet, valid, arch)), _fmt(oracle_acc),
            ])
            log.info("%s %s seed %d -> %s", args.grid, name, seed, arch.encode())
    _write_csv(
        out / ABLATION_FILE,
        ["grid", "setting", "seed", "architecture", "final_region_size", "stages", "valid_acc", "oracle_acc"],
        rows,
    )
    _write_manifest(out, [ABLATION_FILE], cfg, seeds[0] if len(seeds) == 1 else None)
    print(f"{len(rows)} rows -> {out / ABLATION_FILE}")
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hepnas", description="Hierarchy-wise partitioned supernet search at desk scale.")
    p.add_argument("--version", action="version", version=f"hepnas {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("search", help="run the partitioned search")
    s.add_argument("config")
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_search)

    o = sub.add_parser("oracle", help="build the standalone-trained oracle table")
    o.add_argument("config")
    o.add_argument("--out", required=True)
    o.add_argument("--resume", action="store_true", help="keep rows already in the table")
    o.add_argument("--workers", type=int, default=None, help="process fan-out (default: $HEPNAS_WORKERS or 1)")
    o.add_argument("--limit", type=int, default=None, help="stop after this many new rows")
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("report", help="rank correlation and regret of a search against the oracle")
    r.add_argument("--search", required=True)
    r.add_argument("--oracle", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("config")
    a.add_argument("--grid", required=True, choices=["smd", "order", "hierarchies", "baseline"])
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default=None, help="comma-separated seeds (default: the config seed)")
    a.add_argument("--oracle", default=None, help="oracle directory, fills the oracle_acc column")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report runtime failures as exit 1
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
