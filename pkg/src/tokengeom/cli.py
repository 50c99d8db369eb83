"""Command-line interface.

::

    tokengeom analyze  --input emb.npy --vocab vocab.txt --out results/
    tokengeom curve    --input emb.npy --vocab vocab.txt --anchors 17 " the" --out curves/
    tokengeom generate --kind sphere --samples 2000 --seed 0 --out sphere.csv
    tokengeom validate [--check iqr ...] [--seed 0]
    tokengeom stats    --input results/estimates.csv

Exit codes: 0 success, 1 usage error, 2 data error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import Optional

import numpy as np

from . import __version__
from . import stats
from . import synthetic as syn
from .core_geometry import GeometryError, Metric, NeighborRadii, radii_matrix
from .curve_analysis import (
    DEFAULT_KNEE_THRESHOLD,
    DEFAULT_MAX_SEGMENTS,
    DEFAULT_MIN_GAP_RATIO,
    diagnose,
)
from .estimators import DEFAULT_K_HI, METHODS, AnalysisReport, Band, EstimationError, analyze_point, build_curve
from .io import FORMATS, DataError, format_float, load_matrix, load_vocab, save_matrix

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VALIDATION = 0, 1, 2, 3
DEFAULT_KMAX = 2048
MAX_LABEL_COHORTS = 20
REPORT_FIELDS = ("n_hat", "K_prime", "ric_hat")
CSV_COLUMNS = (
    "anchor", "token", "n_hat", "logK_hat", "K_prime", "sigma", "ric_hat", "rms_residual",
    "usable_rows", "duplicates", "knees", "gaps", "concavity", "flags",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass
class RunConfig:
    input: str
    format: Optional[str] = None
    vocab: Optional[str] = None
    metric: str = "euclidean"
    radius: float = 1.0
    k_lo: Optional[int] = None
    k_hi: Optional[int] = None
    k_max: Optional[int] = None
    anchors: Optional[int] = None
    seed: int = 0
    cohort: str = "auto"
    method: str = "corrected"
    out: str = "."
    workers: int = 1
    curves: bool = False
    diagnostics: bool = True

    def check(self):
        if self.k_lo is not None and self.k_hi is not None and self.k_lo >= self.k_hi:
            raise UsageError(f"--kmin ({self.k_lo}) must be below --kmax-regress ({self.k_hi})")
        if self.k_hi is not None and self.k_max is not None and self.k_hi > self.k_max:
            raise UsageError(f"--kmax-regress ({self.k_hi}) exceeds --kmax ({self.k_max})")
        for name in ("k_lo", "k_hi", "k_max", "anchors"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise UsageError(f"{name} must be positive")
        if self.workers < 1:
            raise UsageError("--workers must be positive")
        if self.cohort in ("numeric", "label") and not self.vocab:
            raise UsageError(f"--cohort {self.cohort} needs --vocab")
        if not self.radius > 0:
            raise UsageError("--radius must be positive")

    def metric_obj(self) -> Metric:
        if self.metric == "circle":
            return Metric.circle(self.radius)
        if self.metric == "sphere":
            return Metric.sphere(self.radius)
        return Metric.euclidean()

    def band_for(self, p: int) -> Band:
        k_hi = self.k_hi
        if k_hi is None and self.k_max is not None:
            k_hi = min(p - 1, DEFAULT_K_HI, self.k_max)
        try:
            band = Band.default(p, self.k_lo, k_hi)
        except EstimationError as exc:
            raise DataError(f"band infeasible for p={p}: {exc}") from None
        if band.k_hi > p - 1:
            raise DataError(f"band upper rank {band.k_hi} exceeds p-1={p - 1}")
        return band

    def k_max_for(self, p: int, band: Band) -> int:
        if self.k_max is None:
            return min(p - 1, max(DEFAULT_KMAX, band.k_hi))
        if self.k_max > p - 1:
            raise DataError(f"--kmax {self.k_max} exceeds p-1={p - 1}")
        if self.k_max < band.k_hi:
            raise DataError(f"--kmax {self.k_max} is below the band's upper rank {band.k_hi}")
        return self.k_max


def _add_input_options(sp):
    sp.add_argument("--input", required=True, help="embedding matrix (csv, pcloud or npy)")
    sp.add_argument("--format", choices=FORMATS, help="override format detection by extension")
    sp.add_argument("--vocab", help="one token per line, line i names row i")
    sp.add_argument("--metric", choices=("euclidean", "circle", "sphere"), default="euclidean",
                    help="distance: coordinates, circle arclength or sphere great-circle")
    sp.add_argument("--radius", type=float, default=1.0, help="radius for the intrinsic metrics")
    sp.add_argument("--kmin", type=int, help="lowest neighbor rank in the regression band")
    sp.add_argument("--kmax-regress", type=int, help="highest neighbor rank in the regression band")
    sp.add_argument("--kmax", type=int, help="neighbor ranks computed per anchor")
    sp.add_argument("--method", choices=METHODS, default="corrected")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tokengeom", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"tokengeom {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("analyze", help="per-point dimension, scaling and curvature")
    _add_input_options(sp)
    sp.add_argument("--anchors", type=int, help="analyze a random subsample of this many points")
    sp.add_argument("--seed", type=int, default=0, help="seed for the anchor subsample")
    sp.add_argument("--cohort", choices=("auto", "numeric", "label", "none"), default="auto",
                    help="numeric: digit-bearing tokens vs the rest; label: one cohort per distinct "
                         "vocab line; auto: numeric when a vocabulary is given")
    sp.add_argument("--curves", action="store_true", help="also write one volume curve CSV per anchor")
    sp.add_argument("--skip-diagnostics", action="store_true", help="do not search for knees and gaps")

    sp = sub.add_parser("curve", help="volume curves and shape diagnostics for chosen anchors")
    _add_input_options(sp)
    sp.add_argument("--anchors", nargs="+", action="extend", required=True,
                    help="row indices or token strings; prefix '=' to force a token, e.g. '=42'")

    sp = sub.add_parser("generate", help="sample a space of known geometry")
    sp.add_argument("--kind", choices=syn.KINDS, required=True)
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--metric", choices=("euclidean", "arclength"), default="euclidean",
                    help="metric whose true parameters are printed")
    sp.add_argument("--samples", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--format", choices=FORMATS)
    sp.add_argument("--labels", help="write stratum labels here (stratified kind)")
    sp.add_argument("--out", required=True, help="matrix file to write")

    sp = sub.add_parser("validate", help="run the checks on spaces of known geometry")
    sp.add_argument("--check", action="append", choices=_check_names(),
                    help="run only this check (repeatable)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="also write the JSON summary here")

    sp = sub.add_parser("stats", help="cohort quartiles and KS tests from a per-anchor CSV")
    sp.add_argument("--input", required=True, help="estimates.csv written by analyze")
    sp.add_argument("--vocab", help="token per row, used when the CSV has no tokens")
    sp.add_argument("--cohort", choices=("numeric", "label", "none"), default="numeric")
    sp.add_argument("--out", help="write the JSON summary here instead of stdout")
    return ap


def _check_names():
    from .validation import CHECK_NAMES

    return CHECK_NAMES


# -- helpers -----------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, ensure_ascii=False, allow_nan=False)
        fh.write("\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format_float(v)


def _cohort_masks(rule: str, tokens) -> dict:
    if tokens is None or rule == "none":
        return {"all": None}
    if rule in ("numeric", "auto"):
        masks = stats.cohort_masks(tokens)
    else:
        names = sorted(set(tokens))
        if len(names) > MAX_LABEL_COHORTS:
            raise DataError(f"{len(names)} distinct labels; label cohorts allow at most {MAX_LABEL_COHORTS}")
        arr = np.array(tokens, dtype=object)
        masks = {name: arr == name for name in names}
    return {"all": None, **masks}


def _summaries(estimates, masks):
    """Quartiles for every cohort; KS tests between the cohorts other than ``all``."""
    full = {k: (np.ones(len(estimates), dtype=bool) if m is None else np.asarray(m, dtype=bool))
            for k, m in masks.items()}
    cohorts, ks = stats.summarize_cohorts(estimates, full, REPORT_FIELDS)
    ks = [t for t in ks if "all" not in (t["a"], t["b"])]
    out = {}
    for name, fields in cohorts.items():
        out[name] = {"members": int(full[name].sum()),
                     "fields": {f: {k: v for k, v in s.as_dict().items() if k != "label"}
                                for f, s in fields.items()}}
    return out, ks


def _write_curve_csv(path, radii: NeighborRadii):
    k = radii.counts
    r = radii.radii
    keep = r > 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("k", "r", "log_r", "log_v"))
        for kk, rr in zip(k[keep], r[keep]):
            w.writerow((int(kk), format_float(rr), format_float(math.log(rr)), format_float(math.log(kk))))


def _load(cfg: RunConfig):
    tokens = load_vocab(cfg.vocab) if cfg.vocab else None
    cloud = load_matrix(cfg.input, cfg.format, labels=tokens)
    metric = cfg.metric_obj()
    try:
        metric.check_points(cloud.coords)
    except GeometryError as exc:
        raise DataError(str(exc)) from None
    return cloud, metric, tokens


def _thresholds():
    # heuristic knobs of the curve diagnostics, echoed so reports are self-describing
    return {"max_segments": DEFAULT_MAX_SEGMENTS, "knee_threshold": DEFAULT_KNEE_THRESHOLD,
            "min_gap_ratio": DEFAULT_MIN_GAP_RATIO}


# -- commands ----------------------------------------------------------------


def run_analyze(cfg: RunConfig) -> AnalysisReport:
    cfg.check()
    cloud, metric, tokens = _load(cfg)
    band = cfg.band_for(cloud.p)
    k_max = cfg.k_max_for(cloud.p, band)
    if cfg.anchors is None or cfg.anchors >= cloud.p:
        anchors = np.arange(cloud.p)
    else:
        anchors = np.sort(np.random.default_rng(cfg.seed).choice(cloud.p, cfg.anchors, replace=False))
    rows = radii_matrix(cloud, metric, k_max, anchors, workers=cfg.workers)

    estimates, diags = [], []
    for a, row in zip(anchors, rows):
        nr = NeighborRadii(int(a), row)
        estimates.append(analyze_point(nr, band, method=cfg.method))
        if cfg.diagnostics:
            try:
                diags.append(diagnose(build_curve(nr), band))
            except EstimationError:
                diags.append(None)
        else:
            diags.append(None)
    anchor_tokens = [tokens[a] for a in anchors] if tokens is not None else None
    masks = _cohort_masks(cfg.cohort, anchor_tokens)
    cohorts, ks = _summaries(estimates, masks)
    report = AnalysisReport(estimates, anchor_tokens, cohorts, ks, diags, asdict(cfg))

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / "estimates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for j, (e, d) in enumerate(zip(estimates, diags)):
            rec = e.as_dict()
            rec["token"] = anchor_tokens[j] if anchor_tokens is not None else None
            rec["knees"] = len(d.knees) if d is not None else None
            rec["gaps"] = len(d.gaps) if d is not None else None
            rec["concavity"] = d.concavity if d is not None else None
            records.append(rec)
            w.writerow([
                rec["anchor"], rec["token"] if rec["token"] is not None else "",
                *(_fmt(rec[c]) for c in ("n_hat", "logK_hat", "K_prime", "sigma", "ric_hat", "rms_residual")),
                rec["usable_rows"], rec["duplicates"],
                "" if rec["knees"] is None else rec["knees"],
                "" if rec["gaps"] is None else rec["gaps"],
                rec["concavity"] or "", ";".join(rec["flags"]),
            ])
    if cfg.curves:
        (out / "curves").mkdir(exist_ok=True)
        for a, row in zip(anchors, rows):
            _write_curve_csv(out / "curves" / f"curve_{int(a)}.csv", NeighborRadii(int(a), row))

    payload = {
        "tool": "tokengeom",
        "version": __version__,
        "command": "analyze",
        "config": asdict(cfg),
        "input": {"path": cfg.input, "p": cloud.p, "D": cloud.dim, "metric": metric.kind},
        "band": band.as_dict(),
        "k_max": k_max,
        "anchor_count": int(anchors.size),
        "degenerate_count": sum(e.degenerate for e in estimates),
        "thresholds": _thresholds(),
        "cohorts": cohorts,
        "ks": ks,
        "records": records,
    }
    _write_json(out / "report.json", payload)
    return report


def _resolve_anchors(entries, p, tokens):
    first = {}
    if tokens is not None:
        for i, t in enumerate(tokens):
            first.setdefault(t, i)
    out = []
    for e in entries:
        if e.startswith("="):
            token = e[1:]
        else:
            try:
                i = int(e)
            except ValueError:
                token = e
            else:
                if not 0 <= i < p:
                    raise DataError(f"anchor index {i} outside [0, {p})")
                out.append(i)
                continue
        if tokens is None:
            raise DataError(f"token {token!r} given but no --vocab")
        if token not in first:
            raise DataError(f"unknown token {token!r}")
        out.append(first[token])
    return out


def run_curve(cfg: RunConfig, anchors) -> list:
    cfg.check()
    cloud, metric, tokens = _load(cfg)
    band = cfg.band_for(cloud.p)
    k_max = cfg.k_max_for(cloud.p, band)
    idx = _resolve_anchors(anchors, cloud.p, tokens)
    rows = radii_matrix(cloud, metric, k_max, np.asarray(idx, dtype=np.int64), workers=cfg.workers)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    written = set()
    for a, row in zip(idx, rows):
        if a in written:
            continue
        written.add(a)
        nr = NeighborRadii(a, row)
        path = out / f"curve_{a}.csv"
        _write_curve_csv(path, nr)
        est = analyze_point(nr, band, method=cfg.method)
        try:
            diag = diagnose(build_curve(nr), band).as_dict()
        except EstimationError:
            diag = None
        entries.append({"anchor": a, "token": tokens[a] if tokens is not None else None,
                        "file": path.name, "estimate": est.as_dict(), "diagnostics": diag})
    _write_json(out / "diagnostics.json", {
        "tool": "tokengeom", "version": __version__, "command": "curve", "band": band.as_dict(),
        "k_max": k_max, "thresholds": _thresholds(), "anchors": entries,
    })
    return entries


def run_generate(args) -> dict:
    metric = Metric.euclidean()
    if args.metric == "arclength":
        if args.kind == syn.CIRCLE:
            metric = Metric.circle(args.radius)
        elif args.kind == syn.SPHERE:
            metric = Metric.sphere(args.radius)
        else:
            raise UsageError("arclength applies to circle and sphere only")
    try:
        spec = syn.ManifoldSpec(args.kind, args.radius, metric, args.samples, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cloud = syn.sample(spec)
    save_matrix(args.out, cloud.coords, args.format)
    if args.labels:
        if cloud.labels is None:
            raise UsageError("--labels applies to the stratified kind only")
        with open(args.labels, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{lab}\n" for lab in cloud.labels)
    info = {"kind": spec.kind, "radius": spec.radius, "metric": spec.metric_name,
            "samples": cloud.p, "seed": spec.seed, "out": args.out}
    if spec.kind == syn.STRATIFIED:
        info["strata"] = dict(zip((syn.STRATUM_CIRCLE, syn.STRATUM_DISK, syn.STRATUM_BALL), spec.strata))
    else:
        try:
            n, K, ric = syn.true_parameters(spec.kind, spec.metric_name, spec.radius)
            info["true"] = {"dimension": n, "scaling": K, "ricci": ric}
            info["total_volume"] = spec.total_volume()
        except ValueError:
            pass
    return info


def run_validate(seed: int = 0, only=None, out=None, stream=None) -> bool:
    from .validation import run_validate as _run

    stream = stream or sys.stdout
    results = _run(seed, only)
    for c in results:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} ({c.detail['seconds']:.1f} s)", file=stream)
    summary = {"seed": seed, "passed": all(c.passed for c in results),
               "checks": [c.as_dict() for c in results]}
    print(json.dumps(_clean(summary), allow_nan=False), file=stream)
    if out:
        _write_json(out, summary)
    return summary["passed"]


def _read_estimates(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"anchor", "n_hat", "K_prime", "ric_hat", "flags"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                flags = [f for f in row["flags"].split(";") if f]
                rows.append(SimpleNamespace(
                    anchor=int(row["anchor"]), token=row.get("token") or None,
                    n_hat=float(row["n_hat"]), K_prime=float(row["K_prime"]), ric_hat=float(row["ric_hat"]),
                    degenerate="degenerate" in flags))
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no rows")
    return rows


def run_stats(args) -> dict:
    rows = _read_estimates(args.input)
    tokens = None
    if args.vocab:
        vocab = load_vocab(args.vocab)
        if max(r.anchor for r in rows) >= len(vocab):
            raise DataError("anchor index beyond the vocabulary")
        tokens = [vocab[r.anchor] for r in rows]
    elif all(r.token is not None for r in rows):
        tokens = [r.token for r in rows]
    if args.cohort != "none" and tokens is None:
        raise DataError("cohorts need tokens: none in the CSV and no --vocab")
    cohorts, ks = _summaries(rows, _cohort_masks(args.cohort, tokens))
    return {"tool": "tokengeom", "version": __version__, "command": "stats", "input": args.input,
            "rows": len(rows), "cohorts": cohorts, "ks": ks}


def _config_from(args) -> RunConfig:
    return RunConfig(
        input=args.input, format=args.format, vocab=args.vocab, metric=args.metric, radius=args.radius,
        k_lo=args.kmin, k_hi=args.kmax_regress, k_max=args.kmax,
        anchors=getattr(args, "anchors", None) if args.command == "analyze" else None,
        seed=getattr(args, "seed", 0), cohort=getattr(args, "cohort", "auto"), method=args.method,
        out=args.out, workers=args.workers, curves=getattr(args, "curves", False),
        diagnostics=not getattr(args, "skip_diagnostics", False),
    )


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "analyze":
            report = run_analyze(_config_from(args))
            print(f"analyzed {len(report.estimates)} anchors -> {Path(args.out) / 'report.json'}")
        elif args.command == "curve":
            entries = run_curve(_config_from(args), args.anchors)
            print(f"wrote {len(entries)} curves -> {args.out}")
        elif args.command == "generate":
            print(json.dumps(run_generate(args)))
        elif args.command == "validate":
            if not run_validate(args.seed, args.check, args.out):
                return EXIT_VALIDATION
        elif args.command == "stats":
            summary = run_stats(args)
            if args.out:
                _write_json(args.out, summary)
            else:
                print(json.dumps(_clean(summary), indent=2, ensure_ascii=False, allow_nan=False))
    except UsageError as exc:
        print(f"tokengeom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, EstimationError, GeometryError, OSError) as exc:
        print(f"tokengeom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
