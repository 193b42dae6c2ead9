"""Command-line pipeline: prices -> regional connectedness -> TE tables.

Subcommands
-----------
connect   connectedness series per region
te        transfer-entropy tables from precomputed series files
run       both stages
synth     write synthetic price panels in the wide CSV schema

Settings come from built-in defaults, then a flat ``key = value`` config
file (``--config``), then ``SPILLNET_<KEY>`` environment variables, then
command-line flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import shutil
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy

from . import __version__
from .connectedness import (
    ConnectednessConfig,
    connectedness_series,
    matrices_to_csv,
    ordering_sensitivity,
    read_series_csv,
    series_to_csv,
)
from .errors import ConfigError, DataError, SpillnetError
from .panel_io import (
    CALENDAR_POLICIES,
    MISSING_POLICIES,
    SCHEMAS,
    align_calendar,
    compute_log_returns,
    load_price_panel,
    read_region_map,
    split_by_region,
    write_wide_csv,
)
from .synthlab import SynthSpec, generate_var1, inject_shock, returns_to_prices
from .transfer_entropy import TeConfig, intersect_series, render_te_table, te_table, te_table_to_csv

log = logging.getLogger("spillnet")

ENV_PREFIX = "SPILLNET_"
EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
MANIFEST = "run_manifest.json"


@dataclass
class RunConfig:
    inputs: dict[str, str] = field(default_factory=dict)
    series: dict[str, str] = field(default_factory=dict)
    schema: str = "long"
    delimiter: str = ","
    regions_file: str | None = None
    missing: str = "zero"
    calendar: str = "union_zero_fill"
    window: int = 300
    theta: float = 100.0
    lam: float = 100.0
    stride: int = 1
    standardize: bool = False
    ordering: str = "input"
    ordering_check: bool = False
    dump_matrices: bool = False
    horizons: tuple[int, ...] = (1, 5)
    lag: int = 1
    deltas: tuple[float, ...] = (1.0, 2.0, 3.0)
    n_perm: int = 10_000
    seed: int | None = None
    workers: int = 1
    out: str = "results"

    def connectedness_config(self) -> ConnectednessConfig:
        ordering = self.ordering
        if ordering not in ("input", "reversed"):
            ordering = tuple(s.strip() for s in ordering.split(","))
        return ConnectednessConfig(window=self.window, theta=self.theta, lam=self.lam, stride=self.stride,
                                   standardize=self.standardize, ordering=ordering, workers=self.workers,
                                   keep_matrices=self.dump_matrices)

    def te_config(self, horizon: int) -> TeConfig:
        return TeConfig(lag=self.lag, horizon=horizon, deltas=self.deltas, n_perm=self.n_perm,
                        seed=self.seed, workers=self.workers)

    def manifest_params(self) -> dict:
        # workers is left out: outputs do not depend on it
        d = asdict(self)
        d.pop("workers")
        d.pop("out")
        d["theta"] = "inf" if math.isinf(self.theta) else self.theta
        d["lambda"] = d.pop("lam")
        d["horizons"] = list(self.horizons)
        d["deltas"] = list(self.deltas)
        d["demeaning"] = "weighted"
        return d


@dataclass(frozen=True)
class Violation:
    key: str
    value: object
    allowed: str

    def __str__(self) -> str:
        return f"{self.key}={self.value!r}: {self.allowed}"


# ---------------------------------------------------------------- config

_ALIASES = {"lambda": "lam", "n-perm": "n_perm"}


def _norm_key(key: str) -> str:
    key = key.strip().lower().replace("-", "_")
    return _ALIASES.get(key, key)


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([Violation(f"{path}:{lineno}", line, "expected key = value")])
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items()
            if k.startswith(ENV_PREFIX) and len(k) > len(ENV_PREFIX)}


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_theta(v) -> float:
    s = str(v).strip().lower()
    return math.inf if s in ("inf", "infinity") else float(s)


def _parse_ints(v) -> tuple[int, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def _parse_floats(v) -> tuple[float, ...]:
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _parse_seed(v):
    s = str(v).strip().lower()
    return None if s in ("", "none") else int(s)


_CONVERTERS = {
    "schema": str, "delimiter": str, "regions_file": str, "missing": str, "calendar": str,
    "window": int, "theta": _parse_theta, "lam": float, "stride": int, "standardize": _parse_bool,
    "ordering": str, "ordering_check": _parse_bool, "dump_matrices": _parse_bool,
    "horizons": _parse_ints, "horizon": _parse_ints, "lag": int, "deltas": _parse_floats,
    "n_perm": int, "seed": _parse_seed, "workers": int, "out": str,
}


def _parse_mapping(value) -> dict[str, str]:
    """``"NA=a.csv,EU=b.csv"`` or ``"a.csv"`` (region taken from entity tags)."""
    out = {}
    for item in str(value).split(","):
        item = item.strip()
        if not item:
            continue
        region, _, path = item.rpartition("=")
        out[region.strip()] = path.strip()
    return out


def build_config(*layers: dict) -> RunConfig:
    """Merge raw ``key -> value`` layers (later wins) into a :class:`RunConfig`.

    Keys ``input.<REGION>`` and ``series.<REGION>`` give per-region paths.
    Unknown keys and unparseable values raise :class:`ConfigError`.
    """
    cfg = RunConfig()
    violations = []
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            k = _norm_key(key)
            if k.startswith(("input.", "series.")):
                kind, region = k.split(".", 1)
                region = key.split(".", 1)[1].strip()
                getattr(cfg, "inputs" if kind == "input" else "series")[region] = str(value)
                continue
            if k in ("input", "inputs", "series"):
                target = cfg.series if k == "series" else cfg.inputs
                target.update(value if isinstance(value, dict) else _parse_mapping(value))
                continue
            if k not in _CONVERTERS:
                violations.append(Violation(key, value, "unknown configuration key"))
                continue
            try:
                parsed = _CONVERTERS[k](value)
            except (TypeError, ValueError) as exc:
                violations.append(Violation(key, value, f"cannot parse ({exc})"))
                continue
            setattr(cfg, "horizons" if k == "horizon" else k, parsed)
    if violations:
        raise ConfigError(violations)
    return cfg


def validate_config(cfg: RunConfig, command: str = "run") -> list[Violation]:
    """Every domain violation in ``cfg``; empty when the config is usable."""
    v: list[Violation] = []

    def need(ok, key, value, allowed):
        if not ok:
            v.append(Violation(key, value, allowed))

    need(cfg.schema in SCHEMAS, "schema", cfg.schema, f"one of {SCHEMAS}")
    need(len(cfg.delimiter) == 1, "delimiter", cfg.delimiter, "a single character")
    need(cfg.missing in MISSING_POLICIES, "missing", cfg.missing, f"one of {MISSING_POLICIES}")
    need(cfg.calendar in CALENDAR_POLICIES, "calendar", cfg.calendar, f"one of {CALENDAR_POLICIES}")
    need(isinstance(cfg.window, int) and cfg.window >= 2, "window", cfg.window, "integer >= 2")
    need(isinstance(cfg.theta, (int, float)) and cfg.theta > 0, "theta", cfg.theta, "real > 0 or 'inf'")
    need(isinstance(cfg.lam, (int, float)) and math.isfinite(cfg.lam) and cfg.lam >= 0,
         "lambda", cfg.lam, "finite real >= 0 (100 to 1000 recommended)")
    need(isinstance(cfg.stride, int) and cfg.stride >= 1, "stride", cfg.stride, "integer >= 1")
    need(isinstance(cfg.lag, int) and cfg.lag >= 1, "lag", cfg.lag, "integer >= 1")
    need(len(cfg.horizons) > 0 and all(h >= 1 for h in cfg.horizons), "horizons", cfg.horizons,
         "non-empty list of integers >= 1")
    need(len(cfg.deltas) > 0 and all(d > 0 for d in cfg.deltas), "deltas", cfg.deltas,
         "non-empty list of reals > 0")
    need(isinstance(cfg.n_perm, int) and cfg.n_perm >= 0, "n_perm", cfg.n_perm, "integer >= 0")
    need(isinstance(cfg.workers, int) and cfg.workers >= 1, "workers", cfg.workers, "integer >= 1")
    need(cfg.ordering in ("input", "reversed") or "," in cfg.ordering, "ordering", cfg.ordering,
         "'input', 'reversed' or a comma-separated entity list")
    if command in ("run", "te"):
        need(cfg.n_perm == 0 or cfg.seed is not None, "seed", cfg.seed, "required when n_perm > 0")
    if command in ("run", "connect"):
        need(len(cfg.inputs) > 0, "input", cfg.inputs, "at least one input file")
    if command == "te":
        need(len(cfg.series) >= 2, "series", cfg.series, "at least two REGION=PATH series files")
    return v


# ---------------------------------------------------------------- pipeline

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Staging:
    """Collects outputs in a hidden directory; moved into place only on success."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
        self.files: list[str] = []

    def write(self, name: str, text: str) -> None:
        (self.dir / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def commit(self) -> None:
        for name in self.files:
            os.replace(self.dir / name, self.out / name)
        shutil.rmtree(self.dir, ignore_errors=True)

    def abort(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def _software() -> dict:
    return {"spillnet": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _load_regions(cfg: RunConfig) -> dict:
    region_map = read_region_map(cfg.regions_file) if cfg.regions_file else None
    panels = {}
    for region, path in cfg.inputs.items():
        try:
            panel = load_price_panel(path, cfg.schema, cfg.delimiter)
            groups = {region: panel} if region else split_by_region(panel, region_map)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc
        for r, p in groups.items():
            if r in panels:
                raise DataError(f"region {r} supplied twice")
            panels[r] = (p, path)
    return panels


def _connect_stage(cfg: RunConfig, stage: _Staging, manifest: dict) -> list:
    ccfg = cfg.connectedness_config()
    series = []
    manifest["inputs"] = [{"region": r, "path": str(p), "sha256": _sha256(p)} for r, p in cfg.inputs.items()]
    manifest["regions"] = {}
    for region, (prices, path) in _load_regions(cfg).items():
        log.info("region %s: %d entities, %d dates", region, len(prices.entities), prices.dates.size)
        try:
            rets = align_calendar(compute_log_returns(prices, cfg.missing), cfg.calendar)
            cs = connectedness_series(rets, ccfg, label=region)
        except DataError as exc:
            raise DataError(f"{path} (region {region}): {exc}") from exc
        stage.write(f"{region}_connectedness.csv", series_to_csv(cs))
        if cfg.dump_matrices:
            stage.write(f"{region}_matrices.csv", matrices_to_csv(cs, cs.meta["ordering_used"]))
        info = {
            "entities": list(rets.entities),
            "n_return_rows": int(rets.returns.shape[0]),
            "missing_policy": cfg.missing,
            "calendar_policy": cfg.calendar,
            "flagged_windows": int(sum(1 for f in cs.flags if f)),
            "series_meta": cs.meta,
        }
        if cfg.ordering_check:
            info["ordering_sensitivity_max_abs"] = ordering_sensitivity(rets, ccfg)
        manifest["regions"][region] = info
        series.append(cs)
    return series


def _te_stage(cfg: RunConfig, series: list, stage: _Staging, manifest: dict) -> None:
    if len(series) < 2:
        raise DataError("transfer entropy needs at least two regional series")
    aligned = intersect_series(series)
    n = len(aligned[0])
    manifest["te"] = {
        "regions": [s.label for s in aligned],
        "common_end_dates": n,
        "first_end_date": str(aligned[0].end_dates[0]) if n else None,
        "last_end_date": str(aligned[0].end_dates[-1]) if n else None,
        "permutation_scheme": "shuffle lagged driver only; p = (1 + #exceed) / (1 + n_perm)",
        "discretization": "per-series mean and population std",
        "tables": {},
    }
    for h in cfg.horizons:
        rows = te_table(aligned, cfg.te_config(h))
        stage.write(f"te_table_h{h}.csv", te_table_to_csv(rows))
        stage.write(f"te_table_h{h}.txt", render_te_table(rows))
        manifest["te"]["tables"][f"h{h}"] = {"n_obs": rows[0].n_obs if rows else 0}


def run_pipeline(cfg: RunConfig, command: str = "run") -> int:
    """Run ``command`` and write its files into ``cfg.out``; returns an exit code."""
    violations = validate_config(cfg, command)
    if violations:
        for v in violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    stage = _Staging(Path(cfg.out))
    manifest: dict = {"command": command, "software": _software(), "parameters": cfg.manifest_params()}
    try:
        if command in ("run", "connect"):
            series = _connect_stage(cfg, stage, manifest)
        else:
            series = []
            manifest["inputs"] = []
            for region, path in cfg.series.items():
                try:
                    series.append(read_series_csv(path, label=region))
                except DataError as exc:
                    raise DataError(f"{path}: {exc}") from exc
                manifest["inputs"].append({"region": region, "path": str(path), "sha256": _sha256(path)})
        if command in ("run", "te"):
            _te_stage(cfg, series, stage, manifest)
        manifest["outputs"] = {name: hashlib.sha256((stage.dir / name).read_bytes()).hexdigest()
                               for name in sorted(stage.files)}
        stage.write(MANIFEST, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    except (DataError, OSError) as exc:
        stage.abort()
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BaseException:
        stage.abort()
        raise
    stage.commit()
    return EXIT_OK


# ---------------------------------------------------------------- argparse

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=str)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_connect(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", action="append", metavar="[REGION=]PATH",
                   help="price file; without REGION entities must carry @REGION tags")
    p.add_argument("--schema", choices=SCHEMAS)
    p.add_argument("--delimiter")
    p.add_argument("--regions-file")
    p.add_argument("--missing", choices=MISSING_POLICIES)
    p.add_argument("--calendar", choices=CALENDAR_POLICIES)
    p.add_argument("--window")
    p.add_argument("--theta")
    p.add_argument("--lambda", dest="lam")
    p.add_argument("--stride")
    p.add_argument("--standardize", action="store_const", const="true")
    p.add_argument("--ordering")
    p.add_argument("--ordering-check", action="store_const", const="true")
    p.add_argument("--dump-matrices", action="store_const", const="true")


def _add_te(p: argparse.ArgumentParser) -> None:
    p.add_argument("--horizons", help="comma-separated, e.g. 1,5")
    p.add_argument("--lag")
    p.add_argument("--deltas", help="comma-separated, e.g. 1,2,3")
    p.add_argument("--n-perm")
    p.add_argument("--seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spillnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("connect", help="connectedness series per region")
    _add_common(p)
    _add_connect(p)
    p = sub.add_parser("te", help="TE tables from series files")
    _add_common(p)
    _add_te(p)
    p.add_argument("--series", action="append", metavar="REGION=PATH")
    p = sub.add_parser("run", help="full pipeline")
    _add_common(p)
    _add_connect(p)
    _add_te(p)

    p = sub.add_parser("synth", help="write a synthetic price panel (wide CSV)")
    p.add_argument("--out", required=True, help="output file, or directory with --regions")
    p.add_argument("--regions", help="comma-separated region tags; one file per region")
    p.add_argument("--entities", type=int, default=10)
    p.add_argument("--length", type=int, default=1000, help="number of returns")
    p.add_argument("--ar", type=float, default=0.0, help="diagonal VAR(1) coefficient")
    p.add_argument("--rho", type=float, default=0.0, help="innovation correlation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shock-row", type=int)
    p.add_argument("--shock-size", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=0.01, help="return standard deviation")
    return parser


_FLAG_KEYS = ("schema", "delimiter", "regions_file", "missing", "calendar", "window", "theta", "lam",
              "stride", "standardize", "ordering", "ordering_check", "dump_matrices", "horizons", "lag",
              "deltas", "n_perm", "seed", "workers", "out")


def _flag_layer(args: argparse.Namespace) -> dict:
    layer = {k: getattr(args, k) for k in _FLAG_KEYS if getattr(args, k, None) is not None}
    for name, key in (("input", "inputs"), ("series", "series")):
        items = getattr(args, name, None)
        if items:
            mapping = {}
            for item in items:
                region, _, path = item.rpartition("=")
                mapping[region] = path
            layer[key] = mapping
    return layer


def _synth(args: argparse.Namespace) -> int:
    n = args.entities
    sigma = args.scale ** 2 * ((1 - args.rho) * np.eye(n) + args.rho * np.ones((n, n)))
    regions = [r.strip() for r in args.regions.split(",")] if args.regions else [None]
    try:
        for k, region in enumerate(regions):
            ents = [f"B{i:02d}" + (f"@{region}" if region else "") for i in range(n)]
            spec = SynthSpec("var1", {"T": args.length, "N": n, "A": args.ar, "Sigma": sigma,
                                      "entities": ents}, seed=args.seed + k)
            panel = generate_var1(spec)
            if args.shock_row is not None:
                panel = inject_shock(panel, args.shock_row, args.shock_size * args.scale)
            prices = returns_to_prices(panel)
            if region:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                dest = Path(args.out) / f"{region}.csv"
            else:
                dest = Path(args.out)
            write_wide_csv(prices, dest)
            print(dest)
    except SpillnetError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth":
        return _synth(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_layer = read_config_file(args.config) if args.config else {}
        cfg = build_config(file_layer, env_overrides(), _flag_layer(args))
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_pipeline(cfg, args.command)


if __name__ == "__main__":
    sys.exit(main())
