"""Command-line sweeps of the key-rate bound over total system loss.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 partial results.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass

import numpy as np

from .channel import ChannelParams
from .errors import CowQkdError
from .keyrate import SweepResult, sweep_and_cutoff
from .protocol import BlockConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4
COLUMNS = ["loss_db", "mu", "m", "G", "e_bar", "delta_max", "rate_per_pulse", "solver_gap"]
DEFAULT_MU_RANGE = (1e-5, 0.5)

log = logging.getLogger("cowqkd")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    mode: str = "pure"
    m: int = 3
    n_cut: int = 2
    epsilon: float = 1e-7
    e_d: float = 0.01
    e_m: float = 0.005
    loss_start_db: float = 0.0
    loss_end_db: float = 25.0
    loss_step_db: float = 1.0
    mu: float | None = None
    mu_range: tuple[float, float] | None = DEFAULT_MU_RANGE
    tolerance: float = 1e-8
    output: str | None = None
    format: str = "csv"
    workers: int = 1
    verbose: bool = False

    def loss_grid(self) -> list[float]:
        if self.loss_step_db <= 0:
            raise UsageError("--loss-step must be positive")
        if self.loss_end_db < self.loss_start_db:
            raise UsageError("--loss-end must not be below --loss-start")
        n = int(math.floor((self.loss_end_db - self.loss_start_db) / self.loss_step_db + 1e-9)) + 1
        return [round(self.loss_start_db + i * self.loss_step_db, 10) for i in range(n)]

    def block_config(self) -> BlockConfig:
        return BlockConfig(self.m, self.mu if self.mu is not None else 0.01, self.mode, self.n_cut)

    def channel_params(self) -> ChannelParams:
        return ChannelParams(1.0, epsilon=self.epsilon, e_d=self.e_d, e_m=self.e_m)


def _mu_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cowqkd",
        description="Sweep the coherent-one-way key-rate bound over total system loss.",
    )
    p.add_argument("--config", help="flat key-value file; keys are flag names without dashes")
    p.add_argument("--mode", choices=["pure", "randomized"])
    p.add_argument("--m", type=int, help="bits per block")
    p.add_argument("--ncut", type=int, help="photon-number cut for the shield (randomized mode)")
    p.add_argument("--dark", type=float, help="dark count probability per slot and detector")
    p.add_argument("--ed", type=float, help="data-line flip probability")
    p.add_argument("--em", type=float, help="monitoring wrong-port probability")
    p.add_argument("--loss-start", type=float)
    p.add_argument("--loss-end", type=float)
    p.add_argument("--loss-step", type=float)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mu", type=float, help="fixed mean photon number per pulse")
    group.add_argument("--optimize-mu", type=_mu_range, metavar="LO:HI", help="intensity search range")
    p.add_argument("--tol", type=float, help="relative duality-gap target")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--workers", type=int, help="concurrent sweep points")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


FLAG_FIELDS = {
    "mode": ("mode", str),
    "m": ("m", int),
    "ncut": ("n_cut", int),
    "dark": ("epsilon", float),
    "ed": ("e_d", float),
    "em": ("e_m", float),
    "loss-start": ("loss_start_db", float),
    "loss-end": ("loss_end_db", float),
    "loss-step": ("loss_step_db", float),
    "mu": ("mu", float),
    "optimize-mu": ("mu_range", _mu_range),
    "tol": ("tolerance", float),
    "out": ("output", str),
    "format": ("format", str),
    "workers": ("workers", int),
}


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` (or ``key value``) lines; ``#`` starts a comment."""
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = (t.strip() for t in line.split("=", 1))
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise UsageError(f"{path}:{num}: expected 'key = value'")
            key, value = parts
        key = key.lstrip("-").replace("_", "-")
        if key not in FLAG_FIELDS:
            raise UsageError(f"{path}:{num}: unknown key {key!r}")
        out[key] = value
    return out


def parse_config(argv=None) -> RunConfig:
    parser = build_parser()
    args = parser.parse_args(argv)
    values: dict = {}
    if args.config:
        for key, text in read_config_file(args.config).items():
            name, conv = FLAG_FIELDS[key]
            try:
                values[name] = conv(text)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for {key}: {text!r}") from exc
    for key, (name, _) in FLAG_FIELDS.items():
        v = getattr(args, key.replace("-", "_"))
        if v is not None:
            values[name] = v
    if args.mu is not None:
        values.pop("mu_range", None)
    elif args.optimize_mu is not None:
        values.pop("mu", None)
    elif "mu" in values and "mu_range" in values:
        raise UsageError("config file sets both mu and optimize-mu")
    values["verbose"] = args.verbose
    cfg = RunConfig(**values)
    if cfg.mu is not None:
        cfg.mu_range = None
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.format not in ("csv", "json"):
        raise UsageError(f"unknown format {cfg.format!r}")
    if cfg.mu_range is not None:
        lo, hi = cfg.mu_range
        if not 0 < lo < hi <= 1:
            raise UsageError("--optimize-mu needs 0 < lo < hi <= 1")
    if cfg.tolerance <= 0:
        raise UsageError("--tol must be positive")
    if cfg.workers < 1:
        raise UsageError("--workers must be at least 1")
    cfg.loss_grid()
    try:
        cfg.block_config()
        cfg.channel_params()
    except (ValueError, CowQkdError) as exc:
        raise UsageError(str(exc)) from exc


# ------------------------------------------------------------------ output


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.12g}"


def _num(v):
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return None if math.isnan(v) else float(f"{v:.12g}")


def records(cfg: RunConfig, result: SweepResult) -> list[dict]:
    """Rows in grid order; failed points carry NaN in every computed column."""
    by_loss = {round(p.loss_db, 9): p.as_dict() for p in result.points}
    rows = []
    for loss in cfg.loss_grid():
        row = by_loss.get(round(loss, 9))
        if row is None:
            row = {c: float("nan") for c in COLUMNS}
            row.update(loss_db=loss, m=cfg.m)
        rows.append(row)
    return rows


def render(cfg: RunConfig, result: SweepResult) -> str:
    rows = records(cfg, result)
    cutoff = result.cutoff_loss_db
    if cfg.format == "json":
        doc = {
            "columns": COLUMNS,
            "points": [{c: _num(r[c]) for c in COLUMNS} for r in rows],
            "summary": {
                "cutoff_loss_db": None if cutoff is None else _num(cutoff),
                "failed_loss_db": [_num(l) for l, _ in result.failures],
            },
        }
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    w.writerow(["# cutoff_loss_db", "nan" if cutoff is None else _fmt(cutoff)])
    return buf.getvalue()


def run_sweep(cfg: RunConfig) -> tuple[int, str]:
    result = sweep_and_cutoff(
        cfg.block_config(),
        cfg.channel_params(),
        cfg.loss_grid(),
        mu_range=cfg.mu_range,
        tol=cfg.tolerance,
        workers=cfg.workers,
    )
    for loss, msg in result.failures:
        log.error("point at %.3f dB failed: %s", loss, msg)
    text = render(cfg, result)
    if result.failures and not result.points:
        return EXIT_NUMERIC, text
    if result.failures:
        return EXIT_PARTIAL, text
    return EXIT_OK, text


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"cowqkd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING)
    log.info("run config: %s", asdict(cfg))
    try:
        code, text = run_sweep(cfg)
    except CowQkdError as exc:
        print(f"cowqkd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
