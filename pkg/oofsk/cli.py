"""
Batch front-end: read a run manifest, sweep its grid through the analytic
and/or Monte Carlo engines and write one CSV row per grid point.

Usage:
    python -m oofsk analytic --manifest manifests/fig1_coherent_L2.yaml
    python -m oofsk simulate --manifest manifests/fig3_coherent_correlated.yaml --trials 200000
    python -m oofsk compare --manifest manifests/acceptance_coherent.yaml --workers 4

Exit codes: 0 success, 1 argument or manifest error, 2 numerical failure.
"""

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import partial
from pathlib import Path

import yaml
from rich.console import Console
from rich.table import Table
from tqdm import tqdm

from .analytic import pe_average_coherent, pe_noncoherent
from .channel import BATCH_SIZE, AntennaChannelSpec, Correlation, ModulationSpec, binomial_sigma, run_monte_carlo
from .detector import Scenario
from .errors import ConvergenceError, DomainError, ManifestError

logger = logging.getLogger(__name__)
console = Console()
err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

MODES = ("analytic", "simulate", "compare")
CSV_COLUMNS = [
    "scenario",
    "M",
    "L",
    "K",
    "rho",
    "v",
    "snr_db",
    "p_e_analytic",
    "p_e_mc",
    "mc_ci",
    "trials",
    "seed",
]
FLAG_SIGMAS = 3.0
MAX_SEED = 2**64 - 1

_SECTIONS = {
    (): {"mode", "scenario", "grid", "channel", "mc", "workers", "output"},
    ("grid",): {"snr_db", "v", "L", "M"},
    ("channel",): {"K", "rho", "correlation"},
    ("mc",): {"n_trials", "seed", "batch_size", "early_stop"},
}


@dataclass(frozen=True)
class GridPoint:
    M: int
    L: int
    v: float
    snr_db: float


@dataclass(frozen=True)
class RunManifest:
    """A validated run description; CLI flags are applied with replace()."""

    mode: str
    scenario: Scenario
    snr_db: tuple
    v: tuple
    L: tuple
    M: tuple
    rician_k: float = 0.0
    rho: float = 0.0
    correlation: Correlation = Correlation.CONSTANT
    n_trials: int = None
    seed: int = 0
    batch_size: int = BATCH_SIZE
    early_stop: bool = False
    workers: int = 1
    output: Path = None

    def grid_points(self):
        """Grid points in output order: M, then L, then v, then SNR."""
        return [
            GridPoint(M=M, L=L, v=v, snr_db=snr)
            for M in self.M
            for L in self.L
            for v in self.v
            for snr in self.snr_db
        ]


def _key_lines(node, prefix=()):
    """Map every key path of a composed YAML document to its 1-based line."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            path = prefix + (str(key.value),)
            lines[path] = key.start_mark.line + 1
            lines.update(_key_lines(value, path))
    return lines


class _Fields:
    """Typed access to a parsed manifest, failing with the offending line."""

    def __init__(self, data, lines):
        self.data = data
        self.lines = lines

    def fail(self, path, message):
        raise ManifestError(message, field=".".join(path), line=self.lines.get(path))

    def get(self, path, default=None, required=False):
        node = self.data
        for key in path:
            if not isinstance(node, dict) or key not in node:
                if required:
                    parent = path[:-1]
                    raise ManifestError(
                        "missing required field", field=".".join(path), line=self.lines.get(parent)
                    )
                return default
            node = node[key]
        return node

    def check_keys(self):
        for section, allowed in _SECTIONS.items():
            mapping = self.get(section) if section else self.data
            if mapping is None:
                continue
            if not isinstance(mapping, dict):
                self.fail(section, "expected a mapping")
            for key in mapping:
                if key not in allowed:
                    self.fail(section + (str(key),), f"unknown key, expected one of {sorted(allowed)}")

    def number_list(self, path, kind, check, describe):
        values = self.get(path, required=True)
        if not isinstance(values, list):
            values = [values]
        if not values:
            self.fail(path, "grid list is empty")
        out = []
        for value in values:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(path, f"{value!r} is not a number")
            if kind is int and int(value) != value:
                self.fail(path, f"{value!r} is not an integer")
            value = kind(value)
            if not check(value):
                self.fail(path, f"{value!r} is out of range, expected {describe}")
            out.append(value)
        return tuple(out)


def _parse_k(value):
    if isinstance(value, bool):
        raise ValueError(value)
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower()
    if text in ("inf", ".inf", "infinity"):
        return math.inf
    return float(Fraction(text))


def parse_manifest(text):
    """Parse and validate a YAML run manifest."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        problem = getattr(e, "problem", None) or str(e)
        raise ManifestError(f"invalid YAML: {problem}", line=mark.line + 1 if mark else None) from e
    if not isinstance(data, dict):
        raise ManifestError("a manifest must be a mapping", line=1)

    fields = _Fields(data, _key_lines(root))
    fields.check_keys()

    mode = fields.get(("mode",), default="compare")
    if mode not in MODES:
        fields.fail(("mode",), f"expected one of {MODES}, got {mode!r}")
    scenario = fields.get(("scenario",), required=True)
    try:
        scenario = Scenario(scenario)
    except ValueError:
        fields.fail(("scenario",), f"expected coherent or noncoherent, got {scenario!r}")

    snr_db = fields.number_list(("grid", "snr_db"), float, lambda x: math.isfinite(x), "a finite dB value")
    v = fields.number_list(("grid", "v"), float, lambda x: 0 < x <= 1, "0 < v <= 1")
    L = fields.number_list(("grid", "L"), int, lambda x: x >= 1, "L >= 1")
    M = fields.number_list(("grid", "M"), int, lambda x: x >= 2, "M >= 2")

    try:
        rician_k = _parse_k(fields.get(("channel", "K"), default=0.0))
    except (ValueError, ZeroDivisionError):
        fields.fail(("channel", "K"), f"cannot read {fields.get(('channel', 'K'))!r} as a number")
    if not rician_k >= 0:
        fields.fail(("channel", "K"), "K must be >= 0")
    rho = fields.get(("channel", "rho"), default=0.0)
    if isinstance(rho, bool) or not isinstance(rho, (int, float)) or not 0 <= rho < 1:
        fields.fail(("channel", "rho"), f"rho must be a number in [0, 1), got {rho!r}")
    correlation = fields.get(("channel", "correlation"), default="constant")
    try:
        correlation = Correlation(correlation)
    except ValueError:
        fields.fail(("channel", "correlation"), f"expected constant or exponential, got {correlation!r}")

    n_trials = fields.get(("mc", "n_trials"))
    if n_trials is not None and (isinstance(n_trials, bool) or not isinstance(n_trials, int) or n_trials < 1):
        fields.fail(("mc", "n_trials"), f"n_trials must be a positive integer, got {n_trials!r}")
    seed = fields.get(("mc", "seed"), default=0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MAX_SEED:
        fields.fail(("mc", "seed"), f"seed must be an unsigned 64-bit integer, got {seed!r}")
    batch_size = fields.get(("mc", "batch_size"), default=BATCH_SIZE)
    if isinstance(batch_size, bool) or not isinstance(batch_size, int) or batch_size < 1:
        fields.fail(("mc", "batch_size"), f"batch_size must be a positive integer, got {batch_size!r}")
    early_stop = fields.get(("mc", "early_stop"), default=False)
    if not isinstance(early_stop, bool):
        fields.fail(("mc", "early_stop"), f"early_stop must be true or false, got {early_stop!r}")
    workers = fields.get(("workers",), default=1)
    if isinstance(workers, bool) or not isinstance(workers, int) or workers < 1:
        fields.fail(("workers",), f"workers must be a positive integer, got {workers!r}")
    output = fields.get(("output",))

    return RunManifest(
        mode=mode,
        scenario=scenario,
        snr_db=snr_db,
        v=v,
        L=L,
        M=M,
        rician_k=rician_k,
        rho=float(rho),
        correlation=correlation,
        n_trials=n_trials,
        seed=seed,
        batch_size=batch_size,
        early_stop=early_stop,
        workers=workers,
        output=Path(output) if output is not None else None,
    )


def load_manifest(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e.strerror}") from e
    return parse_manifest(text)


def check_runnable(manifest):
    """Refuse combinations the engines cannot serve before any work starts."""
    if manifest.output is None:
        raise ManifestError("no output path, set output in the manifest or pass --out", field="output")
    if manifest.mode in ("simulate", "compare") and manifest.n_trials is None:
        raise ManifestError(f"{manifest.mode} needs mc.n_trials or --trials", field="mc.n_trials")
    if manifest.mode in ("analytic", "compare") and manifest.rho != 0:
        raise ManifestError(
            "closed-form error rates cover independent antennas only, "
            "use simulate for a correlated channel",
            field="channel.rho",
        )
    # builds every channel once, so a non-factorable matrix fails here
    for L in manifest.L:
        AntennaChannelSpec(L, rician_k=manifest.rician_k, rho=manifest.rho, correlation=manifest.correlation)


def _format(value):
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def evaluate_point(manifest, point):
    """Compute one CSV row; module level so worker processes can pickle it."""
    spec = ModulationSpec(M=point.M, v=point.v, snr_db=point.snr_db)
    channel = AntennaChannelSpec(
        point.L, rician_k=manifest.rician_k, rho=manifest.rho, correlation=manifest.correlation
    )
    row = {
        "scenario": manifest.scenario.value,
        "M": point.M,
        "L": point.L,
        "K": manifest.rician_k,
        "rho": manifest.rho,
        "v": point.v,
        "snr_db": point.snr_db,
        "p_e_analytic": None,
        "p_e_mc": None,
        "mc_ci": None,
        "trials": None,
        "seed": None,
    }

    if manifest.mode in ("analytic", "compare"):
        if manifest.scenario is Scenario.COHERENT:
            row["p_e_analytic"] = pe_average_coherent(spec, channel)
        else:
            row["p_e_analytic"] = pe_noncoherent(spec, channel)

    if manifest.mode in ("simulate", "compare"):
        stats = run_monte_carlo(
            spec,
            channel,
            manifest.scenario,
            manifest.n_trials,
            manifest.seed,
            batch_size=manifest.batch_size,
            early_stop=manifest.early_stop,
        )
        row.update(p_e_mc=stats.p_hat, mc_ci=stats.ci_halfwidth, trials=stats.trials, seed=manifest.seed)

    logger.info(
        "M=%d L=%d v=%s %s dB: analytic=%s mc=%s",
        point.M,
        point.L,
        point.v,
        point.snr_db,
        _format(row["p_e_analytic"]) or "-",
        _format(row["p_e_mc"]) or "-",
    )
    return row


def sweep(manifest, progress=True):
    """Rows for every grid point, in grid order whatever the worker count."""
    points = manifest.grid_points()
    task = partial(evaluate_point, manifest)
    bar = dict(total=len(points), desc=f"{manifest.mode} {manifest.scenario.value}", disable=not progress)
    if manifest.workers > 1:
        with ProcessPoolExecutor(max_workers=manifest.workers) as pool:
            return list(tqdm(pool.map(task, points), **bar))
    return [task(point) for point in tqdm(points, **bar)]


def write_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([row["scenario"]] + [_format(row[column]) for column in CSV_COLUMNS[1:]])


def flag_row(row):
    """
    (deviation, sigma, flagged) for a row holding both estimates. sigma is
    the binomial standard deviation at the analytic value.
    """
    analytic, mc = row["p_e_analytic"], row["p_e_mc"]
    deviation = abs(analytic - mc)
    sigma = binomial_sigma(analytic, row["trials"])
    if sigma == 0:
        return deviation, sigma, deviation > 0
    return deviation, sigma, deviation > FLAG_SIGMAS * sigma


def report_path(output):
    output = Path(output)
    return output.with_name(f"{output.stem}_report.txt")


def comparison_table(rows):
    table = Table(title="analytic vs Monte Carlo")
    for column in ("M", "L", "v", "SNR dB", "analytic", "Monte Carlo", "|diff| / sigma", "flag"):
        table.add_column(column, justify="right")
    flagged = 0
    for row in rows:
        deviation, sigma, flag = flag_row(row)
        flagged += flag
        ratio = deviation / sigma if sigma > 0 else (math.inf if deviation > 0 else 0.0)
        table.add_row(
            str(row["M"]),
            str(row["L"]),
            f"{row['v']:g}",
            f"{row['snr_db']:g}",
            f"{row['p_e_analytic']:.4e}",
            f"{row['p_e_mc']:.4e}",
            f"{ratio:.2f}",
            "[bold red]FLAG[/bold red]" if flag else "ok",
        )
    return table, flagged


def write_report(rows, output):
    """Print the comparison table and save it next to the CSV."""
    table, flagged = comparison_table(rows)
    summary = f"{flagged} of {len(rows)} points outside {FLAG_SIGMAS:g} sigma"
    console.print(table)
    console.print(summary, style="bold red" if flagged else "bold green")
    path = report_path(output)
    with open(path, "w") as f:
        file_console = Console(file=f, width=120, no_color=True)
        file_console.print(table)
        file_console.print(summary)
    for row in rows:
        deviation, sigma, flag = flag_row(row)
        if flag:
            logger.warning(
                "M=%d L=%d v=%s %s dB: |analytic - mc| = %.3g exceeds %g sigma (sigma %.3g)",
                row["M"],
                row["L"],
                row["v"],
                row["snr_db"],
                deviation,
                FLAG_SIGMAS,
                sigma,
            )
    return flagged


def run(manifest, progress=True):
    """Sweep a manifest and write its artifacts. Returns the exit status."""
    check_runnable(manifest)
    rows = sweep(manifest, progress=progress)
    write_csv(rows, manifest.output)
    logger.info("Wrote %d rows to %s", len(rows), manifest.output)
    if manifest.mode == "compare":
        write_report(rows, manifest.output)
        logger.info("Wrote comparison report to %s", report_path(manifest.output))
    return EXIT_OK


class _ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        err_console.print(f"{self.prog}: error: {message}", style="bold red")
        sys.exit(EXIT_USAGE)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-m", "--manifest", required=True, help="Path to the YAML run manifest.")
    common.add_argument("-o", "--out", help="CSV output path, overrides the manifest.")
    common.add_argument("--seed", type=_seed, help="Monte Carlo seed, overrides the manifest.")
    common.add_argument("--trials", type=_positive_int, help="Monte Carlo trials per grid point.")
    common.add_argument("--workers", type=_positive_int, help="Grid points evaluated concurrently.")
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")

    parser = _ArgumentParser(prog="oofsk", description="OOFSK error rates with L-antenna equal gain combining.")
    subparsers = parser.add_subparsers(dest="mode", required=True)
    subparsers.add_parser("analytic", parents=[common], help="Closed-form error rates only.")
    subparsers.add_parser("simulate", parents=[common], help="Monte Carlo error rates only.")
    subparsers.add_parser("compare", parents=[common], help="Both, plus a 3 sigma agreement report.")
    return parser


def apply_overrides(manifest, args):
    """The subcommand and any flag given on the command line win over the manifest."""
    if manifest.mode != args.mode:
        logger.info("Manifest mode %s overridden by subcommand %s", manifest.mode, args.mode)
    overrides = {"mode": args.mode}
    if args.out is not None:
        overrides["output"] = Path(args.out)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["n_trials"] = args.trials
    if args.workers is not None:
        overrides["workers"] = args.workers
    return replace(manifest, **overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        format="%(asctime)s %(levelname)s %(message)s",
        level=logging.DEBUG if args.verbose else logging.INFO,
        handlers=[logging.StreamHandler(sys.stdout)],
    )

    try:
        manifest = apply_overrides(load_manifest(args.manifest), args)
        return run(manifest)
    except (ManifestError, DomainError) as e:
        err_console.print(f"error: {e}", style="bold red")
        return EXIT_USAGE
    except ConvergenceError as e:
        err_console.print(f"numerical failure: {e}", style="bold red")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
