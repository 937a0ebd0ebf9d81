"""Batch front-end: ``simulate <config> [--seed INT] [--out DIR] [--workers INT]``.

The config is a TOML file (see FORMATS.md). Instead of a path, the name of
an experiment may be given to run it with every default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import channel, plotting, scenario
from .errors import ConfigError, CstrError, FormatError

log = logging.getLogger("cstr")

EXPERIMENTS = ("peak_vs_shift", "multiuser_sir", "generate_ensemble", "ingest_freq")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_FORMAT = 5
EXIT_COMPUTE = 6

EXIT_HELP = """\
exit status:
  0  success
  2  command-line usage error
  3  invalid configuration (message names the offending key)
  4  I/O error reading inputs or writing outputs
  5  malformed input data file (CIR or frequency-response file)
  6  error during computation (degenerate channel, invalid argument, ...)
"""

# --------------------------------------------------------------------------
# configuration


@dataclass
class EnsembleSource:
    kind: str = "synthetic"
    path: Path | None = None
    n_cirs: int = channel.DEFAULT_N_CIRS
    n_taps: int = channel.DEFAULT_N_TAPS
    decay: float = channel.DEFAULT_DECAY
    onset: int = channel.DEFAULT_ONSET
    rise: float | None = channel.DEFAULT_RISE
    seed: int = channel.DEFAULT_SEED
    tap_spacing: float = channel.DEFAULT_TAP_SPACING


@dataclass
class RunConfig:
    experiment: str
    output_dir: Path = Path("results")
    ensemble: EnsembleSource = field(default_factory=EnsembleSource)
    params: dict[str, Any] = field(default_factory=dict)
    figures: bool = True
    workers: int | None = None
    base_dir: Path = Path(".")

    def digest(self) -> str:
        """Hash of everything that determines the results (not output dir or workers)."""
        blob = {
            "experiment": self.experiment,
            "ensemble": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.ensemble).items()},
            "params": self.params,
            "figures": self.figures,
        }
        return hashlib.sha256(json.dumps(blob, sort_keys=True, default=str).encode()).hexdigest()


def _take(table: dict, key: str, path: str, kind, default, *, check=None, allow_none=False):
    if key not in table:
        return default
    value = table[key]
    full = f"{path}.{key}" if path else key
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if allow_none and value == "none":
        return None
    if isinstance(value, bool) and kind is not bool:
        raise ConfigError(full, f"expected {kind.__name__}, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(full, f"expected {kind.__name__}, got {type(value).__name__} {value!r}")
    if check is not None:
        problem = check(value)
        if problem:
            raise ConfigError(full, problem)
    return value


def _reject_unknown(table: dict, allowed: set[str], path: str):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _positive(v):
    return None if v > 0 else "must be > 0"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _grid_points(value, path: str) -> list[tuple[str, float]]:
    if not isinstance(value, list):
        raise ConfigError(path, "expected a list of [direction, percent] pairs")
    out = []
    for k, item in enumerate(value):
        where = f"{path}[{k}]"
        if not (isinstance(item, list) and len(item) == 2):
            raise ConfigError(where, "expected [direction, percent]")
        direction, percent = item
        if direction not in ("none", "left", "right"):
            raise ConfigError(where, f"direction must be none, left or right, got {direction!r}")
        if isinstance(percent, bool) or not isinstance(percent, (int, float)) or not (0 <= percent < 100):
            raise ConfigError(where, f"percent must be a number in [0, 100), got {percent!r}")
        if direction == "none" and percent != 0:
            raise ConfigError(where, "direction 'none' takes percent 0")
        out.append((direction, float(percent)))
    return out


def _percent_list(value, path) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of percentages")
    out = []
    for k, p in enumerate(value):
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not (0 < p < 100):
            raise ConfigError(f"{path}[{k}]", f"percent must be in (0, 100), got {p!r}")
        out.append(float(p))
    return out


def _parse_ensemble(table: dict, base_dir: Path) -> EnsembleSource:
    _reject_unknown(table, {"source", "path", "n_cirs", "n_taps", "decay", "onset", "rise", "seed",
                            "tap_spacing"}, "ensemble")
    src = EnsembleSource()
    src.kind = _take(table, "source", "ensemble", str, "synthetic",
                     check=lambda v: None if v in ("synthetic", "file") else "must be 'synthetic' or 'file'")
    if src.kind == "file":
        p = _take(table, "path", "ensemble", str, None)
        if p is None:
            raise ConfigError("ensemble.path", "required when ensemble.source = 'file'")
        src.path = (base_dir / p) if not os.path.isabs(p) else Path(p)
    src.n_cirs = _take(table, "n_cirs", "ensemble", int, src.n_cirs, check=_positive)
    src.n_taps = _take(table, "n_taps", "ensemble", int, src.n_taps, check=_positive)
    src.decay = _take(table, "decay", "ensemble", float, src.decay, check=_positive)
    src.onset = _take(table, "onset", "ensemble", int, src.onset, check=_non_negative)
    src.rise = _take(table, "rise", "ensemble", float, src.rise, check=_positive, allow_none=True)
    src.seed = _take(table, "seed", "ensemble", int, src.seed, check=_non_negative)
    src.tap_spacing = _take(table, "tap_spacing", "ensemble", float, src.tap_spacing, check=_positive)
    if src.kind == "synthetic" and src.onset >= src.n_taps:
        raise ConfigError("ensemble.onset", f"must be < n_taps ({src.n_taps})")
    return src


def _parse_peak(table: dict) -> dict:
    path = "peak_vs_shift"
    _reject_unknown(table, {"grid", "max_percent", "step", "example_direction", "example_percent"}, path)
    if "grid" in table:
        grid = _grid_points(table["grid"], f"{path}.grid")
        if not grid:
            raise ConfigError(f"{path}.grid", "must not be empty")
    else:
        max_p = _take(table, "max_percent", path, float, 50.0,
                      check=lambda v: None if 0 < v < 100 else "must be in (0, 100)")
        step = _take(table, "step", path, float, 2.0, check=_positive)
        grid = [(d.value, p) for d, p in scenario.default_peak_grid(max_p, step)]
    ex_dir = _take(table, "example_direction", path, str, "right",
                   check=lambda v: None if v in ("left", "right", "none") else "must be none, left or right")
    ex_pct = _take(table, "example_percent", path, float, 40.0,
                   check=lambda v: None if 0 <= v < 100 else "must be in [0, 100)")
    if ex_dir == "none":
        ex_pct = 0.0
    return {"grid": grid, "example_direction": ex_dir, "example_percent": ex_pct}


def _parse_sir(table: dict) -> dict:
    path = "multiuser_sir"
    _reject_unknown(table, {"n_users", "step_percent", "schedule_direction", "schedule", "sweep",
                            "sweep_percents", "sweep_directions", "include_plain", "budget",
                            "subset_seed"}, path)
    n_users = _take(table, "n_users", path, int, 5, check=_positive)
    if "schedule" in table:
        schedule = _grid_points(table["schedule"], f"{path}.schedule")
        if len(schedule) != n_users:
            raise ConfigError(f"{path}.schedule", f"has {len(schedule)} entries, n_users is {n_users}")
    else:
        step = _take(table, "step_percent", path, float, scenario.DEFAULT_STEP_PERCENT,
                     check=lambda v: None if 0 <= v * max(n_users - 1, 1) < 100 else "pushes shifts past 100%")
        direction = _take(table, "schedule_direction", path, str, "right",
                          check=lambda v: None if v in ("left", "right") else "must be left or right")
        schedule = [(d.value, p) for d, p in scenario.ShiftSchedule.staggered(n_users, step, direction).assignments]
    if "sweep" in table:
        sweep = _grid_points(table["sweep"], f"{path}.sweep")
        if not sweep:
            raise ConfigError(f"{path}.sweep", "must not be empty")
    else:
        percents = (_percent_list(table["sweep_percents"], f"{path}.sweep_percents")
                    if "sweep_percents" in table else list(scenario.SWEEP_PERCENTS))
        directions = table.get("sweep_directions", ["right", "left"])
        if not isinstance(directions, list) or not directions or any(d not in ("left", "right") for d in directions):
            raise ConfigError(f"{path}.sweep_directions", "expected a non-empty list of 'left'/'right'")
        include_plain = _take(table, "include_plain", path, bool, True)
        sweep = [("none", 0.0)] if include_plain else []
        sweep += [(d, p) for d in directions for p in percents]
    budget = _take(table, "budget", path, int, scenario.DEFAULT_BUDGET, check=_positive)
    subset_seed = _take(table, "subset_seed", path, int, None, check=_non_negative)
    return {"n_users": n_users, "schedule": schedule, "sweep": sweep, "budget": budget,
            "subset_seed": subset_seed}


def _parse_ingest(table: dict, base_dir: Path) -> dict:
    path = "ingest_freq"
    _reject_unknown(table, {"inputs", "output"}, path)
    inputs = table.get("inputs")
    if not isinstance(inputs, list) or not inputs or not all(isinstance(p, str) for p in inputs):
        raise ConfigError(f"{path}.inputs", "expected a non-empty list of frequency-response file paths")
    output = _take(table, "output", path, str, "ensemble.cir")
    resolved = [str(base_dir / p) if not os.path.isabs(p) else p for p in inputs]
    return {"inputs": resolved, "output": output}


def _parse_generate(table: dict) -> dict:
    _reject_unknown(table, {"output"}, "generate_ensemble")
    return {"output": _take(table, "output", "generate_ensemble", str, "ensemble.cir")}


def parse_config(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    """Validate a config mapping completely before anything is computed."""
    _reject_unknown(data, {"experiment", "output_dir", "workers", "ensemble", "output",
                           *EXPERIMENTS}, "")
    experiment = _take(data, "experiment", "", str, None)
    if experiment is None:
        raise ConfigError("experiment", "required")
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    cfg = RunConfig(experiment=experiment, base_dir=base_dir)
    out = _take(data, "output_dir", "", str, None)
    if out is not None:
        cfg.output_dir = base_dir / out if not os.path.isabs(out) else Path(out)
    cfg.workers = _take(data, "workers", "", int, None, check=_positive)

    ens = data.get("ensemble", {})
    if not isinstance(ens, dict):
        raise ConfigError("ensemble", "expected a table")
    cfg.ensemble = _parse_ensemble(ens, base_dir)

    output = data.get("output", {})
    if not isinstance(output, dict):
        raise ConfigError("output", "expected a table")
    _reject_unknown(output, {"figures"}, "output")
    cfg.figures = _take(output, "figures", "output", bool, True)

    for name in EXPERIMENTS:
        if name in data and not isinstance(data[name], dict):
            raise ConfigError(name, "expected a table")
    section = data.get(experiment, {})
    if experiment == "peak_vs_shift":
        cfg.params = _parse_peak(section)
    elif experiment == "multiuser_sir":
        cfg.params = _parse_sir(section)
    elif experiment == "ingest_freq":
        cfg.params = _parse_ingest(section, base_dir)
        if "ensemble" in data:
            raise ConfigError("ensemble", "ingest_freq builds its ensemble from ingest_freq.inputs")
    else:
        cfg.params = _parse_generate(section)
        if cfg.ensemble.kind != "synthetic":
            raise ConfigError("ensemble.source", "generate_ensemble needs a synthetic source")
    return cfg


def load_config(target: str) -> RunConfig:
    """Config from a TOML path, or the defaults for a bare experiment name."""
    if target in EXPERIMENTS and not Path(target).exists():
        return parse_config({"experiment": target})
    path = Path(target)
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"{path}: {exc}") from None
    return parse_config(data, base_dir=path.parent)


# --------------------------------------------------------------------------
# output


def fmt(x) -> str:
    """Shortest round-trip text for floats; ``inf``/``-inf``/``nan`` spelled out."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(kind: str, columns: list[str], rows) -> str:
    lines = [f"# cstr {kind} v1", ",".join(columns)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


class OutputSet:
    """Collects output files in memory and commits them atomically."""

    def __init__(self):
        self.files: dict[str, bytes] = {}
        self.figures: list[tuple[str, Any]] = []

    def add(self, name: str, text: str | bytes):
        self.files[name] = text.encode("utf-8") if isinstance(text, str) else text

    def add_figure(self, name: str, render):
        self.figures.append((name, render))

    def commit(self, out_dir: Path, manifest_extra: dict) -> Path:
        """Stage every file under a temporary name, then rename them into place.

        Nothing is renamed until all data files are written and all figures
        rendered; the manifest is renamed last.
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        staged: list[tuple[Path, Path]] = []
        written: dict[str, bytes] = {}
        try:
            for name, data in sorted(self.files.items()):
                tmp = out_dir / f".{name}.staged-{os.getpid()}"
                tmp.write_bytes(data)
                staged.append((tmp, out_dir / name))
                written[name] = data
            for name, render in self.figures:
                tmp = out_dir / f".{name}.staged-{os.getpid()}"
                render(tmp)
                staged.append((tmp, out_dir / name))
                written[name] = tmp.read_bytes()
            manifest = {
                "format": "cstr-manifest/v1",
                **manifest_extra,
                "files": [
                    {"name": n, "bytes": len(d), "sha256": hashlib.sha256(d).hexdigest()}
                    for n, d in sorted(written.items())
                ],
            }
            tmp = out_dir / f".manifest.json.staged-{os.getpid()}"
            tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            staged.append((tmp, out_dir / "manifest.json"))
        except BaseException:
            for tmp, _ in staged:
                tmp.unlink(missing_ok=True)
            raise
        for tmp, final in staged:
            os.replace(tmp, final)
        return out_dir / "manifest.json"


def _pct_name(p: float) -> str:
    return f"{p:g}".replace(".", "p")


def build_ensemble(cfg: RunConfig) -> channel.ChannelEnsemble:
    src = cfg.ensemble
    if src.kind == "file":
        return channel.load_cir_file(src.path)
    return channel.synthetic_ensemble(
        src.n_cirs, src.n_taps, src.decay, src.seed,
        onset_taps=src.onset, rise_constant=src.rise, tap_spacing=src.tap_spacing,
    )


def _profile_outputs(ens: channel.ChannelEnsemble, out: OutputSet, figures: bool):
    power = np.mean(np.abs(ens.tap_matrix()) ** 2, axis=0)
    delays = np.arange(ens.n_taps) * ens.tap_spacing
    out.add("power_delay_profile.csv", csv_text(
        "power_delay_profile", ["tap", "delay_s", "mean_power"],
        ([i, float(d), float(p)] for i, (d, p) in enumerate(zip(delays, power)))))
    if figures:
        out.add_figure("fig_power_delay_profile.png",
                       lambda path: plotting.power_delay_profile(delays, power, path))


def _peak_outputs(cfg, ens, out: OutputSet):
    p = cfg.params
    result = scenario.run_peak_vs_shift(ens, p["grid"], workers=cfg.workers)
    rows = [[r["cir_id"], r["direction"], float(r["percent"]),
             r["norm_signal_peak_power"], r["norm_image_peak_power"]] for r in result.points]
    rows += [["_avg", a["direction"], float(a["percent"]), a["signal_mean"], a["image_mean"]]
             for a in result.aggregates]
    out.add("peak_vs_shift.csv", csv_text(
        "peak_vs_shift", ["cir_id", "direction", "percent", "norm_signal_peak_power", "norm_image_peak_power"],
        rows))
    stat_cols = ["direction", "percent", "shift_taps",
                 "signal_mean", "signal_p10", "signal_median", "signal_p90",
                 "image_mean", "image_p10", "image_median", "image_p90"]
    out.add("peak_vs_shift_stats.csv", csv_text(
        "peak_vs_shift_stats", stat_cols, ([a[c] for c in stat_cols] for a in result.aggregates)))

    trace = scenario.signal_image_trace(ens[0], p["example_direction"], p["example_percent"])
    roles = {trace["signal_index"]: "signal"}
    if trace["image_index"] is not None:
        roles[trace["image_index"]] = "image"
    out.add("signal_image_example.csv", csv_text(
        "signal_image_example", ["sample", "delay_s", "amplitude", "peak"],
        ([k, k * ens.tap_spacing, float(a), roles.get(k, "")] for k, a in enumerate(trace["amplitude"]))))

    if cfg.figures:
        out.add_figure("fig_signal_image_example.png", lambda path: plotting.signal_image_example(trace, path))
        out.add_figure("fig_signal_peak_vs_shift.png",
                       lambda path: plotting.peak_vs_shift(result.points, result.aggregates, "signal", path))
        out.add_figure("fig_image_peak_vs_shift.png",
                       lambda path: plotting.peak_vs_shift(result.points, result.aggregates, "image", path))
    return result


def _sir_outputs(cfg, ens, out: OutputSet, seed: int | None):
    p = cfg.params
    schedule = scenario.ShiftSchedule(tuple(p["schedule"]))
    subset_seed = p["subset_seed"] if p["subset_seed"] is not None else seed
    result = scenario.run_multiuser_sir(
        ens, p["n_users"], schedule, p["sweep"], p["budget"], seed=subset_seed, workers=cfg.workers)
    n_users = p["n_users"]

    cols = ["subset_index", "user", "cir_id", "shift_taps", "signal_power", "interference_power", "sir_db"]
    for direction, percent in p["sweep"]:
        sel = [r for r in result.points if r["direction"] == direction and r["percent"] == percent]
        out.add(f"sir_{direction}_{_pct_name(percent)}.csv",
                csv_text("sir", cols, ([r[c] for c in cols] for r in sel)))

    for user in range(1, n_users + 1):
        rows = []
        for direction, percent in p["sweep"]:
            key = f"{direction}/{percent:g}/user{user}"
            rows += [[direction, percent, v, prob] for v, prob in result.cdfs[key]]
        out.add(f"cdf_user{user}.csv", csv_text("sir_cdf", ["direction", "percent", "sir_db", "probability"], rows))

    stat_cols = ["direction", "percent", "user", "shift_taps", "n_finite", "n_infinite",
                 "sir_mean", "sir_p10", "sir_median", "sir_p90"]
    out.add("sir_summary.csv", csv_text("sir_summary", stat_cols,
                                        ([a[c] for c in stat_cols] for a in result.aggregates)))

    if cfg.figures:
        plain = [(f"none/0/user{n_users}", "TR (no shift)")] if ("none", 0.0) in p["sweep"] else []
        for direction in ("right", "left"):
            series = plain + [(f"{direction}/{pct:g}/user{n_users}", f"{pct:g}%")
                              for d, pct in p["sweep"] if d == direction]
            if len(series) > len(plain):
                title = f"User{n_users} SIR CDF, {direction} circular shift"
                out.add_figure(f"fig_sir_cdf_user{n_users}_{direction}.png",
                               lambda path, s=series, t=title: plotting.sir_cdfs(result.cdfs, s, t, path))
        out.add_figure("fig_median_sir_vs_shift.png",
                       lambda path: plotting.median_sir_vs_shift(result.aggregates, n_users, path))
    return result


def execute(cfg: RunConfig, seed: int | None = None, out_dir: Path | None = None) -> Path:
    """Run the configured experiment and write its outputs; returns the manifest path."""
    if seed is not None:
        cfg.ensemble.seed = seed
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir
    out = OutputSet()
    extra: dict[str, Any] = {"experiment": cfg.experiment, "config_digest": cfg.digest()}

    if cfg.experiment == "ingest_freq":
        cirs = []
        for k, path in enumerate(cfg.params["inputs"]):
            fr = channel.load_freq_response_file(path)
            cirs.append(channel.cir_from_freq_response(fr, id=Path(path).stem))
        try:
            ens = channel.ChannelEnsemble(tuple(cirs), seed=None)
        except CstrError as exc:
            raise FormatError(f"ingested responses are inconsistent: {exc}") from None
        _write_ensemble(ens, cfg.params["output"], out)
        _profile_outputs(ens, out, cfg.figures)
    else:
        ens = build_ensemble(cfg)
        if cfg.experiment == "generate_ensemble":
            _write_ensemble(ens, cfg.params["output"], out)
            _profile_outputs(ens, out, cfg.figures)
        else:
            if cfg.experiment == "peak_vs_shift":
                result = _peak_outputs(cfg, ens, out)
            else:
                sir_seed = seed if seed is not None else (cfg.ensemble.seed if cfg.ensemble.kind == "synthetic" else None)
                result = _sir_outputs(cfg, ens, out, sir_seed)
            out.add("result.json", result.to_json() + "\n")
            extra["result_digest"] = result.config_digest
            extra["warnings"] = result.warnings
    return out.commit(out_dir, extra)


def _write_ensemble(ens, name, out: OutputSet):
    out.add(name, channel.format_cir_text(ens))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Multiuser TR / CSTR precoding experiments. CONFIG is a TOML file, or one of "
                    f"{', '.join(EXPERIMENTS)} to run that experiment with defaults.",
        epilog=EXIT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("config", metavar="CONFIG")
    parser.add_argument("--seed", type=int, help="override the ensemble / subset RNG seed")
    parser.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    parser.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    parser.add_argument("--no-figures", action="store_true", help="skip PNG figure rendering")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be >= 0")
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        cfg = load_config(args.config)
        if args.workers is not None:
            cfg.workers = args.workers
        if args.no_figures:
            cfg.figures = False
        manifest = execute(cfg, seed=args.seed, out_dir=args.out)
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"simulate: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except CstrError as exc:
        print(f"simulate: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"simulate: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("wrote %s", manifest)
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
