"""Experiment runners over channel ensembles.

Two experiments:

* :func:`run_peak_vs_shift` -- Signal and Image peak powers, normalized to
  the unshifted peak, across a grid of shift percentages for every CIR.
* :func:`run_multiuser_sir` -- simultaneous transmission to ``n_users``
  receivers with a staggered shift schedule, sweeping the last user's shift
  and collecting per-user SIR CDFs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .channel import ChannelEnsemble, Cir
from .errors import CstrError, InvalidArgumentError
from .metrics import empirical_cdf, expected_peak_indices, signal_image_split, sir_db, split_finite
from .precoder import NO_SHIFT, Direction, ShiftSpec, build_prefilter, compose_transmit, composite_norm
from .propagation import UserLink, contributions_at, receive

log = logging.getLogger(__name__)

__all__ = [
    "ShiftSchedule",
    "ExperimentResult",
    "run_peak_vs_shift",
    "run_multiuser_sir",
    "signal_image_trace",
    "default_peak_grid",
    "default_sweep",
    "enumerate_subsets",
    "DEFAULT_BUDGET",
]

DEFAULT_BUDGET = 1085
DEFAULT_STEP_PERCENT = 3.0
SWEEP_PERCENTS = (12.0, 15.0, 18.0, 21.0, 24.0, 27.0, 30.0)

GridPoint = tuple[Direction, float]


def _point(direction, percent) -> GridPoint:
    try:
        direction = Direction(direction)
    except ValueError:
        raise InvalidArgumentError(f"unknown shift direction {direction!r}") from None
    percent = float(percent)
    if not (0.0 <= percent < 100.0):
        raise InvalidArgumentError(f"shift percent must be within [0, 100), got {percent!r}")
    if direction is Direction.NONE and percent != 0.0:
        raise InvalidArgumentError("direction 'none' takes percent 0")
    return direction, percent


def default_peak_grid(max_percent: float = 50.0, step: float = 2.0) -> list[GridPoint]:
    grid = [(Direction.NONE, 0.0)]
    n = int(round(max_percent / step))
    for direction in (Direction.RIGHT, Direction.LEFT):
        grid += [(direction, step * k) for k in range(1, n + 1)]
    return grid


def default_sweep() -> list[GridPoint]:
    """Plain TR followed by the right and left sweeps of 12-30 % in 3 % steps."""
    sweep = [(Direction.NONE, 0.0)]
    for direction in (Direction.RIGHT, Direction.LEFT):
        sweep += [(direction, p) for p in SWEEP_PERCENTS]
    return sweep


@dataclass(frozen=True)
class ShiftSchedule:
    """Per-user ``(direction, percent)`` shift assignments, ordered by user index."""

    assignments: tuple[GridPoint, ...]

    def __post_init__(self):
        if not self.assignments:
            raise InvalidArgumentError("a shift schedule needs at least one user")
        object.__setattr__(self, "assignments", tuple(_point(d, p) for d, p in self.assignments))

    @classmethod
    def staggered(cls, n_users: int = 5, step_percent: float = DEFAULT_STEP_PERCENT,
                  direction=Direction.RIGHT) -> "ShiftSchedule":
        """User ``j`` (1-based) shifted by ``(j - 1) * step_percent``; user 1 unshifted."""
        direction = Direction(direction)
        return cls(tuple(
            (Direction.NONE, 0.0) if j == 0 or direction is Direction.NONE else (direction, j * step_percent)
            for j in range(n_users)
        ))

    @classmethod
    def plain(cls, n_users: int) -> "ShiftSchedule":
        return cls(((Direction.NONE, 0.0),) * n_users)

    def __len__(self):
        return len(self.assignments)

    def with_last(self, direction, percent: float) -> "ShiftSchedule":
        """Override the last user's shift and move every user to ``direction``.

        Percentages of the other users are kept; 0 % stays unshifted. A
        ``none`` direction yields the all-zero (plain TR) schedule.
        """
        direction, percent = _point(direction, percent)
        if direction is Direction.NONE:
            return ShiftSchedule.plain(len(self))
        users = [(direction if p > 0 else Direction.NONE, p) for _, p in self.assignments[:-1]]
        users.append((direction, percent))
        return ShiftSchedule(tuple(users))

    def shifts(self, n_taps: int) -> list[ShiftSpec]:
        return [ShiftSpec.from_percent(d, p, n_taps) for d, p in self.assignments]


@dataclass
class ExperimentResult:
    """Everything an experiment produced, in a deterministic order."""

    experiment: str
    parameters: dict[str, Any]
    points: list[dict[str, Any]]
    aggregates: list[dict[str, Any]]
    cdfs: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    infinite_counts: dict[str, int] = field(default_factory=dict)
    seed: int | None = None
    config_digest: str = ""
    warnings: list[str] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable({
            "experiment": self.experiment,
            "parameters": self.parameters,
            "points": self.points,
            "aggregates": self.aggregates,
            "cdfs": self.cdfs,
            "infinite_counts": self.infinite_counts,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "warnings": self.warnings,
            "summary": self.summary,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Direction):
        return obj.value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return None if math.isnan(v) else v
    return obj


def ensemble_digest(ensemble: ChannelEnsemble) -> str:
    h = hashlib.sha256()
    h.update(repr((ensemble.n_taps, ensemble.tap_spacing, ensemble.seed)).encode())
    for cir in ensemble:
        h.update(cir.id.encode() + b"\0")
        h.update(np.ascontiguousarray(cir.taps).tobytes())
    return h.hexdigest()


def _digest(parameters: dict, ensemble: ChannelEnsemble) -> str:
    blob = json.dumps(_jsonable(parameters), sort_keys=True) + ensemble_digest(ensemble)
    return hashlib.sha256(blob.encode()).hexdigest()


def _point_key(direction: Direction, percent: float) -> str:
    return f"{direction.value}/{percent:g}"


def _percentiles(values: Sequence[float]) -> dict[str, float]:
    if not values:
        nan = float("nan")
        return {"mean": nan, "p10": nan, "median": nan, "p90": nan}
    arr = np.asarray(values, dtype=float)
    p10, p50, p90 = np.percentile(arr, [10, 50, 90])
    return {"mean": float(arr.mean()), "p10": float(p10), "median": float(p50), "p90": float(p90)}


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        return os.cpu_count() or 1
    if int(workers) < 1:
        raise InvalidArgumentError(f"workers must be >= 1, got {workers!r}")
    return int(workers)


def _parallel_map(fn, chunks: list, workers: int, initializer=None, initargs=()):
    """Map ``fn`` over ``chunks`` in order, in-process when ``workers == 1``."""
    if workers == 1 or len(chunks) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(c) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers, initializer=initializer, initargs=initargs) as pool:
        return list(pool.map(fn, chunks))


def _chunk(items: list, workers: int) -> list[list]:
    if not items:
        return []
    n_chunks = min(len(items), max(1, workers * 4))
    size = math.ceil(len(items) / n_chunks)
    return [items[i:i + size] for i in range(0, len(items), size)]


# --------------------------------------------------------------------------
# experiment A: peak power versus shift


_PEAK_STATE: dict[str, Any] = {}


def _init_peak_worker(cirs, grid):
    _PEAK_STATE["cirs"] = cirs
    _PEAK_STATE["grid"] = grid


def _peak_chunk(indices: list[int]) -> list[dict]:
    cirs, grid = _PEAK_STATE["cirs"], _PEAK_STATE["grid"]
    rows = []
    for i in indices:
        cir = cirs[i]
        try:
            reference, _ = signal_image_split(cir, NO_SHIFT)
            for direction, percent in grid:
                spec = ShiftSpec.from_percent(direction, percent, cir.n_taps)
                signal, image = signal_image_split(cir, spec)
                rows.append({
                    "cir_index": i,
                    "cir_id": cir.id,
                    "direction": direction.value,
                    "percent": percent,
                    "shift_taps": spec.amount_taps,
                    "norm_signal_peak_power": (signal / reference) ** 2,
                    "norm_image_peak_power": (image / reference) ** 2,
                })
        except CstrError as exc:
            raise type(exc)(f"CIR {cir.id!r}: {exc}") from exc
    return rows


def run_peak_vs_shift(
    ensemble: ChannelEnsemble,
    grid: Iterable[tuple] | None = None,
    workers: int | None = 1,
) -> ExperimentResult:
    """Normalized Signal/Image peak powers for every CIR and grid point, plus
    ensemble statistics per grid point."""
    grid = default_peak_grid() if grid is None else [_point(d, p) for d, p in grid]
    if len(ensemble) == 0:
        raise InvalidArgumentError("empty ensemble")
    if not grid:
        raise InvalidArgumentError("empty shift grid")
    workers = _resolve_workers(workers)

    chunks = _chunk(list(range(len(ensemble))), workers)
    rows = [r for part in _parallel_map(_peak_chunk, chunks, workers, _init_peak_worker,
                                        (ensemble.cirs, grid)) for r in part]
    order = {_point_key(d, p): k for k, (d, p) in enumerate(grid)}
    rows.sort(key=lambda r: (r["cir_index"], order[_point_key(Direction(r["direction"]), r["percent"])]))

    aggregates = []
    for direction, percent in grid:
        key = _point_key(direction, percent)
        sel = [r for r in rows if _point_key(Direction(r["direction"]), r["percent"]) == key]
        sig = _percentiles([r["norm_signal_peak_power"] for r in sel])
        img = _percentiles([r["norm_image_peak_power"] for r in sel])
        aggregates.append({
            "direction": direction.value,
            "percent": percent,
            "shift_taps": ShiftSpec.from_percent(direction, percent, ensemble.n_taps).amount_taps,
            **{f"signal_{k}": v for k, v in sig.items()},
            **{f"image_{k}": v for k, v in img.items()},
        })

    params = {
        "grid": [(d.value, p) for d, p in grid],
        "n_cirs": len(ensemble),
        "n_taps": ensemble.n_taps,
    }
    return ExperimentResult(
        experiment="peak_vs_shift",
        parameters=params,
        points=rows,
        aggregates=aggregates,
        seed=ensemble.seed,
        config_digest=_digest(params, ensemble),
    )


def signal_image_trace(cir: Cir, direction="right", percent: float = 40.0) -> dict[str, Any]:
    """Single-user received magnitude for one CSTR shift, with the peak positions."""
    direction, percent = _point(direction, percent)
    spec = ShiftSpec.from_percent(direction, percent, cir.n_taps)
    p = build_prefilter(cir, spec)
    rx = receive(compose_transmit([p]), [UserLink(0, cir, p)], 0)
    sig_idx, img_idx = expected_peak_indices(spec, cir.n_taps)
    return {
        "cir_id": cir.id,
        "direction": direction.value,
        "percent": percent,
        "shift_taps": spec.amount_taps,
        "amplitude": np.abs(rx.samples),
        "signal_index": sig_idx,
        "image_index": img_idx,
    }


# --------------------------------------------------------------------------
# experiment B: multiuser SIR


def _unrank_combination(rank: int, n: int, k: int) -> tuple[int, ...]:
    """The ``rank``-th k-subset of ``range(n)`` in lexicographic order."""
    out = []
    x = 0
    for slot in range(k, 0, -1):
        while True:
            c = math.comb(n - x - 1, slot - 1)
            if rank < c:
                break
            rank -= c
            x += 1
        out.append(x)
        x += 1
    return tuple(out)


def enumerate_subsets(n_items: int, n_users: int, budget: int, seed: int) -> tuple[list[tuple[int, ...]], list[str]]:
    """First ``budget`` entries of a seeded shuffle of the lexicographic
    enumeration of ``n_users``-subsets. Returns ``(subsets, warnings)``."""
    if n_users < 1 or n_items < n_users:
        raise InvalidArgumentError(f"cannot pick {n_users} users from {n_items} CIRs")
    if budget < 1:
        raise InvalidArgumentError(f"combination budget must be >= 1, got {budget}")
    total = math.comb(n_items, n_users)
    warnings = []
    if budget > total:
        warnings.append(f"combination budget {budget} exceeds the {total} distinct subsets; clamped to {total}")
        log.warning(warnings[-1])
        budget = total
    if total >= 2**62:
        raise InvalidArgumentError("too many subsets to enumerate")
    rng = np.random.default_rng(seed)
    ranks = rng.choice(total, size=budget, replace=False)
    return [_unrank_combination(int(r), n_items, n_users) for r in ranks], warnings


_SIR_STATE: dict[str, Any] = {}


def _init_sir_worker(cirs, point_shifts):
    _SIR_STATE["cirs"] = cirs
    _SIR_STATE["taps"] = np.stack([c.taps for c in cirs])
    _SIR_STATE["point_shifts"] = point_shifts
    _SIR_STATE["prefilters"] = {}


def _prefilter(i: int, spec: ShiftSpec):
    cache = _SIR_STATE["prefilters"]
    key = (i, spec)
    if key not in cache:
        cache[key] = build_prefilter(_SIR_STATE["cirs"][i], spec)
    return cache[key]


def _sir_chunk(jobs: list[tuple[int, tuple[int, ...]]]) -> list[tuple]:
    cirs, taps = _SIR_STATE["cirs"], _SIR_STATE["taps"]
    n_taps = taps.shape[1]
    out = []
    for subset_index, members in jobs:
        h = taps[list(members)]
        for point_index, shifts in enumerate(_SIR_STATE["point_shifts"]):
            filters = [_prefilter(i, s) for i, s in zip(members, shifts)]
            scale = composite_norm(filters)
            p = np.stack([f.taps for f in filters]) / scale
            t_peak = [expected_peak_indices(s, n_taps)[0] for s in shifts]
            y = contributions_at(p, h, t_peak)
            off = y.copy()
            np.fill_diagonal(off, 0.0)
            interference = off.sum(axis=0)
            for j, member in enumerate(members):
                s_pow = float(abs(y[j, j]) ** 2)
                i_pow = float(abs(interference[j]) ** 2)
                out.append((point_index, subset_index, j, cirs[member].id, shifts[j].amount_taps,
                            s_pow, i_pow, sir_db(s_pow, i_pow)))
    return out


def run_multiuser_sir(
    ensemble: ChannelEnsemble,
    n_users: int = 5,
    schedule: ShiftSchedule | None = None,
    sweep: Iterable[tuple] | None = None,
    combination_budget: int = DEFAULT_BUDGET,
    seed: int | None = None,
    workers: int | None = 1,
) -> ExperimentResult:
    """Per-user SIR over seeded user subsets for every sweep point.

    At each sweep point the last user's shift is replaced by the sweep
    value and all users take the sweep direction (see
    :meth:`ShiftSchedule.with_last`). The subset order comes from ``seed``,
    defaulting to the ensemble seed (or 0 for ingested data).
    """
    if n_users < 1:
        raise InvalidArgumentError(f"n_users must be >= 1, got {n_users}")
    schedule = ShiftSchedule.staggered(n_users) if schedule is None else schedule
    if len(schedule) != n_users:
        raise InvalidArgumentError(f"schedule covers {len(schedule)} users, expected {n_users}")
    sweep = default_sweep() if sweep is None else [_point(d, p) for d, p in sweep]
    if not sweep:
        raise InvalidArgumentError("empty sweep")
    if len(ensemble) < n_users:
        raise InvalidArgumentError(f"ensemble has {len(ensemble)} CIRs, need at least {n_users}")
    if seed is None:
        seed = ensemble.seed if ensemble.seed is not None else 0
    workers = _resolve_workers(workers)
    n_taps = ensemble.n_taps

    subsets, warnings = enumerate_subsets(len(ensemble), n_users, combination_budget, seed)
    schedules = [schedule.with_last(d, p) for d, p in sweep]
    point_shifts = [s.shifts(n_taps) for s in schedules]

    jobs = list(enumerate(subsets))
    raw = [r for part in _parallel_map(_sir_chunk, _chunk(jobs, workers), workers, _init_sir_worker,
                                       (ensemble.cirs, point_shifts)) for r in part]
    raw.sort(key=lambda r: (r[0], r[1], r[2]))

    points = [
        {
            "direction": sweep[pi][0].value,
            "percent": sweep[pi][1],
            "subset_index": si,
            "user": j + 1,
            "cir_id": cid,
            "shift_taps": taps_,
            "signal_power": s,
            "interference_power": i,
            "sir_db": v,
        }
        for pi, si, j, cid, taps_, s, i, v in raw
    ]

    aggregates, cdfs, infinite_counts = [], {}, {}
    by_key: dict[tuple[int, int], list[float]] = {}
    for pi, si, j, *_rest, v in raw:
        by_key.setdefault((pi, j), []).append(v)
    for pi, (direction, percent) in enumerate(sweep):
        for j in range(n_users):
            values = by_key.get((pi, j), [])
            finite, n_inf = split_finite(values)
            key = f"{_point_key(direction, percent)}/user{j + 1}"
            cdfs[key] = empirical_cdf(finite) if finite else []
            infinite_counts[key] = n_inf
            aggregates.append({
                "direction": direction.value,
                "percent": percent,
                "user": j + 1,
                "shift_taps": point_shifts[pi][j].amount_taps,
                "n_finite": len(finite),
                "n_infinite": n_inf,
                **{f"sir_{k}": v for k, v in _percentiles(finite).items()},
            })

    summary = _turnover_summary(aggregates, n_users)
    params = {
        "n_users": n_users,
        "schedule": [(d.value, p) for d, p in schedule.assignments],
        "sweep": [(d.value, p) for d, p in sweep],
        "combination_budget": combination_budget,
        "subsets_evaluated": len(subsets),
        "subset_seed": int(seed),
        "n_cirs": len(ensemble),
        "n_taps": n_taps,
    }
    return ExperimentResult(
        experiment="multiuser_sir",
        parameters=params,
        points=points,
        aggregates=aggregates,
        cdfs=cdfs,
        infinite_counts=infinite_counts,
        seed=ensemble.seed,
        config_digest=_digest(params, ensemble),
        warnings=warnings,
        summary=summary,
    )


def _turnover_summary(aggregates: list[dict], n_users: int) -> dict[str, Any]:
    """Where the last user's median SIR peaks along each shifted sweep direction."""
    summary = {}
    for direction in (Direction.RIGHT, Direction.LEFT):
        rows = [a for a in aggregates
                if a["direction"] == direction.value and a["user"] == n_users and a["n_finite"] > 0]
        if not rows:
            continue
        rows.sort(key=lambda a: a["percent"])
        medians = [a["sir_median"] for a in rows]
        best = int(np.argmax(medians))
        summary[direction.value] = {
            "percents": [a["percent"] for a in rows],
            "last_user_median_sir_db": medians,
            "turnover_percent": rows[best]["percent"],
            "interior_maximum": 0 < best < len(rows) - 1,
        }
    return summary
