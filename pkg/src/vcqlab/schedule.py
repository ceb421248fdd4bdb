"""Position-dependent codebook-size schedules and their information budgets.

A schedule maps token position t to a codebook size K_t that grows
monotonically from k_min to k_max:

    K_t = k_min + (k_max - k_min) * f(t / (L - 1)),   f(0) = 0, f(1) = 1

with f chosen per family (linear, cosine, power).  The cumulative capacity
I(t) = sum_{i<t} log2 K_i measures how many bits the first t positions can
carry, and t* is the position at which a dataset of N samples exhausts that
budget (I(t) >= log2 N).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

__all__ = [
    "Family",
    "Schedule",
    "CapacityReport",
    "SCHEDULE_PRESETS",
    "codebook_size_at",
    "codebook_sizes",
    "cumulative_capacity",
    "tstar_uniform",
    "data_threshold",
    "tstar_vcq",
    "capacity_report",
    "schedule_from_json",
    "schedule_to_json",
    "load_schedule",
    "save_schedule",
    "write_capacity_csv",
    "capacity_summary",
]

# Positions whose cumulative capacity falls within this many bits of the
# budget count as reached; guards float rounding at exact powers of K.
_BUDGET_EPS = 1e-9


class Family(str, Enum):
    """Growth-curve family of a schedule."""

    CONSTANT = "constant"
    LINEAR = "linear"
    COSINE = "cosine"
    POWER = "power"


@dataclass(frozen=True)
class Schedule:
    """Codebook-size schedule over a token sequence of ``length`` positions.

    ``alpha`` is the exponent of the power family and is ignored by the
    other families.  The constant family returns ``k_max`` at every
    position regardless of ``k_min``.
    """

    family: Family
    k_min: int
    k_max: int
    length: int
    alpha: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        if self.k_min < 1:
            raise ValueError(f"k_min must be >= 1, got {self.k_min}")
        if self.k_max < self.k_min:
            raise ValueError(
                f"k_max must be >= k_min, got k_min={self.k_min} k_max={self.k_max}"
            )
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")
        if self.family is not Family.CONSTANT and self.length < 2:
            raise ValueError(
                f"{self.family.value} schedule needs length >= 2 to satisfy "
                f"its boundary conditions, got {self.length}"
            )
        if self.family is Family.POWER:
            if self.alpha is None or self.alpha <= 0:
                raise ValueError(
                    f"power schedule requires a positive alpha, got {self.alpha}"
                )


def _fraction(schedule: Schedule, tau: float) -> float:
    if schedule.family is Family.LINEAR:
        return tau
    if schedule.family is Family.COSINE:
        return 1.0 - math.cos(math.pi * tau / 2.0)
    if schedule.family is Family.POWER:
        return tau ** schedule.alpha
    raise AssertionError(f"unexpected family {schedule.family}")


def codebook_size_at(schedule: Schedule, t: int) -> int:
    """Codebook size K_t at position ``t`` (0-based).

    The continuous value k_min + (k_max - k_min) * f(t/(L-1)) is rounded
    half-up to the nearest integer and clamped to [k_min, k_max].
    """
    if not 0 <= t < schedule.length:
        raise IndexError(f"position {t} out of range [0, {schedule.length})")
    if schedule.family is Family.CONSTANT:
        return schedule.k_max
    tau = t / (schedule.length - 1)
    value = schedule.k_min + (schedule.k_max - schedule.k_min) * _fraction(schedule, tau)
    rounded = math.floor(value + 0.5)
    return max(schedule.k_min, min(schedule.k_max, rounded))


def codebook_sizes(schedule: Schedule) -> list[int]:
    """All K_t for t = 0 .. L-1."""
    return [codebook_size_at(schedule, t) for t in range(schedule.length)]


def cumulative_capacity(schedule: Schedule, t: int) -> float:
    """I(t) = sum_{i<t} log2 K_i in bits; I(0) = 0."""
    if not 0 <= t <= schedule.length:
        raise IndexError(f"position count {t} out of range [0, {schedule.length}]")
    return math.fsum(math.log2(codebook_size_at(schedule, i)) for i in range(t))


def tstar_uniform(n_samples: int, k: int) -> int:
    """Smallest t with t * log2 K >= log2 N, i.e. ceil(log2 N / log2 K).

    Computed in exact integer arithmetic (smallest t with K**t >= N), so
    boundary cases at exact powers of K are never off by a float ulp.
    Returns 0 for a single-sample dataset.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if k < 2:
        raise ValueError(f"k must be >= 2 (log2 K vanishes at K=1), got {k}")
    t, reach = 0, 1
    while reach < n_samples:
        reach *= k
        t += 1
    return t


def data_threshold(k: int, m: int) -> int:
    """Minimum dataset size K**(m-1) for a uniform codebook to reach t* = m.

    Exact arbitrary-precision integer; K**4 already overflows 32-bit and
    brushes against 64-bit for large K.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return k ** (m - 1)


def tstar_vcq(schedule: Schedule, n_samples: int) -> int:
    """Smallest t with I(t) >= log2 N; L+1 if the budget outlasts the sequence."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    target = math.log2(n_samples) - _BUDGET_EPS
    total = 0.0
    if total >= target:
        return 0
    for t in range(schedule.length):
        total += math.log2(codebook_size_at(schedule, t))
        if total >= target:
            return t + 1
    return schedule.length + 1


@dataclass(frozen=True)
class CapacityReport:
    """Per-position capacity breakdown of one schedule.

    ``cumulative`` has L+1 entries with cumulative[t] = I(t), so
    cumulative[0] = 0 and cumulative[L] is the total bit budget.
    ``remaining_budget[t]`` = max(0, log2 N - I(t)), the unspent bits before
    position t is consumed.
    """

    sizes: list[int]
    bits_per_position: list[float]
    cumulative: list[float]
    remaining_budget: list[float]
    mean_codebook: float
    bpp: float
    tstar_vcq: int
    n_samples: int
    pixel_count: int


def capacity_report(
    schedule: Schedule, n_samples: int, pixel_count: int = 65536
) -> CapacityReport:
    """Evaluate sizes, bit budget, mean codebook size, BPP and t* in one pass."""
    if pixel_count < 1:
        raise ValueError(f"pixel_count must be >= 1, got {pixel_count}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    sizes = codebook_sizes(schedule)
    bits = [math.log2(k) for k in sizes]
    cumulative = [0.0]
    for b in bits:
        cumulative.append(cumulative[-1] + b)
    log_n = math.log2(n_samples)
    remaining = [max(0.0, log_n - cumulative[t]) for t in range(schedule.length)]
    tstar = schedule.length + 1
    for t in range(schedule.length + 1):
        if cumulative[t] >= log_n - _BUDGET_EPS:
            tstar = t
            break
    return CapacityReport(
        sizes=sizes,
        bits_per_position=bits,
        cumulative=cumulative,
        remaining_budget=remaining,
        mean_codebook=sum(sizes) / len(sizes),
        bpp=cumulative[-1] / pixel_count,
        tstar_vcq=tstar,
        n_samples=n_samples,
        pixel_count=pixel_count,
    )


# The six standard parameterizations (sequence length 256, 256x256 pixels).
SCHEDULE_PRESETS: dict[str, Schedule] = {
    "constant16k": Schedule(Family.CONSTANT, 16384, 16384, 256),
    "constant8k": Schedule(Family.CONSTANT, 8192, 8192, 256),
    "linear": Schedule(Family.LINEAR, 2, 16384, 256),
    "cosine": Schedule(Family.COSINE, 2, 16384, 256),
    "power2.5": Schedule(Family.POWER, 2, 16384, 256, alpha=2.5),
    "cosine-l": Schedule(Family.COSINE, 2, 11264, 256),
}


def schedule_to_json(schedule: Schedule) -> dict:
    """JSON-ready dict: {"family", "k_min", "k_max", "length", "alpha"?}."""
    out = {
        "family": schedule.family.value,
        "k_min": schedule.k_min,
        "k_max": schedule.k_max,
        "length": schedule.length,
    }
    if schedule.alpha is not None:
        out["alpha"] = schedule.alpha
    return out


def schedule_from_json(data: dict) -> Schedule:
    """Inverse of :func:`schedule_to_json`, with field validation."""
    try:
        family = data["family"]
        k_min = int(data["k_min"])
        k_max = int(data["k_max"])
        length = int(data["length"])
    except KeyError as exc:
        raise ValueError(f"schedule config missing field {exc}") from exc
    alpha = data.get("alpha")
    try:
        family = Family(family)
    except ValueError:
        raise ValueError(
            f"unknown schedule family {family!r}; expected one of "
            f"{[f.value for f in Family]}"
        ) from None
    return Schedule(family, k_min, k_max, length, None if alpha is None else float(alpha))


def save_schedule(schedule: Schedule, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schedule_to_json(schedule), indent=2) + "\n")


def load_schedule(path: str | Path) -> Schedule:
    return schedule_from_json(json.loads(Path(path).read_text()))


def write_capacity_csv(report: CapacityReport, path: str | Path) -> None:
    """Per-position curve as CSV: t, K_t, bits, cumulative_bits, remaining_budget."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "K_t", "bits", "cumulative_bits", "remaining_budget"])
        for t, k in enumerate(report.sizes):
            writer.writerow(
                [
                    t,
                    k,
                    f"{report.bits_per_position[t]:.12g}",
                    f"{report.cumulative[t + 1]:.12g}",
                    f"{report.remaining_budget[t]:.12g}",
                ]
            )


def capacity_summary(report: CapacityReport) -> dict:
    """JSON summary of a capacity report (scalars only)."""
    return {
        "mean_codebook": report.mean_codebook,
        "bpp": report.bpp,
        "total_bits": report.cumulative[-1],
        "tstar_vcq": report.tstar_vcq,
        "n_samples": report.n_samples,
        "pixel_count": report.pixel_count,
        "length": len(report.sizes),
        "k_first": report.sizes[0],
        "k_last": report.sizes[-1],
    }
