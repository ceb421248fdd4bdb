"""Exact empirical per-position conditional entropy of token corpora.

All quantities are measured by exact counting over the corpus (no
estimator bias correction) in bits.  Sequences are grouped by prefix; the
conditional entropy at position t is the group-size-weighted entropy of the
next-token distribution within each prefix group:

    H(x_t | x_<t) = sum_p (n_p / N) * H(counts of x_t within group p)

Grouping uses iterative refinement position by position; groups that
become singletons contribute zero to every later position and are dropped,
which keeps full-corpus analysis fast beyond the entropy cliff.  Inner and
outer sums use exactly-rounded summation (math.fsum), so results are
independent of grouping order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import TokenCorpus
from .quantizer import utilization_profile
from .schedule import Schedule, codebook_sizes

__all__ = [
    "EntropyProfile",
    "Prop1Bounds",
    "conditional_entropy_profile",
    "joint_entropy",
    "remaining_budget",
    "prop1_bounds",
    "cliff_position",
    "chain_rule_check",
    "analyze",
    "write_profile_csv",
    "profile_summary",
]


def entropy_from_counts(counts) -> float:
    """Entropy in bits of the empirical distribution given positive counts."""
    n = 0
    for c in counts:
        n += int(c)
    n = float(n)
    return -math.fsum((c / n) * math.log2(c / n) for c in counts)


def _refinement_pass(tokens: np.ndarray):
    """Yield per position: (list of (group_total, child_counts), n_singletons).

    ``child_counts`` are the next-token counts within one surviving prefix
    group; ``n_singletons`` counts rows already in singleton groups before
    this position is consumed.
    """
    n, length = tokens.shape
    rows = np.arange(n)
    gids = np.zeros(n, dtype=np.int64)
    n_singletons = 0
    for t in range(length):
        groups = []
        if rows.size:
            col = tokens[rows, t]
            pairs = np.column_stack((gids, col))
            uniq, inverse, counts = np.unique(
                pairs, axis=0, return_inverse=True, return_counts=True
            )
            inverse = inverse.reshape(-1)  # numpy 2.0.0 returned (n, 1) here
            parents = uniq[:, 0]
            # children of one parent group are contiguous (unique sorts pairs)
            start = 0
            while start < len(parents):
                end = start
                while end < len(parents) and parents[end] == parents[start]:
                    end += 1
                child = counts[start:end]
                groups.append((int(child.sum()), child))
                start = end
        yield groups, n_singletons
        if rows.size:
            keep = counts[inverse] > 1
            n_singletons += int((~keep).sum())
            rows = rows[keep]
            gids = inverse[keep]


def conditional_entropy_profile(corpus: TokenCorpus) -> list[float]:
    """H(x_t | x_<t) for every position, in bits, by exact counting."""
    n = corpus.n_samples
    out = []
    for groups, _ in _refinement_pass(corpus.tokens):
        out.append(
            math.fsum(
                (total / n) * entropy_from_counts(child) for total, child in groups
            )
        )
    return out


def _prefix_joint_entropies(corpus: TokenCorpus) -> list[float]:
    """H(x_<t) for t = 0 .. L, i.e. joint entropy of the first t columns."""
    n = corpus.n_samples
    out = [0.0]
    for groups, n_singletons in _refinement_pass(corpus.tokens):
        # entropy of the refined grouping after consuming position t
        terms = []
        for _, child in groups:
            terms.extend(-(c / n) * math.log2(c / n) for c in child)
        singleton_term = n_singletons * ((1.0 / n) * math.log2(n)) if n_singletons else 0.0
        out.append(math.fsum(terms) + singleton_term)
    return out


def joint_entropy(corpus: TokenCorpus) -> float:
    """Entropy in bits of the empirical distribution over whole sequences."""
    _, counts = np.unique(corpus.tokens, axis=0, return_counts=True)
    return entropy_from_counts(counts)


def chain_rule_check(corpus: TokenCorpus) -> tuple[float, float, float]:
    """(sum of conditional entropies, joint entropy, absolute difference).

    Exact counting makes the chain rule an identity; the difference is pure
    float rounding and stays below 1e-9 bits.
    """
    total = math.fsum(conditional_entropy_profile(corpus))
    joint = joint_entropy(corpus)
    return total, joint, abs(total - joint)


def remaining_budget(schedule: Schedule, n_samples: int) -> list[float]:
    """max(0, log2 N - I(t)) for t = 0 .. L-1, the unspent bits per position."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    log_n = math.log2(n_samples)
    out = []
    total = 0.0
    for k in codebook_sizes(schedule):
        out.append(max(0.0, log_n - total))
        total += math.log2(k)
    return out


@dataclass(frozen=True)
class Prop1Bounds:
    """The uniform-codebook entropy bound and its unconditional refinement.

    ``prop1[i]`` = max(0, log2 N - i * log2 K) for 0-based index i (the
    bound's 1-based position t is i+1).  It presumes earlier positions
    saturate their capacity; a corpus with a constant early position can
    exceed it.  ``exact[i]`` = min(log2 K_i, log2 N - H(x_<i)) uses the
    measured prefix entropy and always dominates the measurement.
    ``approximate_uniform`` flags that K was taken as the k_max of a
    non-constant schedule.
    """

    prop1: list[float]
    exact: list[float] | None
    uniform_k: int
    approximate_uniform: bool


def prop1_bounds(
    corpus: TokenCorpus | None = None,
    schedule: Schedule | None = None,
    n_samples: int | None = None,
) -> Prop1Bounds:
    """Per-position entropy bounds; the exact bound requires a corpus.

    Callable with a corpus alone (treated as uniform at its k_max), with a
    corpus plus schedule, or with (schedule, n_samples) for the uniform
    bound only.
    """
    if corpus is None and (schedule is None or n_samples is None):
        raise ValueError("need a corpus, or both a schedule and n_samples")
    n = corpus.n_samples if corpus is not None else int(n_samples)
    if schedule is not None:
        length = schedule.length
        if corpus is not None and corpus.length != length:
            raise ValueError(
                f"corpus length {corpus.length} does not match schedule length {length}"
            )
        k_uniform = schedule.k_max
        approximate = schedule.family.value != "constant"
        sizes = codebook_sizes(schedule)
    else:
        length = corpus.length
        k_uniform = corpus.k_max
        approximate = False
        sizes = [k_uniform] * length
    log_n = math.log2(n)
    log_k = math.log2(k_uniform)
    prop1 = [max(0.0, log_n - i * log_k) for i in range(length)]
    exact = None
    if corpus is not None:
        prefix = _prefix_joint_entropies(corpus)
        exact = [
            min(math.log2(sizes[i]), log_n - prefix[i]) for i in range(length)
        ]
    return Prop1Bounds(
        prop1=prop1, exact=exact, uniform_k=k_uniform, approximate_uniform=approximate
    )


def cliff_position(profile: list[float], threshold: float = 1.0) -> int:
    """Smallest t with every later conditional entropy below ``threshold``.

    Returns len(profile) when the entropy never settles below the
    threshold, and 0 when it is always below.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    last = -1
    for i, h in enumerate(profile):
        if h >= threshold:
            last = i
    return last + 1


@dataclass(frozen=True)
class EntropyProfile:
    """Complete per-position entropy analysis of one corpus."""

    conditional_bits: list[float]
    joint_bits: float
    remaining_budget: list[float]
    prop1_bound: list[float]
    exact_bound: list[float]
    cliff_position: int
    utilization: list[float]
    cliff_threshold: float
    n_samples: int
    prop1_uniform_k: int
    prop1_approximate: bool


def analyze(
    corpus: TokenCorpus,
    schedule: Schedule | None = None,
    cliff_threshold: float = 1.0,
) -> EntropyProfile:
    """Measure a corpus: conditional entropies, bounds, cliff, utilization.

    Without a schedule the corpus is treated as uniformly quantized at its
    own k_max.
    """
    if schedule is None:
        schedule = Schedule("constant", corpus.k_max, corpus.k_max, corpus.length)
    conditional = conditional_entropy_profile(corpus)
    bounds = prop1_bounds(corpus, schedule)
    return EntropyProfile(
        conditional_bits=conditional,
        joint_bits=joint_entropy(corpus),
        remaining_budget=remaining_budget(schedule, corpus.n_samples),
        prop1_bound=bounds.prop1,
        exact_bound=bounds.exact,
        cliff_position=cliff_position(conditional, cliff_threshold),
        utilization=utilization_profile(corpus, schedule),
        cliff_threshold=cliff_threshold,
        n_samples=corpus.n_samples,
        prop1_uniform_k=bounds.uniform_k,
        prop1_approximate=bounds.approximate_uniform,
    )


def write_profile_csv(profile: EntropyProfile, path: str | Path) -> None:
    """CSV columns: t, H_bits, remaining_budget, prop1_bound, exact_bound, utilization."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["t", "H_bits", "remaining_budget", "prop1_bound", "exact_bound", "utilization"]
        )
        for t in range(len(profile.conditional_bits)):
            writer.writerow(
                [
                    t,
                    f"{profile.conditional_bits[t]:.12g}",
                    f"{profile.remaining_budget[t]:.12g}",
                    f"{profile.prop1_bound[t]:.12g}",
                    f"{profile.exact_bound[t]:.12g}",
                    f"{profile.utilization[t]:.12g}",
                ]
            )


def profile_summary(profile: EntropyProfile) -> dict:
    """JSON summary with the scalar measurements."""
    return {
        "joint_bits": profile.joint_bits,
        "cliff_position": profile.cliff_position,
        "cliff_threshold": profile.cliff_threshold,
        "n_samples": profile.n_samples,
        "length": len(profile.conditional_bits),
        "sum_conditional_bits": math.fsum(profile.conditional_bits),
        "prop1_uniform_k": profile.prop1_uniform_k,
        "prop1_approximate": profile.prop1_approximate,
    }


def save_profile(profile: EntropyProfile, csv_path: str | Path, json_path: str | Path) -> None:
    write_profile_csv(profile, csv_path)
    Path(json_path).write_text(json.dumps(profile_summary(profile), indent=2, sort_keys=True) + "\n")
