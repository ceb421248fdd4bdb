"""Count-based class-conditional autoregressive model over scheduled tokens,
with size-aware classifier-free guidance.

The model stores exact prefix -> next-token counts up to a maximum context
order, per class and pooled over classes.  Logits are base-2 log
probabilities of the back-off smoothed distribution

    P0(x)   = (C0(x) + a) / (N0 + a * K_t)            position-t unigram
    Po(x)   = (Co(ctx, x) + a * P(o-1)(x)) / (No(ctx) + a)

interpolating each context order with the next shorter one; an unseen
context passes the shorter-order distribution through unchanged.  Only the
first K_t entries are valid at position t; the rest carry a -inf mask
sentinel and are excluded from softmax.

Guidance combines conditional and unconditional logits as
(1 + s_t) * cond - s_t * uncond, where s_t scales the base strength by the
position's excess log-capacity:

    s_t = s * ramp(t) * (log2 K_t - log2 K_min) / (log2 K_max - log2 K_min)

so the smallest codebook gets no guidance and the largest gets the full
base scale.  On a constant schedule the size factor is identically 1 and
the combination reduces to standard CFG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import TokenCorpus
from .schedule import Schedule, codebook_size_at, codebook_sizes

__all__ = [
    "GuidancePolicy",
    "CountModel",
    "MASK",
    "size_aware_scale",
    "apply_guidance",
    "fit_counts",
    "logits",
    "sample_sequence",
    "sample_corpus",
    "memorization_report",
    "policy_from_json",
    "policy_to_json",
]

MASK = float("-inf")

_RAMPS = ("none", "cosine")


@dataclass(frozen=True)
class GuidancePolicy:
    """Guidance configuration: base scale, ramp, size-awareness, temperature."""

    schedule: Schedule
    scale: float = 0.0
    ramp: str = "none"
    power: float = 1.5
    size_aware: bool = True
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.scale < 0:
            raise ValueError(f"scale must be >= 0, got {self.scale}")
        if self.ramp not in _RAMPS:
            raise ValueError(f"ramp must be one of {_RAMPS}, got {self.ramp!r}")
        if self.power <= 0:
            raise ValueError(f"power must be > 0, got {self.power}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


def size_aware_scale(policy: GuidancePolicy, t: int) -> float:
    """Guidance scale s_t at position t.

    s_t = scale * ramp(t) * size_factor(t); the size factor is the excess
    log-capacity of K_t relative to [K_min, K_max] (1 when size_aware is
    off or the schedule is degenerate).  The cosine ramp is
    (1 - cos(pi * (t/(L-1))**power)) / 2.
    """
    sched = policy.schedule
    if not 0 <= t < sched.length:
        raise IndexError(f"position {t} out of range [0, {sched.length})")
    value = policy.scale
    if policy.ramp == "cosine":
        tau = t / (sched.length - 1) if sched.length > 1 else 1.0
        value *= (1.0 - math.cos(math.pi * tau ** policy.power)) / 2.0
    if policy.size_aware and sched.k_max > sched.k_min:
        lo = math.log2(sched.k_min)
        hi = math.log2(sched.k_max)
        value *= (math.log2(codebook_size_at(sched, t)) - lo) / (hi - lo)
    return value


def apply_guidance(
    logits_cond: np.ndarray, logits_uncond: np.ndarray, s_t: float
) -> np.ndarray:
    """(1 + s_t) * cond - s_t * uncond, preserving -inf mask entries.

    Entries masked in either input stay masked; all other entries must be
    finite.
    """
    c = np.asarray(logits_cond, dtype=np.float64)
    u = np.asarray(logits_uncond, dtype=np.float64)
    if c.shape != u.shape:
        raise ValueError(f"logit shapes differ: {c.shape} vs {u.shape}")
    masked = np.isneginf(c) | np.isneginf(u)
    if not np.all(np.isfinite(c[~masked])) or not np.all(np.isfinite(u[~masked])):
        raise ValueError("unmasked logits must be finite")
    # combine on zero-filled copies so -inf never feeds inf-inf arithmetic
    cf = np.where(masked, 0.0, c)
    uf = np.where(masked, 0.0, u)
    out = (1.0 + s_t) * cf - s_t * uf
    out[masked] = MASK
    return out


@dataclass
class CountModel:
    """Exact prefix -> next-token count tables for one schedule.

    ``class_counts[(label, t, ctx)]`` and ``pooled_counts[(t, ctx)]`` map a
    context tuple ending at position t to a token count dict; the pooled
    table is the sum of the per-class tables.
    """

    schedule: Schedule
    k_max: int
    length: int
    max_order: int
    smoothing: float
    classes: list[int]
    class_counts: dict = field(repr=False)
    pooled_counts: dict = field(repr=False)


def fit_counts(
    corpus: TokenCorpus,
    schedule: Schedule,
    max_order: int = 4,
    smoothing: float = 0.1,
) -> CountModel:
    """Count every (class, context, next-token) occurrence up to max_order.

    The corpus must carry labels and respect the schedule's per-position
    sizes.  Deterministic: counting is pure.
    """
    if corpus.labels is None:
        raise ValueError("fit_counts requires a labelled corpus")
    if corpus.length != schedule.length:
        raise ValueError(
            f"corpus length {corpus.length} does not match schedule length "
            f"{schedule.length}"
        )
    if max_order < 0:
        raise ValueError(f"max_order must be >= 0, got {max_order}")
    if smoothing <= 0:
        raise ValueError(f"smoothing must be > 0, got {smoothing}")
    sizes = codebook_sizes(schedule)
    per_position_max = corpus.tokens.max(axis=0)
    for t, k_t in enumerate(sizes):
        if per_position_max[t] >= k_t:
            raise ValueError(
                f"position {t}: token {int(per_position_max[t])} >= K_t {k_t}; "
                f"corpus does not respect this schedule"
            )

    class_counts: dict = {}
    pooled_counts: dict = {}
    rows = corpus.tokens.tolist()
    labels = corpus.labels.tolist()
    for row, label in zip(rows, labels):
        for t in range(corpus.length):
            token = row[t]
            for order in range(min(max_order, t) + 1):
                ctx = tuple(row[t - order : t])
                key = (t, ctx)
                bucket = pooled_counts.get(key)
                if bucket is None:
                    bucket = pooled_counts[key] = {}
                bucket[token] = bucket.get(token, 0) + 1
                ckey = (label, t, ctx)
                bucket = class_counts.get(ckey)
                if bucket is None:
                    bucket = class_counts[ckey] = {}
                bucket[token] = bucket.get(token, 0) + 1
    return CountModel(
        schedule=schedule,
        k_max=corpus.k_max,
        length=corpus.length,
        max_order=max_order,
        smoothing=smoothing,
        classes=sorted(set(labels)),
        class_counts=class_counts,
        pooled_counts=pooled_counts,
    )


def _probs(model: CountModel, label: int | None, prefix, t: int, k_t: int) -> np.ndarray:
    alpha = model.smoothing
    if label is None:
        lookup = lambda ctx: model.pooled_counts.get((t, ctx))
    else:
        lookup = lambda ctx: model.class_counts.get((label, t, ctx))
    # position-t unigram with per-outcome Laplace mass over the K_t support
    probs = np.full(k_t, alpha, dtype=np.float64)
    base = lookup(())
    total = 0
    if base:
        for token, count in base.items():
            probs[token] += count
            total += count
    probs /= total + alpha * k_t
    # interpolate longer contexts; unseen contexts pass the distribution through
    for order in range(1, min(model.max_order, t) + 1):
        ctx = tuple(prefix[t - order : t])
        bucket = lookup(ctx)
        if not bucket:
            continue
        vec = np.zeros(k_t, dtype=np.float64)
        total = 0
        for token, count in bucket.items():
            vec[token] += count
            total += count
        probs = (vec + alpha * probs) / (total + alpha)
    return probs


def logits(model: CountModel, label: int | None, prefix, t: int) -> np.ndarray:
    """Base-2 log probabilities over all k_max tokens at position t.

    ``prefix`` must hold exactly t tokens.  Entries at or beyond K_t are
    masked with -inf.  ``label`` None selects the pooled (unconditional)
    counts.
    """
    if not 0 <= t < model.length:
        raise IndexError(f"position {t} out of range [0, {model.length})")
    prefix = list(prefix)
    if len(prefix) != t:
        raise ValueError(f"prefix must hold exactly {t} tokens, got {len(prefix)}")
    if any(not 0 <= p < model.k_max for p in prefix):
        raise ValueError(f"prefix tokens must lie in [0, {model.k_max})")
    if label is not None and label not in model.classes:
        raise ValueError(f"unknown class id {label}; known: {model.classes}")
    k_t = codebook_size_at(model.schedule, t)
    out = np.full(model.k_max, MASK, dtype=np.float64)
    out[:k_t] = np.log2(_probs(model, label, prefix, t, k_t))
    return out


def _softmax_base2(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    weights = np.exp2(shifted)
    return weights / weights.sum()


def sample_sequence(
    model: CountModel,
    label: int | None,
    policy: GuidancePolicy,
    seed,
) -> np.ndarray:
    """Draw one token sequence with guided, temperature-scaled sampling.

    Every position combines conditional and unconditional logits with the
    policy's s_t, rescales by temperature, and samples over the K_t valid
    entries (argmax when temperature is 0).  Deterministic given ``seed``.
    """
    if policy.schedule.length != model.length:
        raise ValueError(
            f"policy schedule length {policy.schedule.length} does not match "
            f"model length {model.length}"
        )
    rng = np.random.default_rng(seed)
    sizes = codebook_sizes(model.schedule)
    out = np.empty(model.length, dtype=np.int64)
    prefix: list[int] = []
    for t in range(model.length):
        cond = logits(model, label, prefix, t)
        uncond = logits(model, None, prefix, t)
        guided = apply_guidance(cond, uncond, size_aware_scale(policy, t))
        valid = guided[: sizes[t]]
        if policy.temperature == 0.0:
            token = int(np.argmax(valid))
        else:
            p = _softmax_base2(valid / policy.temperature)
            token = int(rng.choice(sizes[t], p=p))
        out[t] = token
        prefix.append(token)
    return out


def sample_corpus(
    model: CountModel,
    policy: GuidancePolicy,
    n_samples: int,
    seed: int,
    labels=None,
) -> TokenCorpus:
    """Draw a corpus of sequences; sample i uses generator seed (seed, i).

    ``labels`` defaults to cycling through the model's classes.  The
    per-sample seed derivation keeps results independent of scheduling
    order.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if labels is None:
        classes = model.classes or [0]
        labels = [classes[i % len(classes)] for i in range(n_samples)]
    labels = list(labels)
    if len(labels) != n_samples:
        raise ValueError(f"need {n_samples} labels, got {len(labels)}")
    rows = np.empty((n_samples, model.length), dtype=np.int64)
    for i, label in enumerate(labels):
        rows[i] = sample_sequence(model, label, policy, seed=(seed, i))
    return TokenCorpus(tokens=rows, k_max=model.k_max, labels=np.asarray(labels))


def memorization_report(
    generated: TokenCorpus, training: TokenCorpus
) -> tuple[float, float]:
    """(exact_match_rate, mean_longest_prefix) of generated vs training rows.

    exact_match_rate is the fraction of generated rows appearing verbatim
    in the training corpus; mean_longest_prefix averages, over generated
    rows, the longest prefix length shared with any training row.
    """
    if generated.length != training.length:
        raise ValueError(
            f"sequence lengths differ: generated {generated.length}, "
            f"training {training.length}"
        )
    length = training.length
    prefix_sets: list[set[bytes]] = []
    for ell in range(1, length + 1):
        prefix_sets.append({row[:ell].tobytes() for row in training.tokens})
    full = prefix_sets[-1]
    matches = 0
    prefix_total = 0
    for row in generated.tokens:
        if row.tobytes() in full:
            matches += 1
        longest = 0
        for ell in range(1, length + 1):
            if row[:ell].tobytes() in prefix_sets[ell - 1]:
                longest = ell
            else:
                break
        prefix_total += longest
    n = generated.n_samples
    return matches / n, prefix_total / n


def policy_to_json(policy: GuidancePolicy) -> dict:
    """JSON-ready dict (the schedule is carried separately)."""
    return {
        "scale": policy.scale,
        "ramp": policy.ramp,
        "power": policy.power,
        "size_aware": policy.size_aware,
        "temperature": policy.temperature,
    }


def policy_from_json(data: dict, schedule: Schedule) -> GuidancePolicy:
    """Build a policy from {"scale", "ramp", "power", "size_aware", "temperature"}."""
    known = {"scale", "ramp", "power", "size_aware", "temperature"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown policy fields: {sorted(unknown)}")
    return GuidancePolicy(
        schedule=schedule,
        scale=float(data.get("scale", 0.0)),
        ramp=str(data.get("ramp", "none")),
        power=float(data.get("power", 1.5)),
        size_aware=bool(data.get("size_aware", True)),
        temperature=float(data.get("temperature", 1.0)),
    )
