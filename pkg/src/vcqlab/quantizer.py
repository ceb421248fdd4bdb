"""Shared-codebook quantization with per-position prefix restriction.

A single table of k_max embedding vectors serves the whole sequence;
position t may select only from the first K_t rows, where K_t comes from a
:class:`~vcqlab.schedule.Schedule`.  Nearest neighbors use unnormalized
squared Euclidean distance with ties broken by lowest index.

Codebook files are little-endian binary:

    magic   "VCQC"  (4 bytes)
    version u16
    d       u32
    k_max   u32
    entries k_max * d float32, row-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import TokenCorpus
from .schedule import Schedule, codebook_sizes

__all__ = [
    "Codebook",
    "QuantizationResult",
    "quantize_position",
    "quantize_sequence",
    "quantize_batch",
    "decode",
    "vq_loss_terms",
    "fit_codebook",
    "utilization_profile",
    "read_codebook",
    "write_codebook",
    "CODEBOOK_MAGIC",
]

CODEBOOK_MAGIC = b"VCQC"
CODEBOOK_VERSION = 1
_HEADER = struct.Struct("<4sHII")


@dataclass
class Codebook:
    """k_max x d table of embedding vectors (float32)."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.ascontiguousarray(self.entries, dtype=np.float32)
        if entries.ndim != 2 or entries.size == 0:
            raise ValueError(f"entries must be a non-empty k_max x d matrix, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("codebook entries must all be finite")
        self.entries = entries

    @property
    def k_max(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


@dataclass
class QuantizationResult:
    """Per-position outcome of quantizing one L x d latent sequence.

    ``residuals`` is quantized - input, so ``input + residuals`` reproduces
    the quantized output; treating the residual as a constant under
    differentiation realizes the straight-through estimator.
    """

    tokens: np.ndarray      # (L,) int64
    quantized: np.ndarray   # (L, d) float32, exact codebook rows
    distances: np.ndarray   # (L,) float64, squared Euclidean
    residuals: np.ndarray   # (L, d) float64


def _check_latent(z: np.ndarray, dim: int) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (dim,):
        raise ValueError(f"latent must have shape ({dim},), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent vector contains non-finite values")
    return z


def quantize_position(
    z: np.ndarray, codebook: Codebook, k_t: int
) -> tuple[int, np.ndarray, float]:
    """Nearest neighbor of ``z`` among the first ``k_t`` codebook rows.

    Returns (token, codebook row, squared distance); ties go to the lowest
    index.
    """
    if not 1 <= k_t <= codebook.k_max:
        raise IndexError(f"k_t {k_t} out of range [1, {codebook.k_max}]")
    z = _check_latent(z, codebook.dim)
    diff = codebook.entries[:k_t].astype(np.float64) - z
    d2 = np.einsum("kd,kd->k", diff, diff)
    token = int(np.argmin(d2))
    return token, codebook.entries[token].copy(), float(d2[token])


def quantize_sequence(
    latents: np.ndarray, schedule: Schedule, codebook: Codebook
) -> QuantizationResult:
    """Quantize an L x d latent sequence under the schedule's K_t restriction."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[0] != schedule.length:
        raise ValueError(
            f"latents must have shape ({schedule.length}, d), got {latents.shape}"
        )
    if latents.shape[1] != codebook.dim:
        raise ValueError(
            f"latent dim {latents.shape[1]} does not match codebook dim {codebook.dim}"
        )
    if schedule.k_max > codebook.k_max:
        raise ValueError(
            f"schedule k_max {schedule.k_max} exceeds codebook size {codebook.k_max}"
        )
    length = schedule.length
    tokens = np.empty(length, dtype=np.int64)
    distances = np.empty(length, dtype=np.float64)
    sizes = codebook_sizes(schedule)
    for t in range(length):
        token, _, dist = quantize_position(latents[t], codebook, sizes[t])
        tokens[t] = token
        distances[t] = dist
    quantized = codebook.entries[tokens]
    residuals = quantized.astype(np.float64) - latents
    return QuantizationResult(
        tokens=tokens, quantized=quantized, distances=distances, residuals=residuals
    )


def quantize_batch(
    latents: np.ndarray, schedule: Schedule, codebook: Codebook
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized tokens/distances for a batch of sequences.

    ``latents`` has shape (n, L, d); returns tokens (n, L) and squared
    distances (n, L).  Position-wise identical to :func:`quantize_sequence`.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 3 or latents.shape[1] != schedule.length:
        raise ValueError(
            f"latents must have shape (n, {schedule.length}, d), got {latents.shape}"
        )
    if latents.shape[2] != codebook.dim:
        raise ValueError(
            f"latent dim {latents.shape[2]} does not match codebook dim {codebook.dim}"
        )
    if schedule.k_max > codebook.k_max:
        raise ValueError(
            f"schedule k_max {schedule.k_max} exceeds codebook size {codebook.k_max}"
        )
    if not np.all(np.isfinite(latents)):
        raise ValueError("latents contain non-finite values")
    n, length, _ = latents.shape
    tokens = np.empty((n, length), dtype=np.int64)
    distances = np.empty((n, length), dtype=np.float64)
    entries = codebook.entries.astype(np.float64)
    sq_entries = np.einsum("kd,kd->k", entries, entries)
    for t, k_t in enumerate(codebook_sizes(schedule)):
        z = latents[:, t, :]
        # |z - e|^2 = |z|^2 + |e|^2 - 2 z.e; clamp tiny negatives from cancellation
        d2 = (
            np.einsum("nd,nd->n", z, z)[:, None]
            + sq_entries[None, :k_t]
            - 2.0 * z @ entries[:k_t].T
        )
        np.maximum(d2, 0.0, out=d2)
        tok = np.argmin(d2, axis=1)
        tokens[:, t] = tok
        distances[:, t] = d2[np.arange(n), tok]
    return tokens, distances


def decode(tokens: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Look up codebook rows for a token sequence (exact rows, float32)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= codebook.k_max):
        raise IndexError(
            f"token ids must lie in [0, {codebook.k_max}), found range "
            f"[{tokens.min()}, {tokens.max()}]"
        )
    return codebook.entries[tokens]


def vq_loss_terms(latents: np.ndarray, result: QuantizationResult) -> tuple[float, float]:
    """Codebook and commitment loss terms of the standard VQ objective.

    codebook_term  = mean_t |stop_grad(z_t) - e_t|^2
    commitment_term = mean_t |z_t - stop_grad(e_t)|^2

    The stop-gradient placement only matters under differentiation; the two
    values are numerically identical and equal the mean squared distance.
    They are returned separately so a training loop can weight them.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.shape != result.quantized.shape:
        raise ValueError(
            f"latents shape {latents.shape} does not match result shape "
            f"{result.quantized.shape}"
        )
    diff = result.quantized.astype(np.float64) - latents
    term = float(np.mean(np.einsum("ld,ld->l", diff, diff)))
    return term, term


def fit_codebook(
    latent_corpus: np.ndarray,
    schedule: Schedule,
    k_max: int,
    d: int,
    epochs: int = 20,
    decay: float = 0.99,
    seed: int = 0,
) -> Codebook:
    """Fit a shared codebook by EMA k-means with prefix-constrained assignment.

    ``latent_corpus`` is an (n, L, d) array (or an iterable of L x d
    matrices).  Entries are initialized from randomly sampled latent
    vectors.  Each epoch assigns every latent at position t to its nearest
    entry among the first K_t, accumulates per-entry counts and vector
    sums, then updates the exponential moving averages

        size_i <- decay * size_i + (1 - decay) * count_i
        sum_i  <- decay * sum_i  + (1 - decay) * vecsum_i
        entry_i = sum_i / size_i            (once size_i > 0)

    Entries with zero assignments over a full epoch are re-seeded from
    random latents and their averages reset.  Deterministic given ``seed``.
    """
    if not isinstance(latent_corpus, np.ndarray):
        latent_corpus = np.stack([np.asarray(m, dtype=np.float64) for m in latent_corpus])
    latents = np.asarray(latent_corpus, dtype=np.float64)
    if latents.ndim != 3 or latents.size == 0:
        raise ValueError(f"latent corpus must be non-empty (n, L, d), got shape {latents.shape}")
    n, length, dim = latents.shape
    if dim != d:
        raise ValueError(f"latent dim {dim} does not match requested d {d}")
    if length != schedule.length:
        raise ValueError(
            f"latent length {length} does not match schedule length {schedule.length}"
        )
    if schedule.k_max > k_max:
        raise ValueError(f"schedule k_max {schedule.k_max} exceeds codebook size {k_max}")
    if not 0.0 < decay < 1.0:
        raise ValueError(f"decay must be in (0, 1), got {decay}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")

    rng = np.random.default_rng(seed)
    flat = latents.reshape(n * length, d)
    pick = rng.choice(flat.shape[0], size=k_max, replace=flat.shape[0] < k_max)
    entries = flat[pick].astype(np.float64)

    sizes = codebook_sizes(schedule)
    ema_size = np.zeros(k_max, dtype=np.float64)
    ema_sum = np.zeros((k_max, d), dtype=np.float64)
    for _ in range(epochs):
        counts = np.zeros(k_max, dtype=np.int64)
        vecsum = np.zeros((k_max, d), dtype=np.float64)
        sq_entries = np.einsum("kd,kd->k", entries, entries)
        for t, k_t in enumerate(sizes):
            z = latents[:, t, :]
            d2 = (
                np.einsum("nd,nd->n", z, z)[:, None]
                + sq_entries[None, :k_t]
                - 2.0 * z @ entries[:k_t].T
            )
            tok = np.argmin(d2, axis=1)
            counts += np.bincount(tok, minlength=k_max)
            np.add.at(vecsum, tok, z)
        ema_size = decay * ema_size + (1.0 - decay) * counts
        ema_sum = decay * ema_sum + (1.0 - decay) * vecsum
        live = ema_size > 0.0
        entries[live] = ema_sum[live] / ema_size[live, None]
        dead = counts == 0
        if dead.any():
            reseed = rng.choice(flat.shape[0], size=int(dead.sum()), replace=flat.shape[0] < int(dead.sum()))
            entries[dead] = flat[reseed]
            ema_size[dead] = 0.0
            ema_sum[dead] = 0.0
    return Codebook(entries=entries.astype(np.float32))


def utilization_profile(tokens_corpus: TokenCorpus, schedule: Schedule) -> list[float]:
    """Fraction of the K_t candidate set observed at each position.

    Raises if any observed token id reaches K_t: that means the corpus was
    produced under a different schedule.
    """
    if tokens_corpus.length != schedule.length:
        raise ValueError(
            f"corpus length {tokens_corpus.length} does not match schedule "
            f"length {schedule.length}"
        )
    out = []
    for t, k_t in enumerate(codebook_sizes(schedule)):
        observed = np.unique(tokens_corpus.tokens[:, t])
        if observed[-1] >= k_t:
            raise ValueError(
                f"position {t}: token {int(observed[-1])} >= K_t {k_t}; corpus "
                f"does not match this schedule"
            )
        out.append(len(observed) / k_t)
    return out


def write_codebook(codebook: Codebook, path: str | Path) -> None:
    """Serialize a codebook to the VCQC binary format (atomic write)."""
    header = _HEADER.pack(CODEBOOK_MAGIC, CODEBOOK_VERSION, codebook.dim, codebook.k_max)
    payload = header + np.ascontiguousarray(codebook.entries, dtype="<f4").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def read_codebook(path: str | Path) -> Codebook:
    """Read a VCQC codebook file, validating magic, version and sizes."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated codebook file ({len(raw)} bytes)")
    magic, version, dim, k_max = _HEADER.unpack_from(raw)
    if magic != CODEBOOK_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {CODEBOOK_MAGIC!r}")
    if version != CODEBOOK_VERSION:
        raise ValueError(f"{path}: unsupported codebook version {version}")
    expected = _HEADER.size + k_max * dim * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, file has {len(raw)}")
    entries = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(k_max, dim)
    return Codebook(entries=entries.copy())
