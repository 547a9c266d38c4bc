"""Trainable two-tower sentence encoder: embedding lookup, mean pooling,
pooled-level dropout, linear projection.

One shared encoder embeds both instance and label text (Siamese towers).
Forward passes are dtype-preserving so gradient checks can run in float64;
model state is float32. Scores downstream are raw inner products, so no
output normalization happens here.

Checkpoint layout (little-endian): magic "MACL", version u32, V u32,
d_e u32, d u32, dropout_rate f32, vocab hash u64, then embed_table,
proj_weight, proj_bias as f32 arrays in that order.
"""

from __future__ import annotations

import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CompatibilityError, DimensionError, FormatError
from .numkit import dropout_mask

CHECKPOINT_MAGIC = b"MACL"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIfQ")


@dataclass
class EncoderParams:
    embed_table: np.ndarray  # (V, d_e)
    proj_weight: np.ndarray  # (d_e, d)
    proj_bias: np.ndarray    # (d,)
    dropout_rate: float = 0.1

    @property
    def vocab_size(self) -> int:
        return self.embed_table.shape[0]

    @property
    def d_e(self) -> int:
        return self.embed_table.shape[1]

    @property
    def d(self) -> int:
        return self.proj_weight.shape[1]

    def astype(self, dtype) -> "EncoderParams":
        return EncoderParams(
            embed_table=self.embed_table.astype(dtype),
            proj_weight=self.proj_weight.astype(dtype),
            proj_bias=self.proj_bias.astype(dtype),
            dropout_rate=self.dropout_rate,
        )

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            embed_table=self.embed_table.copy(),
            proj_weight=self.proj_weight.copy(),
            proj_bias=self.proj_bias.copy(),
            dropout_rate=self.dropout_rate,
        )


def init_params(vocab_size: int, d_e: int, d: int, dropout_rate: float,
                rng: np.random.Generator) -> EncoderParams:
    """Uniform [-0.05, 0.05] embeddings, 1/sqrt(d_e)-scaled normal projection, zero bias."""
    embed = rng.uniform(-0.05, 0.05, size=(vocab_size, d_e)).astype(np.float32)
    proj = (rng.standard_normal((d_e, d)) / np.sqrt(d_e)).astype(np.float32)
    bias = np.zeros(d, dtype=np.float32)
    return EncoderParams(embed, proj, bias, dropout_rate)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


@dataclass
class BatchTrace:
    """Everything needed to replay a train-mode forward and run its backward."""

    flat_ids: np.ndarray    # concatenated token ids
    offsets: np.ndarray     # start of each member in flat_ids
    lengths: np.ndarray     # tokens per member
    masks: np.ndarray | None  # (N, d_e) dropout masks, None in eval mode
    pooled: np.ndarray      # (N, d_e) mean-pooled, pre-mask
    output: np.ndarray      # (N, d)


def _flatten(seqs, vocab_size: int):
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.sum() == 0:
        flat = np.zeros(0, dtype=np.int64)
    else:
        flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in seqs if len(s)])
    if flat.size and (flat.min() < 0 or flat.max() >= vocab_size):
        bad = flat[(flat < 0) | (flat >= vocab_size)][0]
        raise IndexError(f"token id {bad} outside vocabulary of size {vocab_size}")
    offsets = np.zeros(len(seqs), dtype=np.int64)
    np.cumsum(lengths[:-1], out=offsets[1:])
    return flat, offsets, lengths


def _pool(params: EncoderParams, flat_ids, offsets, lengths) -> np.ndarray:
    n = len(lengths)
    pooled = np.zeros((n, params.d_e), dtype=params.embed_table.dtype)
    nonempty = np.flatnonzero(lengths > 0)
    if flat_ids.size and nonempty.size:
        rows = params.embed_table[flat_ids]
        # reduceat over non-empty members only: their starts are strictly
        # increasing and each segment covers exactly that member's tokens,
        # so a member's sum never depends on its batch neighbours.
        sums = np.add.reduceat(rows, offsets[nonempty], axis=0)
        pooled[nonempty] = sums / lengths[nonempty, None]
    return pooled


def encode_batch(params: EncoderParams, seqs, mode: str = "eval",
                 rng: np.random.Generator | None = None,
                 masks: np.ndarray | None = None):
    """Encode a list of token-id sequences.

    Returns (N, d) embeddings in eval mode, or (embeddings, BatchTrace) in
    train mode. Explicit masks override RNG draws (used for replay and
    gradient checks).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    flat, offsets, lengths = _flatten(seqs, params.vocab_size)
    pooled = _pool(params, flat, offsets, lengths)
    if mode == "eval":
        out = pooled @ params.proj_weight + params.proj_bias
        return out
    if masks is None:
        if rng is None:
            raise ValueError("train-mode encode needs an rng or explicit masks")
        masks = np.stack([
            dropout_mask(rng, params.d_e, params.dropout_rate) for _ in seqs
        ]).astype(pooled.dtype)
    else:
        masks = np.asarray(masks, dtype=pooled.dtype)
        if masks.shape != pooled.shape:
            raise DimensionError(f"mask shape {masks.shape} != pooled {pooled.shape}")
    masked = pooled * masks
    out = masked @ params.proj_weight + params.proj_bias
    trace = BatchTrace(flat_ids=flat, offsets=offsets, lengths=lengths,
                       masks=masks, pooled=pooled, output=out)
    return out, trace


def encode(params: EncoderParams, token_ids, mode: str = "eval",
           rng: np.random.Generator | None = None,
           mask: np.ndarray | None = None):
    """Single-sequence encode; train mode returns (embedding, trace)."""
    masks = None if mask is None else np.asarray(mask)[None, :]
    result = encode_batch(params, [token_ids], mode, rng, masks)
    if mode == "eval":
        return result[0]
    out, trace = result
    return out[0], trace


def replay(trace: BatchTrace, params: EncoderParams) -> np.ndarray:
    """Recompute the traced forward; bit-identical to the original output."""
    pooled = _pool(params, trace.flat_ids, trace.offsets, trace.lengths)
    if trace.masks is not None:
        pooled = pooled * trace.masks
    return pooled @ params.proj_weight + params.proj_bias


@dataclass
class PairForward:
    h: np.ndarray
    h_plus: np.ndarray
    trace: BatchTrace
    trace_plus: BatchTrace


def encode_pair_dropout(params: EncoderParams, token_ids,
                        rng: np.random.Generator) -> PairForward:
    """Two train-mode passes over the same input with independent masks."""
    if params.dropout_rate == 0.0:
        warnings.warn("dropout_rate is 0; the two embeddings will be identical")
    h, tr = encode(params, token_ids, mode="train", rng=rng)
    h_plus, tr_plus = encode(params, token_ids, mode="train", rng=rng)
    return PairForward(h=h, h_plus=h_plus, trace=tr, trace_plus=tr_plus)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


@dataclass
class GradBuffers:
    """Dense gradient accumulators, one per parameter block."""

    embed_table: np.ndarray
    proj_weight: np.ndarray
    proj_bias: np.ndarray

    @classmethod
    def zeros_like(cls, params: EncoderParams) -> "GradBuffers":
        return cls(
            embed_table=np.zeros_like(params.embed_table),
            proj_weight=np.zeros_like(params.proj_weight),
            proj_bias=np.zeros_like(params.proj_bias),
        )


def encode_backward_batch(trace: BatchTrace, params: EncoderParams,
                          grad_out: np.ndarray, buffers: GradBuffers) -> None:
    """Accumulate exact gradients of the traced forward into buffers.

    grad_out is (N, d); untouched embedding rows receive zero gradient.
    """
    if grad_out.shape != trace.output.shape:
        raise DimensionError(
            f"grad_out shape {grad_out.shape} != output {trace.output.shape}"
        )
    masks = trace.masks if trace.masks is not None else 1.0
    masked = trace.pooled * masks
    buffers.proj_bias += grad_out.sum(axis=0)
    buffers.proj_weight += masked.T @ grad_out
    d_masked = grad_out @ params.proj_weight.T
    d_pooled = d_masked * masks
    nonempty = trace.lengths > 0
    if trace.flat_ids.size:
        per_row = np.zeros_like(d_pooled)
        per_row[nonempty] = d_pooled[nonempty] / trace.lengths[nonempty, None]
        token_grads = np.repeat(per_row, trace.lengths, axis=0)
        np.add.at(buffers.embed_table, trace.flat_ids, token_grads)


def encode_backward(trace: BatchTrace, params: EncoderParams,
                    grad_out: np.ndarray) -> GradBuffers:
    """Single-sequence backward; returns dense gradients for all blocks."""
    buffers = GradBuffers.zeros_like(params)
    encode_backward_batch(trace, params, np.asarray(grad_out)[None, :], buffers)
    return buffers


# ---------------------------------------------------------------------------
# Bulk eval-mode embedding
# ---------------------------------------------------------------------------


def embed_corpus(params: EncoderParams, seqs, workers: int = 1,
                 block: int = 1024) -> np.ndarray:
    """Eval-mode embeddings for many sequences; sharded over threads.

    Rows are written by index, so results are independent of worker count.
    """
    n = len(seqs)
    out = np.zeros((n, params.d), dtype=params.embed_table.dtype)
    spans = [(s, min(s + block, n)) for s in range(0, n, block)]

    def run(span):
        lo, hi = span
        out[lo:hi] = encode_batch(params, seqs[lo:hi], mode="eval")

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, spans))
    else:
        for span in spans:
            run(span)
    return out


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------


def save_checkpoint(params: EncoderParams, vocab_hash: int, path) -> None:
    """Write atomically (temp file + rename); round-trip is bit-exact."""
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
        params.vocab_size, params.d_e, params.d,
        float(params.dropout_rate), vocab_hash & 0xFFFFFFFFFFFFFFFF,
    )
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes()
        for a in (params.embed_table, params.proj_weight, params.proj_bias)
    )
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(payload)
    os.replace(tmp, path)


def load_checkpoint(path, expect_vocab_hash: int | None = None):
    """Read a checkpoint; returns (EncoderParams, vocab_hash).

    Refuses to load if the stored vocabulary hash differs from
    expect_vocab_hash (when given).
    """
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint header")
    magic, version, v, d_e, d, rate, vocab_hash = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * (v * d_e + d_e * d + d)
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, found {len(blob)} (truncated or padded)"
        )
    if expect_vocab_hash is not None and vocab_hash != (expect_vocab_hash & 0xFFFFFFFFFFFFFFFF):
        raise CompatibilityError(
            f"{path}: checkpoint was saved under a different vocabulary"
        )
    cursor = _HEADER.size

    def take(shape):
        nonlocal cursor
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=cursor)
        cursor += 4 * count
        return arr.reshape(shape).copy()

    params = EncoderParams(
        embed_table=take((v, d_e)),
        proj_weight=take((d_e, d)),
        proj_bias=take((d,)),
        dropout_rate=float(rate),
    )
    return params, vocab_hash
