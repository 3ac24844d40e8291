"""Language-interleaved batch construction.

Grouped encoders need batches that reshape into [B/L, L, ...] with one
language per slot: for each l < L and i < B/L, the (l + iL)-th example has
language l. The slot order is fixed (slot l always carries language l), and
per-language queues are length-bucketed to cut padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ConfigError, ContractError, SeededRng
from .corpus import Utterance, text_to_tokens

BUCKET_FACTOR = 4  # shuffled queues are length-sorted within windows this big


@dataclass
class BatchPlan:
    """Example ids for one epoch, partitioned into interleaved batches."""

    batches: list[list[Utterance]]
    dropped: list[Utterance]
    batch_size: int
    num_languages: int

    def __len__(self):
        return len(self.batches)


@dataclass
class Batch:
    tokens: np.ndarray  # [B, T_max] int64, 0 = PAD
    token_mask: np.ndarray  # [B, T_max] float64
    language_ids: np.ndarray  # [B] int64
    speaker_ids: np.ndarray  # [B] int64
    frames: np.ndarray  # [B, N_max, F] float64
    frame_mask: np.ndarray  # [B, N_max] float64
    stop_targets: np.ndarray  # [B, N_max] float64
    text_lengths: np.ndarray  # [B] int64
    frame_lengths: np.ndarray  # [B] int64
    utterances: list[Utterance] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.tokens.shape[0]


def plan_epoch(
    utts: list[Utterance], batch_size: int, num_languages: int, rng: SeededRng
) -> BatchPlan:
    """Shuffle per-language queues and emit balanced interleaved batches.

    Leftover examples that cannot complete a balanced batch are dropped for
    this epoch and reported on the plan.
    """
    if batch_size % num_languages:
        raise ConfigError(
            f"plan_epoch: batch size {batch_size} not divisible by {num_languages} languages"
        )
    per_lang = batch_size // num_languages
    queues: dict[int, list[Utterance]] = {l: [] for l in range(num_languages)}
    for u in utts:
        if u.language_id not in queues:
            raise ContractError(
                f"plan_epoch: utterance {u.id} has language {u.language_id} >= {num_languages}"
            )
        queues[u.language_id].append(u)
    for l, q in queues.items():
        if len(q) < per_lang:
            raise ContractError(
                f"plan_epoch: language {l} has {len(q)} examples, need >= {per_lang}"
            )
        rng.child("shuffle", l).shuffle(q)
        window = per_lang * BUCKET_FACTOR
        for s in range(0, len(q), window):
            q[s : s + window] = sorted(q[s : s + window], key=lambda u: len(u.text))
    n_batches = min(len(q) // per_lang for q in queues.values())
    batches = []
    for k in range(n_batches):
        batch: list[Utterance] = [None] * batch_size  # type: ignore[list-item]
        for l in range(num_languages):
            chunk = queues[l][k * per_lang : (k + 1) * per_lang]
            for i, u in enumerate(chunk):
                batch[l + i * num_languages] = u
        batches.append(batch)
    dropped = []
    for l in range(num_languages):
        dropped.extend(queues[l][n_batches * per_lang :])
    return BatchPlan(batches, dropped, batch_size, num_languages)


def verify_interleave(language_ids, num_languages: int) -> bool:
    """True iff the (l + iL)-th example has language l for all i."""
    ids = np.asarray(language_ids)
    if ids.size % num_languages:
        return False
    return bool(np.all(ids == np.arange(ids.size) % num_languages))


def regroup(arr: np.ndarray, num_languages: int) -> np.ndarray:
    """[B, ...] -> [B/L, L, ...] view; entry (i, l) is flat index l + iL."""
    b = arr.shape[0]
    if b % num_languages:
        raise ContractError(
            f"regroup: batch of {b} not divisible by {num_languages} languages"
        )
    return arr.reshape(b // num_languages, num_languages, *arr.shape[1:])


def flatten_groups(arr: np.ndarray) -> np.ndarray:
    """Inverse of regroup."""
    return arr.reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])


def assemble(utts: list[Utterance], feature_dim: int, frames_per_phoneme: int) -> Batch:
    """Pad a list of utterances into dense arrays with masks.

    Stop targets are 1.0 on the trailing silence chunk (the last
    ``frames_per_phoneme`` real frames).
    """
    b = len(utts)
    if b == 0:
        raise ContractError("assemble: empty batch")
    t_max = max(len(u.text) for u in utts)
    n_max = max(u.duration for u in utts)
    tokens = np.zeros((b, t_max), dtype=np.int64)
    token_mask = np.zeros((b, t_max))
    frames = np.zeros((b, n_max, feature_dim))
    frame_mask = np.zeros((b, n_max))
    stop = np.zeros((b, n_max))
    text_lengths = np.zeros(b, dtype=np.int64)
    frame_lengths = np.zeros(b, dtype=np.int64)
    for i, u in enumerate(utts):
        toks = text_to_tokens(u.text)
        tokens[i, : toks.size] = toks
        token_mask[i, : toks.size] = 1.0
        if u.frames is None:
            raise ContractError(f"assemble: utterance {u.id} has no frames loaded")
        n = u.duration
        frames[i, :n] = u.frames
        frame_mask[i, :n] = 1.0
        stop[i, max(0, n - frames_per_phoneme) : n] = 1.0
        text_lengths[i] = toks.size
        frame_lengths[i] = n
    return Batch(
        tokens=tokens,
        token_mask=token_mask,
        language_ids=np.array([u.language_id for u in utts], dtype=np.int64),
        speaker_ids=np.array([u.speaker_id for u in utts], dtype=np.int64),
        frames=frames,
        frame_mask=frame_mask,
        stop_targets=stop,
        text_lengths=text_lengths,
        frame_lengths=frame_lengths,
        utterances=list(utts),
    )
