"""Attention decoder: prenet, two stacked LSTMs, location-sensitive
attention, frame/stop heads, and the guided attention loss.

The first LSTM produces the attention query; the second consumes
[context ; first-LSTM output]. The prenet's dropout stays active at
inference (fed from a seeded stream, so synthesis is still deterministic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigError, ContractError, SeededRng, Tensor


@dataclass(frozen=True)
class DecoderSpec:
    frame_dim: int = 24
    prenet_dim: int = 64
    prenet_dropout: float = 0.25
    attn_rnn_dim: int = 128
    dec_rnn_dim: int = 128
    attn_dim: int = 128
    loc_filters: int = 8
    loc_kernel: int = 15
    stop_threshold: float = 0.5


@dataclass
class AttentionState:
    """Previous and cumulative alignments for one decode."""

    prev: Tensor  # [B, T_enc]
    cumulative: Tensor  # [B, T_enc]

    @staticmethod
    def initial(batch: int, t_enc: int) -> "AttentionState":
        return AttentionState(
            prev=Tensor(np.zeros((batch, t_enc))),
            cumulative=Tensor(np.zeros((batch, t_enc))),
        )


def attention_step(
    params: dict[str, Tensor],
    query: Tensor,
    mem_proj: Tensor,
    memory: Tensor,
    mask: np.ndarray,
    state: AttentionState,
) -> tuple[Tensor, Tensor, AttentionState]:
    """One attention read: energies from tanh(W_q q + W_m memory + W_f
    location features), masked softmax, context as the alignment-weighted
    memory sum. Returns (context, alignment, new state)."""
    b, t, _ = memory.shape
    if not np.asarray(mask, dtype=bool).any(axis=1).all():
        raise ContractError("attention_step: an example has no real memory positions")
    q = ad.affine(query, params["att_query_w"])  # [B, A]
    q = ad.expand(ad.reshape(q, (b, 1, q.shape[1])), 1, t)
    loc_in = ad.stack([state.prev, state.cumulative], axis=1)  # [B, 2, T]
    loc = ad.conv1d_grouped(loc_in, params["att_loc_conv"], None, groups=1)
    loc = ad.transpose(loc, (0, 2, 1))  # [B, T, F_loc]
    loc = ad.affine(loc, params["att_loc_w"], params["att_b"])  # [B, T, A]
    e = ad.tanh(ad.add(ad.add(q, mem_proj), loc))
    energies = ad.reshape(ad.matmul(e, params["att_v"]), (b, t))
    align = ad.masked_softmax(energies, np.asarray(mask, dtype=bool), axis=1)
    context = ad.reshape(ad.matmul(ad.reshape(align, (b, 1, t)), memory), (b, memory.shape[2]))
    new_state = AttentionState(prev=align, cumulative=ad.add(state.cumulative, align))
    return context, align, new_state


def guided_attention_loss(
    alignments: Tensor,
    tolerance: float,
    dec_lengths: np.ndarray,
    enc_lengths: np.ndarray,
) -> Tensor:
    """Mean over real (n, t) of A[n,t] * (1 - exp(-(n/N - t/T)^2 / (2 g^2)))
    with per-example real lengths N, T and positions indexed from 0."""
    if tolerance <= 0:
        raise ConfigError(f"guided_attention_loss: tolerance {tolerance} must be > 0")
    b, n_max, t_max = alignments.shape
    dec_lengths = np.asarray(dec_lengths, dtype=np.int64)
    enc_lengths = np.asarray(enc_lengths, dtype=np.int64)
    n_idx = np.arange(n_max)[None, :, None]
    t_idx = np.arange(t_max)[None, None, :]
    ratio_n = n_idx / dec_lengths[:, None, None]
    ratio_t = t_idx / enc_lengths[:, None, None]
    w = 1.0 - np.exp(-((ratio_n - ratio_t) ** 2) / (2.0 * tolerance**2))
    w *= (n_idx < dec_lengths[:, None, None]) & (t_idx < enc_lengths[:, None, None])
    denom = float((dec_lengths * enc_lengths).sum())
    return ad.scale(ad.sum_(ad.mul(alignments, Tensor(w))), 1.0 / denom)


def _prenet(params, spec: DecoderSpec, x: Tensor, rng: SeededRng, step: int) -> Tensor:
    # dropout runs in train mode unconditionally (inference included)
    h = ad.relu(ad.affine(x, params["prenet0_w"], params["prenet0_b"]))
    h = ad.dropout(h, spec.prenet_dropout, rng.child("pre0", step), "train")
    h = ad.relu(ad.affine(h, params["prenet1_w"], params["prenet1_b"]))
    h = ad.dropout(h, spec.prenet_dropout, rng.child("pre1", step), "train")
    return h


def _decoder_step(
    params, spec, prev_frame, context, h1, c1, h2, c2, mem_proj, memory, mask, att_state, rng, n
):
    p = _prenet(params, spec, prev_frame, rng, n)
    h1, c1 = ad.lstm_cell(
        ad.concat([p, context], axis=1), h1, c1, params["lstm1_w"], params["lstm1_b"]
    )
    context, align, att_state = attention_step(
        params, h1, mem_proj, memory, mask, att_state
    )
    h2, c2 = ad.lstm_cell(
        ad.concat([context, h1], axis=1), h2, c2, params["lstm2_w"], params["lstm2_b"]
    )
    hc = ad.concat([h2, context], axis=1)
    frame = ad.affine(hc, params["frame_w"], params["frame_b"])
    stop = ad.reshape(ad.affine(hc, params["stop_w"], params["stop_b"]), (frame.shape[0],))
    return frame, stop, align, context, h1, c1, h2, c2, att_state


def decode_teacher_forced(
    params: dict[str, Tensor],
    spec: DecoderSpec,
    memory: Tensor,
    mem_mask: np.ndarray,
    targets: np.ndarray,
    rng: SeededRng,
) -> tuple[Tensor, Tensor, Tensor]:
    """Teacher-forced decode. targets: [B, N, F]; frame -1 is zeros.
    Returns (pred_frames [B,N,F], stop_logits [B,N], alignments [B,N,T])."""
    b, n_steps, f = targets.shape
    if n_steps == 0:
        raise ContractError("decode_teacher_forced: zero-length target")
    if f != spec.frame_dim:
        raise ContractError(
            f"decode_teacher_forced: target frame dim {f} != configured {spec.frame_dim}"
        )
    t_enc = memory.shape[1]
    mem_proj = ad.affine(memory, params["att_mem_w"])  # [B, T, A]
    att_state = AttentionState.initial(b, t_enc)
    prev_frame = Tensor(np.zeros((b, f)))
    context = Tensor(np.zeros((b, memory.shape[2])))
    h1 = Tensor(np.zeros((b, spec.attn_rnn_dim)))
    c1 = Tensor(np.zeros((b, spec.attn_rnn_dim)))
    h2 = Tensor(np.zeros((b, spec.dec_rnn_dim)))
    c2 = Tensor(np.zeros((b, spec.dec_rnn_dim)))
    frames, stops, aligns = [], [], []
    for n in range(n_steps):
        frame, stop, align, context, h1, c1, h2, c2, att_state = _decoder_step(
            params, spec, prev_frame, context, h1, c1, h2, c2,
            mem_proj, memory, mem_mask, att_state, rng, n,
        )
        frames.append(frame)
        stops.append(stop)
        aligns.append(align)
        prev_frame = Tensor(targets[:, n])
    return (
        ad.stack(frames, axis=1),
        ad.stack(stops, axis=1),
        ad.stack(aligns, axis=1),
    )


@dataclass
class InferResult:
    frames: np.ndarray  # [B, N_run, F]
    alignments: np.ndarray  # [B, N_run, T_enc]
    stopped: np.ndarray  # [B] bool: stop token fired before max_steps
    lengths: np.ndarray  # [B] decoded frame counts (inclusive of stop frame)


def infer(
    params: dict[str, Tensor],
    spec: DecoderSpec,
    memory: Tensor,
    mem_mask: np.ndarray,
    max_steps: int,
    rng: SeededRng,
) -> InferResult:
    """Free-running decode: feeds back predictions, stops an example once
    sigmoid(stop) > threshold, runs until all stop or max_steps. Non-stopping
    is reported, not raised."""
    if max_steps <= 0:
        raise ContractError(f"infer: max_steps {max_steps} must be > 0")
    b = memory.shape[0]
    t_enc = memory.shape[1]
    mem_proj = ad.affine(memory, params["att_mem_w"])
    att_state = AttentionState.initial(b, t_enc)
    prev_frame = Tensor(np.zeros((b, spec.frame_dim)))
    context = Tensor(np.zeros((b, memory.shape[2])))
    h1 = Tensor(np.zeros((b, spec.attn_rnn_dim)))
    c1 = Tensor(np.zeros((b, spec.attn_rnn_dim)))
    h2 = Tensor(np.zeros((b, spec.dec_rnn_dim)))
    c2 = Tensor(np.zeros((b, spec.dec_rnn_dim)))
    stopped_at = np.full(b, -1, dtype=np.int64)
    frames, aligns = [], []
    for n in range(max_steps):
        frame, stop, align, context, h1, c1, h2, c2, att_state = _decoder_step(
            params, spec, prev_frame, context, h1, c1, h2, c2,
            mem_proj, memory, mem_mask, att_state, rng, n,
        )
        frames.append(frame.data.copy())
        aligns.append(align.data.copy())
        prob = 1.0 / (1.0 + np.exp(-stop.data))
        newly = (prob > spec.stop_threshold) & (stopped_at < 0)
        stopped_at[newly] = n
        if (stopped_at >= 0).all():
            break
        prev_frame = frame
    n_run = len(frames)
    stopped = stopped_at >= 0
    lengths = np.where(stopped, stopped_at + 1, n_run)
    return InferResult(
        frames=np.stack(frames, axis=1),
        alignments=np.stack(aligns, axis=1),
        stopped=stopped,
        lengths=lengths,
    )
