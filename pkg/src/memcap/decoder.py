"""Prefix-conditioned autoregressive decoder, trained to invert a text encoder.

A sentence's frozen text embedding occupies position 0 of the sequence (mapped
to model width by a linear adapter); the model is trained to reproduce the
sentence token-by-token from that prefix, i.e. the loss is the per-position
mean negative log-likelihood of the tokens given the prefix. Generation is
greedy argmax only.

The stack is a small pre-norm causal self-attention transformer implemented
directly in numpy (float64), with hand-written backward passes so the analytic
gradients can be validated against finite differences. Optimization is AdamW
with linear warmup.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import normalize
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    EmptyCorpusError,
    EmptyInputError,
    EncoderFailureError,
    FormatError,
    SequenceTooLongError,
    TruncatedError,
    UnknownTokenError,
    VersionUnsupportedError,
)
from .memory import CorpusEntry, SupportMemory, TextEncoder

CHECKPOINT_MAGIC = b"DCPM"
CHECKPOINT_VERSION = 1

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"

_LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class Vocab:
    """Closed word-level vocabulary with reserved PAD/BOS/EOS ids 0/1/2."""

    def __init__(self, words: Iterable[str]):
        self.id_to_token: list[str] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN]
        seen = set(self.id_to_token)
        for w in words:
            if w in seen:
                continue
            seen.add(w)
            self.id_to_token.append(w)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS_TOKEN]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS_TOKEN]

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in text.split():
            if word not in self.token_to_id:
                raise UnknownTokenError(f"word {word!r} not in vocabulary")
            ids.append(self.token_to_id[word])
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        words = []
        for i in ids:
            if not 0 <= i < self.size:
                raise UnknownTokenError(f"token id {i} out of range")
            words.append(self.id_to_token[i])
        return " ".join(words)


@dataclass(frozen=True)
class DecoderConfig:
    """Architecture shape. The default is the desk-scale test size."""

    input_dim: int
    width: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_len: int = 32

    def __post_init__(self) -> None:
        if self.width % self.n_heads != 0:
            raise ValueError(f"width {self.width} not divisible by {self.n_heads} heads")
        if min(self.input_dim, self.width, self.n_layers, self.n_heads, self.max_len) < 1:
            raise ValueError("all architecture sizes must be >= 1")


def large_preset(input_dim: int = 512) -> DecoderConfig:
    """Full-scale shape (4 layers, 4 heads, width 768); not used by tests."""
    return DecoderConfig(input_dim=input_dim, width=768, n_layers=4, n_heads=4)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings: AdamW with linear warmup."""

    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    label_smoothing: float = 0.1
    warmup_steps: int = 100
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.steps < 0 or self.batch_size < 1 or self.warmup_steps < 0:
            raise ValueError("steps/batch_size/warmup_steps out of range")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # x*x*x instead of x**3: np.power is an order of magnitude slower here
    t = np.tanh(_GELU_C * (x + _GELU_A * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (
        1.0 + 3.0 * _GELU_A * (x * x)
    )


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy: np.ndarray, g: np.ndarray, cache) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat, inv = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


class DecoderModel:
    """Token model P(word_i | word_<i, prefix embedding), all parameters float64."""

    def __init__(self, vocab: Vocab, config: DecoderConfig, seed: int = 0):
        self.vocab = vocab
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        d_in, w = config.input_dim, config.width
        v = vocab.size
        t_max = config.max_len + 2  # prefix slot + BOS + generated tokens

        def gauss(*shape):
            return rng.normal(0.0, 0.02, size=shape)

        p = self.params
        p["prefix.w"] = gauss(d_in, w)
        p["prefix.b"] = np.zeros(w)
        p["tok"] = gauss(v, w)
        p["pos"] = gauss(t_max, w)
        for l in range(config.n_layers):
            p[f"blk{l}.ln1.g"] = np.ones(w)
            p[f"blk{l}.ln1.b"] = np.zeros(w)
            for nm in ("wq", "wk", "wv", "wo"):
                p[f"blk{l}.attn.{nm}"] = gauss(w, w)
            for nm in ("bq", "bk", "bv", "bo"):
                p[f"blk{l}.attn.{nm}"] = np.zeros(w)
            p[f"blk{l}.ln2.g"] = np.ones(w)
            p[f"blk{l}.ln2.b"] = np.zeros(w)
            p[f"blk{l}.mlp.w1"] = gauss(w, 4 * w)
            p[f"blk{l}.mlp.b1"] = np.zeros(4 * w)
            p[f"blk{l}.mlp.w2"] = gauss(4 * w, w)
            p[f"blk{l}.mlp.b2"] = np.zeros(w)
        p["lnf.g"] = np.ones(w)
        p["lnf.b"] = np.zeros(w)
        p["out.w"] = gauss(w, v)
        p["out.b"] = np.zeros(v)

    def copy(self) -> "DecoderModel":
        clone = object.__new__(DecoderModel)
        clone.vocab = self.vocab
        clone.config = self.config
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    def _check_prefix(self, prefix: np.ndarray) -> np.ndarray:
        arr = np.asarray(prefix, dtype=np.float64)
        if arr.shape != (self.config.input_dim,):
            raise DimensionMismatchError(
                f"prefix has shape {arr.shape}, expected ({self.config.input_dim},)"
            )
        return arr

    def forward(self, prefixes: np.ndarray, ids: np.ndarray):
        """Run the stack; returns (logits, cache). ids excludes the prefix slot."""
        p = self.params
        cfg = self.config
        b, t_tok = ids.shape
        t = t_tok + 1
        h, hd = cfg.n_heads, cfg.width // cfg.n_heads

        x = np.empty((b, t, cfg.width))
        x[:, 0, :] = prefixes @ p["prefix.w"] + p["prefix.b"]
        x[:, 1:, :] = p["tok"][ids]
        x = x + p["pos"][:t]

        mask = np.triu(np.full((t, t), -np.inf), k=1)
        cache: dict = {"ids": ids, "prefixes": prefixes, "t": t, "blocks": []}
        for l in range(cfg.n_layers):
            ln1, ln1_cache = _layernorm(x, p[f"blk{l}.ln1.g"], p[f"blk{l}.ln1.b"])
            q = ln1 @ p[f"blk{l}.attn.wq"] + p[f"blk{l}.attn.bq"]
            k = ln1 @ p[f"blk{l}.attn.wk"] + p[f"blk{l}.attn.bk"]
            v = ln1 @ p[f"blk{l}.attn.wv"] + p[f"blk{l}.attn.bv"]
            qh = q.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            kh = k.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            vh = v.reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(hd) + mask
            scores -= scores.max(axis=-1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(axis=-1, keepdims=True)
            ctx = (att @ vh).transpose(0, 2, 1, 3).reshape(b, t, cfg.width)
            attn_out = ctx @ p[f"blk{l}.attn.wo"] + p[f"blk{l}.attn.bo"]
            xa = x + attn_out
            ln2, ln2_cache = _layernorm(xa, p[f"blk{l}.ln2.g"], p[f"blk{l}.ln2.b"])
            pre_act = ln2 @ p[f"blk{l}.mlp.w1"] + p[f"blk{l}.mlp.b1"]
            act, act_tanh = _gelu(pre_act)
            mlp_out = act @ p[f"blk{l}.mlp.w2"] + p[f"blk{l}.mlp.b2"]
            x = xa + mlp_out
            cache["blocks"].append(
                (ln1, ln1_cache, qh, kh, vh, att, ctx, ln2, ln2_cache, pre_act, act, act_tanh)
            )
        lnf, lnf_cache = _layernorm(x, p["lnf.g"], p["lnf.b"])
        logits = lnf @ p["out.w"] + p["out.b"]
        cache["lnf"] = (lnf, lnf_cache)
        return logits, cache

    def backward(self, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        cfg = self.config
        ids = cache["ids"]
        b, t = dlogits.shape[0], cache["t"]
        h, hd = cfg.n_heads, cfg.width // cfg.n_heads
        w = cfg.width
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        lnf, lnf_cache = cache["lnf"]
        grads["out.w"] += lnf.reshape(-1, w).T @ dlogits.reshape(-1, dlogits.shape[-1])
        grads["out.b"] += dlogits.reshape(-1, dlogits.shape[-1]).sum(axis=0)
        dlnf = dlogits @ p["out.w"].T
        dx, dg, db = _layernorm_backward(dlnf, p["lnf.g"], lnf_cache)
        grads["lnf.g"] += dg
        grads["lnf.b"] += db

        for l in reversed(range(cfg.n_layers)):
            (ln1, ln1_cache, qh, kh, vh, att, ctx, ln2, ln2_cache, pre_act, act, act_tanh) = (
                cache["blocks"][l]
            )
            # MLP branch
            dmlp_out = dx
            grads[f"blk{l}.mlp.w2"] += act.reshape(-1, 4 * w).T @ dmlp_out.reshape(-1, w)
            grads[f"blk{l}.mlp.b2"] += dmlp_out.reshape(-1, w).sum(axis=0)
            dact = dmlp_out @ p[f"blk{l}.mlp.w2"].T
            dpre = dact * _gelu_grad(pre_act, act_tanh)
            grads[f"blk{l}.mlp.w1"] += ln2.reshape(-1, w).T @ dpre.reshape(-1, 4 * w)
            grads[f"blk{l}.mlp.b1"] += dpre.reshape(-1, 4 * w).sum(axis=0)
            dln2 = dpre @ p[f"blk{l}.mlp.w1"].T
            dxa_from_ln2, dg, db = _layernorm_backward(dln2, p[f"blk{l}.ln2.g"], ln2_cache)
            grads[f"blk{l}.ln2.g"] += dg
            grads[f"blk{l}.ln2.b"] += db
            dxa = dx + dxa_from_ln2
            # Attention branch
            dattn_out = dxa
            grads[f"blk{l}.attn.wo"] += ctx.reshape(-1, w).T @ dattn_out.reshape(-1, w)
            grads[f"blk{l}.attn.bo"] += dattn_out.reshape(-1, w).sum(axis=0)
            dctx = (dattn_out @ p[f"blk{l}.attn.wo"].T).reshape(b, t, h, hd).transpose(0, 2, 1, 3)
            datt = dctx @ vh.transpose(0, 1, 3, 2)
            dvh = att.transpose(0, 1, 3, 2) @ dctx
            dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dscores /= math.sqrt(hd)
            dqh = dscores @ kh
            dkh = dscores.transpose(0, 1, 3, 2) @ qh
            dq = dqh.transpose(0, 2, 1, 3).reshape(b, t, w)
            dk = dkh.transpose(0, 2, 1, 3).reshape(b, t, w)
            dv = dvh.transpose(0, 2, 1, 3).reshape(b, t, w)
            dln1 = np.zeros_like(ln1)
            for nm, dout in (("wq", dq), ("wk", dk), ("wv", dv)):
                grads[f"blk{l}.attn.{nm}"] += ln1.reshape(-1, w).T @ dout.reshape(-1, w)
                dln1 += dout @ p[f"blk{l}.attn.{nm}"].T
            grads[f"blk{l}.attn.bq"] += dq.reshape(-1, w).sum(axis=0)
            grads[f"blk{l}.attn.bk"] += dk.reshape(-1, w).sum(axis=0)
            grads[f"blk{l}.attn.bv"] += dv.reshape(-1, w).sum(axis=0)
            dx_from_ln1, dg, db = _layernorm_backward(dln1, p[f"blk{l}.ln1.g"], ln1_cache)
            grads[f"blk{l}.ln1.g"] += dg
            grads[f"blk{l}.ln1.b"] += db
            dx = dxa + dx_from_ln1

        grads["pos"][:t] += dx.sum(axis=0)
        dprefix_row = dx[:, 0, :]
        grads["prefix.w"] += cache["prefixes"].T @ dprefix_row
        grads["prefix.b"] += dprefix_row.sum(axis=0)
        np.add.at(grads["tok"], ids.reshape(-1), dx[:, 1:, :].reshape(-1, w))
        return grads


def _validate_tokens(model: DecoderModel, tokens: Sequence[int]) -> list[int]:
    toks = list(tokens)
    if not toks:
        raise EmptyInputError("token sequence is empty")
    if len(toks) > model.config.max_len:
        raise SequenceTooLongError(f"{len(toks)} tokens exceed max_len {model.config.max_len}")
    for t in toks:
        if not 0 <= t < model.vocab.size:
            raise UnknownTokenError(f"token id {t} out of range")
    return toks


def _batch_loss(
    model: DecoderModel,
    prefixes: np.ndarray,
    sequences: list[list[int]],
    label_smoothing: float,
    with_grads: bool,
):
    """Mean over sequences of the per-position mean NLL, optionally with grads.

    Input layout per sequence: [prefix, BOS, tokens[:-1]]; the prediction at
    the BOS position targets tokens[0].
    """
    b = len(sequences)
    max_tok = max(len(s) for s in sequences)
    vocab = model.vocab
    ids = np.full((b, max_tok), vocab.pad_id, dtype=np.int64)
    targets = np.full((b, max_tok), -1, dtype=np.int64)
    for i, seq in enumerate(sequences):
        ids[i, 0] = vocab.bos_id
        ids[i, 1 : len(seq)] = seq[:-1]
        targets[i, : len(seq)] = seq

    logits, cache = model.forward(prefixes, ids)
    # Positions 1..len(seq) of the full sequence predict; drop the prefix slot.
    pred = logits[:, 1:, :]
    m = pred.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(pred - m).sum(axis=-1, keepdims=True))
    logp = pred - lse

    v = vocab.size
    eps = label_smoothing
    valid = targets >= 0
    safe_targets = np.where(valid, targets, 0)
    logp_target = np.take_along_axis(logp, safe_targets[:, :, None], axis=-1)[:, :, 0]
    smooth_term = logp.sum(axis=-1)
    per_pos = -((1.0 - eps) * logp_target + (eps / v) * smooth_term)
    lengths = valid.sum(axis=1)
    pos_weight = np.where(valid, 1.0 / (b * lengths[:, None]), 0.0)
    loss = float((per_pos * pos_weight).sum())
    if not with_grads:
        return loss, None

    probs = np.exp(logp)
    smooth = np.full_like(probs, eps / v)
    np.put_along_axis(
        smooth,
        safe_targets[:, :, None],
        eps / v + (1.0 - eps),
        axis=-1,
    )
    dpred = (probs - smooth) * pos_weight[:, :, None]
    dlogits = np.zeros_like(logits)
    dlogits[:, 1:, :] = dpred
    grads = model.backward(cache, dlogits)
    return loss, grads


def recons_loss(
    model: DecoderModel,
    prefix: np.ndarray,
    tokens: Sequence[int],
    label_smoothing: float = 0.0,
) -> float:
    """Per-position mean NLL of `tokens` given the prefix embedding."""
    toks = _validate_tokens(model, tokens)
    pref = model._check_prefix(prefix)
    loss, _ = _batch_loss(model, pref[None, :], [toks], label_smoothing, with_grads=False)
    return loss


def loss_and_grads(
    model: DecoderModel,
    prefixes: np.ndarray,
    token_sequences: list[Sequence[int]],
    label_smoothing: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch loss plus analytic gradients for every parameter."""
    seqs = [_validate_tokens(model, s) for s in token_sequences]
    loss, grads = _batch_loss(
        model, np.asarray(prefixes, dtype=np.float64), seqs, label_smoothing, with_grads=True
    )
    return loss, grads


def batch_loss(
    model: DecoderModel,
    prefixes: np.ndarray,
    token_sequences: list[Sequence[int]],
    label_smoothing: float = 0.0,
) -> float:
    """Batch loss only (mean over sequences of per-position mean NLL)."""
    seqs = [_validate_tokens(model, s) for s in token_sequences]
    loss, _ = _batch_loss(
        model, np.asarray(prefixes, dtype=np.float64), seqs, label_smoothing, with_grads=False
    )
    return loss


def train(
    model: DecoderModel,
    corpus: list[CorpusEntry],
    encoder: TextEncoder,
    config: TrainConfig,
    log: list[float] | None = None,
) -> DecoderModel:
    """AdamW training of the reconstruction objective over the corpus.

    The encoder is frozen: prefixes are computed once up front and never
    receive gradients. Returns a trained copy; the input model is unchanged.
    Deterministic for a fixed config seed.
    """
    if not corpus:
        raise EmptyCorpusError("training corpus is empty")
    prefixes = np.empty((len(corpus), model.config.input_dim))
    sequences: list[list[int]] = []
    for i, entry in enumerate(corpus):
        try:
            raw = np.asarray(encoder(entry.text), dtype=np.float64)
        except Exception as exc:  # noqa: BLE001
            raise EncoderFailureError(f"encoder failed on {entry.text!r}: {exc}") from exc
        emb, _ = normalize(raw)
        if emb.shape[0] != model.config.input_dim:
            raise DimensionMismatchError(
                f"encoder dimension {emb.shape[0]} != model input {model.config.input_dim}"
            )
        prefixes[i] = emb
        toks = list(entry.tokens) if entry.tokens is not None else model.vocab.encode(entry.text)
        sequences.append(_validate_tokens(model, toks + [model.vocab.eos_id]))

    trained = model.copy()
    if config.steps == 0:
        return trained

    rng = np.random.default_rng(config.seed)
    adam_m = {k: np.zeros_like(v) for k, v in trained.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in trained.params.items()}
    n = len(corpus)
    order = rng.permutation(n)
    cursor = 0
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        batch = order[cursor : cursor + config.batch_size]
        cursor += config.batch_size
        loss, grads = _batch_loss(
            trained,
            prefixes[batch],
            [sequences[i] for i in batch],
            config.label_smoothing,
            with_grads=True,
        )
        if log is not None:
            log.append(loss)
        lr = config.learning_rate * min(1.0, step / config.warmup_steps) if config.warmup_steps else config.learning_rate
        b1c = 1.0 - config.beta1**step
        b2c = 1.0 - config.beta2**step
        for k, g in grads.items():
            m = adam_m[k]
            v = adam_v[k]
            m *= config.beta1
            m += (1.0 - config.beta1) * g
            v *= config.beta2
            v += (1.0 - config.beta2) * (g * g)
            update = (m / b1c) / (np.sqrt(v / b2c) + config.adam_eps)
            param = trained.params[k]
            param -= lr * config.weight_decay * param  # decoupled decay
            param -= lr * update
    return trained


def decode_greedy(
    model: DecoderModel,
    prefix: np.ndarray,
    prompt: Sequence[int] = (),
    max_len: int | None = None,
) -> list[int]:
    """Greedy generation: BOS plus forced prompt tokens, then argmax steps.

    Returns prompt tokens followed by generated tokens (EOS excluded), capped
    at `max_len` total. Ties in the argmax resolve to the lowest token id.
    """
    pref = model._check_prefix(prefix)
    cap = model.config.max_len if max_len is None else max_len
    if cap < 0:
        raise ValueError(f"max_len must be >= 0, got {cap}")
    cap = min(cap, model.config.max_len)  # positional table bound
    out = list(prompt)
    for t in out:
        if not 0 <= t < model.vocab.size:
            raise UnknownTokenError(f"prompt token id {t} out of range")
    out = out[:cap]
    while len(out) < cap:
        ids = np.asarray([[model.vocab.bos_id, *out]], dtype=np.int64)
        logits, _ = model.forward(pref[None, :], ids)
        nxt = int(np.argmax(logits[0, -1]))
        if nxt == model.vocab.eos_id:
            break
        out.append(nxt)
    return out


def reconstruct_corpus(model: DecoderModel, memory: SupportMemory) -> list[CorpusEntry]:
    """Decode every stored embedding back to text, preserving memory order."""
    entries = []
    for i in range(memory.count):
        emb = memory.embeddings[i].astype(np.float64)
        ids = decode_greedy(model, emb)
        entries.append(CorpusEntry(text=model.vocab.decode(ids) or PAD_TOKEN, tokens=tuple(ids)))
    return entries


def save_model(model: DecoderModel, path: str | Path) -> None:
    """Write the checkpoint: DCPM header, shape, sorted vocab, sorted f32 tensors."""
    path = Path(path)
    cfg = model.config
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(struct.pack("<4sHH", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, 0))
            fh.write(
                struct.pack(
                    "<5I", cfg.input_dim, cfg.width, cfg.n_layers, cfg.n_heads, cfg.max_len
                )
            )
            pairs = sorted(model.vocab.token_to_id.items())
            fh.write(struct.pack("<I", len(pairs)))
            for token, idx in pairs:
                data = token.encode("utf-8")
                fh.write(struct.pack("<I", len(data)))
                fh.write(data)
                fh.write(struct.pack("<I", idx))
            names = sorted(model.params)
            fh.write(struct.pack("<I", len(names)))
            for name in names:
                tensor = model.params[name]
                data = name.encode("utf-8")
                fh.write(struct.pack("<I", len(data)))
                fh.write(data)
                fh.write(struct.pack("<I", tensor.ndim))
                fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
                fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str | Path) -> DecoderModel:
    """Read a DCPM checkpoint; parameters come back as float64 copies of the f32 data."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: expected magic {CHECKPOINT_MAGIC!r}")
    if len(blob) < 8:
        raise TruncatedError(f"{path}: header cut short")
    _, version, _flags = struct.unpack_from("<4sHH", blob, 0)
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupportedError(f"{path}: version {version} unsupported")
    offset = 8

    def need(nbytes: int, what: str) -> None:
        if len(blob) < offset + nbytes:
            raise TruncatedError(f"{path}: {what} cut short")

    need(20, "shape block")
    input_dim, width, n_layers, n_heads, max_len = struct.unpack_from("<5I", blob, offset)
    offset += 20
    need(4, "vocab count")
    (vocab_count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    pairs: list[tuple[str, int]] = []
    for _ in range(vocab_count):
        need(4, "token length")
        (nbytes,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        need(nbytes + 4, "token entry")
        try:
            token = blob[offset : offset + nbytes].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: vocab token is not valid UTF-8") from exc
        offset += nbytes
        (idx,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        pairs.append((token, idx))
    by_id = sorted(pairs, key=lambda kv: kv[1])
    if [idx for _, idx in by_id] != list(range(len(by_id))):
        raise FormatError(f"{path}: vocabulary ids are not a contiguous range")
    vocab = Vocab.__new__(Vocab)
    vocab.id_to_token = [token for token, _ in by_id]
    vocab.token_to_id = {token: idx for token, idx in by_id}
    for special in (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN):
        if special not in vocab.token_to_id:
            raise FormatError(f"{path}: vocabulary lacks {special}")

    need(4, "tensor count")
    (tensor_count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(tensor_count):
        need(4, "tensor name length")
        (nbytes,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        need(nbytes, "tensor name")
        name = blob[offset : offset + nbytes].decode("utf-8")
        offset += nbytes
        need(4, "tensor rank")
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        need(4 * rank, "tensor dims")
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        numel = int(np.prod(dims)) if rank else 1
        need(4 * numel, f"tensor {name} data")
        data = np.frombuffer(blob, dtype="<f4", count=numel, offset=offset)
        offset += 4 * numel
        params[name] = data.reshape(dims).astype(np.float64)
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")

    model = DecoderModel.__new__(DecoderModel)
    model.vocab = vocab
    model.config = DecoderConfig(
        input_dim=input_dim, width=width, n_layers=n_layers, n_heads=n_heads, max_len=max_len
    )
    model.params = params
    return model
