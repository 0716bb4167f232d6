"""Small decoder-only autoregressive model with explicit numpy training.

Everything runs in float64: gradient checks against central finite
differences stay tight, and repeated runs with one seed are bit-identical,
which the pipeline relies on for reproducible checkpoints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CheckpointMismatch, ContextTooLong, NonFiniteLoss
from .lm import DecodingSession, TrainableLanguageModel, WeightedExample, as_ids
from .tokens import Vocabulary

_LN_EPS = 1e-5
_CHECKPOINT_MAGIC = b"BSPACE-CKPT-v1\n"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of the reference model."""

    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    d_ff: int = 128
    n_layers: int = 2
    max_positions: int = 96

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "n_layers": self.n_layers,
            "max_positions": self.max_positions,
        }


@dataclass
class AdamState:
    """Adaptive-moment buffers; reset whenever a fresh run starts."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _silu(z: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _silu_grad(z: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, g: np.ndarray, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class TinyTransformerLM(TrainableLanguageModel):
    """Two-layer causal transformer bound to a word-level vocabulary."""

    def __init__(self, vocab: Vocabulary, config: ModelConfig | None = None, seed: int = 0):
        config = config or ModelConfig(vocab_size=len(vocab))
        if config.vocab_size != len(vocab):
            raise ValueError("config vocab_size disagrees with vocabulary")
        self.vocab = vocab
        self.config = config
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(seed))

    # ------------------------------------------------------------------
    # parameters
    # ------------------------------------------------------------------

    def _init_params(self, rng: np.random.Generator):
        c = self.config
        d, ff, v = c.d_model, c.d_ff, c.vocab_size

        def normal(*shape):
            return rng.normal(0.0, 0.02, size=shape)

        p = self.params
        p["wte"] = normal(v, d)
        p["wpe"] = normal(c.max_positions, d)
        for i in range(c.n_layers):
            pre = f"layers.{i}."
            p[pre + "ln1.g"] = np.ones(d)
            p[pre + "ln1.b"] = np.zeros(d)
            p[pre + "attn.wqkv"] = normal(d, 3 * d)
            p[pre + "attn.bqkv"] = np.zeros(3 * d)
            p[pre + "attn.wo"] = normal(d, d)
            p[pre + "attn.bo"] = np.zeros(d)
            p[pre + "ln2.g"] = np.ones(d)
            p[pre + "ln2.b"] = np.zeros(d)
            p[pre + "mlp.w1"] = normal(d, ff)
            p[pre + "mlp.b1"] = np.zeros(ff)
            p[pre + "mlp.w2"] = normal(ff, d)
            p[pre + "mlp.b2"] = np.zeros(d)
        p["lnf.g"] = np.ones(d)
        p["lnf.b"] = np.zeros(d)
        p["head.w"] = normal(d, v)
        p["head.b"] = np.zeros(v)

    def parameter_names(self) -> list[str]:
        return list(self.params.keys())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def snapshot(self) -> "TinyTransformerLM":
        clone = object.__new__(TinyTransformerLM)
        clone.vocab = self.vocab
        clone.config = self.config
        clone.seed = self.seed
        clone.params = {k: v.copy() for k, v in self.params.items()}
        return clone

    @property
    def max_context_tokens(self) -> int:
        return self.config.max_positions - 1

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _forward(self, idx: np.ndarray, collect: bool = False):
        """Full causal forward pass.

        idx: (B, S) int array of token ids (BOS already prepended).
        Returns logits (B, S, V) and, when ``collect``, the activation
        caches needed by :meth:`_backward`.
        """
        p = self.params
        c = self.config
        B, S = idx.shape
        if S > c.max_positions:
            raise ContextTooLong(f"sequence of {S} positions exceeds {c.max_positions}")
        H, dh = c.n_heads, c.d_model // c.n_heads

        x = p["wte"][idx] + p["wpe"][:S]
        causal = np.triu(np.full((S, S), -np.inf), k=1)
        caches = []
        for i in range(c.n_layers):
            pre = f"layers.{i}."
            x_in = x
            a, ln1_cache = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            qkv = a @ p[pre + "attn.wqkv"] + p[pre + "attn.bqkv"]
            q, k, v = np.split(qkv, 3, axis=-1)
            q = q.reshape(B, S, H, dh).transpose(0, 2, 1, 3)  # (B,H,S,dh)
            k = k.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
            v = v.reshape(B, S, H, dh).transpose(0, 2, 1, 3)
            scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh)
            scores = scores + causal
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            att = e / e.sum(axis=-1, keepdims=True)
            o_heads = att @ v  # (B,H,S,dh)
            o_flat = o_heads.transpose(0, 2, 1, 3).reshape(B, S, c.d_model)
            attn_out = o_flat @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            x = x_in + attn_out
            x_mid = x
            m, ln2_cache = _layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            z1 = m @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"]
            h = _silu(z1)
            x = x_mid + h @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
            if collect:
                caches.append(
                    {"a": a, "ln1": ln1_cache, "q": q, "k": k, "v": v, "att": att,
                     "o_flat": o_flat, "m": m, "ln2": ln2_cache, "z1": z1, "h": h}
                )
        xf, lnf_cache = _layer_norm(x, p["lnf.g"], p["lnf.b"])
        logits = xf @ p["head.w"] + p["head.b"]
        if collect:
            return logits, {"layers": caches, "xf": xf, "lnf": lnf_cache, "idx": idx}
        return logits, None

    # ------------------------------------------------------------------
    # backward
    # ------------------------------------------------------------------

    def _backward(self, dlogits: np.ndarray, cache) -> dict[str, np.ndarray]:
        p = self.params
        c = self.config
        idx = cache["idx"]
        B, S = idx.shape
        H, dh = c.n_heads, c.d_model // c.n_heads
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}

        d_model = c.d_model
        V = dlogits.shape[-1]
        grads["head.w"] = cache["xf"].reshape(-1, d_model).T @ dlogits.reshape(-1, V)
        grads["head.b"] = dlogits.sum(axis=(0, 1))
        dxf = dlogits @ p["head.w"].T
        dx, dg, db = _layer_norm_backward(dxf, p["lnf.g"], cache["lnf"])
        grads["lnf.g"] = dg
        grads["lnf.b"] = db

        for i in reversed(range(c.n_layers)):
            pre = f"layers.{i}."
            lc = cache["layers"][i]
            # MLP block: x = x_mid + silu(ln2(x_mid) @ w1 + b1) @ w2 + b2
            dh_out = dx @ p[pre + "mlp.w2"].T
            grads[pre + "mlp.w2"] = lc["h"].reshape(-1, c.d_ff).T @ dx.reshape(-1, d_model)
            grads[pre + "mlp.b2"] = dx.sum(axis=(0, 1))
            dz1 = dh_out * _silu_grad(lc["z1"])
            grads[pre + "mlp.w1"] = lc["m"].reshape(-1, d_model).T @ dz1.reshape(-1, c.d_ff)
            grads[pre + "mlp.b1"] = dz1.sum(axis=(0, 1))
            dm = dz1 @ p[pre + "mlp.w1"].T
            dx_mid, dg2, db2 = _layer_norm_backward(dm, p[pre + "ln2.g"], lc["ln2"])
            grads[pre + "ln2.g"] = dg2
            grads[pre + "ln2.b"] = db2
            dx = dx + dx_mid
            # Attention block: x = x_in + (att @ v) @ wo + bo
            do_flat = dx @ p[pre + "attn.wo"].T
            grads[pre + "attn.wo"] = lc["o_flat"].reshape(-1, d_model).T @ dx.reshape(-1, d_model)
            grads[pre + "attn.bo"] = dx.sum(axis=(0, 1))
            do_heads = do_flat.reshape(B, S, H, dh).transpose(0, 2, 1, 3)  # (B,H,S,dh)
            att, k, q, v = lc["att"], lc["k"], lc["q"], lc["v"]
            datt = do_heads @ v.transpose(0, 1, 3, 2)
            dv = att.transpose(0, 1, 3, 2) @ do_heads
            dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
            dq = dscores @ k / np.sqrt(dh)
            dk = dscores.transpose(0, 1, 3, 2) @ q / np.sqrt(dh)
            dqkv = np.concatenate(
                [
                    dq.transpose(0, 2, 1, 3).reshape(B, S, -1),
                    dk.transpose(0, 2, 1, 3).reshape(B, S, -1),
                    dv.transpose(0, 2, 1, 3).reshape(B, S, -1),
                ],
                axis=-1,
            )
            grads[pre + "attn.wqkv"] = lc["a"].reshape(-1, d_model).T @ dqkv.reshape(-1, 3 * d_model)
            grads[pre + "attn.bqkv"] = dqkv.sum(axis=(0, 1))
            da = dqkv @ p[pre + "attn.wqkv"].T
            dx_in, dg1, db1 = _layer_norm_backward(da, p[pre + "ln1.g"], lc["ln1"])
            grads[pre + "ln1.g"] = dg1
            grads[pre + "ln1.b"] = db1
            dx = dx + dx_in

        np.add.at(grads["wte"], idx, dx)
        grads["wpe"][:S] = dx.sum(axis=0)
        return grads

    # ------------------------------------------------------------------
    # inference contract
    # ------------------------------------------------------------------

    def _with_bos(self, ids: Sequence[int]) -> np.ndarray:
        return np.array([self.vocab.bos_id, *ids], dtype=np.int64)

    def next_token_logprobs(self, context) -> np.ndarray:
        ids = as_ids(context)
        self._check_length(len(ids))
        idx = self._with_bos(ids)[None, :]
        logits, _ = self._forward(idx)
        return _log_softmax(logits[0, -1])

    def sequence_logprob(self, context, continuation) -> float:
        ctx = as_ids(context)
        cont = as_ids(continuation)
        if not cont:
            return 0.0
        self._check_length(len(ctx) + len(cont))
        idx = self._with_bos(ctx + cont)[None, :]
        logits, _ = self._forward(idx)
        lps = _log_softmax(logits[0])
        pos = np.arange(len(ctx), len(ctx) + len(cont))
        return float(lps[pos, list(cont)].sum())

    def start_session(self, contexts: np.ndarray) -> "TransformerSession":
        return TransformerSession(self, np.asarray(contexts, dtype=np.int64))

    # ------------------------------------------------------------------
    # training
    # ------------------------------------------------------------------

    def _pack(self, batch: Sequence[WeightedExample]):
        B = len(batch)
        lens = [1 + len(ex.context) + len(ex.target) for ex in batch]
        S = max(lens)
        if S > self.config.max_positions:
            raise ContextTooLong(
                f"example of {S} positions exceeds {self.config.max_positions}"
            )
        idx = np.full((B, S), self.vocab.pad_id, dtype=np.int64)
        mask = np.zeros((B, S - 1))
        for b, ex in enumerate(batch):
            row = [self.vocab.bos_id, *as_ids(ex.context), *as_ids(ex.target)]
            idx[b, : len(row)] = row
            c = len(ex.context)
            mask[b, c : c + len(ex.target)] = 1.0
        return idx, mask

    def _loss_and_grads(self, batch: Sequence[WeightedExample]):
        """Objective mean_i(w_i * NLL_i), NLL summed over target tokens."""
        idx, mask = self._pack(batch)
        B = len(batch)
        weights = np.array([ex.weight for ex in batch])
        logits, cache = self._forward(idx, collect=True)
        lps = _log_softmax(logits[:, :-1])
        tgt = idx[:, 1:]
        token_lp = np.take_along_axis(lps, tgt[..., None], axis=-1)[..., 0]
        nll = -(token_lp * mask).sum(axis=1)
        objective = float((weights * nll).mean())

        probs = np.exp(lps)
        coeff = (weights[:, None] * mask) / B
        dl = probs * coeff[..., None]
        np.subtract.at(
            dl.reshape(-1, logits.shape[-1]),
            (np.arange(tgt.size), tgt.ravel()),
            coeff.ravel(),
        )
        dlogits = np.zeros_like(logits)
        dlogits[:, :-1] = dl
        grads = self._backward(dlogits, cache)
        return objective, [float(x) for x in nll], grads

    def nll_gradient(self, context, target) -> tuple[float, dict[str, np.ndarray]]:
        """NLL of ``target`` after ``context`` plus its parameter gradient."""
        ctx = self.vocab.seq_from_ids(as_ids(context))
        tgt = self.vocab.seq_from_ids(as_ids(target))
        objective, nlls, grads = self._loss_and_grads(
            [WeightedExample(ctx, tgt, 1.0)]
        )
        if not np.isfinite(nlls[0]):
            raise NonFiniteLoss(f"non-finite loss {nlls[0]}")
        return nlls[0], grads

    def init_optimizer(self) -> AdamState:
        return AdamState(
            m={k: np.zeros_like(v) for k, v in self.params.items()},
            v={k: np.zeros_like(v) for k, v in self.params.items()},
        )

    def train_step(
        self,
        batch: Sequence[WeightedExample],
        learning_rate: float,
        opt: AdamState | None = None,
    ) -> tuple[float, list[float]]:
        if not batch:
            raise ValueError("batch must be non-empty")
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        objective, nlls, grads = self._loss_and_grads(batch)
        if not all(np.isfinite(x) for x in nlls) or not np.isfinite(objective):
            raise NonFiniteLoss(f"non-finite loss in batch: {nlls}")
        if opt is None:
            opt = self.init_optimizer()
        opt.t += 1
        b1, b2 = opt.beta1, opt.beta2
        bc1 = 1.0 - b1**opt.t
        bc2 = 1.0 - b2**opt.t
        for name in self.parameter_names():
            g = grads[name]
            opt.m[name] = b1 * opt.m[name] + (1 - b1) * g
            opt.v[name] = b2 * opt.v[name] + (1 - b2) * g * g
            mhat = opt.m[name] / bc1
            vhat = opt.v[name] / bc2
            self.params[name] -= learning_rate * mhat / (np.sqrt(vhat) + opt.eps)
        return objective, nlls

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------

    def save(self, path) -> str:
        """Write a versioned checkpoint; returns its sha256 hex digest."""
        header = {
            "format": "beliefspace-checkpoint",
            "version": 1,
            "vocab_hash": self.vocab.content_hash(),
            "vocab_words": list(self.vocab.words),
            "config": self.config.to_dict(),
            "seed": self.seed,
            "params": [[k, list(v.shape)] for k, v in self.params.items()],
        }
        blob = bytearray()
        blob += _CHECKPOINT_MAGIC
        blob += (json.dumps(header, sort_keys=True) + "\n").encode("utf-8")
        for name in self.parameter_names():
            blob += np.ascontiguousarray(self.params[name], dtype="<f8").tobytes()
        with open(path, "wb") as f:
            f.write(blob)
        return hashlib.sha256(bytes(blob)).hexdigest()

    @classmethod
    def load(cls, path, vocab: Vocabulary | None = None) -> "TinyTransformerLM":
        with open(path, "rb") as f:
            blob = f.read()
        if not blob.startswith(_CHECKPOINT_MAGIC):
            raise CheckpointMismatch(f"{path}: not a recognized checkpoint")
        rest = blob[len(_CHECKPOINT_MAGIC):]
        nl = rest.index(b"\n")
        header = json.loads(rest[:nl].decode("utf-8"))
        if header.get("version") != 1:
            raise CheckpointMismatch(f"{path}: unsupported version {header.get('version')}")
        file_vocab = Vocabulary(header["vocab_words"])
        if file_vocab.content_hash() != header["vocab_hash"]:
            raise CheckpointMismatch(f"{path}: vocabulary hash corrupt")
        if vocab is not None and vocab.content_hash() != header["vocab_hash"]:
            raise CheckpointMismatch(
                f"{path}: checkpoint vocabulary does not match the supplied one"
            )
        model = cls(file_vocab, ModelConfig(**header["config"]), seed=header["seed"])
        raw = rest[nl + 1:]
        offset = 0
        for name, shape in header["params"]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
            model.params[name] = arr.copy()
            offset += n * 8
        return model


class TransformerSession(DecodingSession):
    """Key/value-cached batched decoder for :class:`TinyTransformerLM`.

    Produces the same distributions as the full forward pass (float64,
    identical math); only the amount of recomputation differs.
    """

    def __init__(self, model: TinyTransformerLM, contexts: np.ndarray):
        if contexts.ndim != 2:
            raise ValueError("contexts must have shape (B, T)")
        self.model = model
        c = model.config
        B = contexts.shape[0]
        self._B = B
        self._pos = 0
        H, dh = c.n_heads, c.d_model // c.n_heads
        self._k = [np.zeros((B, 0, H, dh)) for _ in range(c.n_layers)]
        self._v = [np.zeros((B, 0, H, dh)) for _ in range(c.n_layers)]
        self._last_logprobs: np.ndarray | None = None
        bos = np.full((B, 1), model.vocab.bos_id, dtype=np.int64)
        self._advance(np.concatenate([bos, contexts.astype(np.int64)], axis=1))

    @property
    def batch_size(self) -> int:
        return self._B

    def _advance(self, tokens: np.ndarray) -> np.ndarray:
        """Forward ``tokens`` (B, K) through the stack; returns (B, K, V)
        logprobs for the positions the new tokens occupy."""
        m = self.model
        p = m.params
        c = m.config
        B, K = tokens.shape
        T_past = self._pos
        if T_past + K > c.max_positions:
            raise ContextTooLong(
                f"session grew to {T_past + K} positions (limit {c.max_positions})"
            )
        H, dh = c.n_heads, c.d_model // c.n_heads

        x = p["wte"][tokens] + p["wpe"][T_past : T_past + K]
        # chunk-local causal mask over [past | new]
        mask = np.zeros((K, T_past + K))
        inner = np.triu(np.full((K, K), -np.inf), k=1)
        mask[:, T_past:] = inner
        for i in range(c.n_layers):
            pre = f"layers.{i}."
            a, _ = _layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            qkv = a @ p[pre + "attn.wqkv"] + p[pre + "attn.bqkv"]
            q, k, v = np.split(qkv, 3, axis=-1)
            q = q.reshape(B, K, H, dh)
            k = k.reshape(B, K, H, dh)
            v = v.reshape(B, K, H, dh)
            k_all = np.concatenate([self._k[i], k], axis=1)
            v_all = np.concatenate([self._v[i], v], axis=1)
            self._k[i] = k_all
            self._v[i] = v_all
            q_t = q.transpose(0, 2, 1, 3)  # (B,H,K,dh)
            scores = q_t @ k_all.transpose(0, 2, 3, 1) / np.sqrt(dh)
            scores = scores + mask
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            att = e / e.sum(axis=-1, keepdims=True)
            o = (att @ v_all.transpose(0, 2, 1, 3)).transpose(0, 2, 1, 3).reshape(B, K, c.d_model)
            x = x + o @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            mmid, _ = _layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            x = x + _silu(mmid @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"]) @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"]
        xf, _ = _layer_norm(x, p["lnf.g"], p["lnf.b"])
        logits = xf @ p["head.w"] + p["head.b"]
        lps = _log_softmax(logits)
        self._pos = T_past + K
        self._last_logprobs = lps[:, -1]
        return lps

    def next_logprobs(self) -> np.ndarray:
        return self._last_logprobs.copy()

    def append(self, tokens: np.ndarray) -> None:
        tokens = np.asarray(tokens, dtype=np.int64).reshape(self._B, 1)
        self._advance(tokens)

    def score_chunk(self, chunk: np.ndarray) -> np.ndarray:
        chunk = np.asarray(chunk, dtype=np.int64)
        B, K = chunk.shape
        rows = np.arange(B)
        out = np.empty((B, K))
        out[:, 0] = self._last_logprobs[rows, chunk[:, 0]]
        lps = self._advance(chunk)
        for j in range(1, K):
            out[:, j] = lps[rows, j - 1, chunk[:, j]]
        return out

    def select(self, rows: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        for i in range(len(self._k)):
            self._k[i] = self._k[i][rows]
            self._v[i] = self._v[i][rows]
        self._last_logprobs = self._last_logprobs[rows]
        self._B = len(rows)
