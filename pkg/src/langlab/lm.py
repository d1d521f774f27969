"""Next-token predictors: a smoothed n-gram reference and a tiny transformer.

The transformer is a from-scratch numpy decoder (RMSNorm, SwiGLU feed-forward,
causal attention, learned positions) with a manually derived backward pass,
trained by AdamW under a cosine schedule with linear warmup. The n-gram model
provides a fast oracle predictor for the evaluation harness.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContextError, FitError, TrainingDivergedError


class Predictor:
    """Batched next-token scorer; softmax over each row is a distribution."""

    vocab_size: int
    max_context: int | None = None

    def next_token_scores(self, contexts) -> np.ndarray:
        """Return (len(contexts), vocab_size) finite scores."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# n-gram reference model
# ---------------------------------------------------------------------------


class NGramModel(Predictor):
    """Conditional counts with add-k smoothing and backoff on unseen contexts."""

    def __init__(self, order: int, vocab_size: int, k: float = 0.1):
        if order < 1:
            raise ConfigError(f"order must be >= 1, got {order}")
        self.order = order
        self.vocab_size = vocab_size
        self.k = k
        # per context length: context tuple -> (Counter-as-dict, total)
        self._tables: list[dict[tuple, dict[int, int]]] = [dict() for _ in range(order)]

    def fit(self, lines) -> "NGramModel":
        n_tokens = 0
        for line in lines:
            ids = list(line)
            n_tokens += len(ids)
            for i, tok in enumerate(ids):
                for m in range(self.order):
                    if i < m:
                        continue
                    ctx = tuple(ids[i - m : i])
                    table = self._tables[m].setdefault(ctx, {})
                    table[tok] = table.get(tok, 0) + 1
        if n_tokens == 0:
            raise FitError("cannot fit an n-gram model on an empty corpus")
        return self

    def _distribution(self, ctx: tuple) -> np.ndarray:
        for m in range(min(self.order - 1, len(ctx)), -1, -1):
            suffix = ctx[len(ctx) - m :]
            table = self._tables[m].get(suffix)
            if table:
                probs = np.full(self.vocab_size, self.k, dtype=np.float64)
                for tok, c in table.items():
                    probs[tok] += c
                total = probs.sum()
                if total > 0:
                    return probs / total
        return np.full(self.vocab_size, 1.0 / self.vocab_size)

    def next_token_scores(self, contexts) -> np.ndarray:
        out = np.empty((len(contexts), self.vocab_size))
        for i, ctx in enumerate(contexts):
            probs = self._distribution(tuple(ctx))
            out[i] = np.log(np.maximum(probs, 1e-12))
        return out


def ngram_fit(lines, order: int, smoothing_k: float = 0.1, vocab_size: int | None = None) -> NGramModel:
    if vocab_size is None:
        vocab_size = 1 + max((max(line) for line in lines if len(line)), default=-1)
        if vocab_size <= 0:
            raise FitError("cannot fit an n-gram model on an empty corpus")
    return NGramModel(order, vocab_size, k=smoothing_k).fit(lines)


# ---------------------------------------------------------------------------
# transformer
# ---------------------------------------------------------------------------


@dataclass
class TransformerConfig:
    vocab_size: int = 512
    layers: int = 4
    model_dim: int = 256
    heads: int = 4
    ff_hidden: int | None = None  # default: (8/3) * model_dim, SwiGLU-sized
    context: int = 256
    dtype: str = "float32"
    rms_eps: float = 1e-6
    init_std: float = 0.02

    def __post_init__(self):
        if self.ff_hidden is None:
            self.ff_hidden = max(8, (8 * self.model_dim) // 3)
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype}")


@dataclass
class TrainConfig:
    batch: int = 64
    lr: float = 1e-4
    warmup: int = 256
    steps: int = 10_000
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-10
    weight_decay: float = 0.01
    seed: int = 0
    log_every: int = 50
    eval_every: int | None = None
    restrict_answer_loss: bool = True  # lines with a separator train post-separator only

    def __post_init__(self):
        if self.steps > 0 and not self.warmup < max(self.steps, 1):
            raise ConfigError(f"warmup ({self.warmup}) must be < steps ({self.steps})")


def lr_at(step: int, tc: TrainConfig) -> float:
    """Linear warmup then cosine decay to zero at ``tc.steps``."""
    if step < tc.warmup:
        return tc.lr * step / tc.warmup
    span = max(tc.steps - tc.warmup, 1)
    return tc.lr * 0.5 * (1.0 + np.cos(np.pi * (step - tc.warmup) / span))


def _silu(u):
    s = expit(u)
    return u * s, s


class TransformerModel(Predictor):
    """Decoder-only transformer in plain numpy with explicit backward pass."""

    def __init__(self, cfg: TransformerConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.vocab_size = cfg.vocab_size
        self.max_context = cfg.context
        self.dtype = np.float32 if cfg.dtype == "float32" else np.float64
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7F)))
        d, f, v = cfg.model_dim, cfg.ff_hidden, cfg.vocab_size

        def mat(*shape):
            return (rng.normal(0.0, cfg.init_std, size=shape)).astype(self.dtype)

        self.params: dict[str, np.ndarray] = {
            "tok_emb": mat(v, d),
            "pos_emb": mat(cfg.context, d),
            "head": mat(d, v),
            "rms_f": np.ones(d, dtype=self.dtype),
        }
        for l in range(cfg.layers):
            self.params.update(
                {
                    f"L{l}.rms1": np.ones(d, dtype=self.dtype),
                    f"L{l}.wq": mat(d, d),
                    f"L{l}.wk": mat(d, d),
                    f"L{l}.wv": mat(d, d),
                    f"L{l}.wo": mat(d, d),
                    f"L{l}.rms2": np.ones(d, dtype=self.dtype),
                    f"L{l}.wg": mat(d, f),
                    f"L{l}.wu": mat(d, f),
                    f"L{l}.wd": mat(f, d),
                }
            )
        self._cache: dict = {}
        self._mask_cache: dict[int, np.ndarray] = {}

    # -- helpers ---------------------------------------------------------------

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _causal_mask(self, t: int) -> np.ndarray:
        mask = self._mask_cache.get(t)
        if mask is None:
            i = np.arange(t)
            mask = np.where(i[None, :] > i[:, None], np.array(-1e9, dtype=self.dtype), 0)
            mask = mask.astype(self.dtype)[None, None, :, :]
            self._mask_cache[t] = mask
        return mask

    def _rmsnorm(self, x, gain, cache_key):
        eps = self.cfg.rms_eps
        ms = np.mean(np.square(x), axis=-1, keepdims=True) + eps
        inv = 1.0 / np.sqrt(ms)
        self._cache[cache_key] = (x, inv)
        return x * inv * gain

    def _rmsnorm_backward(self, dy, gain, cache_key):
        x, inv = self._cache[cache_key]
        d = x.shape[-1]
        dg = np.sum(dy * x * inv, axis=(0, 1))
        gy = dy * gain
        dot = np.sum(gy * x, axis=-1, keepdims=True)
        dx = gy * inv - x * (inv**3) * dot / d
        return dx, dg

    # -- forward ----------------------------------------------------------------

    def forward(self, ids: np.ndarray) -> np.ndarray:
        """Return logits of shape (batch, positions, vocab)."""
        cfg = self.cfg
        b, t = ids.shape
        if t > cfg.context:
            raise ContextError(f"sequence length {t} exceeds context {cfg.context}")
        p = self.params
        self._cache = {"ids": ids, "t": t}
        x = p["tok_emb"][ids] + p["pos_emb"][:t]
        scale = 1.0 / np.sqrt(cfg.model_dim // cfg.heads)
        mask = self._causal_mask(t)
        h = cfg.heads
        dh = cfg.model_dim // h

        for l in range(cfg.layers):
            xn = self._rmsnorm(x, p[f"L{l}.rms1"], f"L{l}.n1")
            q = (xn @ p[f"L{l}.wq"]).reshape(b, t, h, dh).transpose(0, 2, 1, 3)
            k = (xn @ p[f"L{l}.wk"]).reshape(b, t, h, dh).transpose(0, 2, 1, 3)
            v = (xn @ p[f"L{l}.wv"]).reshape(b, t, h, dh).transpose(0, 2, 1, 3)
            scores = q @ k.transpose(0, 1, 3, 2) * scale + mask
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            attn = e / e.sum(axis=-1, keepdims=True)
            ctx = attn @ v  # (b, h, t, dh)
            merged = ctx.transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)
            att_out = merged @ p[f"L{l}.wo"]
            self._cache[f"L{l}.att"] = (xn, q, k, v, attn, merged)
            x = x + att_out

            xn2 = self._rmsnorm(x, p[f"L{l}.rms2"], f"L{l}.n2")
            u = xn2 @ p[f"L{l}.wg"]
            w = xn2 @ p[f"L{l}.wu"]
            su, sig = _silu(u)
            hmid = su * w
            ff_out = hmid @ p[f"L{l}.wd"]
            self._cache[f"L{l}.ff"] = (xn2, u, w, su, sig, hmid)
            x = x + ff_out

        xf = self._rmsnorm(x, p["rms_f"], "nf")
        self._cache["xf"] = xf
        return xf @ p["head"]

    # -- backward ---------------------------------------------------------------

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.cfg
        p = self.params
        ids = self._cache["ids"]
        b, t = ids.shape
        h = cfg.heads
        dh = cfg.model_dim // h
        scale = 1.0 / np.sqrt(dh)
        grads: dict[str, np.ndarray] = {}

        xf = self._cache["xf"]
        grads["head"] = xf.reshape(-1, cfg.model_dim).T @ dlogits.reshape(-1, cfg.vocab_size)
        dxf = dlogits @ p["head"].T
        dx, grads["rms_f"] = self._rmsnorm_backward(dxf, p["rms_f"], "nf")

        for l in range(cfg.layers - 1, -1, -1):
            # feed-forward block
            xn2, u, w, su, sig, hmid = self._cache[f"L{l}.ff"]
            dff = dx  # gradient into ff_out (residual passthrough keeps dx)
            grads[f"L{l}.wd"] = hmid.reshape(-1, cfg.ff_hidden).T @ dff.reshape(-1, cfg.model_dim)
            dhmid = dff @ p[f"L{l}.wd"].T
            dsu = dhmid * w
            dw = dhmid * su
            du = dsu * (sig * (1.0 + u * (1.0 - sig)))
            grads[f"L{l}.wu"] = xn2.reshape(-1, cfg.model_dim).T @ dw.reshape(-1, cfg.ff_hidden)
            grads[f"L{l}.wg"] = xn2.reshape(-1, cfg.model_dim).T @ du.reshape(-1, cfg.ff_hidden)
            dxn2 = du @ p[f"L{l}.wg"].T + dw @ p[f"L{l}.wu"].T
            dres, grads[f"L{l}.rms2"] = self._rmsnorm_backward(dxn2, p[f"L{l}.rms2"], f"L{l}.n2")
            dx = dx + dres

            # attention block
            xn, q, k, v, attn, merged = self._cache[f"L{l}.att"]
            datt_out = dx
            grads[f"L{l}.wo"] = merged.reshape(-1, cfg.model_dim).T @ datt_out.reshape(-1, cfg.model_dim)
            dmerged = datt_out @ p[f"L{l}.wo"].T
            dctx = dmerged.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
            dattn = dctx @ v.transpose(0, 1, 3, 2)
            dv = attn.transpose(0, 1, 3, 2) @ dctx
            rowdot = np.sum(dattn * attn, axis=-1, keepdims=True)
            dscores = (dattn - rowdot) * attn
            dq = (dscores @ k) * scale
            dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
            dq = dq.transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)
            dk = dk.transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)
            dv = dv.transpose(0, 2, 1, 3).reshape(b, t, cfg.model_dim)
            xn_flat = xn.reshape(-1, cfg.model_dim)
            grads[f"L{l}.wq"] = xn_flat.T @ dq.reshape(-1, cfg.model_dim)
            grads[f"L{l}.wk"] = xn_flat.T @ dk.reshape(-1, cfg.model_dim)
            grads[f"L{l}.wv"] = xn_flat.T @ dv.reshape(-1, cfg.model_dim)
            dxn = dq @ p[f"L{l}.wq"].T + dk @ p[f"L{l}.wk"].T + dv @ p[f"L{l}.wv"].T
            dres, grads[f"L{l}.rms1"] = self._rmsnorm_backward(dxn, p[f"L{l}.rms1"], f"L{l}.n1")
            dx = dx + dres

        grads["pos_emb"] = np.zeros_like(p["pos_emb"])
        grads["pos_emb"][:t] = dx.sum(axis=0)
        grads["tok_emb"] = np.zeros_like(p["tok_emb"])
        np.add.at(grads["tok_emb"], ids, dx)
        return grads

    # -- loss ---------------------------------------------------------------------

    def loss_and_grads(self, ids, targets, loss_mask):
        """Masked mean cross-entropy; loss math accumulates in float64."""
        logits = self.forward(ids)
        z = logits.astype(np.float64)
        z -= z.max(axis=-1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        logp = z - logsum
        n = max(int(loss_mask.sum()), 1)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        loss = -(picked * loss_mask).sum() / n
        probs = np.exp(logp)
        dlogits = probs
        np.put_along_axis(
            dlogits,
            targets[..., None],
            np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        dlogits *= (loss_mask / n)[..., None]
        grads = self.backward(dlogits.astype(self.dtype))
        return float(loss), grads

    # -- inference -----------------------------------------------------------------

    def next_token_scores(self, contexts) -> np.ndarray:
        lengths = [len(c) for c in contexts]
        if not lengths or min(lengths) < 1:
            raise ContextError("every context must hold at least one token")
        t = max(lengths)
        if t > self.cfg.context:
            raise ContextError(f"context length {t} exceeds model context {self.cfg.context}")
        ids = np.zeros((len(contexts), t), dtype=np.int64)
        for i, ctx in enumerate(contexts):
            ids[i, : lengths[i]] = ctx
        logits = self.forward(ids)
        rows = np.arange(len(contexts))
        return logits[rows, np.array(lengths) - 1, :].astype(np.float64)


# ---------------------------------------------------------------------------
# optimizer and training loop
# ---------------------------------------------------------------------------


class AdamW:
    """Decoupled weight decay; decay applies to matrices, not gains/vectors."""

    def __init__(self, params: dict[str, np.ndarray], tc: TrainConfig):
        self.tc = tc
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr: float) -> None:
        tc = self.tc
        self.t += 1
        b1c = 1.0 - tc.beta1**self.t
        b2c = 1.0 - tc.beta2**self.t
        for key, p in params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= tc.beta1
            m += (1 - tc.beta1) * g
            v *= tc.beta2
            v += (1 - tc.beta2) * np.square(g)
            update = (m / b1c) / (np.sqrt(v / b2c) + tc.eps)
            if p.ndim >= 2:
                update = update + tc.weight_decay * p
            p -= (lr * update).astype(p.dtype)


def _pad_batch(lines, pad_id: int):
    t = max(len(l) for l in lines)
    ids = np.full((len(lines), t), pad_id, dtype=np.int64)
    for i, l in enumerate(lines):
        ids[i, : len(l)] = l
    return ids


def make_batch_arrays(lines, pad_id: int, sep_id: int | None, restrict_answer: bool):
    """(inputs, targets, loss mask) for teacher forcing on padded lines."""
    ids = _pad_batch(lines, pad_id)
    inputs = ids[:, :-1]
    targets = ids[:, 1:]
    mask = (targets != pad_id).astype(np.float64)
    if restrict_answer and sep_id is not None:
        for i, line in enumerate(lines):
            if sep_id in line:
                sep_pos = line.index(sep_id)
                # target index j corresponds to position j+1 in the line
                mask[i, :sep_pos] = 0.0
    return inputs, targets, mask


def train(
    model: TransformerModel,
    lines,
    tc: TrainConfig,
    pad_id: int,
    sep_id: int | None = None,
    eval_fn=None,
):
    """Next-token training; returns (model, trajectory of metric dicts).

    ``eval_fn(model, step) -> dict`` runs at ``tc.eval_every`` checkpoints and
    its metrics are merged into the trajectory rows.
    """
    if not lines:
        raise FitError("cannot train on an empty corpus")
    too_long = max(len(l) for l in lines)
    if too_long > model.cfg.context + 1:
        raise ContextError(
            f"corpus line of {too_long} tokens exceeds context {model.cfg.context}+1"
        )
    rng = np.random.default_rng(np.random.SeedSequence((tc.seed, 0x77)))
    opt = AdamW(model.params, tc)
    trajectory: list[dict] = []

    def record(step: int, loss: float | None):
        row = {"step": step}
        if loss is not None:
            row["loss"] = loss
        if eval_fn is not None and tc.eval_every and (step % tc.eval_every == 0 or step == tc.steps):
            row.update(eval_fn(model, step))
        if len(row) > 1:
            trajectory.append(row)

    for step in range(tc.steps):
        idx = rng.integers(0, len(lines), size=tc.batch)
        batch = [lines[int(i)] for i in idx]
        inputs, targets, mask = make_batch_arrays(
            batch, pad_id, sep_id, tc.restrict_answer_loss
        )
        loss, grads = model.loss_and_grads(inputs, targets, mask)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at step {step}", step=step)
        opt.step(model.params, grads, lr_at(step, tc))
        done = step + 1
        if done % tc.log_every == 0 or done == tc.steps:
            record(done, loss)
        elif eval_fn is not None and tc.eval_every and done % tc.eval_every == 0:
            record(done, loss)
    return model, trajectory


def generate_greedy(
    model: TransformerModel,
    prompts,
    max_new_tokens: int,
    eos_id: int,
    pad_id: int,
):
    """Batched greedy decoding; returns only the newly generated id lists."""
    seqs = [list(p) for p in prompts]
    out = [[] for _ in prompts]
    alive = list(range(len(prompts)))
    limit = model.max_context if model.max_context is not None else float("inf")
    for _ in range(max_new_tokens):
        if not alive:
            break
        scores = model.next_token_scores([seqs[i] for i in alive])
        nxt = scores.argmax(axis=-1)
        still = []
        for row, i in enumerate(alive):
            tok = int(nxt[row])
            out[i].append(tok)
            seqs[i].append(tok)
            if tok != eos_id and len(seqs[i]) < limit:
                still.append(i)
        alive = still
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    model: TransformerModel,
    ids: np.ndarray,
    targets: np.ndarray,
    loss_mask: np.ndarray,
    h: float = 1e-4,
    corrupt: str | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Intended for float64 models of at most a few thousand parameters; checks
    every coordinate. ``corrupt`` names a parameter whose analytic gradient is
    deliberately scaled, as a negative control for the check itself.
    """
    if model.dtype is not np.float64:
        raise ConfigError("grad_check requires a float64 model")
    _, grads = model.loss_and_grads(ids, targets, loss_mask)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 1.5 + 1e-3

    worst = 0.0
    for key, p in model.params.items():
        flat = p.reshape(-1)
        gflat = grads[key].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up, _ = _loss_only(model, ids, targets, loss_mask)
            flat[j] = orig - h
            down, _ = _loss_only(model, ids, targets, loss_mask)
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            denom = abs(gflat[j]) + abs(numeric) + 1e-10
            worst = max(worst, abs(gflat[j] - numeric) / denom)
    return worst


def _loss_only(model, ids, targets, loss_mask):
    logits = model.forward(ids)
    z = logits.astype(np.float64)
    z -= z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = max(int(loss_mask.sum()), 1)
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    return float(-(picked * loss_mask).sum() / n), None


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"LLCK0001"


def save_checkpoint(model: TransformerModel, path: str | Path) -> None:
    """Flat container: JSON header (config + tensor index), then raw blobs."""
    names = sorted(model.params)
    header = {
        "config": vars(model.cfg),
        "seed": model.seed,
        "tensors": [
            {
                "name": k,
                "shape": list(model.params[k].shape),
                "dtype": str(model.params[k].dtype),
            }
            for k in names
        ],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(model.params[k]).tobytes())


def load_checkpoint(path: str | Path) -> TransformerModel:
    with open(path, "rb") as fh:
        if fh.read(8) != _CKPT_MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        model = TransformerModel(TransformerConfig(**header["config"]), seed=header["seed"])
        for spec in header["tensors"]:
            arr = np.frombuffer(
                fh.read(int(np.prod(spec["shape"])) * np.dtype(spec["dtype"]).itemsize),
                dtype=spec["dtype"],
            ).reshape(spec["shape"])
            model.params[spec["name"]] = arr.copy()
    return model
