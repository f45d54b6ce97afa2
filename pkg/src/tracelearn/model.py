"""Compact LLaMA-style decoder in numpy with hand-written gradients.

Each layer is pre-RMSNorm causal multi-head attention with rotary positions,
then a pre-RMSNorm gated (SwiGLU) feed-forward block. There are no biases.
Parameters live in an ordered ``name -> ndarray`` store. ``loss_and_grad``
returns gradients under the same names.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .rng import stream

CHECKPOINT_MAGIC = b"TLCK"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


def default_ffn_dim(hidden_dim: int) -> int:
    """8/3 of the hidden width, rounded up to a multiple of 8."""
    return 8 * math.ceil(8 * hidden_dim / 3 / 8)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_dim: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 128
    seed: int = 0
    ffn_dim: int | None = None
    tie_embeddings: bool = False
    rope_base: float = 10000.0
    norm_eps: float = 1e-6
    init_std: float = 0.02

    def __post_init__(self):
        if self.vocab_size < 1 or self.hidden_dim < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ConfigError("vocab_size, hidden_dim, n_layers and n_heads must be positive")
        if self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}")
        if (self.hidden_dim // self.n_heads) % 2:
            raise ConfigError("rotary encoding needs an even head dimension")
        if self.max_seq_len < 2:
            raise ConfigError("max_seq_len must be at least 2")
        if self.ffn_dim is not None and self.ffn_dim < 1:
            raise ConfigError("ffn_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def inner_dim(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else default_ffn_dim(self.hidden_dim)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, f, v = self.hidden_dim, self.inner_dim, self.vocab_size
        out = {"tok_emb": (v, d)}
        for l in range(self.n_layers):
            p = f"layers.{l}."
            out[p + "attn_norm"] = (d,)
            for w in ("wq", "wk", "wv", "wo"):
                out[p + w] = (d, d)
            out[p + "mlp_norm"] = (d,)
            out[p + "w_gate"] = (d, f)
            out[p + "w_up"] = (d, f)
            out[p + "w_down"] = (f, d)
        out["final_norm"] = (d,)
        if not self.tie_embeddings:
            out["lm_head"] = (d, v)
        return out


def parameter_count(config: ModelConfig) -> int:
    d, f, v, n = config.hidden_dim, config.inner_dim, config.vocab_size, config.n_layers
    per_layer = 2 * d + 4 * d * d + 3 * d * f
    return v * d + n * per_layer + d + (0 if config.tie_embeddings else d * v)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 16
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    warmup_fraction: float = 0.01
    grad_clip: float | None = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")


@dataclass
class TrainedModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    loss_curve: list[float] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    pad_id: int | None = None
    eos_id: int | None = None

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> "TrainedModel":
        return TrainedModel(self.config, {k: v.astype(dtype) for k, v in self.params.items()},
                            list(self.loss_curve), dict(self.provenance), self.pad_id, self.eos_id)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p, dtype=np.float32).tobytes())
        return h.hexdigest()


def init_model(config: ModelConfig, pad_id: int | None = None, eos_id: int | None = None,
               dtype=np.float32) -> TrainedModel:
    """Weight matrices ~ N(0, init_std); residual output projections are
    further scaled by 1/sqrt(2 * n_layers); norm gains start at one."""
    rng = stream(config.seed, "init")
    resid_scale = 1.0 / math.sqrt(2 * config.n_layers)
    params = {}
    for name, shape in config.shapes().items():
        if len(shape) == 1:
            params[name] = np.ones(shape, dtype=dtype)
            continue
        std = config.init_std
        if name.endswith(("wo", "w_down")):
            std *= resid_scale
        params[name] = (rng.standard_normal(shape) * std).astype(dtype)
    return TrainedModel(config, params, pad_id=pad_id, eos_id=eos_id)


# --- building blocks -------------------------------------------------------

@lru_cache(maxsize=64)
def _tables(head_dim: int, base: float, length: int, dtype):
    half = head_dim // 2
    inv = base ** (-np.arange(half, dtype=np.float64) / half)
    ang = np.arange(length, dtype=np.float64)[:, None] * inv[None, :]
    future = np.triu(np.full((length, length), -np.inf), k=1)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype), future.astype(dtype)


def _rope(x, cos, sin):
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1)


def _rope_inv(dy, cos, sin):
    half = dy.shape[-1] // 2
    d1, d2 = dy[..., :half], dy[..., half:]
    return np.concatenate([d1 * cos + d2 * sin, d2 * cos - d1 * sin], axis=-1)


def _rmsnorm(x, g, eps):
    r = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * r * g, r


def _rmsnorm_back(dy, x, r, g):
    dxhat = dy * g
    dg = np.sum(dy * x * r, axis=tuple(range(dy.ndim - 1)))
    dx = r * dxhat - x * (r ** 3) * np.mean(dxhat * x, axis=-1, keepdims=True)
    return dx, dg


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_ids(config: ModelConfig, ids: np.ndarray):
    if ids.shape[-1] > config.max_seq_len:
        raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_seq_len {config.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise ValueError("token id outside vocabulary")


def _hidden(model: TrainedModel, ids: np.ndarray, keep: bool):
    """Run the layer stack; returns the final-norm input and, if ``keep``, a cache."""
    cfg, P = model.config, model.params
    B, T = ids.shape
    H, hd = cfg.n_heads, cfg.head_dim
    dtype = model.dtype
    cos, sin, future = _tables(hd, cfg.rope_base, T, dtype)
    scale = dtype.type(1.0 / math.sqrt(hd))
    x = P["tok_emb"][ids]
    caches = []
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        x_in = x
        xn, r1 = _rmsnorm(x, P[p + "attn_norm"], cfg.norm_eps)
        q = (xn @ P[p + "wq"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        k = (xn @ P[p + "wk"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        v = (xn @ P[p + "wv"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        qr, kr = _rope(q, cos, sin), _rope(k, cos, sin)
        s = (qr @ kr.transpose(0, 1, 3, 2)) * scale + future
        s -= s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        att = e / e.sum(axis=-1, keepdims=True)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.hidden_dim)
        x = x + o @ P[p + "wo"]
        x_mid = x
        xn2, r2 = _rmsnorm(x, P[p + "mlp_norm"], cfg.norm_eps)
        a = xn2 @ P[p + "w_gate"]
        b = xn2 @ P[p + "w_up"]
        sig = _sigmoid(a)
        sa = a * sig
        hmid = sa * b
        x = x + hmid @ P[p + "w_down"]
        if keep:
            caches.append((x_in, xn, r1, qr, kr, v, att, o, x_mid, xn2, r2, a, b, sig, sa, hmid))
    return x, (cos, sin, scale, caches)


def _head(model: TrainedModel):
    P = model.params
    return P["tok_emb"].T if model.config.tie_embeddings else P["lm_head"]


def forward(model: TrainedModel, ids) -> np.ndarray:
    """Logits for every position. ``ids`` is one sequence ``(T,)`` or a batch ``(B, T)``."""
    ids = np.asarray(ids, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None, :]
    _check_ids(model.config, ids)
    x, _ = _hidden(model, ids, keep=False)
    xf, _ = _rmsnorm(x, model.params["final_norm"], model.config.norm_eps)
    logits = xf @ _head(model)
    return logits[0] if single else logits


def pad_batch(seqs, pad_id: int) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def loss_and_grad(model: TrainedModel, batch, pad_id: int | None = None, need_grad: bool = True):
    """Mean next-token cross-entropy over non-PAD targets, and its gradient.

    ``batch`` is a ``(B, T)`` id array right-padded with ``pad_id`` (or a list
    of sequences, padded here).
    """
    pad_id = model.pad_id if pad_id is None else pad_id
    if pad_id is None:
        raise ValueError("pad_id is required")
    if not isinstance(batch, np.ndarray):
        batch = pad_batch(batch, pad_id)
    batch = np.asarray(batch, dtype=np.int64)
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-D id array")
    cfg, P = model.config, model.params
    _check_ids(cfg, batch)
    inputs, targets = batch[:, :-1], batch[:, 1:]
    valid = targets != pad_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("batch has no non-PAD targets")

    B, T = inputs.shape
    x, (cos, sin, scale, caches) = _hidden(model, inputs, keep=need_grad)
    xf, rf = _rmsnorm(x, P["final_norm"], cfg.norm_eps)
    head = _head(model)
    logits = xf @ head
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    tgt = np.where(valid, targets, 0)
    picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
    loss = float(-(picked * valid).sum(dtype=np.float64) / n_valid)
    if not need_grad:
        return loss, None

    dtype = model.dtype
    grads = {}
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, tgt[..., None],
                      np.take_along_axis(dlogits, tgt[..., None], axis=-1) - 1, axis=-1)
    dlogits *= (valid / dtype.type(n_valid))[..., None].astype(dtype)

    D = cfg.hidden_dim
    dhead = xf.reshape(-1, D).T @ dlogits.reshape(-1, cfg.vocab_size)
    dxf = dlogits @ head.T
    dx, grads["final_norm"] = _rmsnorm_back(dxf, x, rf, P["final_norm"])
    H, hd = cfg.n_heads, cfg.head_dim

    for l in reversed(range(cfg.n_layers)):
        p = f"layers.{l}."
        x_in, xn, r1, qr, kr, v, att, o, x_mid, xn2, r2, a, b, sig, sa, hmid = caches[l]
        # feed-forward block
        flat = dx.reshape(-1, D)
        grads[p + "w_down"] = hmid.reshape(-1, hmid.shape[-1]).T @ flat
        dh = dx @ P[p + "w_down"].T
        dsa = dh * b
        db = dh * sa
        da = dsa * (sig * (1 + a * (1 - sig)))
        grads[p + "w_gate"] = xn2.reshape(-1, D).T @ da.reshape(-1, da.shape[-1])
        grads[p + "w_up"] = xn2.reshape(-1, D).T @ db.reshape(-1, db.shape[-1])
        dxn2 = da @ P[p + "w_gate"].T + db @ P[p + "w_up"].T
        dres, grads[p + "mlp_norm"] = _rmsnorm_back(dxn2, x_mid, r2, P[p + "mlp_norm"])
        dx = dx + dres
        # attention block
        grads[p + "wo"] = o.reshape(-1, D).T @ dx.reshape(-1, D)
        do = (dx @ P[p + "wo"].T).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        ds = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
        dq = _rope_inv(ds @ kr, cos, sin)
        dk = _rope_inv(ds.transpose(0, 1, 3, 2) @ qr, cos, sin)
        dq, dk, dv = (t.transpose(0, 2, 1, 3).reshape(B, T, D) for t in (dq, dk, dv))
        xnf = xn.reshape(-1, D).T
        grads[p + "wq"] = xnf @ dq.reshape(-1, D)
        grads[p + "wk"] = xnf @ dk.reshape(-1, D)
        grads[p + "wv"] = xnf @ dv.reshape(-1, D)
        dxn = dq @ P[p + "wq"].T + dk @ P[p + "wk"].T + dv @ P[p + "wv"].T
        dres, grads[p + "attn_norm"] = _rmsnorm_back(dxn, x_in, r1, P[p + "attn_norm"])
        dx = dx + dres

    onehot = np.zeros((B * T, cfg.vocab_size), dtype=dtype)
    onehot[np.arange(B * T), inputs.reshape(-1)] = 1
    demb = onehot.T @ dx.reshape(-1, D)
    if cfg.tie_embeddings:
        demb += dhead.T
    else:
        grads["lm_head"] = dhead
    grads["tok_emb"] = demb
    return loss, {name: grads[name] for name in P}


# --- optimisation ----------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay on matrices (norm gains are not decayed)."""

    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr: float):
        b1, b2 = self.cfg.betas
        self.t += 1
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        wd = self.cfg.weight_decay
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            if wd and p.ndim > 1:
                p *= 1 - lr * wd
            p -= (lr / c1) * m / (np.sqrt(v / c2) + self.cfg.adam_eps)


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm is not None and total > max_norm:
        s = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= s
    return total


def _as_id_lists(dataset):
    out = []
    for item in dataset:
        ids = getattr(item, "ids", item)
        out.append(np.asarray(ids, dtype=np.int64))
    return out


def train(model: TrainedModel, dataset, cfg: TrainConfig, pad_id: int | None = None,
          progress=None, provenance: dict | None = None) -> TrainedModel:
    """Minibatch AdamW over the dataset in stored order, ``cfg.epochs`` times.

    Linear warmup over the first ``warmup_fraction`` of steps, then a constant
    rate. Mutates and returns ``model``; ``loss_curve`` gets one entry per epoch.
    """
    pad_id = model.pad_id if pad_id is None else pad_id
    seqs = _as_id_lists(dataset)
    if not seqs:
        raise ValueError("dataset is empty")
    longest = max(len(s) for s in seqs)
    if longest > model.config.max_seq_len:
        raise ValueError(f"longest sequence ({longest}) exceeds max_seq_len ({model.config.max_seq_len})")
    batches = [pad_batch(seqs[i:i + cfg.batch_size], pad_id) for i in range(0, len(seqs), cfg.batch_size)]
    n_steps = cfg.epochs * len(batches)
    warmup = max(1, int(round(cfg.warmup_fraction * n_steps)))
    opt = AdamW(model.params, cfg)
    step = 0
    model.loss_curve = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for batch in batches:
            loss, grads = loss_and_grad(model, batch, pad_id)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, step {step}")
            _clip(grads, cfg.grad_clip)
            step += 1
            lr = cfg.learning_rate * min(1.0, step / warmup)
            opt.step(model.params, grads, lr)
            n = int((batch[:, 1:] != pad_id).sum())
            total += loss * n
            count += n
        model.loss_curve.append(total / count)
        if progress is not None:
            progress(epoch + 1, model.loss_curve[-1])
    model.pad_id = pad_id
    model.provenance = {**(provenance or {}), "train_config": asdict(cfg), "model_seed": model.config.seed}
    return model


def mean_loss(model: TrainedModel, dataset, batch_size: int = 64, pad_id: int | None = None) -> float:
    pad_id = model.pad_id if pad_id is None else pad_id
    seqs = _as_id_lists(dataset)
    total, count = 0.0, 0
    for i in range(0, len(seqs), batch_size):
        batch = pad_batch(seqs[i:i + batch_size], pad_id)
        loss, _ = loss_and_grad(model, batch, pad_id, need_grad=False)
        n = int((batch[:, 1:] != pad_id).sum())
        total += loss * n
        count += n
    return total / count


# --- decoding --------------------------------------------------------------

def generate_batch(model: TrainedModel, prompts, max_len: int, eos_id: int | None = None) -> list[list[int]]:
    """Greedy decoding for equal-length prompts; ties go to the lowest id."""
    eos_id = model.eos_id if eos_id is None else eos_id
    ids = np.asarray(prompts, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError("prompts must share one length")
    if ids.shape[1] >= max_len:
        raise ValueError(f"prompt length {ids.shape[1]} must be below max_len {max_len}")
    if max_len > model.config.max_seq_len:
        raise ValueError(f"max_len {max_len} exceeds max_seq_len {model.config.max_seq_len}")
    _check_ids(model.config, ids)
    done = np.zeros(len(ids), dtype=bool)
    out = [list(map(int, row)) for row in ids]
    live = np.arange(len(ids))
    cur = ids
    while cur.shape[1] < max_len and len(live):
        x, _ = _hidden(model, cur, keep=False)
        xf, _ = _rmsnorm(x[:, -1], model.params["final_norm"], model.config.norm_eps)
        nxt = np.argmax(xf @ _head(model), axis=-1)
        for row, tok in zip(live, nxt):
            out[row].append(int(tok))
            if eos_id is not None and tok == eos_id:
                done[row] = True
        keep = ~done[live]
        cur = np.concatenate([cur, nxt[:, None]], axis=1)[keep]
        live = live[keep]
    return out


def generate(model: TrainedModel, prompt, max_len: int, eos_id: int | None = None) -> list[int]:
    return generate_batch(model, [list(prompt)], max_len, eos_id)[0]


# --- persistence -----------------------------------------------------------

def save_checkpoint(model: TrainedModel, path) -> None:
    """Binary header + float32 segments in declaration order, plus a JSON sidecar."""
    path = Path(path)
    header = json.dumps({"config": asdict(model.config), "pad_id": model.pad_id,
                         "eos_id": model.eos_id}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(model.params)))
        for name, p in model.params.items():
            raw = name.encode()
            arr = np.ascontiguousarray(p, dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())
    side = {"provenance": model.provenance, "loss_curve": model.loss_curve, "digest": model.digest()}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> TrainedModel:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        head = json.loads(fh.read(hlen))
        (n,) = struct.unpack("<I", fh.read(4))
        params = {}
        for _ in range(n):
            (ln,) = struct.unpack("<I", fh.read(4))
            name = fh.read(ln).decode()
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape))
            params[name] = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    cfg = head["config"]
    model = TrainedModel(ModelConfig(**cfg), params, pad_id=head["pad_id"], eos_id=head["eos_id"])
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        model.provenance = meta.get("provenance", {})
        model.loss_curve = meta.get("loss_curve", [])
    return model


def save_loss_curve(model: TrainedModel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(model.loss_curve, 1):
            w.writerow([i, f"{loss:.6f}"])
