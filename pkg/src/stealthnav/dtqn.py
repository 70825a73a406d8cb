"""Small causal-attention Q-network over candidate observation sequences.

Everything is plain numpy in double precision with hand-derived backward
passes, so analytic gradients can be held to a finite-difference oracle.
The network maps a (k, 16) observation sequence to k outputs; the last
output scores the candidate. Training is strictly online: one TD update
per high-level decision, no replay buffer, no target network.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

from .tactics import FEATURE_DIM, build_sequence

LN_EPS = 1e-5
_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

CHECKPOINT_MAGIC = b"STLNAVQ\x00"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 128
    k: int = 3
    input_dim: int = FEATURE_DIM

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff, self.k) < 1:
            raise ValueError("all network dimensions must be >= 1")


def tensor_spec(config: NetworkConfig) -> list[tuple[str, tuple]]:
    """Canonical (name, shape) order; checkpoint files follow it exactly."""
    d, ff, k = config.d_model, config.d_ff, config.k
    spec = [("in_proj.w", (config.input_dim, d)), ("in_proj.b", (d,)), ("pos", (k, d))]
    for i in range(config.n_layers):
        p = f"layer{i}"
        spec += [
            (f"{p}.ln1.g", (d,)), (f"{p}.ln1.b", (d,)),
            (f"{p}.attn.wq", (d, d)), (f"{p}.attn.bq", (d,)),
            (f"{p}.attn.wk", (d, d)), (f"{p}.attn.bk", (d,)),
            (f"{p}.attn.wv", (d, d)), (f"{p}.attn.bv", (d,)),
            (f"{p}.attn.wo", (d, d)), (f"{p}.attn.bo", (d,)),
            (f"{p}.ln2.g", (d,)), (f"{p}.ln2.b", (d,)),
            (f"{p}.ffn.w1", (d, ff)), (f"{p}.ffn.b1", (ff,)),
            (f"{p}.ffn.w2", (ff, d)), (f"{p}.ffn.b2", (d,)),
        ]
    spec += [("ln_f.g", (d,)), ("ln_f.b", (d,)), ("head.w", (d, 1)), ("head.b", (1,))]
    return spec


@dataclass
class NetworkParams:
    config: NetworkConfig
    tensors: dict

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: NetworkConfig, seed: int = 0) -> NetworkParams:
    """Seeded uniform init scaled by 1/sqrt(fan-in); LN gains one, biases zero."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51F]))
    tensors = {}
    for name, shape in tensor_spec(config):
        if name.endswith(".g"):
            tensors[name] = np.ones(shape)
        elif len(shape) == 1:
            tensors[name] = np.zeros(shape)
        elif name == "pos":
            bound = 1.0 / math.sqrt(config.d_model)
            tensors[name] = rng.uniform(-bound, bound, shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, shape)
    return NetworkParams(config, tensors)


# ----------------------------------------------------------------------
# building blocks


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _SQRT1_2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x * _SQRT1_2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv, g)


def _ln_backward(dy, cache):
    xhat, inv, g = cache
    dgamma = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbeta = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _split_heads(t, n_heads):
    *pre, k, d = t.shape
    t = t.reshape(*pre, k, n_heads, d // n_heads)
    return np.moveaxis(t, -2, -3)


def _merge_heads(t):
    t = np.moveaxis(t, -3, -2)
    *pre, k, h, dh = t.shape
    return t.reshape(*pre, k, h * dh)


# ----------------------------------------------------------------------
# forward / backward


def forward(params: NetworkParams, X) -> tuple[np.ndarray, dict]:
    """Run the network on X of shape (k, 16) or batched (..., k, 16).

    Returns the (..., k, 1) outputs and the activation cache for backward.
    Row j attends only to rows <= j (causal mask).
    """
    cfg = params.config
    t = params.tensors
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != (cfg.k, cfg.input_dim):
        raise ShapeError(
            f"expected input with trailing shape ({cfg.k}, {cfg.input_dim}), got {X.shape}")
    scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    causal = np.tril(np.ones((cfg.k, cfg.k), dtype=bool))

    h = X @ t["in_proj.w"] + t["in_proj.b"] + t["pos"]
    cache = {"X": X, "layers": []}
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        a_in, ln1c = _ln_forward(h, t[f"{p}.ln1.g"], t[f"{p}.ln1.b"])
        q = _split_heads(a_in @ t[f"{p}.attn.wq"] + t[f"{p}.attn.bq"], cfg.n_heads)
        kk = _split_heads(a_in @ t[f"{p}.attn.wk"] + t[f"{p}.attn.bk"], cfg.n_heads)
        v = _split_heads(a_in @ t[f"{p}.attn.wv"] + t[f"{p}.attn.bv"], cfg.n_heads)
        scores = q @ np.swapaxes(kk, -1, -2) * scale
        scores = np.where(causal, scores, -np.inf)
        m = scores.max(axis=-1, keepdims=True)
        e = np.exp(scores - m)
        attn_p = e / e.sum(axis=-1, keepdims=True)
        att = _merge_heads(attn_p @ v)
        o = att @ t[f"{p}.attn.wo"] + t[f"{p}.attn.bo"]
        h_mid = h + o
        f_in, ln2c = _ln_forward(h_mid, t[f"{p}.ln2.g"], t[f"{p}.ln2.b"])
        z1 = f_in @ t[f"{p}.ffn.w1"] + t[f"{p}.ffn.b1"]
        a1 = _gelu(z1)
        z2 = a1 @ t[f"{p}.ffn.w2"] + t[f"{p}.ffn.b2"]
        h_out = h_mid + z2
        cache["layers"].append({
            "a_in": a_in, "ln1": ln1c, "q": q, "k": kk, "v": v, "p": attn_p,
            "att": att, "ln2": ln2c, "f_in": f_in, "z1": z1, "a1": a1,
        })
        h = h_out
    zf, lnfc = _ln_forward(h, t["ln_f.g"], t["ln_f.b"])
    y = zf @ t["head.w"] + t["head.b"]
    cache["zf"] = zf
    cache["ln_f"] = lnfc
    cache["scale"] = scale
    return y, cache


def q_value(params: NetworkParams, X) -> float:
    """Score of one candidate: the last-row output entry."""
    y, _ = forward(params, X)
    return float(y[-1, 0])


def q_values(params: NetworkParams, Xs) -> np.ndarray:
    """Batched candidate scores for Xs of shape (B, k, 16)."""
    y, _ = forward(params, Xs)
    return np.asarray(y[..., -1, 0], dtype=float)


def backward(params: NetworkParams, cache: dict, upstream: float = 1.0):
    """Exact gradient of the last-row output w.r.t. every parameter.

    ``upstream`` is the scalar gradient arriving at output entry (k, 1).
    Returns (grads keyed like the tensors, gradient w.r.t. the input rows).
    """
    cfg = params.config
    t = params.tensors
    X = cache["X"]
    if X.ndim != 2:
        raise ShapeError("backward supports a single (k, input_dim) sequence")
    scale = cache["scale"]
    grads = {}

    dY = np.zeros((cfg.k, 1))
    dY[-1, 0] = upstream

    zf = cache["zf"]
    grads["head.w"] = zf.T @ dY
    grads["head.b"] = dY.sum(axis=0)
    dzf = dY @ t["head.w"].T
    d, g_gf, g_bf = _ln_backward(dzf, cache["ln_f"])
    grads["ln_f.g"] = g_gf
    grads["ln_f.b"] = g_bf

    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}"
        c = cache["layers"][i]
        # feed-forward block (pre-norm, residual)
        dz2 = d
        grads[f"{p}.ffn.w2"] = c["a1"].T @ dz2
        grads[f"{p}.ffn.b2"] = dz2.sum(axis=0)
        dz1 = (dz2 @ t[f"{p}.ffn.w2"].T) * _gelu_grad(c["z1"])
        grads[f"{p}.ffn.w1"] = c["f_in"].T @ dz1
        grads[f"{p}.ffn.b1"] = dz1.sum(axis=0)
        df_in = dz1 @ t[f"{p}.ffn.w1"].T
        d_ln2, g_g2, g_b2 = _ln_backward(df_in, c["ln2"])
        grads[f"{p}.ln2.g"] = g_g2
        grads[f"{p}.ln2.b"] = g_b2
        d_mid = d + d_ln2
        # attention block (pre-norm, residual)
        do = d_mid
        grads[f"{p}.attn.wo"] = c["att"].T @ do
        grads[f"{p}.attn.bo"] = do.sum(axis=0)
        datt = _split_heads(do @ t[f"{p}.attn.wo"].T, cfg.n_heads)
        dp = datt @ np.swapaxes(c["v"], -1, -2)
        dv = np.swapaxes(c["p"], -1, -2) @ datt
        ds = c["p"] * (dp - (dp * c["p"]).sum(axis=-1, keepdims=True))
        dq = ds @ c["k"] * scale
        dk = np.swapaxes(ds, -1, -2) @ c["q"] * scale
        dq_m, dk_m, dv_m = _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)
        a_in = c["a_in"]
        grads[f"{p}.attn.wq"] = a_in.T @ dq_m
        grads[f"{p}.attn.bq"] = dq_m.sum(axis=0)
        grads[f"{p}.attn.wk"] = a_in.T @ dk_m
        grads[f"{p}.attn.bk"] = dk_m.sum(axis=0)
        grads[f"{p}.attn.wv"] = a_in.T @ dv_m
        grads[f"{p}.attn.bv"] = dv_m.sum(axis=0)
        da_in = dq_m @ t[f"{p}.attn.wq"].T + dk_m @ t[f"{p}.attn.wk"].T \
            + dv_m @ t[f"{p}.attn.wv"].T
        d_ln1, g_g1, g_b1 = _ln_backward(da_in, c["ln1"])
        grads[f"{p}.ln1.g"] = g_g1
        grads[f"{p}.ln1.b"] = g_b1
        d = d_mid + d_ln1

    grads["pos"] = d.copy()
    grads["in_proj.w"] = X.T @ d
    grads["in_proj.b"] = d.sum(axis=0)
    dX = d @ t["in_proj.w"].T
    return grads, dX


# ----------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(params: NetworkParams, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=0,
        m={k: np.zeros_like(v) for k, v in params.tensors.items()},
        v={k: np.zeros_like(v) for k, v in params.tensors.items()},
    )


def adam_update(params: NetworkParams, adam: AdamState, grads: dict) -> None:
    adam.step += 1
    bc1 = 1.0 - adam.beta1 ** adam.step
    bc2 = 1.0 - adam.beta2 ** adam.step
    for name, tensor in params.tensors.items():
        g = grads[name]
        m = adam.m[name]
        v = adam.v[name]
        m *= adam.beta1
        m += (1.0 - adam.beta1) * g
        v *= adam.beta2
        v += (1.0 - adam.beta2) * g * g
        tensor -= adam.lr * (m / bc1) / (np.sqrt(v / bc2) + adam.eps)


def train_step(params: NetworkParams, adam: AdamState, X, target: float) -> float:
    """One Adam update on the squared TD error; returns the post-update loss.

    Raises TrainingDiverged on any non-finite value so the harness can abort
    while retaining its last good checkpoint.
    """
    X = np.asarray(X, dtype=float)
    target = float(target)
    if not math.isfinite(target):
        raise TrainingDiverged(f"non-finite TD target {target}")
    y, cache = forward(params, X)
    q = float(y[-1, 0])
    if not math.isfinite(q):
        raise TrainingDiverged("non-finite Q-value before update")
    grads, _ = backward(params, cache, upstream=q - target)
    adam_update(params, adam, grads)
    q_after = q_value(params, X)
    loss = 0.5 * (q_after - target) ** 2
    if not math.isfinite(loss):
        raise TrainingDiverged("non-finite loss after update")
    return loss


def td_target(rewards, gamma: float, terminal: bool, next_max_q: float | None = None,
              steps_elapsed: int | None = None) -> float:
    """Bootstrapped return over one low-level rollup.

    Terminal transitions must not provide a bootstrap value; non-terminal
    transitions must. ``steps_elapsed`` is the number of low-level steps the
    rollup actually executed and defaults to len(rewards).
    """
    if terminal and next_max_q is not None:
        raise ValueError("terminal target must not bootstrap")
    if not terminal and next_max_q is None:
        raise ValueError("non-terminal target needs next_max_q")
    if steps_elapsed is None:
        steps_elapsed = len(rewards)
    total = 0.0
    g = 1.0
    for r in rewards:
        total += g * r
        g *= gamma
    if not terminal:
        total += gamma ** steps_elapsed * float(next_max_q)
    return total


def select_subgoal(params: NetworkParams, candidates, epsilon: float,
                   rng: np.random.Generator | None = None, history=None,
                   mode: str = "tile") -> int:
    """Epsilon-greedy index into the candidate list.

    Masked candidates are never selectable. On the greedy branch every
    unmasked candidate gets its Q-value recorded; exact ties break toward
    the lowest index.
    """
    unmasked = [i for i, c in enumerate(candidates) if not c.masked]
    if not unmasked:
        raise ValueError("no unmasked candidates to select from")
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("epsilon > 0 requires an rng")
        if rng.uniform() < epsilon:
            return unmasked[int(rng.integers(len(unmasked)))]
    k = params.config.k
    Xs = np.stack([
        build_sequence(candidates[i].features, history=history, k=k, mode=mode)
        for i in unmasked
    ])
    qs = q_values(params, Xs)
    for idx, qv in zip(unmasked, qs):
        candidates[idx].q_value = float(qv)
    return unmasked[int(np.argmax(qs))]


# ----------------------------------------------------------------------
# checkpoint I/O (versioned binary; bit-exact round trip)


@dataclass
class Checkpoint:
    params: NetworkParams
    adam: AdamState
    episodes: int = 0
    config_snapshot: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    cfg = ckpt.params.config
    spec = tensor_spec(cfg)
    header = {
        "network": asdict(cfg),
        "adam": {"lr": ckpt.adam.lr, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps,
                 "step": ckpt.adam.step},
        "episodes": ckpt.episodes,
        "config_snapshot": ckpt.config_snapshot,
        "tensors": [[name, list(shape)] for name, shape in spec],
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<Q", len(hb))
    buf += hb
    for group in (ckpt.params.tensors, ckpt.adam.m, ckpt.adam.v):
        for name, _ in spec:
            buf += np.ascontiguousarray(group[name], dtype="<f8").tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(buf))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 12)
    off = 20
    if off + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    off += hlen
    config = NetworkConfig(**header["network"])
    spec = tensor_spec(config)
    if header["tensors"] != [[name, list(shape)] for name, shape in spec]:
        raise CheckpointError(f"{path}: tensor layout does not match config")
    expected = 3 * sum(int(np.prod(shape)) for _, shape in spec) * 8
    if len(raw) - off != expected:
        raise CheckpointError(
            f"{path}: truncated or oversized payload "
            f"({len(raw) - off} bytes, expected {expected})")
    groups = []
    for _ in range(3):
        arrs = {}
        for name, shape in spec:
            n = int(np.prod(shape)) * 8
            arrs[name] = np.frombuffer(raw[off:off + n], dtype="<f8").reshape(shape).copy()
            off += n
        groups.append(arrs)
    params = NetworkParams(config, groups[0])
    a = header["adam"]
    adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                     step=a["step"], m=groups[1], v=groups[2])
    return Checkpoint(params=params, adam=adam, episodes=header["episodes"],
                      config_snapshot=header.get("config_snapshot", {}))


def require_compatible(ckpt: Checkpoint, config: NetworkConfig) -> None:
    """Reject a checkpoint whose architecture differs from the requested one."""
    if asdict(ckpt.params.config) != asdict(config):
        raise CheckpointError(
            f"checkpoint network {asdict(ckpt.params.config)} does not match "
            f"requested {asdict(config)}")
