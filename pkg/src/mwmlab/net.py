"""GRU actor-critic with auxiliary heads, forward pass and exact BPTT gradients.

Architecture: obs -> GRU(H) -> {actor: tanh(H) -> tanh(H) -> policy logits
and auxiliary heads; critic: tanh(H) -> tanh(H) -> value}.

GRU cell (reset gate applied to the previous state before its transform)::

    z  = sigmoid(Wz x + Uz h + bz)
    r  = sigmoid(Wr x + Ur h + br)
    n  = tanh(Wn x + Un (r * h) + bn)
    h' = (1 - z) * h + z * n

All parameters live in one flat array; per-layer names are views into it.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

N_ACTIONS = 4


@dataclass(frozen=True)
class HeadSpec:
    name: str
    dim: int = 1  # 1 -> numeric head, >=2 -> categorical with softmax

    @property
    def categorical(self) -> bool:
        return self.dim >= 2


@dataclass(frozen=True)
class NetConfig:
    input_dim: int = 24
    hidden_width: int = 16
    n_actions: int = N_ACTIONS
    aux_heads: tuple[HeadSpec, ...] = ()

    def __post_init__(self):
        heads = tuple(h if isinstance(h, HeadSpec) else HeadSpec(*h) for h in self.aux_heads)
        object.__setattr__(self, "aux_heads", heads)
        if self.input_dim < 1 or self.hidden_width < 1 or self.n_actions < 1:
            raise ValueError("widths must be >= 1")
        if len({h.name for h in heads}) != len(heads):
            raise ValueError("duplicate auxiliary head names")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_width": self.hidden_width,
            "n_actions": self.n_actions,
            "aux_heads": [[h.name, h.dim] for h in self.aux_heads],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(d["input_dim"], d["hidden_width"], d["n_actions"],
                   tuple(HeadSpec(n, k) for n, k in d.get("aux_heads", [])))

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Canonical parameter order used for the flat array and checkpoints."""
        I, H, A = self.input_dim, self.hidden_width, self.n_actions
        shapes = [
            ("gru.Wx", (3 * H, I)),
            ("gru.Uzr", (2 * H, H)),
            ("gru.Un", (H, H)),
            ("gru.b", (3 * H,)),
            ("actor.W1", (H, H)), ("actor.b1", (H,)),
            ("actor.W2", (H, H)), ("actor.b2", (H,)),
            ("pi.W", (A, H)), ("pi.b", (A,)),
            ("critic.W1", (H, H)), ("critic.b1", (H,)),
            ("critic.W2", (H, H)), ("critic.b2", (H,)),
            ("v.W", (1, H)), ("v.b", (1,)),
        ]
        for h in self.aux_heads:
            shapes += [(f"aux.{h.name}.W", (h.dim, H)), (f"aux.{h.name}.b", (h.dim,))]
        return shapes

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())


class ParamSet:
    """Flat parameter vector with named per-layer views."""

    def __init__(self, config: NetConfig, flat: np.ndarray | None = None, dtype=np.float32):
        self.config = config
        if flat is None:
            flat = np.zeros(config.n_params, dtype=dtype)
        flat = np.asarray(flat)
        if flat.shape != (config.n_params,):
            raise ValueError(f"expected {config.n_params} parameters, got {flat.shape}")
        self.flat = flat
        self._views = {}
        off = 0
        for name, shape in config.layer_shapes():
            size = int(np.prod(shape))
            self._views[name] = flat[off:off + size].reshape(shape)
            off += size

    def __getitem__(self, name: str) -> np.ndarray:
        return self._views[name]

    def names(self) -> list[str]:
        return list(self._views)

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, self.flat.copy())

    def astype(self, dtype) -> "ParamSet":
        return ParamSet(self.config, self.flat.astype(dtype))

    def zeros_like(self) -> "ParamSet":
        return ParamSet(self.config, np.zeros_like(self.flat))

    def __eq__(self, other) -> bool:
        return (isinstance(other, ParamSet) and self.config == other.config
                and self.flat.dtype == other.flat.dtype and np.array_equal(self.flat, other.flat))


def init_params(rng: np.random.Generator | int, config: NetConfig, dtype=np.float32) -> ParamSet:
    """Fan-in scaled uniform weights, zero biases.

    Output heads are shrunk (policy by 0.01, value and aux by 1.0/0.1) so the
    initial policy is near-uniform.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    p = ParamSet(config, np.zeros(config.n_params, dtype=np.float64))
    gains = {"pi.W": 0.01, "v.W": 1.0}
    for name, shape in config.layer_shapes():
        if len(shape) == 1:
            continue
        bound = 1.0 / np.sqrt(shape[1])
        gain = gains.get(name, 0.1 if name.startswith("aux.") else 1.0)
        p[name][...] = gain * rng.uniform(-bound, bound, size=shape)
    return p.astype(dtype)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softmax(logits):
    m = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardOut:
    policy: np.ndarray          # (..., n_actions)
    value: np.ndarray           # (...)
    aux: dict                   # head -> (..., dim) (numeric heads keep a trailing 1)
    hidden_next: np.ndarray     # (..., H)
    actor_l1: np.ndarray        # (..., H)
    logits: np.ndarray | None = None


def _gru_step(p: ParamSet, gx, h):
    H = p.config.hidden_width
    gzr = gx[:, :2 * H] + h @ p["gru.Uzr"].T
    zr = _sigmoid(gzr)
    z, r = zr[:, :H], zr[:, H:]
    rh = r * h
    n = np.tanh(gx[:, 2 * H:] + rh @ p["gru.Un"].T)
    return (1.0 - z) * h + z * n, z, r, n, rh


def _heads(p: ParamSet, hs):
    """MLP branches and heads on a 2D batch of GRU outputs."""
    a1 = np.tanh(hs @ p["actor.W1"].T + p["actor.b1"])
    a2 = np.tanh(a1 @ p["actor.W2"].T + p["actor.b2"])
    logits = a2 @ p["pi.W"].T + p["pi.b"]
    c1 = np.tanh(hs @ p["critic.W1"].T + p["critic.b1"])
    c2 = np.tanh(c1 @ p["critic.W2"].T + p["critic.b2"])
    value = (c2 @ p["v.W"].T + p["v.b"])[:, 0]
    aux = {}
    for h in p.config.aux_heads:
        out = a2 @ p[f"aux.{h.name}.W"].T + p[f"aux.{h.name}.b"]
        aux[h.name] = _softmax(out) if h.categorical else out
    return a1, a2, logits, c1, c2, value, aux


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite network input")


def forward(params: ParamSet, observation, hidden) -> ForwardOut:
    """One step for a single observation ``(I,)`` or a batch ``(B, I)``."""
    obs = np.asarray(observation, dtype=params.flat.dtype)
    h = np.asarray(hidden, dtype=params.flat.dtype)
    _check_finite(obs, h)
    single = obs.ndim == 1
    obs, h = np.atleast_2d(obs), np.atleast_2d(h)
    if obs.shape[1] != params.config.input_dim or h.shape[1] != params.config.hidden_width:
        raise ValueError("observation/hidden shape mismatch")
    gx = obs @ params["gru.Wx"].T + params["gru.b"]
    hn = _gru_step(params, gx, h)[0]
    a1, a2, logits, c1, c2, value, aux = _heads(params, hn)
    out = ForwardOut(_softmax(logits), value, aux, hn, a1, logits)
    if single:
        out = ForwardOut(out.policy[0], out.value[0], {k: v[0] for k, v in aux.items()},
                         hn[0], a1[0], logits[0])
    return out


@dataclass
class SequenceCache:
    obs: np.ndarray
    h_prev: np.ndarray  # (T, B, H): hidden fed into each step (after resets)
    z: np.ndarray
    r: np.ndarray
    n: np.ndarray
    rh: np.ndarray
    hs: np.ndarray      # (T, B, H) GRU outputs
    a1: np.ndarray
    a2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    keep: np.ndarray    # (T, B) 0 where the hidden state was reset before the step
    h0: np.ndarray = field(default=None)


@dataclass
class SequenceOut:
    logits: np.ndarray  # (T, B, A)
    probs: np.ndarray
    value: np.ndarray   # (T, B)
    aux: dict           # head -> (T, B, dim)
    hidden_last: np.ndarray
    cache: SequenceCache


def forward_sequence(params: ParamSet, obs, h0, starts=None) -> SequenceOut:
    """Unroll over ``obs`` of shape ``(T, B, I)`` from hidden ``h0`` ``(B, H)``.

    ``starts[t, b]`` true means the hidden state is zeroed before step ``t``
    (a new episode begins there).
    """
    dt = params.flat.dtype
    obs = np.asarray(obs, dtype=dt)
    h = np.asarray(h0, dtype=dt)
    _check_finite(obs, h)
    T, B, _ = obs.shape
    H = params.config.hidden_width
    keep = np.ones((T, B), dtype=dt) if starts is None else 1.0 - np.asarray(starts, dtype=dt)
    gx_all = obs.reshape(T * B, -1) @ params["gru.Wx"].T + params["gru.b"]
    gx_all = gx_all.reshape(T, B, 3 * H)
    h_prev = np.empty((T, B, H), dtype=dt)
    z = np.empty_like(h_prev); r = np.empty_like(h_prev); n = np.empty_like(h_prev)
    rh = np.empty_like(h_prev); hs = np.empty_like(h_prev)
    for t in range(T):
        h = h * keep[t][:, None]
        h_prev[t] = h
        h, z[t], r[t], n[t], rh[t] = _gru_step(params, gx_all[t], h)
        hs[t] = h
    a1, a2, logits, c1, c2, value, aux = _heads(params, hs.reshape(T * B, H))
    cache = SequenceCache(obs, h_prev, z, r, n, rh, hs,
                          a1.reshape(T, B, H), a2.reshape(T, B, H),
                          c1.reshape(T, B, H), c2.reshape(T, B, H), keep, h)
    logits = logits.reshape(T, B, -1)
    return SequenceOut(logits, _softmax(logits), value.reshape(T, B),
                       {k: v.reshape(T, B, -1) for k, v in aux.items()}, h, cache)


def backward(params: ParamSet, cache: SequenceCache, d_logits, d_value, d_aux=None) -> ParamSet:
    """Reverse-mode gradient of a scalar loss through a cached sequence.

    ``d_logits`` ``(T, B, A)`` and ``d_value`` ``(T, B)`` are the loss
    gradients w.r.t. policy logits and values; ``d_aux`` maps head names to
    gradients w.r.t. the head's pre-softmax outputs ``(T, B, dim)``.
    """
    p = params
    T, B, H = cache.hs.shape
    if d_logits.shape[:2] != (T, B) or d_value.shape != (T, B):
        raise ValueError("gradient shapes do not match the cached sequence")
    d_aux = d_aux or {}
    g = params.zeros_like()
    dt = params.flat.dtype
    TB = T * B
    a1 = cache.a1.reshape(TB, H); a2 = cache.a2.reshape(TB, H)
    c1 = cache.c1.reshape(TB, H); c2 = cache.c2.reshape(TB, H)
    hs = cache.hs.reshape(TB, H)

    # actor branch
    dl = np.asarray(d_logits, dtype=dt).reshape(TB, -1)
    g["pi.W"][...] = dl.T @ a2
    g["pi.b"][...] = dl.sum(0)
    da2 = dl @ p["pi.W"]
    for h in p.config.aux_heads:
        if h.name not in d_aux:
            continue
        dh = np.asarray(d_aux[h.name], dtype=dt).reshape(TB, h.dim)
        g[f"aux.{h.name}.W"][...] = dh.T @ a2
        g[f"aux.{h.name}.b"][...] = dh.sum(0)
        da2 += dh @ p[f"aux.{h.name}.W"]
    dpre2 = da2 * (1.0 - a2 * a2)
    g["actor.W2"][...] = dpre2.T @ a1
    g["actor.b2"][...] = dpre2.sum(0)
    dpre1 = (dpre2 @ p["actor.W2"]) * (1.0 - a1 * a1)
    g["actor.W1"][...] = dpre1.T @ hs
    g["actor.b1"][...] = dpre1.sum(0)
    dhs = dpre1 @ p["actor.W1"]

    # critic branch
    dv = np.asarray(d_value, dtype=dt).reshape(TB, 1)
    g["v.W"][...] = dv.T @ c2
    g["v.b"][...] = dv.sum(0)
    dc2 = (dv @ p["v.W"]) * (1.0 - c2 * c2)
    g["critic.W2"][...] = dc2.T @ c1
    g["critic.b2"][...] = dc2.sum(0)
    dc1 = (dc2 @ p["critic.W2"]) * (1.0 - c1 * c1)
    g["critic.W1"][...] = dc1.T @ hs
    g["critic.b1"][...] = dc1.sum(0)
    dhs += dc1 @ p["critic.W1"]
    dhs = dhs.reshape(T, B, H)

    # GRU through time
    Uzr, Un = p["gru.Uzr"], p["gru.Un"]
    dgx = np.empty((T, B, 3 * H), dtype=dt)
    dUzr = np.zeros_like(Uzr); dUn = np.zeros_like(Un)
    dh = np.zeros((B, H), dtype=dt)
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        z, r, n, hp, rh = cache.z[t], cache.r[t], cache.n[t], cache.h_prev[t], cache.rh[t]
        dz = dh * (n - hp)
        dn = dh * z
        dh_prev = dh * (1.0 - z)
        dan = dn * (1.0 - n * n)
        drh = dan @ Un
        dUn += dan.T @ rh
        dh_prev += drh * r
        dr = drh * hp
        dazr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dUzr += dazr.T @ hp
        dh_prev += dazr @ Uzr
        dgx[t, :, :2 * H] = dazr
        dgx[t, :, 2 * H:] = dan
        dh = dh_prev * cache.keep[t][:, None]
    dgx = dgx.reshape(TB, 3 * H)
    g["gru.Wx"][...] = dgx.T @ cache.obs.reshape(TB, -1)
    g["gru.b"][...] = dgx.sum(0)
    g["gru.Uzr"][...] = dUzr
    g["gru.Un"][...] = dUn
    return g


# checkpoints ---------------------------------------------------------------

MAGIC = b"MWMCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


def save_checkpoint(path, params: ParamSet, metadata: dict | None = None) -> Path:
    """Write ``params`` as header + little-endian float32 array, plus ``<path>.json`` sidecar.

    Layout: 8-byte magic, uint32 version, uint32 header length, UTF-8 JSON
    NetConfig, then ``n_params`` float32 values in ``NetConfig.layer_shapes`` order.
    """
    path = Path(path)
    header = json.dumps(params.config.to_dict(), sort_keys=True).encode()
    data = params.flat.astype("<f4").tobytes()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header + data)
    tmp.replace(path)
    if metadata is not None:
        Path(str(path) + ".json").write_text(json.dumps(metadata, indent=2, sort_keys=True))
    return path


def load_checkpoint(path, expect: NetConfig | None = None) -> ParamSet:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    try:
        config = NetConfig.from_dict(json.loads(raw[16:16 + hlen].decode()))
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    body = raw[16 + hlen:]
    if len(body) != 4 * config.n_params:
        raise CheckpointError(f"{path}: truncated parameter block")
    if expect is not None and expect != config:
        raise CheckpointError(f"{path}: network config mismatch ({config} != {expect})")
    return ParamSet(config, np.frombuffer(body, dtype="<f4").astype(np.float32))


def load_metadata(path) -> dict:
    side = Path(str(path) + ".json")
    return json.loads(side.read_text()) if side.exists() else {}
