"""Toy cascade model: two-tower retrieval scorer and an MLP ranker.

Every layer is plain numpy with a hand-written backward pass. Parameters
live in an ordered dict of float64 arrays; gradients use the same keys.

    retrieval(u, v) = exp(c_r) <tower_u(u), tower_i(v)>,  tower(z) = W2 relu(W1 z + b1) + b2
    ranker(u, v)    = exp(c_s) (w2 . relu(W1 [u, v, u*v] + b1) + b2)

``c_r`` and ``c_s`` are learnable output gains, parameterized as
``exp(gain_rate * c)`` with ``c = 0`` at init. They let a stage match its
score scale to the loss temperature within a few hundred Adam steps (Adam
moves ``c`` by at most ~lr per step, so ``gain_rate`` sets how fast the log
gain can travel). ``gain_rate = 0`` freezes both gains at 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from dftopk.core import ValidationError

MAGIC = b"DFTKMDL\0"
VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    d_user: int = 16
    d_item: int = 16
    hidden: int = 32
    embed: int = 8
    gain_rate: float = 30.0

    def shapes(self):
        du, di, h, e = self.d_user, self.d_item, self.hidden, self.embed
        return {
            "user.W1": (h, du), "user.b1": (h,), "user.W2": (e, h), "user.b2": (e,),
            "item.W1": (h, di), "item.b1": (h,), "item.W2": (e, h), "item.b2": (e,),
            "rank.W1": (h, du + 2 * di), "rank.b1": (h,), "rank.w2": (h,), "rank.b2": (1,),
            "retr.log_gain": (1,), "rank.log_gain": (1,),
        }


class CascadeModel:
    def __init__(self, dims: ModelDims, params: dict[str, np.ndarray]):
        shapes = dims.shapes()
        if list(params) != list(shapes):
            raise ValidationError(f"parameter keys {list(params)} do not match {list(shapes)}")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValidationError(f"{name} has shape {params[name].shape}, expected {shape}")
        if dims.d_user != dims.d_item:
            raise ValidationError("ranker's u*v feature needs d_user == d_item")
        self.dims = dims
        self.params = params

    @classmethod
    def init(cls, dims: ModelDims, seed: int = 0) -> CascadeModel:
        rng = np.random.default_rng([seed, 0xA11])
        params = {}
        for name, shape in dims.shapes().items():
            if len(shape) == 1 and name != "rank.w2":
                params[name] = np.zeros(shape)
            else:
                fan_in = shape[-1]
                params[name] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        return cls(dims, params)

    @classmethod
    def zeros(cls, dims: ModelDims) -> CascadeModel:
        return cls(dims, {k: np.zeros(s) for k, s in dims.shapes().items()})

    def copy(self) -> CascadeModel:
        return CascadeModel(self.dims, {k: v.copy() for k, v in self.params.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def with_flat(self, theta) -> CascadeModel:
        out, at = {}, 0
        for k, v in self.params.items():
            out[k] = np.asarray(theta[at:at + v.size], dtype=np.float64).reshape(v.shape)
            at += v.size
        return CascadeModel(self.dims, out)


def _check_inputs(model, U, V):
    d = model.dims
    if U.ndim != 2 or V.ndim != 3 or U.shape[0] != V.shape[0]:
        raise ValidationError(f"expected U (B, D_u) and V (B, N, D_i), got {U.shape} and {V.shape}")
    if U.shape[1] != d.d_user or V.shape[2] != d.d_item:
        raise ValidationError(
            f"feature dims {U.shape[1]}/{V.shape[2]} do not match model {d.d_user}/{d.d_item}"
        )


def _tower_fwd(p, prefix, z):
    pre = z @ p[prefix + ".W1"].T + p[prefix + ".b1"]
    h = np.maximum(pre, 0.0)
    return h @ p[prefix + ".W2"].T + p[prefix + ".b2"], (z, pre, h)


def _tower_bwd(p, prefix, g, cache, grads):
    z, pre, h = cache
    gz2 = g.reshape(-1, g.shape[-1])
    grads[prefix + ".W2"] = gz2.T @ h.reshape(-1, h.shape[-1])
    grads[prefix + ".b2"] = gz2.sum(axis=0)
    gh = (g @ p[prefix + ".W2"]) * (pre > 0)
    gh2 = gh.reshape(-1, gh.shape[-1])
    grads[prefix + ".W1"] = gh2.T @ z.reshape(-1, z.shape[-1])
    grads[prefix + ".b1"] = gh2.sum(axis=0)


def _rank_features(U, V):
    Ub = np.broadcast_to(U[:, None, :], V.shape[:2] + (U.shape[1],))
    return np.concatenate([Ub, V, Ub * V], axis=-1)


def forward(model: CascadeModel, U, V, keep_cache=False):
    """Retrieval and ranking scores, each of shape (B, N)."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    _check_inputs(model, U, V)
    p, d = model.params, model.dims
    eu, cu = _tower_fwd(p, "user", U)
    ev, cv = _tower_fwd(p, "item", V)
    raw_r = np.einsum("be,bne->bn", eu, ev)
    gain_r = np.exp(d.gain_rate * p["retr.log_gain"][0])
    retrieval = gain_r * raw_r

    f = _rank_features(U, V)
    pre = f @ p["rank.W1"].T + p["rank.b1"]
    h = np.maximum(pre, 0.0)
    raw_s = h @ p["rank.w2"] + p["rank.b2"][0]
    gain_s = np.exp(d.gain_rate * p["rank.log_gain"][0])
    ranking = gain_s * raw_s
    if not keep_cache:
        return retrieval, ranking
    return retrieval, ranking, (eu, cu, ev, cv, f, pre, h, raw_r, gain_r, raw_s, gain_s)


def forward_scores(model: CascadeModel, pv):
    """Scores for a single PV: ``(retrieval, ranking)``, both length N."""
    r, s = forward(model, pv.user_features[None], pv.item_features[None])
    return r[0], s[0]


def backward(model: CascadeModel, cache, g_retrieval, g_ranking):
    """Parameter gradients given d loss / d scores for both stages."""
    p = model.params
    eu, cu, ev, cv, f, pre, h, raw_r, gain_r, raw_s, gain_s = cache
    grads = {
        "retr.log_gain": np.array([model.dims.gain_rate * gain_r * np.sum(g_retrieval * raw_r)]),
        "rank.log_gain": np.array([model.dims.gain_rate * gain_s * np.sum(g_ranking * raw_s)]),
    }
    g_retrieval = gain_r * g_retrieval
    g_ranking = gain_s * g_ranking
    _tower_bwd(p, "user", np.einsum("bn,bne->be", g_retrieval, ev), cu, grads)
    _tower_bwd(p, "item", g_retrieval[..., None] * eu[:, None, :], cv, grads)

    g = g_ranking.reshape(-1)
    h2 = h.reshape(-1, h.shape[-1])
    grads["rank.w2"] = h2.T @ g
    grads["rank.b2"] = np.array([g.sum()])
    gh = (g[:, None] * p["rank.w2"]) * (pre.reshape(h2.shape) > 0)
    grads["rank.W1"] = gh.T @ f.reshape(-1, f.shape[-1])
    grads["rank.b1"] = gh.sum(axis=0)
    return {k: grads[k] for k in p}


class Adam:
    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            if self.lr != 0:
                params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# -- serialization ----------------------------------------------------------------
# layout (little-endian):
#   8 bytes  magic "DFTKMDL\0"
#   uint32   format version
#   uint32 x4  d_user, d_item, hidden, embed
#   float64  gain_rate
#   uint32   number of parameter blocks
#   per block: uint16 name length, name (ascii), uint32 ndim, uint32 x ndim shape,
#              float64 x prod(shape) row-major data


def save_model(model: CascadeModel, path):
    d = model.dims
    buf = bytearray(MAGIC)
    buf += struct.pack("<I4Id", VERSION, d.d_user, d.d_item, d.hidden, d.embed, d.gain_rate)
    buf += struct.pack("<I", len(model.params))
    for name, arr in model.params.items():
        raw = name.encode("ascii")
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


def load_model(path) -> CascadeModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValidationError("not a model file (bad magic)")
    at = 8
    version, du, di, h, e, rate = struct.unpack_from("<I4Id", data, at)
    at += 28
    if version != VERSION:
        raise ValidationError(f"unsupported model format version {version}")
    (count,) = struct.unpack_from("<I", data, at)
    at += 4
    params = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, at)
        at += 2
        name = data[at:at + ln].decode("ascii")
        at += ln
        (ndim,) = struct.unpack_from("<I", data, at)
        at += 4
        shape = struct.unpack_from(f"<{ndim}I", data, at)
        at += 4 * ndim
        size = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=at).reshape(shape).astype(np.float64)
        at += 8 * size
    if at != len(data):
        raise ValidationError("trailing bytes in model file")
    return CascadeModel(ModelDims(du, di, h, e, rate), params)
