"""Noise-conditional score network with hand-derived reverse-mode gradients.

Pipeline: a per-point MLP with max pooling encodes the object cloud; a per-point
MLP lifts the g gripper control points to g tokens; a sinusoidal embedding of
the noise level goes through a linear map and is added to the object feature to
form the condition. D adaLN-Zero transformer blocks mix the tokens, which are
mean-pooled and decoded linearly to a 6-vector.

The decoder predicts in the object frame, where the gripper points live. When
the batch carries the poses' rotation matrices the output is rotated into the
body frame (``R^T v, R^T omega``), a fixed parameter-free map. Callers that
want a score divide the output by the level's sigma squared (see
``diffusion.score``).

Every ``*_fwd`` function returns ``(out, cache)``; the matching ``*_bwd``
accumulates parameter gradients into a ``Params`` of zeros and returns the
input gradient.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidArgument, NumericalFailure
from .params import NetworkConfig, Params

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)
MIN_POINTS = 8


# ---------------------------------------------------------------------------
# elementwise pieces
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def gelu(x):
    x2 = x * x
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2)))


def gelu_grad(x):
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)


def layernorm_fwd(x):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    y = xc * inv
    return y, (y, inv)


def layernorm_bwd(cache, dy):
    y, inv = cache
    return inv * (dy - dy.mean(axis=-1, keepdims=True) - y * (dy * y).mean(axis=-1, keepdims=True))


def _lin_bwd(x, W, dy, grads: Params, name: str):
    grads[name + ".W"][...] += x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    grads[name + ".b"][...] += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dy @ W.T


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


def encode_object_fwd(p: Params, points: np.ndarray):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidArgument(f"object cloud must be N x 3, got {points.shape}")
    if len(points) < MIN_POINTS:
        raise InvalidArgument(f"object cloud has {len(points)} points; need at least {MIN_POINTS}")
    n_layers = len(p.cfg.pointnet_widths)
    h = points
    acts = [h]
    pre = []
    for i in range(n_layers):
        z = h @ p[f"obj.l{i}.W"] + p[f"obj.l{i}.b"]
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    arg = np.argmax(h, axis=0)
    f = h[arg, np.arange(h.shape[1])]
    return f, (acts, pre, arg)


def encode_object_bwd(p: Params, cache, df, grads: Params):
    acts, pre, arg = cache
    n_layers = len(pre)
    dh = np.zeros_like(acts[-1])
    dh[arg, np.arange(dh.shape[1])] = df
    for i in reversed(range(n_layers)):
        dz = dh if i == n_layers - 1 else dh * (pre[i] > 0)
        dh = _lin_bwd(acts[i], p[f"obj.l{i}.W"], dz, grads, f"obj.l{i}")


def encode_object(cloud_points, p: Params) -> np.ndarray:
    """Permutation-invariant d-vector for an N x 3 cloud."""
    return encode_object_fwd(p, cloud_points)[0]


def encode_gripper_fwd(p: Params, xg):
    z0 = xg @ p["grip.l0.W"] + p["grip.l0.b"]
    a0 = silu(z0)
    tok = a0 @ p["grip.l1.W"] + p["grip.l1.b"]
    return tok, (xg, z0, a0)


def encode_gripper_bwd(p: Params, cache, dtok, grads: Params):
    xg, z0, a0 = cache
    da0 = _lin_bwd(a0, p["grip.l1.W"], dtok, grads, "grip.l1")
    dz0 = da0 * silu_grad(z0)
    _lin_bwd(xg, p["grip.l0.W"], dz0, grads, "grip.l0")


def encode_gripper(xg, p: Params) -> np.ndarray:
    """(..., g, 3) control points -> (..., g, d) tokens; row order preserved."""
    return encode_gripper_fwd(p, np.asarray(xg, dtype=np.float64))[0]


def sinusoidal_embedding(k, d: int) -> np.ndarray:
    """Transformer-style embedding of integer level(s): ``[cos(k f), sin(k f)]``, base 1e4."""
    k = np.asarray(k, dtype=np.float64)
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = k[..., None] * freqs
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def encode_step(k, L: int, p: Params) -> np.ndarray:
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or np.any(k_arr >= L):
        raise InvalidArgument(f"noise level {k} outside [0, {L})")
    e = sinusoidal_embedding(k_arr, p.cfg.d)
    return e @ p["step.W"] + p["step.b"]


# ---------------------------------------------------------------------------
# transformer block
# ---------------------------------------------------------------------------


def attention_fwd(p: Params, name: str, m, heads: int):
    B, g, d = m.shape
    dh = d // heads
    qkv = m @ p[f"{name}.qkv.W"] + p[f"{name}.qkv.b"]
    qkv = qkv.reshape(B, g, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    s = (q @ k.transpose(0, 1, 3, 2)) * scale
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    P = e / e.sum(axis=-1, keepdims=True)
    o = P @ v
    om = o.transpose(0, 2, 1, 3).reshape(B, g, d)
    out = om @ p[f"{name}.proj.W"] + p[f"{name}.proj.b"]
    return out, (m, q, k, v, P, om, scale)


def attention_bwd(p: Params, name: str, cache, dout, grads: Params, heads: int):
    m, q, k, v, P, om, scale = cache
    B, g, d = m.shape
    dh = d // heads
    dom = _lin_bwd(om, p[f"{name}.proj.W"], dout, grads, f"{name}.proj")
    do = dom.reshape(B, g, heads, dh).transpose(0, 2, 1, 3)
    dP = do @ v.transpose(0, 1, 3, 2)
    dv = P.transpose(0, 1, 3, 2) @ do
    ds = P * (dP - (dP * P).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, g, 3 * d)
    return _lin_bwd(m, p[f"{name}.qkv.W"], dqkv, grads, f"{name}.qkv")


def modulation(p: Params, j: int, c_silu):
    mod = c_silu @ p[f"blk{j}.ada.W"] + p[f"blk{j}.ada.b"]
    return np.split(mod, 6, axis=-1)


def dit_block_fwd(p: Params, j: int, x, c_silu, mods=None):
    """adaLN-Zero pre-norm block. ``mods`` may be precomputed from the condition."""
    heads = p.cfg.heads
    sh1, sc1, g1, sh2, sc2, g2 = mods if mods is not None else modulation(p, j, c_silu)
    sh1, sc1, g1, sh2, sc2, g2 = (a[:, None, :] for a in (sh1, sc1, g1, sh2, sc2, g2))
    h1, ln1 = layernorm_fwd(x)
    m1 = h1 * (1.0 + sc1) + sh1
    a, att = attention_fwd(p, f"blk{j}", m1, heads)
    x1 = x + g1 * a
    h2, ln2 = layernorm_fwd(x1)
    m2 = h2 * (1.0 + sc2) + sh2
    u = m2 @ p[f"blk{j}.fc1.W"] + p[f"blk{j}.fc1.b"]
    gu = gelu(u)
    f = gu @ p[f"blk{j}.fc2.W"] + p[f"blk{j}.fc2.b"]
    x2 = x1 + g2 * f
    return x2, (c_silu, (sh1, sc1, g1, sh2, sc2, g2), h1, ln1, att, a, h2, ln2, m2, u, gu, f)


def dit_block_bwd(p: Params, j: int, cache, dx2, grads: Params):
    """Returns ``(dx, dc_silu)``."""
    c_silu, (sh1, sc1, g1, sh2, sc2, g2), h1, ln1, att, a, h2, ln2, m2, u, gu, f = cache
    dx1 = dx2.copy()
    dg2 = (dx2 * f).sum(axis=1)
    df = dx2 * g2
    dgu = _lin_bwd(gu, p[f"blk{j}.fc2.W"], df, grads, f"blk{j}.fc2")
    du = dgu * gelu_grad(u)
    dm2 = _lin_bwd(m2, p[f"blk{j}.fc1.W"], du, grads, f"blk{j}.fc1")
    dsc2 = (dm2 * h2).sum(axis=1)
    dsh2 = dm2.sum(axis=1)
    dx1 += layernorm_bwd(ln2, dm2 * (1.0 + sc2))
    dg1 = (dx1 * a).sum(axis=1)
    dm1 = attention_bwd(p, f"blk{j}", att, dx1 * g1, grads, p.cfg.heads)
    dsc1 = (dm1 * h1).sum(axis=1)
    dsh1 = dm1.sum(axis=1)
    dx = dx1 + layernorm_bwd(ln1, dm1 * (1.0 + sc1))
    dmod = np.concatenate([dsh1, dsc1, dg1, dsh2, dsc2, dg2], axis=-1)
    dc_silu = _lin_bwd(c_silu, p[f"blk{j}.ada.W"], dmod, grads, f"blk{j}.ada")
    return dx, dc_silu


def _gelu_inplace(u):
    t = u * u
    t *= 0.044715
    t += 1.0
    t *= u
    t *= _GELU_C
    np.tanh(t, out=t)
    t += 1.0
    t *= u
    t *= 0.5
    return t


def _layernorm_inplace(x):
    y = x - x.mean(axis=-1, keepdims=True)
    var = np.einsum("...i,...i->...", y, y)
    var /= y.shape[-1]
    var += LN_EPS
    np.sqrt(var, out=var)
    y /= var[..., None]
    return y


def _mm(x, W, b):
    """(..., n) @ (n, m) + b as a single 2-D product."""
    out = x.reshape(-1, x.shape[-1]) @ W
    out += b
    return out.reshape(x.shape[:-1] + (W.shape[1],))


def dit_block_infer(p: Params, j: int, x, mods):
    """Forward-only block with fewer temporaries; matches ``dit_block_fwd`` to rounding."""
    B, g, d = x.shape
    heads = p.cfg.heads
    dh = d // heads
    sh1, sc1, g1, sh2, sc2, g2 = (a[:, None, :] for a in mods)
    m = _layernorm_inplace(x)
    m *= 1.0 + sc1
    m += sh1
    qkv = _mm(m, p[f"blk{j}.qkv.W"], p[f"blk{j}.qkv.b"]).reshape(B, g, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    s = qkv[0] @ qkv[1].transpose(0, 1, 3, 2)
    s *= 1.0 / math.sqrt(dh)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    o = (s @ qkv[2]).transpose(0, 2, 1, 3).reshape(B, g, d)
    a = _mm(o, p[f"blk{j}.proj.W"], p[f"blk{j}.proj.b"])
    a *= g1
    x = x + a
    m = _layernorm_inplace(x)
    m *= 1.0 + sc2
    m += sh2
    f = _mm(_gelu_inplace(_mm(m, p[f"blk{j}.fc1.W"], p[f"blk{j}.fc1.b"])), p[f"blk{j}.fc2.W"], p[f"blk{j}.fc2.b"])
    f *= g2
    x += f
    return x


def dit_block(tokens, cond, p: Params, j: int = 0) -> np.ndarray:
    """Single block on (g, d) or (B, g, d) tokens with a (d,) or (B, d) condition."""
    tokens = np.asarray(tokens, dtype=np.float64)
    single = tokens.ndim == 2
    x = tokens[None] if single else tokens
    c = np.atleast_2d(cond)
    out = dit_block_fwd(p, j, x, silu(c))[0]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------


def to_body(out, rot):
    """Rotate object-frame (v, omega) rows into each pose's body frame."""
    if rot is None:
        return out
    return np.concatenate(
        [np.einsum("bji,bj->bi", rot, out[:, :3]), np.einsum("bji,bj->bi", rot, out[:, 3:])], axis=-1
    )


class Batch:
    """Network inputs for B samples.

    ``xg`` (B, g, 3) gripper points, ``k`` (B,) levels, ``clouds`` a list of
    unique N_i x 3 clouds and ``obj_index`` (B,) pointing into it. ``rot``
    (B, 3, 3), optional, switches the output to the body frame.
    """

    def __init__(self, xg, k, clouds, obj_index, L: int, rot=None):
        self.xg = np.asarray(xg, dtype=np.float64)
        self.rot = None if rot is None else np.asarray(rot, dtype=np.float64)
        self.k = np.asarray(k, dtype=np.int64).reshape(-1)
        self.clouds = list(clouds)
        self.obj_index = np.asarray(obj_index, dtype=np.int64).reshape(-1)
        self.L = int(L)
        if self.xg.ndim != 3 or self.xg.shape[0] != len(self.k) or len(self.obj_index) != len(self.k):
            raise InvalidArgument("batch arrays disagree on the batch size")
        if np.any(self.k < 0) or np.any(self.k >= self.L):
            raise InvalidArgument(f"noise level outside [0, {self.L})")

    def __len__(self) -> int:
        return len(self.k)


def forward_fwd(p: Params, batch: Batch, object_features=None):
    cfg = p.cfg
    if object_features is None:
        obj = [encode_object_fwd(p, c) for c in batch.clouds]
        F = np.stack([o[0] for o in obj])
        obj_caches = [o[1] for o in obj]
    else:
        F = np.asarray(object_features)
        obj_caches = None
    e = sinusoidal_embedding(batch.k, cfg.d)
    c = F[batch.obj_index] + e @ p["step.W"] + p["step.b"]
    cs = silu(c)
    tok, gcache = encode_gripper_fwd(p, batch.xg)
    x = tok + p["pos"] if cfg.token_pos_embed else tok
    blocks = []
    if cfg.backbone == "dit":
        for j in range(cfg.D):
            x, bc = dit_block_fwd(p, j, x, cs)
            blocks.append(bc)
        hidden = x.mean(axis=1)
    else:
        B = len(batch)
        h = np.concatenate([x.reshape(B, -1), c], axis=-1)
        for j in range(cfg.D + 1):
            z = h @ p[f"mlp.l{j}.W"] + p[f"mlp.l{j}.b"]
            blocks.append((h, z))
            h = silu(z)
        hidden = h
    out = to_body(hidden @ p["dec.W"] + p["dec.b"], batch.rot)
    cache = (batch, obj_caches, e, c, cs, gcache, x, blocks, hidden)
    return out, cache


def forward_bwd(p: Params, cache, dout, grads: Params):
    batch, obj_caches, e, c, cs, gcache, x, blocks, hidden = cache
    cfg = p.cfg
    if batch.rot is not None:
        dout = np.concatenate(
            [np.einsum("bij,bj->bi", batch.rot, dout[:, :3]), np.einsum("bij,bj->bi", batch.rot, dout[:, 3:])], axis=-1
        )
    dhidden = _lin_bwd(hidden, p["dec.W"], dout, grads, "dec")
    if cfg.backbone == "dit":
        g = x.shape[1]
        dx = np.repeat(dhidden[:, None, :] / g, g, axis=1)
        dcs = np.zeros_like(cs)
        for j in reversed(range(cfg.D)):
            dx, dcs_j = dit_block_bwd(p, j, blocks[j], dx, grads)
            dcs += dcs_j
        dc = dcs * silu_grad(c)
    else:
        dh = dhidden
        for j in reversed(range(cfg.D + 1)):
            h, z = blocks[j]
            dz = dh * silu_grad(z)
            dh = _lin_bwd(h, p[f"mlp.l{j}.W"], dz, grads, f"mlp.l{j}")
        B = len(batch)
        gd = cfg.g * cfg.d
        dx = dh[:, :gd].reshape(B, cfg.g, cfg.d)
        dc = dh[:, gd:]
    if cfg.token_pos_embed:
        grads["pos"][...] += dx.sum(axis=0)
    encode_gripper_bwd(p, gcache, dx, grads)
    _lin_bwd(e, p["step.W"], dc, grads, "step")
    if obj_caches is not None:
        for u, oc in enumerate(obj_caches):
            mask = batch.obj_index == u
            if np.any(mask):
                encode_object_bwd(p, oc, dc[mask].sum(axis=0), grads)


def forward_batch(p: Params, batch: Batch, object_features=None) -> np.ndarray:
    return forward_fwd(p, batch, object_features)[0]


def forward_with_gradients(p: Params, batch: Batch, targets, weights=None):
    """Weighted mean squared error ``mean_b w_b * ||out_b - target_b||^2`` and its gradient."""
    out, cache = forward_fwd(p, batch)
    targets = np.asarray(targets, dtype=np.float64)
    w = np.ones(len(batch)) if weights is None else np.asarray(weights, dtype=np.float64)
    r = out - targets
    per = w * (r * r).sum(axis=-1)
    bad = ~np.isfinite(per)
    if np.any(bad):
        raise NumericalFailure(f"non-finite loss at batch index {int(np.flatnonzero(bad)[0])}",
                               batch=int(np.flatnonzero(bad)[0]))
    loss = float(per.mean())
    grads = p.zeros_like()
    forward_bwd(p, cache, 2.0 * r * (w / len(batch))[:, None], grads)
    return loss, grads


def object_features(p: Params, clouds) -> np.ndarray:
    return np.stack([encode_object(c, p) for c in clouds])


def condition(p: Params, f_o, k) -> np.ndarray:
    """Condition vector(s) ``f_o + step(k)``; ``f_o`` (d,) or (B, d)."""
    return np.asarray(f_o) + sinusoidal_embedding(k, p.cfg.d) @ p["step.W"] + p["step.b"]


def forward_tokens(p: Params, xg, cond, mods=None, rot=None) -> np.ndarray:
    """Inference path with a precomputed condition (broadcast over the batch)."""
    cfg = p.cfg
    c = np.atleast_2d(cond)
    x = encode_gripper_fwd(p, xg)[0]
    if cfg.token_pos_embed:
        x = x + p["pos"]
    if cfg.backbone == "dit":
        if mods is None:
            mods = precompute_modulations(p, c)
        for j in range(cfg.D):
            x = dit_block_infer(p, j, x, mods[j])
        hidden = x.mean(axis=1)
    else:
        B = x.shape[0]
        h = np.concatenate([x.reshape(B, -1), np.broadcast_to(c, (B, c.shape[-1]))], axis=-1)
        for j in range(cfg.D + 1):
            h = silu(h @ p[f"mlp.l{j}.W"] + p[f"mlp.l{j}.b"])
        hidden = h
    return to_body(hidden @ p["dec.W"] + p["dec.b"], rot)


def precompute_modulations(p: Params, cond):
    if p.cfg.backbone != "dit":
        return None
    cs = silu(np.atleast_2d(cond))
    return [modulation(p, j, cs) for j in range(p.cfg.D)]
