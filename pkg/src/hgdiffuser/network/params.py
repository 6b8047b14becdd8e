"""Network configuration and the flat parameter vector with named views."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidArgument, ShapeMismatch


@dataclass(frozen=True)
class NetworkConfig:
    d: int = 128
    g: int = 6
    D: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    pointnet_widths: tuple[int, ...] = (64, 128, 128)
    backbone: str = "dit"  # "dit" or "mlp" (the no-attention ablation)
    token_pos_embed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pointnet_widths", tuple(int(w) for w in self.pointnet_widths))
        if self.d % self.heads != 0:
            raise InvalidArgument(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % 2 != 0:
            raise InvalidArgument("d must be even for the sinusoidal step embedding")
        if self.D < 1 or self.g < 2:
            raise InvalidArgument("need D >= 1 and g >= 2")
        if not self.pointnet_widths or self.pointnet_widths[-1] != self.d:
            raise InvalidArgument("last pointnet width must equal d")
        if self.backbone not in ("dit", "mlp"):
            raise InvalidArgument(f"unknown backbone {self.backbone!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pointnet_widths"] = list(self.pointnet_widths)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{k: (tuple(v) if k == "pointnet_widths" else v) for k, v in d.items()})


def param_layout(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init) triples; init is "fan_in" or "zero"."""
    d = cfg.d
    out: list[tuple[str, tuple[int, ...], str]] = []

    def lin(name, n_in, n_out, init="fan_in"):
        out.append((f"{name}.W", (n_in, n_out), init))
        out.append((f"{name}.b", (n_out,), init))

    prev = 3
    for i, w in enumerate(cfg.pointnet_widths):
        lin(f"obj.l{i}", prev, w)
        prev = w
    lin("grip.l0", 3, d)
    lin("grip.l1", d, d)
    lin("step", d, d)
    if cfg.token_pos_embed:
        out.append(("pos", (cfg.g, d), "fan_in"))
    if cfg.backbone == "dit":
        hidden = cfg.mlp_ratio * d
        for j in range(cfg.D):
            lin(f"blk{j}.ada", d, 6 * d, "zero")
            lin(f"blk{j}.qkv", d, 3 * d)
            lin(f"blk{j}.proj", d, d)
            lin(f"blk{j}.fc1", d, hidden)
            lin(f"blk{j}.fc2", hidden, d)
        lin("dec", d, 6)
    else:
        hidden = cfg.mlp_ratio * d
        lin("mlp.l0", (cfg.g + 1) * d, hidden)
        for j in range(cfg.D):
            lin(f"mlp.l{j + 1}", hidden, hidden)
        lin("dec", hidden, 6)
    return out


def param_count(cfg: NetworkConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_layout(cfg))


class Params:
    """Flat float64 vector; ``p[name]`` is a writable view into it."""

    def __init__(self, cfg: NetworkConfig, flat: np.ndarray | None = None, seed: int | None = None):
        self.cfg = cfg
        self.seed = seed
        self._index: dict[str, tuple[int, tuple[int, ...]]] = {}
        off = 0
        for name, shape, _ in param_layout(cfg):
            self._index[name] = (off, shape)
            off += int(np.prod(shape))
        self.size = off
        if flat is None:
            flat = np.zeros(off)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (off,):
            raise ShapeMismatch(f"parameter vector has {flat.size} entries, config needs {off}")
        self.flat = flat

    def __getitem__(self, name: str) -> np.ndarray:
        off, shape = self._index[name]
        return self.flat[off : off + int(np.prod(shape))].reshape(shape)

    def names(self) -> list[str]:
        return list(self._index)

    def slice(self, name: str) -> slice:
        off, shape = self._index[name]
        return slice(off, off + int(np.prod(shape)))

    def zeros_like(self) -> "Params":
        return Params(self.cfg, np.zeros(self.size))

    def copy(self) -> "Params":
        return Params(self.cfg, self.flat.copy(), self.seed)

    def astype(self, dtype) -> "Params":
        """Copy in another float dtype, for inference only; training stays in float64."""
        out = Params(self.cfg, self.flat, self.seed)
        out.flat = self.flat.astype(dtype)
        return out


def init_params(cfg: NetworkConfig, rng: np.random.Generator | int) -> Params:
    """Fan-in scaled uniform init; adaLN modulation tables start at zero."""
    seed = rng if isinstance(rng, int) else None
    rng = np.random.default_rng(rng) if isinstance(rng, int) else rng
    p = Params(cfg, seed=seed)
    fan_in: dict[str, int] = {}
    for name, shape, init in param_layout(cfg):
        if name.endswith(".W"):
            fan_in[name[:-2]] = shape[0]
    for name, shape, init in param_layout(cfg):
        view = p[name]
        if init == "zero":
            continue
        base = name.rsplit(".", 1)[0]
        n_in = fan_in.get(base, shape[-1])
        bound = 1.0 / np.sqrt(n_in)
        view[...] = rng.uniform(-bound, bound, size=shape)
    return p
