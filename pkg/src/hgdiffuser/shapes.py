"""Analytic parametric surfaces: area-weighted sampling, signed distance, line crossings.

All shapes are axis-aligned in their own frame. ``transformed(shift, scale)``
returns the same surface expressed in the frame ``p' = (p - shift) / scale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_AXES = np.eye(3)


@dataclass(frozen=True)
class Crossing:
    s: float
    normal: np.ndarray


class Surface:
    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sdf(self, p) -> np.ndarray:
        raise NotImplementedError

    def crossings(self, origin, direction) -> list[Crossing]:
        """All surface crossings of the infinite line ``origin + s * direction``, sorted by ``s``."""
        raise NotImplementedError

    def transformed(self, shift, scale: float) -> "Surface":
        raise NotImplementedError

    def area(self) -> float:
        raise NotImplementedError


def _intervals_to_crossings(intervals) -> list[Crossing]:
    """Merge (t_in, n_in, t_out, n_out) solid intervals into boundary crossings."""
    intervals = sorted(intervals, key=lambda iv: iv[0])
    merged: list[list] = []
    for iv in intervals:
        if merged and iv[0] <= merged[-1][2]:
            if iv[2] > merged[-1][2]:
                merged[-1][2], merged[-1][3] = iv[2], iv[3]
        else:
            merged.append(list(iv))
    out = []
    for t0, n0, t1, n1 in merged:
        out.append(Crossing(float(t0), n0))
        out.append(Crossing(float(t1), n1))
    return out


class Box(Surface):
    def __init__(self, center, half_extents):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.half = np.asarray(half_extents, dtype=np.float64).reshape(3)

    def face_areas(self) -> np.ndarray:
        a, b, c = self.half * 2
        # order: -x, +x, -y, +y, -z, +z
        return np.array([b * c, b * c, a * c, a * c, a * b, a * b])

    def area(self) -> float:
        return float(self.face_areas().sum())

    def sample(self, n, rng):
        areas = self.face_areas()
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, -1.0, 1.0)
        u[np.arange(n), axis] = sign
        pts = self.center + u * self.half
        normals = np.zeros((n, 3))
        normals[np.arange(n), axis] = sign
        return pts, normals

    def sdf(self, p):
        q = np.abs(np.asarray(p, dtype=np.float64) - self.center) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def interval(self, origin, direction):
        o = np.asarray(origin, dtype=np.float64) - self.center
        d = np.asarray(direction, dtype=np.float64)
        t_in, t_out = -np.inf, np.inf
        ax_in = ax_out = -1
        for i in range(3):
            if abs(d[i]) < 1e-15:
                if abs(o[i]) > self.half[i]:
                    return None
                continue
            t1 = (-self.half[i] - o[i]) / d[i]
            t2 = (self.half[i] - o[i]) / d[i]
            lo, hi = min(t1, t2), max(t1, t2)
            if lo > t_in:
                t_in, ax_in = lo, i
            if hi < t_out:
                t_out, ax_out = hi, i
        if t_in >= t_out or ax_in < 0:
            return None
        n_in = -np.sign(d[ax_in]) * _AXES[ax_in]
        n_out = np.sign(d[ax_out]) * _AXES[ax_out]
        return t_in, n_in, t_out, n_out

    def crossings(self, origin, direction):
        iv = self.interval(origin, direction)
        return [] if iv is None else _intervals_to_crossings([iv])

    def transformed(self, shift, scale):
        return Box((self.center - np.asarray(shift)) / scale, self.half / scale)


class Cylinder(Surface):
    """Axis along ``z``."""

    def __init__(self, center, radius: float, half_height: float):
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.radius = float(radius)
        self.half_height = float(half_height)

    def part_areas(self) -> np.ndarray:
        side = 2 * np.pi * self.radius * 2 * self.half_height
        cap = np.pi * self.radius**2
        return np.array([side, cap, cap])

    def area(self) -> float:
        return float(self.part_areas().sum())

    def sample(self, n, rng):
        areas = self.part_areas()
        part = rng.choice(3, size=n, p=areas / areas.sum())
        phi = rng.uniform(0.0, 2 * np.pi, size=n)
        z = rng.uniform(-self.half_height, self.half_height, size=n)
        rad = self.radius * np.sqrt(rng.uniform(0.0, 1.0, size=n))
        c, s = np.cos(phi), np.sin(phi)
        pts = np.empty((n, 3))
        normals = np.zeros((n, 3))
        side = part == 0
        pts[side] = np.stack([self.radius * c[side], self.radius * s[side], z[side]], axis=-1)
        normals[side] = np.stack([c[side], s[side], np.zeros(side.sum())], axis=-1)
        for k, sign in ((1, 1.0), (2, -1.0)):
            m = part == k
            pts[m] = np.stack(
                [rad[m] * c[m], rad[m] * s[m], np.full(m.sum(), sign * self.half_height)], axis=-1
            )
            normals[m, 2] = sign
        return pts + self.center, normals

    def sdf(self, p):
        q = np.asarray(p, dtype=np.float64) - self.center
        dr = np.linalg.norm(q[..., :2], axis=-1) - self.radius
        dz = np.abs(q[..., 2]) - self.half_height
        d = np.stack([dr, dz], axis=-1)
        return np.minimum(d.max(axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)

    def interval(self, origin, direction):
        o = np.asarray(origin, dtype=np.float64) - self.center
        d = np.asarray(direction, dtype=np.float64)
        # radial slab
        a = d[0] ** 2 + d[1] ** 2
        b = 2 * (o[0] * d[0] + o[1] * d[1])
        c = o[0] ** 2 + o[1] ** 2 - self.radius**2
        if a < 1e-15:
            if c > 0:
                return None
            r_in, r_out = -np.inf, np.inf
        else:
            disc = b * b - 4 * a * c
            if disc <= 0:
                return None
            sq = np.sqrt(disc)
            r_in, r_out = (-b - sq) / (2 * a), (-b + sq) / (2 * a)
        # axial slab
        if abs(d[2]) < 1e-15:
            if abs(o[2]) > self.half_height:
                return None
            z_in, z_out = -np.inf, np.inf
        else:
            t1 = (-self.half_height - o[2]) / d[2]
            t2 = (self.half_height - o[2]) / d[2]
            z_in, z_out = min(t1, t2), max(t1, t2)
        t_in, t_out = max(r_in, z_in), min(r_out, z_out)
        if t_in >= t_out:
            return None

        def normal_at(t, radial: bool):
            if radial:
                p = o + t * d
                n = np.array([p[0], p[1], 0.0])
                return n / np.linalg.norm(n)
            p = o + t * d
            return np.array([0.0, 0.0, np.sign(p[2])])

        n_in = normal_at(t_in, r_in >= z_in)
        n_out = normal_at(t_out, r_out <= z_out)
        return t_in, n_in, t_out, n_out

    def crossings(self, origin, direction):
        iv = self.interval(origin, direction)
        return [] if iv is None else _intervals_to_crossings([iv])

    def transformed(self, shift, scale):
        return Cylinder((self.center - np.asarray(shift)) / scale, self.radius / scale, self.half_height / scale)


class Union(Surface):
    """Union of boxes; used for the hammer-like L-shape."""

    def __init__(self, parts):
        self.parts = list(parts)

    def area(self) -> float:
        # exposed area, estimated from rejection rate is not needed; report the sum
        return float(sum(p.area() for p in self.parts))

    def _inside_other(self, pts, i):
        inside = np.zeros(len(pts), dtype=bool)
        for j, other in enumerate(self.parts):
            if j != i:
                inside |= other.sdf(pts) < -1e-12
        return inside

    def sample(self, n, rng):
        areas = np.array([p.area() for p in self.parts])
        pts_out, nrm_out = [], []
        have = 0
        while have < n:
            m = 2 * (n - have) + 16
            which = rng.choice(len(self.parts), size=m, p=areas / areas.sum())
            for i, part in enumerate(self.parts):
                k = int((which == i).sum())
                if k == 0:
                    continue
                p, nr = part.sample(k, rng)
                keep = ~self._inside_other(p, i)
                pts_out.append(p[keep])
                nrm_out.append(nr[keep])
                have += int(keep.sum())
        pts = np.concatenate(pts_out)
        nrm = np.concatenate(nrm_out)
        # interleave deterministically so truncation does not bias toward one part
        order = rng.permutation(len(pts))[:n]
        return pts[order], nrm[order]

    def sdf(self, p):
        return np.min(np.stack([part.sdf(p) for part in self.parts]), axis=0)

    def crossings(self, origin, direction):
        ivs = [iv for part in self.parts if (iv := part.interval(origin, direction)) is not None]
        return _intervals_to_crossings(ivs)

    def transformed(self, shift, scale):
        return Union([p.transformed(shift, scale) for p in self.parts])
