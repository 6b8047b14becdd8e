"""Transformer backbone vs. a plain MLP on concatenated tokens, paired by seed."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..diffusion import NoiseSchedule, TrainConfig, sample_unguided, train
from ..network.params import NetworkConfig
from .quality import force_closure


@dataclass
class AblationRow:
    backbone: str
    seed: int
    force_closure_rate: float
    final_loss: float


def force_closure_rate(dataset, params, schedule: NoiseSchedule, n_samples: int, seed: int, objects=None) -> float:
    """Percent of unguided samples passing force closure, pooled over ``objects``."""
    objs = dataset.objects if objects is None else [dataset.object(o) for o in objects]
    ok = []
    for i, obj in enumerate(objs):
        res = sample_unguided(obj.cloud, params, schedule, seed=seed * 1000 + i, n=n_samples, gripper=dataset.gripper)
        spec = obj.gripper(dataset.gripper)
        ok += [force_closure(h, obj.surface, spec, dataset.mu).ok for h in res.poses()]
    return 100.0 * float(np.mean(ok))


def ablation_backbone(dataset, net: NetworkConfig, schedule: NoiseSchedule, train_cfg: TrainConfig,
                      seeds=(0, 1, 2), n_samples: int = 100, objects=None, progress=None) -> list[AblationRow]:
    """Train the transformer and MLP variants per seed and score unguided samples."""
    rows = []
    for seed in seeds:
        for backbone in ("dit", "mlp"):
            cfg = replace(net, backbone=backbone)
            result = train(dataset, cfg, schedule, replace(train_cfg, seed=seed))
            rate = force_closure_rate(dataset, result.params, schedule, n_samples, seed, objects)
            rows.append(AblationRow(backbone, seed, rate, result.losses[-1] if result.losses else float("nan")))
            if progress is not None:
                progress(f"seed {seed} {backbone}: force closure {rate:.1f}%")
    return rows


def mean_rates(rows: list[AblationRow]) -> dict[str, float]:
    out: dict[str, list[float]] = {}
    for r in rows:
        out.setdefault(r.backbone, []).append(r.force_closure_rate)
    return {k: float(np.mean(v)) for k, v in out.items()}
