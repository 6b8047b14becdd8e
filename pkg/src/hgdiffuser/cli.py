"""Command-line entry points.

Exit codes: 0 success, 2 usage or configuration error, 3 infeasible data
(for example a demonstration without contacts), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from .constraints import DemoConstraint, extract_constraints, loss_total
from .dataset import generate_dataset, read_dataset, read_demo, read_object, write_dataset, write_ply
from .diffusion import (
    NoiseSchedule,
    load_training_state,
    sample_guided,
    sample_unguided,
    save_training_state,
    train,
)
from .errors import ConfigError, HGDError, InvalidArgument
from .evaluation.benchmark import BenchConfig, run_benchmark, write_csv, write_summary
from .evaluation.quality import constraint_satisfied, force_closure
from .gripper import GripperSpec, gripper_points_arr
from .network.checkpoint import load_params
from .scenes import KINDS

log = logging.getLogger("hgdiffuser")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _threads(n: int | None):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _effective(args, overrides: dict | None = None):
    return config_mod.load_config(args.config, args.preset, overrides)


def _echo(cfg, out_dir: Path, name: str = "effective_config.yaml") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / name)


def _require_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} directory not found: {p}")
    return p


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _load_model(ckpt: str, cfg):
    """Params, and the schedule with the trained noise levels and configured step rule."""
    path = _require_file(ckpt, "checkpoint")
    params, meta = load_params(path)
    sched = cfg.schedule
    trained = meta.get("schedule")
    if trained:
        sched = replace(sched, L=trained["L"], sigma_min=trained["sigma_min"], sigma_max=trained["sigma_max"])
    gripper = GripperSpec.from_dict(meta["gripper"]) if "gripper" in meta else cfg.gripper
    return params, sched, gripper


def _pose_record(h, obj=None, gripper=None, mu=None, constraint=None, guidance=None) -> dict:
    rec = {"pose": h.to_json()}
    if constraint is not None:
        rec["loss_total"] = loss_total(h, constraint, guidance)
        rec["constraint_ok"] = bool(constraint_satisfied(h, constraint))
    if obj is not None:
        fc = force_closure(h, obj.surface, obj.gripper(gripper), mu)
        rec["force_closure_ok"] = bool(fc.ok)
        rec["force_closure_reason"] = fc.reason
    return rec


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    data = {}
    if args.objects:
        data["kinds"] = list(args.objects)
    if args.variants is not None:
        data["variants"] = args.variants
    if args.grasps is not None:
        data["grasps_per_object"] = args.grasps
    if data:
        overrides["data"] = data
    cfg = _effective(args, overrides)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigError(f"output directory {out} exists and is not empty (use --force)")
    d = cfg.data
    ds = generate_dataset(cfg.seed, d.kinds, d.variants, d.grasps_per_object, d.n_points, cfg.gripper, d.mu, cfg.thresholds)
    write_dataset(out, ds)
    _echo(cfg, out)
    if args.ply:
        for o in ds.objects:
            write_ply(out / "objects" / f"{o.object_id}.ply", o.cloud.points)
    log.info("wrote %d objects, %d grasps, %d demos to %s", len(ds.objects), ds.n_grasps(), len(ds.demos), out)
    return 0


def cmd_train(args) -> int:
    overrides: dict = {}
    train_over = {}
    if args.epochs is not None:
        train_over["epochs"] = args.epochs
    if args.seed is not None:
        train_over["seed"] = args.seed
    if args.checkpoint_every is not None:
        train_over["checkpoint_every"] = args.checkpoint_every
    if train_over:
        overrides["train"] = train_over
    cfg = _effective(args, overrides)
    ds = read_dataset(_require_dir(args.data, "data"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    resume = None
    if args.resume:
        resume = load_training_state(_require_file(args.resume, "checkpoint"))
        if resume.params.cfg != cfg.network:
            raise ConfigError("resume checkpoint network config differs from the effective config")
        log.info("resuming from epoch %d", resume.epoch)
    extra = {"gripper": ds.gripper.to_dict(), "data_seed": ds.seed}
    curve_path = out.with_name(out.name + ".loss.csv")

    def on_epoch(epoch, loss, state):
        log.info("epoch %d/%d loss %.6f", epoch, cfg.train.epochs, loss)
        every = cfg.train.checkpoint_every
        if every and epoch % every == 0 and epoch < cfg.train.epochs:
            save_training_state(out.with_name(f"{out.name}.e{epoch:04d}"), state, cfg.schedule, cfg.train, extra)

    state = train(ds, cfg.network, cfg.schedule, cfg.train, resume, on_epoch)
    save_training_state(out, state, cfg.schedule, cfg.train, extra)
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(state.losses, 1):
            w.writerow([i, repr(float(loss))])
    from .plotting import plot_loss_curve

    if state.losses:
        plot_loss_curve(state.losses, out.with_name(out.name + ".loss.png"))
    _echo(cfg, out.parent, out.name + ".config.yaml")
    return 0


def cmd_sample(args) -> int:
    overrides: dict = {}
    if args.alpha is not None:
        overrides["guidance"] = {"alpha": args.alpha}
    cfg = _effective(args, overrides)
    params, sched, gripper = _load_model(args.ckpt, cfg)
    obj = read_object(_require_file(args.object, "object file"))
    constraint = None
    if args.demo:
        demo = read_demo(_require_file(args.demo, "demo file"))
        if demo.object_id != obj.object_id:
            raise InvalidArgument(
                f"demo belongs to object {demo.object_id!r} but --object is {obj.object_id!r}; frames differ"
            )
        constraint = extract_constraints(demo, obj.cloud, thresholds=cfg.thresholds)
    seed = cfg.seed if args.seed is None else args.seed
    if constraint is None:
        res = sample_unguided(obj.cloud, params, sched, seed, args.n, gripper, trajectory=bool(args.trajectory))
    else:
        res = sample_guided(obj.cloud, params, sched, constraint, cfg.guidance, seed, args.n, gripper,
                            trajectory=bool(args.trajectory))
    poses = res.poses()
    mu = cfg.data.mu
    records = [_pose_record(h, obj, gripper, mu, constraint, cfg.guidance) for h in poses]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"object_id": obj.object_id, "seed": seed, "samples": records}, indent=1) + "\n")
    if args.trajectory:
        with open(args.trajectory, "w") as fh:
            for level, q, t in res.trajectory:
                fh.write(json.dumps({"level": level, "q": q.tolist(), "t": t.tolist()}) + "\n")
    canon = obj.gripper(gripper).canonical_points
    xg = gripper_points_arr(res.q, res.t, canon)
    if args.ply:
        pts = np.concatenate([obj.cloud.points, xg.reshape(-1, 3)])
        colors = np.concatenate([np.full((len(obj.cloud.points), 3), 160), np.tile([220, 40, 40], (xg.shape[0] * xg.shape[1], 1))])
        write_ply(args.ply, pts, colors)
    if args.plot:
        from .plotting import plot_grasps

        plot_grasps(obj.cloud.points, list(xg), args.plot)
    _echo(cfg, out.parent, out.name + ".config.yaml")
    return 0


def cmd_extract(args) -> int:
    cfg = _effective(args)
    obj = read_object(_require_file(args.object, "object file"))
    demo = read_demo(_require_file(args.demo, "demo file"))
    if demo.object_id != obj.object_id:
        raise InvalidArgument(f"demo belongs to object {demo.object_id!r}, not {obj.object_id!r}")
    c = extract_constraints(demo, obj.cloud, args.delta, cfg.thresholds)
    text = json.dumps(c.to_json(), indent=1) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        _echo(cfg, out.parent, out.name + ".config.yaml")
    else:
        sys.stdout.write(text)
    return 0


def _bench_common(args, cfg, bench: BenchConfig, out: Path, stem: str) -> int:
    params, sched, _ = _load_model(args.ckpt, cfg)
    ds = read_dataset(_require_dir(args.data, "data"))
    out.mkdir(parents=True, exist_ok=True)
    reports = run_benchmark(ds, params, sched, cfg.guidance, bench, cfg.thresholds, progress=log.info)
    write_csv(out / f"{stem}.csv", reports)
    write_summary(out / f"{stem}.json", reports, {"checkpoint": str(args.ckpt), "data": str(args.data)})
    from .plotting import plot_benchmark

    plot_benchmark([r.summary() for r in reports], out / f"{stem}.png")
    _echo(replace(cfg, bench=bench), out)
    for r in reports:
        s = r.summary()
        print(f"{r.label:>16}  success {s['success_rate']:6.2f}%  time {s['time_mean_s']:.4f}s +- {s['time_std_s']:.4f}s")
    return 0


def _bench_overrides(args) -> dict:
    bench = {}
    if args.seeds is not None:
        bench["seeds"] = args.seeds
    if args.seed is not None:
        bench["base_seed"] = args.seed
    if getattr(args, "objects_per_kind", None) is not None:
        bench["objects_per_kind"] = args.objects_per_kind
    return {"bench": bench} if bench else {}


def cmd_eval(args) -> int:
    cfg = _effective(args, _bench_overrides(args))
    if args.method == "guided":
        bench = replace(cfg.bench, ts_sizes=(), guided_sizes=(args.n_samples,))
    else:
        bench = replace(cfg.bench, ts_sizes=(args.n_samples,), guided_sizes=())
    return _bench_common(args, cfg, bench, Path(args.out), "eval")


def cmd_bench(args) -> int:
    cfg = _effective(args, _bench_overrides(args))
    return _bench_common(args, cfg, cfg.bench, Path(args.out), "bench")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgdiffuser", description="Guided SE(3) grasp diffusion at desk scale.")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--preset", default="desk", choices=sorted(config_mod.PRESETS))
        p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
        if seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen-data", help="generate objects, oracle grasps and demonstrations")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--objects", nargs="+", metavar="KIND", help=f"object kinds ({', '.join(KINDS)})")
    p.add_argument("--variants", type=int)
    p.add_argument("--grasps", type=int, help="grasps per object")
    p.add_argument("--ply", action="store_true", help="also export clouds as ASCII PLY")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the score network")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw grasps, guided when --demo is given")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--object", required=True, help="objects/<id>.json")
    p.add_argument("--demo", help="demos/<id>__<task>.json")
    p.add_argument("--alpha", type=float)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--ply", help="write cloud + gripper points as PLY")
    p.add_argument("--plot", help="write a PNG of the samples")
    p.add_argument("--trajectory", help="write per-level states as NDJSON")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("extract-constraints", help="contact centroid and wrist orientation from a demo")
    common(p, seed=False)
    p.add_argument("--demo", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--delta", type=float, help="contact distance in meters")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="evaluate one method")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=["guided", "two-stage"])
    p.add_argument("--n-samples", type=int, default=1)
    p.add_argument("--seeds", type=int)
    p.add_argument("--objects-per-kind", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="two-stage vs guided sampling benchmark")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--objects-per-kind", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    threads = getattr(args, "threads", None)
    if threads is None and args.command in ("bench", "eval"):
        threads = 1  # timing protocol runs single-threaded unless asked otherwise
    try:
        with _threads(threads):
            return args.func(args)
    except HGDError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
