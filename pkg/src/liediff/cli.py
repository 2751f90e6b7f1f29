"""Command-line front end for verification, data, training, and evaluation.

Subcommands:

- ``verify``: run the fixed math self-check suite and print one line per
  property (see ``verify_suite`` for the property list).
- ``gen-data``: write a dataset file; ``--kind orbit`` (the default) fixes a
  canonical pose per shape and emits symmetry-equivalents of it, which is
  the multimodal conditional distribution the models train on, while
  ``--kind uniform`` draws fully random poses.
- ``train``: run score matching on a dataset file into a run directory.
- ``sample``: draw poses from a checkpoint for every shape in a dataset
  file, writing a samples file that carries the ground truth along.
- ``eval``: per-shape spread, translation error, and mode coverage of a
  samples file.
- ``ablate-steps``: re-sample a checkpoint at several schedule lengths and
  write ``score_kind,steps,shape,spread_deg,trans_err`` rows.
- ``export-viz``: Euler-angle CSV for Mollweide plotting.

Exit codes: 0 on success, 1 when a check or run fails, 2 on usage errors.

Every subcommand takes a mandatory ``--seed``; there is no wall-clock
default anywhere, so reruns are byte-for-byte reproducible. A relative
``--run-dir`` is placed under ``$LIEDIFF_RUN_ROOT`` when that variable is
set. Commands that own a run directory write their effective configuration
into it before doing any work.

Train configs may come from a ``key = value`` file (``#`` comments); keys
are the TrainConfig field names. Precedence: built-in defaults, then the
config file, then explicit flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import diffusion, distributions, eval_viz, lie_core, scores, symsol_synth
from .diffusion import (
    NoiseSchedule,
    TrainConfig,
    subsample_schedule,
    truncate_schedule,
)
from .lie_core import ParamMode, RigidTransform
from .score_net import ScoreNetParams, load_params
from .symsol_synth import DatasetHeader, load_dataset, save_dataset

RUN_ROOT_ENV = "LIEDIFF_RUN_ROOT"


# ---------------------------------------------------------------------------
# verification suite

@dataclass(frozen=True)
class VerifyRow:
    """One property check: value compared against threshold per ``require``."""

    name: str
    value: float
    threshold: float
    require: str  # "max_below": value <= threshold; "min_above": value > threshold
    passed: bool


def _row(name: str, value: float, threshold: float, require: str = "max_below"
         ) -> VerifyRow:
    value = float(value)
    passed = value <= threshold if require == "max_below" else value > threshold
    return VerifyRow(name, value, threshold, require, passed)


def _random_tangent(rng, dim: int, max_angle: float = 3.0) -> np.ndarray:
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    phi = direction * rng.uniform(1e-5, max_angle)
    if dim == 3:
        return phi
    return np.concatenate([rng.uniform(-1.0, 1.0, 3), phi])


def _chi_mean(dim: int, sigma: float) -> float:
    return sigma * math.sqrt(2.0) * math.gamma((dim + 1) / 2) / math.gamma(dim / 2)


def verify_suite(seed: int) -> list[VerifyRow]:
    """Execute the fixed self-check suite; one report row per property.

    Rows, in order (all module calls go through module attributes so a
    deliberately injected fault is picked up):

    1.  jl_fixed_point        max |J_l(phi) phi - phi|,      1000 draws, <= 1e-9
    2.  jr_fixed_point        max |J_r(phi) phi - phi|,      1000 draws, <= 1e-9
    3.  so3_left_right_transpose  max |J_l - J_r^T|,         1000 draws, <= 1e-10
    4.  se3_left_right_gap    min |J_r^-T - J_l^-1|_F,        100 draws, > 1e-6
    5.  q_matrix_parity       max |Q(-rho,-phi)^T - Q(rho,phi)|, 1000,   <= 1e-10
    6.  exp_log_roundtrip_so3   max |Log(Exp(tau)) - tau|,   1000 draws, <= 1e-9
    7.  exp_log_roundtrip_r3so3 same on the product group,   1000 draws, <= 1e-9
    8.  exp_log_roundtrip_se3   same with translation coupling, 1000,    <= 1e-9
    9.  simplified_score_matches_closed  max gap, SO3 and R3SO3, 500,    <= 1e-10
    10. so3_score_matches_oracle  max rel err vs central differences, 50, <= 1e-4
    11. se3_score_matches_oracle  max rel err vs central differences, 50, <= 1e-4
    12. igso3_normalization   |integral of angle marginal - 1| at eps 0.5, <= 1e-3
    13. concentrated_construction  max |Log(X^-1 Y) - z|, 2000 draws,     <= 1e-9
    14. concentrated_radius   rel err of mean |Log(X^-1 Y)| vs chi mean,  <= 0.05
    """
    rng = np.random.default_rng(seed)
    rows: list[VerifyRow] = []

    err_l = err_r = err_t = 0.0
    for _ in range(1000):
        phi = _random_tangent(rng, 3)
        jl = lie_core.so3_jacobian(phi, "left")
        jr = lie_core.so3_jacobian(phi, "right")
        err_l = max(err_l, float(np.max(np.abs(jl @ phi - phi))))
        err_r = max(err_r, float(np.max(np.abs(jr @ phi - phi))))
        err_t = max(err_t, float(np.max(np.abs(jl - jr.T))))
    rows.append(_row("jl_fixed_point", err_l, 1e-9))
    rows.append(_row("jr_fixed_point", err_r, 1e-9))
    rows.append(_row("so3_left_right_transpose", err_t, 1e-10))

    gap = math.inf
    for _ in range(100):
        tau = np.concatenate([
            rng.uniform(-1.0, 1.0, 3),
            rng.standard_normal(3) * 0.8 + np.array([0.5, 0.0, 0.0]),
        ])
        left = lie_core.se3_jacobian_inv(tau, "left_inv")
        right_t = lie_core.se3_jacobian_inv(tau, "right_inv_transpose")
        gap = min(gap, float(np.linalg.norm(right_t - left)))
    rows.append(_row("se3_left_right_gap", gap, 1e-6, require="min_above"))

    err_q = 0.0
    for _ in range(1000):
        tau = _random_tangent(rng, 6)
        rho, phi = tau[:3], tau[3:]
        q_pos = lie_core.se3_q_matrix(rho, phi)
        q_neg = lie_core.se3_q_matrix(-rho, -phi)
        err_q = max(err_q, float(np.max(np.abs(q_neg.T - q_pos))))
    rows.append(_row("q_matrix_parity", err_q, 1e-10))

    for mode in (ParamMode.SO3, ParamMode.R3SO3, ParamMode.SE3):
        err = 0.0
        dim = lie_core.tangent_dim(mode)
        for _ in range(1000):
            tau = _random_tangent(rng, dim)
            back = lie_core.group_log(lie_core.group_exp(tau, mode), mode)
            err = max(err, float(np.max(np.abs(back - tau))))
        rows.append(_row(f"exp_log_roundtrip_{mode.value}", err, 1e-9))

    err_s = 0.0
    for mode in (ParamMode.SO3, ParamMode.R3SO3):
        dim = lie_core.tangent_dim(mode)
        for _ in range(250):
            x = lie_core.group_exp(_random_tangent(rng, dim), mode)
            z = _random_tangent(rng, dim, max_angle=1.5)
            y = lie_core.compose(x, lie_core.group_exp(z, mode), mode)
            sigma = rng.uniform(0.1, 1.0)
            closed = scores.score_closed(y, x, sigma, mode)
            simplified = scores.score_simplified(z, sigma, mode)
            err_s = max(err_s, float(np.max(np.abs(closed - simplified))))
    rows.append(_row("simplified_score_matches_closed", err_s, 1e-10))

    for mode in (ParamMode.SO3, ParamMode.SE3):
        dim = lie_core.tangent_dim(mode)
        rel = 0.0
        for _ in range(50):
            x = lie_core.group_exp(_random_tangent(rng, dim, max_angle=1.5), mode)
            z = _random_tangent(rng, dim, max_angle=1.2)
            y = lie_core.compose(x, lie_core.group_exp(z, mode), mode)
            sigma = rng.uniform(0.2, 1.0)
            closed = scores.score_closed(y, x, sigma, mode)
            numeric = scores.score_numerical(y, x, sigma, mode)
            rel = max(rel, float(np.linalg.norm(closed - numeric)
                                 / np.linalg.norm(closed)))
        rows.append(_row(f"{mode.value}_score_matches_oracle", rel, 1e-4))

    integral, _ = quad(lambda p: distributions.igso3_angle_marginal(p, 0.5),
                       0.0, math.pi, limit=200)
    rows.append(_row("igso3_normalization", abs(integral - 1.0), 1e-3))

    sigma = 0.3
    x = lie_core.group_exp(_random_tangent(rng, 6), ParamMode.SE3)
    radii = []
    err_c = 0.0
    for _ in range(2000):
        y, z = distributions.concentrated_sample(x, sigma, ParamMode.SE3, rng)
        back = lie_core.group_log(
            lie_core.compose(lie_core.inverse(x, ParamMode.SE3), y, ParamMode.SE3),
            ParamMode.SE3)
        err_c = max(err_c, float(np.max(np.abs(back - z))))
        radii.append(np.linalg.norm(back))
    rows.append(_row("concentrated_construction", err_c, 1e-9))
    expected = _chi_mean(6, sigma)
    rows.append(_row("concentrated_radius",
                     abs(float(np.mean(radii)) - expected) / expected, 0.05))
    return rows


# ---------------------------------------------------------------------------
# helpers shared by the data-facing subcommands

def _resolve_run_dir(path: str) -> str:
    root = os.environ.get(RUN_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _parse_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'lo,hi', got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p]


def _load_config_file(path: str) -> dict:
    """Parse 'key = value' lines into TrainConfig field values."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields or key in ("run_dir", "n_shapes"):
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce_config_value(key, value)
    return out


def _coerce_config_value(key: str, value: str):
    if key in ("mode", "score_kind", "loss_weighting"):
        return value
    if key in ("n_levels", "batch_size", "noisy_samples_per_datum", "total_steps",
               "seed", "width", "n_blocks", "embed_dim", "n_freq_x", "n_freq_t",
               "checkpoint_every", "log_every"):
        return int(value)
    return float(value)


def _schedule_for(params: ScoreNetParams, eps0: float) -> NoiseSchedule:
    sigmas = params.sigmas.copy()
    eps = eps0 * sigmas ** 2 / sigmas[-1] ** 2
    return NoiseSchedule(sigmas, eps, np.arange(len(sigmas)))


def _sibling_config(checkpoint: str) -> dict:
    path = os.path.join(os.path.dirname(os.path.abspath(checkpoint)), "config.json")
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _load_samples_with_truth(path: str):
    header, samples = load_dataset(path)
    if header.canonical is None:
        raise ValueError(f"{path} carries no canonical poses; generate the "
                         "dataset with kind 'orbit' and sample from it")
    by_shape: dict[str, list[RigidTransform]] = {name: [] for name in header.shapes}
    for s in samples:
        by_shape[header.shapes[s.shape_id]].append(s.pose)
    canonical = dict(zip(header.shapes, header.canonical))
    return header, by_shape, canonical


# ---------------------------------------------------------------------------
# subcommand implementations

def _cmd_verify(args) -> int:
    rows = verify_suite(args.seed)
    width = max(len(r.name) for r in rows)
    for r in rows:
        relation = "<=" if r.require == "max_below" else "> "
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name:<{width}} value={r.value:.3e} "
              f"require {relation} {r.threshold:.0e}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(dataclasses.asdict(r)) + "\n")
    failures = sum(not r.passed for r in rows)
    print(f"{len(rows) - failures}/{len(rows)} properties passed")
    return 0 if failures == 0 else 1


def _cmd_gen_data(args) -> int:
    shapes = tuple(s for s in args.shapes.split(",") if s)
    lo, hi = _parse_pair(args.trans_range)
    mode = ParamMode(args.mode)
    rng = np.random.default_rng(args.seed)
    if args.kind == "orbit":
        samples, canonical = symsol_synth.gen_orbit_dataset(
            shapes, args.n, (lo, hi), rng, mode=mode)
    else:
        samples = symsol_synth.gen_dataset(shapes, args.n, (lo, hi), rng, mode=mode)
        canonical = None
    header = DatasetHeader(mode=mode, shapes=shapes, translation_range=(lo, hi),
                           seed=args.seed, kind=args.kind, canonical=canonical)
    n = save_dataset(args.out, header, samples)
    print(f"wrote {n} samples ({args.kind}, {mode.value}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    header, samples = load_dataset(args.data)
    merged: dict = {}
    if args.config:
        merged.update(_load_config_file(args.config))
    for key in ("n_levels", "sigma_min", "sigma_max", "batch_size",
                "noisy_samples_per_datum", "total_steps", "lr_init", "lr_final",
                "score_kind", "width", "n_blocks", "embed_dim", "n_freq_x",
                "n_freq_t", "eps0", "loss_weighting", "checkpoint_every",
                "log_every"):
        value = getattr(args, key)
        if value is not None:
            merged[key] = value
    if "mode" in merged and ParamMode(merged["mode"]) != header.mode:
        raise ValueError(f"config requests mode {merged['mode']} but the "
                         f"dataset is {header.mode.value}")
    merged["mode"] = header.mode
    merged["seed"] = args.seed
    merged["n_shapes"] = len(header.shapes)
    merged["run_dir"] = _resolve_run_dir(args.run_dir)
    config = TrainConfig(**merged)
    params = diffusion.train(config, samples)
    final = os.path.join(config.run_dir, "ckpt_final.ldsn")
    print(f"trained {config.total_steps} steps "
          f"({config.mode.value}, {config.score_kind}) -> {final}")
    return 0


def _cmd_sample(args) -> int:
    params = load_params(args.checkpoint)
    header, _ = load_dataset(args.data)
    if header.mode != params.mode:
        raise ValueError(f"checkpoint mode {params.mode.value} does not match "
                         f"dataset mode {header.mode.value}")
    if len(header.shapes) != params.n_shapes:
        raise ValueError(f"checkpoint conditions on {params.n_shapes} shapes, "
                         f"dataset lists {len(header.shapes)}")
    eps0 = args.eps0
    if eps0 is None:
        eps0 = float(_sibling_config(args.checkpoint).get("eps0", 0.1))
    schedule = _schedule_for(params, eps0)
    if args.sigma_top is not None:
        schedule = truncate_schedule(schedule, args.sigma_top)
    if args.steps is not None:
        schedule = subsample_schedule(schedule, args.steps)
    rng = np.random.default_rng(args.seed)
    out_samples = []
    for sid in range(len(header.shapes)):
        poses = diffusion.sample_batch(params, sid, schedule, params.mode, rng,
                                       n=args.n, substeps=args.substeps,
                                       rounds=args.rounds)
        out_samples.extend(
            symsol_synth.PoseSample(shape_id=sid, pose=p, mode=params.mode)
            for p in poses)
    out_header = DatasetHeader(mode=params.mode, shapes=header.shapes,
                               translation_range=header.translation_range,
                               seed=args.seed, kind="samples",
                               canonical=header.canonical)
    n = save_dataset(args.out, out_header, out_samples)
    print(f"wrote {n} samples over {len(header.shapes)} shapes to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    header, by_shape, canonical = _load_samples_with_truth(args.samples)
    report = eval_viz.build_report(by_shape, canonical, header.mode)
    for name in header.shapes:
        line = f"{name}: spread {report.spread_deg[name]:.3f} deg"
        if name in report.trans_err:
            line += f", translation error {report.trans_err[name]:.4f}"
        if name in report.coverage:
            cov = report.coverage[name]
            line += (f", coverage min {cov.min():.3f} over {cov.size} modes")
        print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def _cmd_ablate_steps(args) -> int:
    params = load_params(args.checkpoint)
    header, _ = load_dataset(args.data)
    if header.canonical is None:
        raise ValueError("ablation needs an orbit dataset with canonical poses")
    if header.mode != params.mode or len(header.shapes) != params.n_shapes:
        raise ValueError("checkpoint and dataset disagree on mode or shapes")
    sibling = _sibling_config(args.checkpoint)
    label = args.label or sibling.get("score_kind")
    if not label:
        raise ValueError("no config.json next to the checkpoint; pass --label")
    eps0 = args.eps0
    if eps0 is None:
        eps0 = float(sibling.get("eps0", 0.1))
    full = _schedule_for(params, eps0)
    canonical = dict(zip(header.shapes, header.canonical))
    lines = ["score_kind,steps,shape,spread_deg,trans_err"]
    for steps in _parse_int_list(args.steps):
        schedule = full if steps == len(full) else subsample_schedule(full, steps)
        rng = np.random.default_rng(args.seed)
        for sid, name in enumerate(header.shapes):
            poses = diffusion.sample_batch(params, sid, schedule, params.mode,
                                           rng, n=args.n, substeps=args.substeps)
            spread = eval_viz.rotation_spread([p.rot for p in poses],
                                              canonical[name].rot, name)
            if params.mode == ParamMode.SO3:
                terr = ""
            else:
                terr = "%.17g" % eval_viz.translation_error(
                    np.stack([p.trans for p in poses]), canonical[name].trans)
            lines.append(f"{label},{steps},{name},%.17g,{terr}" % spread)
            print(lines[-1])
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _cmd_export_viz(args) -> int:
    header, samples = load_dataset(args.samples)
    if args.shape is None:
        if len(header.shapes) != 1:
            raise ValueError(f"{args.samples} holds shapes {header.shapes}; "
                             "pick one with --shape")
        shape = header.shapes[0]
    else:
        shape = args.shape
        if shape not in header.shapes:
            raise ValueError(f"shape {shape!r} not in {header.shapes}")
    sid = header.shapes.index(shape)
    rots = [s.pose.rot for s in samples if s.shape_id == sid]
    n = eval_viz.mollweide_export(rots, args.out)
    print(f"wrote {n} rows for {shape} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liediff",
        description="Score-based diffusion on rotation and rigid-motion groups.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the math self-check suite")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="optional JSONL report path")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("gen-data", help="write a dataset file")
    p.add_argument("--shapes", required=True, help="comma list, e.g. tet,cube")
    p.add_argument("--n", type=int, required=True, help="samples per shape")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="se3", choices=[m.value for m in ParamMode])
    p.add_argument("--kind", default="orbit", choices=["orbit", "uniform"])
    p.add_argument("--trans-range", default="-1,1", dest="trans_range",
                   help="per-axis translation bounds 'lo,hi'")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a score model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--run-dir", required=True, dest="run_dir")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--mode", default=None, help=argparse.SUPPRESS)
    for name, kind in [
            ("n_levels", int), ("sigma_min", float), ("sigma_max", float),
            ("batch_size", int), ("noisy_samples_per_datum", int),
            ("total_steps", int), ("lr_init", float), ("lr_final", float),
            ("score_kind", str), ("width", int), ("n_blocks", int),
            ("embed_dim", int), ("n_freq_x", int), ("n_freq_t", int),
            ("eps0", float), ("loss_weighting", str),
            ("checkpoint_every", int), ("log_every", int)]:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind,
                       default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="draw poses from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True,
                   help="dataset file naming the shapes and ground truth")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=1000, help="samples per shape")
    p.add_argument("--steps", type=int, default=None,
                   help="subsample the schedule to this many levels")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--rounds", type=int, default=1,
                   help="extra Langevin passes per noise level")
    p.add_argument("--sigma-top", type=float, default=None,
                   help="start the anneal at this noise level instead of "
                        "sigma_max")
    p.add_argument("--eps0", type=float, default=None,
                   help="step-size scale; defaults to the training config")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("eval", help="score a samples file against ground truth")
    p.add_argument("--samples", required=True)
    p.add_argument("--seed", type=int, required=True,
                   help="unused by the metrics; kept for uniform reproducibility")
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate-steps",
                       help="sample at several schedule lengths, write a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", required=True, help="comma list, e.g. 100,50,10,5")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=500, help="samples per shape")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--label", default=None,
                   help="score_kind column; defaults to the training config")
    p.add_argument("--eps0", type=float, default=None)
    p.set_defaults(func=_cmd_ablate_steps)

    p = sub.add_parser("export-viz", help="Euler-angle CSV for one shape")
    p.add_argument("--samples", required=True)
    p.add_argument("--shape", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=False, default=0,
                   help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_export_viz)

    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
