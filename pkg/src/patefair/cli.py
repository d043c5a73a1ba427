"""Command-line entry point: ``patefair <subcommand> [--config FILE] [--key value ...]``.

Every config key is also a flag (``--teachers 10,20``, ``--lam 1,10,100``).
Stage subcommands exchange artifacts through ``--output-dir``:

    train-teachers -> teachers_k{k}.npz
    vote           -> votes_k{k}_sigma{s}.csv
    train-student  -> students_{tag}.npz
    audit          -> {tag}_fairness_samples.csv, {tag}_fairness_summary.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .config import ConfigError, ExperimentConfig, dump_config, field_names, load_config
from .harness import (
    Pipeline,
    StageError,
    StudentRun,
    check_bounds,
    iter_points,
    point_tag,
    synth_config,
    write_record,
    write_sweep,
    jsonable,
)
from .models import ModelParams
from .privacy import PrivacyError, PrivacyLedger, min_epsilon
from .voting import read_votes_csv, write_votes_csv

SUBCOMMANDS = ("train-teachers", "vote", "train-student", "audit", "verify-bounds", "sweep", "privacy", "synth", "run")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of config keys")
    g = p.add_argument_group("config overrides")
    for name in field_names():
        g.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="V")


def _config(args) -> ExperimentConfig:
    overrides = {n: getattr(args, n) for n in field_names() if getattr(args, n, None) is not None}
    return load_config(args.config, overrides)


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "effective_config.yaml")
    return out


def _save_teachers(path: Path, teachers: list[ModelParams]) -> None:
    t0 = teachers[0]
    np.savez(path, thetas=np.stack([t.theta for t in teachers]), arch=t0.arch, dims=np.array(t0.dims), class_count=t0.class_count)


def _load_teachers(path: Path) -> list[ModelParams]:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run train-teachers first")
    z = np.load(path)
    arch, dims, C = str(z["arch"]), tuple(int(v) for v in z["dims"]), int(z["class_count"])
    return [ModelParams(arch, dims, th, C) for th in z["thetas"]]


def _students_path(out: Path, point) -> Path:
    return out / f"students_{point_tag(point)}.npz"


def _votes_path(out: Path, k: int, sigma: float) -> Path:
    return out / f"votes_k{k}_sigma{sigma:g}.csv"


def _load_stage_inputs(pipe: Pipeline, out: Path, need_students: bool) -> None:
    cfg = pipe.cfg
    teachers, counts, students = {}, {}, {}
    for k in cfg.teachers:
        tp = out / f"teachers_k{k}.npz"
        if tp.exists():
            teachers[k] = _load_teachers(tp)
        vp = _votes_path(out, k, cfg.sigma[0])
        if vp.exists():
            counts[k] = read_votes_csv(vp)[0]
        elif k not in teachers:
            raise FileNotFoundError(f"neither {tp} nor {vp} found; run train-teachers (and vote) first")
    if need_students:
        for point in iter_points(cfg):
            sp = _students_path(out, point)
            if not sp.exists():
                raise FileNotFoundError(f"{sp} not found; run train-student first")
            z = np.load(sp)
            star = ModelParams(str(z["arch"]), tuple(int(v) for v in z["dims"]), z["theta_star"], int(z["class_count"]))
            students[point] = StudentRun(star, z["theta_tilde"], z["clean_targets"], z["noisy_targets"])
    pipe.preload(teachers, counts, students)


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    out = Path(args.out) if args.out else _outdir(cfg) / "synthetic.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    data = ds_mod.synthesize(synth_config(cfg))
    ds_mod.save_csv(data, out, cfg.label_column, cfg.group_column)
    print(f"wrote {data.n} rows x {data.d} features to {out}")
    return 0


def cmd_train_teachers(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    pipe = Pipeline(cfg)
    for k in cfg.teachers:
        teachers = pipe.teachers(k)
        _save_teachers(out / f"teachers_k{k}.npz", teachers)
        print(f"k={k}: trained {len(teachers)} teachers; clean-vote accuracy on public set {pipe.teacher_accuracy(k):.4f}")
    return 0


def cmd_vote(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    pipe = Pipeline(cfg)
    _load_stage_inputs(pipe, out, need_students=False)
    for k in cfg.teachers:
        counts = pipe.counts(k)
        for sigma in cfg.sigma:
            p, se = pipe.flip_probs(k, sigma)
            path = _votes_path(out, k, sigma)
            write_votes_csv(path, counts, p, se)
            print(f"k={k} sigma={sigma:g}: mean flip probability {p.mean():.4f} -> {path}")
    return 0


def cmd_train_student(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    pipe = Pipeline(cfg)
    _load_stage_inputs(pipe, out, need_students=False)
    for point in iter_points(cfg):
        st = pipe.students(point)
        p = st.theta_star
        np.savez(
            _students_path(out, point),
            theta_star=p.theta,
            theta_tilde=st.theta_tilde,
            clean_targets=st.clean_targets,
            noisy_targets=st.noisy_targets,
            arch=p.arch,
            dims=np.array(p.dims),
            class_count=p.class_count,
        )
        print(f"{point_tag(point)}: trained clean student and {st.theta_tilde.shape[0]} private repetitions")
    return 0


def cmd_audit(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    pipe = Pipeline(cfg)
    _load_stage_inputs(pipe, out, need_students=True)
    for point in iter_points(cfg):
        rec = pipe.run(point)
        write_record(rec, out, point_tag(point))
        _print_summary(rec)
    return 0


def cmd_run(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    pipe = Pipeline(cfg)
    for point in iter_points(cfg):
        rec = pipe.run(point)
        write_record(rec, out, point_tag(point))
        _print_summary(rec)
    return 0


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    pipe = Pipeline(cfg)
    records = []
    for point in iter_points(cfg):
        rec = pipe.run(point)
        records.append(rec)
        _print_summary(rec)
    paths = write_sweep(records, cfg, out)
    print(f"wrote {paths['long']}")
    return 0


def cmd_verify_bounds(cfg: ExperimentConfig, args) -> int:
    if cfg.student_arch != "logistic":
        raise ConfigError("verify-bounds needs student_arch=logistic")
    out = _outdir(cfg)
    pipe = Pipeline(cfg.replace(label_mode=("hard",)))
    results, ok = [], True
    for point in iter_points(pipe.cfg):
        rep = check_bounds(pipe.run(point))
        ok &= rep.passed
        print(point_tag(point))
        for c in rep.checks:
            flag = "PASS" if c.passed else "FAIL"
            print(f"  {flag} {c.name}: lhs={c.lhs:.6g} rhs={c.rhs:.6g} slack={c.slack:.3g} margin={c.margin:.6g}")
        results.append({**point.key(), "checks": [vars(c) | {"margin": c.margin} for c in rep.checks]})
    (out / "bounds.json").write_text(json.dumps(jsonable(results), indent=2))
    return 0 if ok else 1


def cmd_privacy(cfg: ExperimentConfig, args) -> int:
    m = args.m if args.m is not None else cfg.public_train_count
    sigma = args.noise if args.noise is not None else cfg.sigma[0]
    eps, gamma = min_epsilon(PrivacyLedger(sigma, m, cfg.delta))
    print(f"m={m} sigma={sigma:g} delta={cfg.delta:g}: epsilon={eps:.6f} at RDP order gamma*={gamma:.6f}")
    print(json.dumps({"m": m, "sigma": sigma, "delta": cfg.delta, "epsilon": eps, "gamma": gamma}))
    return 0


def _print_summary(rec) -> None:
    s = rec.summary()
    print(
        f"{point_tag(rec.point)}: eps={s['epsilon']:.4g} u1={s['u1']:.4g} u2={s['u2']:.4g} "
        f"gap={s['risk_gap']:.4g} flip={s['mean_flip_prob']:.4f} "
        f"acc(private)={s['accuracy_private']:.4f} acc(clean)={s['accuracy_nonprivate']:.4f}"
    )


COMMANDS = {
    "synth": cmd_synth,
    "train-teachers": cmd_train_teachers,
    "vote": cmd_vote,
    "train-student": cmd_train_student,
    "audit": cmd_audit,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "verify-bounds": cmd_verify_bounds,
    "privacy": cmd_privacy,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patefair", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _add_config_flags(p)
        if name == "synth":
            p.add_argument("--out", help="CSV path (default: OUTPUT_DIR/synthetic.csv)")
        if name == "privacy":
            p.add_argument("--m", type=int, help="number of released labels (default: public_train_count)")
            p.add_argument("--noise", type=float, help="noise std (default: first sigma)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except StageError as exc:
        print(f"patefair {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, PrivacyError, FileNotFoundError, ValueError) as exc:
        print(f"patefair {args.command}: [{args.command}] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
