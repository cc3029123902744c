"""Command-line interface: scores, sampling, training, comparisons and diagnostics.

Every command writes into ``--out`` and is deterministic given its inputs and
``--seed``.  Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .activations import ActivationSpec
from .data_io import (DataError, SyntheticSpec, generate_synthetic, load_csv, plant_outlier, read_json,
                      write_csv, write_json)
from .diagnostics import flag_outliers, rank
from .dual_matrix import Dataset, build_dual_matrix
from .models import make_family
from .optimizer import (ConstraintSet, TrainConfig, TrainingError, infer_constraint, initial_theta, train_full,
                        train_subsampled)
from .sampler import SampleSet, draw, draw_stratified, full_enumeration
from .scores import SCORE_KINDS, ScoreVector, leverage_scores, linear_surrogate_scores, norm_scores, uniform_scores

log = logging.getLogger(__name__)

__all__ = ["ExperimentConfig", "compute_scores", "cell_seed", "run_comparison", "build_parser", "main"]

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
LOG_FLOOR = 1e-16


def compute_scores(kind: str, family, data: Dataset, theta=None, method: str = "qr",
                   linear_offset: Optional[bool] = None) -> ScoreVector:
    """Scores of ``kind`` for ``family`` fitted on ``data``.

    Nonlinear kinds need ``theta``.  Linear kinds use the data matrix, with
    the model's offset column controlled by ``linear_offset``.
    """
    if kind == "uniform":
        return uniform_scores(data.n)
    if kind in ("linear_leverage", "linear_norm"):
        return linear_surrogate_scores(data, family.kind, getattr(family, "phi", None), kind.split("_")[1],
                                       getattr(family, "m", 1), include_offset=linear_offset)
    if kind not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}")
    if theta is None:
        raise ValueError(f"{kind} scores need a parameter vector")
    D = build_dual_matrix(family, theta)
    return leverage_scores(D, method) if kind == "nonlinear_leverage" else norm_scores(D)


def cell_seed(master: int, kind: str, fraction: float, repeat: int) -> int:
    """Seed of one comparison cell.

    ``SeedSequence(master, spawn_key=(kind code, round(fraction * 1e6), repeat))``
    so every cell is independent of which other cells are run.
    """
    key = (SCORE_KINDS.index(kind), int(round(fraction * 1_000_000)), int(repeat))
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, dtype=np.uint64)[0])


@dataclass
class ExperimentConfig:
    """Sampling-strategy comparison over score kinds and sample fractions.

    ``constraint`` is either an explicit constraint (``{"kind": "ball",
    "radius": ...}``) or ``{"kind": ..., "factor": f, "infer": true}`` to
    build one around the full-data solution.  Nonlinear scores are evaluated
    at the full-data solution.
    """

    family: str = "single_index"
    activation: dict = field(default_factory=lambda: {"name": "swish_type", "c1": 1.0, "c2": 2.0, "zeta": 1.0})
    m: int = 1
    kinds: List[str] = field(default_factory=lambda: ["nonlinear_leverage", "nonlinear_norm", "uniform"])
    fractions: List[float] = field(default_factory=lambda: [0.02, 0.05, 0.1, 0.2])
    repeats: int = 5
    seed: int = 0
    optimizer: dict = field(default_factory=dict)
    constraint: dict = field(default_factory=lambda: {"kind": "ball", "factor": 1.5, "infer": True})
    stratified: bool = False
    linear_offset: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.kinds or not self.fractions:
            raise ValueError("kinds and fractions must be nonempty")
        bad = [k for k in self.kinds if k not in SCORE_KINDS]
        if bad:
            raise ValueError(f"unknown score kinds {bad}")
        if any(not 0 < f <= 1 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in dict(data).items() if k in known})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "workers"}


@dataclass
class ComparisonResult:
    summary: List[dict]
    cells: List[dict]
    full_loss: float
    constraint: dict

    def write(self, out_dir, seed) -> None:
        _write_rows(os.path.join(out_dir, "compare.csv"), ["kind", "fraction", "median_log_rel_err", "iqr"],
                    self.summary)
        _write_rows(os.path.join(out_dir, "compare_cells.csv"),
                    ["kind", "fraction", "repeat", "seed", "s", "loss", "log_rel_err", "status"], self.cells)
        write_json({"full_loss": self.full_loss, "constraint": self.constraint, "summary": self.summary},
                   os.path.join(out_dir, "compare.json"), seed)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[h]) for h in header])


def _constraint_for(family, spec: dict, config: TrainConfig, pilot) -> ConstraintSet:
    spec = dict(spec or {"kind": "unconstrained"})
    if spec.pop("infer", False):
        return infer_constraint(family, spec.get("kind", "ball"), float(spec.get("factor", 1.5)), config, pilot)
    spec.pop("factor", None)
    return ConstraintSet.from_dict(spec)


def run_comparison(cfg: ExperimentConfig, data: Dataset) -> ComparisonResult:
    """Train on importance samples for every (kind, fraction, repeat) cell.

    Each cell's parameter is scored by the full-data loss and reported as
    ``log((L(theta_S) - L*) / L*)``; a nonpositive gap is floored at
    ``1e-16`` before the logarithm.  Failed cells are recorded with status
    ``failed`` and excluded from the medians.
    """
    phi = ActivationSpec.from_config(cfg.activation)
    family = make_family(cfg.family, data.X, data.y, phi, cfg.m)
    tc = TrainConfig.from_dict({"seed": cfg.seed, **cfg.optimizer})
    init = initial_theta(family.p, tc.seed, tc.init_scale)
    pilot = train_full(family, init, ConstraintSet(), tc)
    C = _constraint_for(family, cfg.constraint, tc, pilot)
    full = pilot if C.kind == "unconstrained" else train_full(family, init, C, tc)
    L_star = family.loss(full.theta)
    scores = {k: compute_scores(k, family, data, full.theta, linear_offset=cfg.linear_offset) for k in cfg.kinds}
    sampler = draw_stratified if cfg.stratified else draw

    def run_cell(job):
        kind, frac, rep = job
        seed = cell_seed(cfg.seed, kind, frac, rep)
        s = max(1, math.ceil(round(frac * data.n, 9)))
        row = {"kind": kind, "fraction": frac, "repeat": rep, "seed": seed, "s": s,
               "loss": "", "log_rel_err": "", "status": "ok"}
        try:
            if kind == "uniform" and frac == 1.0:
                # the full-data baseline, not a with-replacement resample
                S = full_enumeration(data.n)
            else:
                S = sampler(scores[kind], s, seed)
            res = train_subsampled(family, S, scores[kind], init, C, tc)
            loss = family.loss(res.theta)
            if not math.isfinite(loss):
                raise TrainingError("non-finite full-data loss")
        except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("cell %s/%s/%d failed: %s", kind, frac, rep, exc)
            row["status"] = "failed"
            return row
        gap = max((loss - L_star) / L_star, LOG_FLOOR) if L_star > 0 else max(loss, LOG_FLOOR)
        row["loss"] = loss
        row["log_rel_err"] = math.log(gap)
        return row

    jobs = [(k, f, r) for k in cfg.kinds for f in cfg.fractions for r in range(cfg.repeats)]
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            cells = list(ex.map(run_cell, jobs))
    else:
        cells = [run_cell(j) for j in jobs]

    summary = []
    for k in cfg.kinds:
        for f in cfg.fractions:
            vals = [c["log_rel_err"] for c in cells if c["kind"] == k and c["fraction"] == f and c["status"] == "ok"]
            if vals:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                summary.append({"kind": k, "fraction": f, "median_log_rel_err": float(med), "iqr": float(q3 - q1)})
            else:
                summary.append({"kind": k, "fraction": f, "median_log_rel_err": "nan", "iqr": "nan"})
    return ComparisonResult(summary, cells, L_star, C.to_dict())


# ---------------------------------------------------------------- commands


def _ensure_out(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_data(args) -> Dataset:
    if not args.data:
        raise DataError("--data is required")
    return load_csv(args.data, target=args.target)


def _activation(args) -> ActivationSpec:
    cfg = {"name": args.activation, "c1": args.c1, "c2": args.c2, "zeta": args.zeta}
    return ActivationSpec.from_config(cfg)


def _family(args, data):
    return make_family(args.model, data.X, data.y, _activation(args), args.m)


def _train_config(args) -> TrainConfig:
    return TrainConfig.from_dict({"seed": args.seed, **(args.optimizer or {})})


def _read_theta(path, p) -> np.ndarray:
    if not path:
        raise DataError("--theta is required")
    if not os.path.exists(path):
        raise DataError(f"parameter file not found: {path}")
    if path.endswith(".json"):
        theta = np.asarray(read_json(path)["theta"], dtype=float)
    else:
        theta = np.atleast_1d(np.loadtxt(path, delimiter=",", ndmin=1)).astype(float)
    if theta.shape != (p,):
        raise DataError(f"{path}: expected {p} parameters, found {theta.size}")
    return theta


def _read_scores(path) -> ScoreVector:
    if not os.path.exists(path):
        raise DataError(f"score file not found: {path}")
    if path.endswith(".json"):
        return ScoreVector.from_dict(read_json(path))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty score file")
    return ScoreVector(np.array([float(r["score"]) for r in rows]), rows[0]["kind"])


def cmd_synth(args) -> int:
    out = _ensure_out(args)
    spec = SyntheticSpec(args.family or args.model, args.n, args.d, args.noise, args.coherence, _activation(args), args.m)
    data, truth = generate_synthetic(spec, args.seed)
    if args.plant_outlier is not None:
        data = plant_outlier(data, args.plant_outlier, args.outlier_scale)
    write_csv(data, os.path.join(out, "data.csv"))
    write_json({"spec": spec.to_dict(), "theta": truth.theta, "heavy_rows": truth.heavy_rows,
                "planted_outlier": args.plant_outlier}, os.path.join(out, "truth.json"), args.seed)
    return EXIT_OK


def cmd_scores(args) -> int:
    out = _ensure_out(args)
    data = _load_data(args)
    family = _family(args, data)
    theta = None
    if args.kind.startswith("nonlinear"):
        if args.theta_source == "file":
            theta = _read_theta(args.theta, family.p)
        else:
            theta = train_full(family, config=_train_config(args)).theta
    tau = compute_scores(args.kind, family, data, theta, args.method)
    tau.to_csv(os.path.join(out, "scores.csv"))
    write_json({**tau.to_dict(), "theta": theta, "model": family.describe()}, os.path.join(out, "scores.json"),
               args.seed)
    return EXIT_OK


def cmd_sample(args) -> int:
    out = _ensure_out(args)
    if not args.scores:
        raise DataError("--scores is required")
    tau = _read_scores(args.scores)
    if args.s is not None:
        s = args.s
    elif args.fraction is not None:
        s = max(1, math.ceil(round(args.fraction * tau.n, 9)))
    else:
        raise DataError("give --s or --fraction")
    S = (draw_stratified if args.stratified else draw)(tau, s, args.seed)
    write_json(S.to_dict(), os.path.join(out, "sample.json"), args.seed)
    return EXIT_OK


def cmd_train(args) -> int:
    out = _ensure_out(args)
    data = _load_data(args)
    family = _family(args, data)
    tc = _train_config(args)
    C = _constraint_for(family, args.constraint, tc, None)
    if args.sample:
        if not os.path.exists(args.sample):
            raise DataError(f"sample file not found: {args.sample}")
        S = SampleSet.from_dict(read_json(args.sample))
        if S.indices.max() >= data.n:
            raise DataError("sample indices exceed the dataset size")
        res = train_subsampled(family, S, C=C, config=tc)
    else:
        res = train_full(family, C=C, config=tc)
    write_json({**res.to_dict(), "full_loss": family.loss(res.theta), "constraint": C.to_dict(),
                "model": family.describe()}, os.path.join(out, "train.json"), args.seed)
    return EXIT_OK


def cmd_compare(args) -> int:
    out = _ensure_out(args)
    raw = dict(args.experiment or {})
    raw.setdefault("seed", args.seed)
    raw.setdefault("family", args.model)
    raw.setdefault("activation", {"name": args.activation, "c1": args.c1, "c2": args.c2, "zeta": args.zeta})
    raw.setdefault("m", args.m)
    raw.setdefault("workers", args.workers)
    if args.optimizer:
        raw.setdefault("optimizer", args.optimizer)
    if args.constraint:
        raw.setdefault("constraint", args.constraint)
    cfg = ExperimentConfig.from_dict(raw)
    if args.data:
        data = _load_data(args)
    else:
        spec = SyntheticSpec.from_dict({"family": cfg.family, "activation": cfg.activation, "m": cfg.m,
                                        **(args.synthetic or {})})
        data, _ = generate_synthetic(spec, cfg.seed)
    result = run_comparison(cfg, data)
    result.write(out, cfg.seed)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    out = _ensure_out(args)
    data = _load_data(args)
    family = _family(args, data)
    theta = None
    if args.kind.startswith("nonlinear"):
        theta = _read_theta(args.theta, family.p) if args.theta else train_full(family, config=_train_config(args)).theta
    tau = compute_scores(args.kind, family, data, theta, args.method)
    report = rank(tau, min(args.k, tau.n), label=args.label)
    if args.mad is not None:
        outliers = flag_outliers(tau, mad_multiplier=args.mad)
    else:
        outliers = flag_outliers(tau, top_fraction=args.top_fraction)
    report.to_csv(os.path.join(out, "ranking.csv"))
    write_json({"ranking": {k: v for k, v in report.to_dict().items() if k != "ordering"},
                "outliers": outliers.to_dict()}, os.path.join(out, "diagnose.json"), args.seed)
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "scores": cmd_scores,
    "sample": cmd_sample,
    "train": cmd_train,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--data", help="input CSV")
    common.add_argument("--target", default="y", help="target column name")
    common.add_argument("--model", default="single_index", choices=["linear", "single_index", "relu_two_layer"])
    common.add_argument("--activation", default="swish_type", choices=["identity", "logistic", "relu", "swish_type"])
    common.add_argument("--c1", type=float, default=1.0)
    common.add_argument("--c2", type=float, default=2.0)
    common.add_argument("--zeta", type=float, default=1.0)
    common.add_argument("--m", type=int, default=1, help="hidden units of a ReLU network")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nlimportance", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--family", choices=["linear", "single_index", "relu_two_layer"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--coherence", type=float, default=0.0, help="fraction of heavy-tailed rows")
    p.add_argument("--plant-outlier", type=int, help="row index to scale")
    p.add_argument("--outlier-scale", type=float, default=100.0)

    for name, helptext in (("scores", "compute importance scores"), ("diagnose", "rank samples and flag outliers")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--kind", default="nonlinear_leverage", choices=list(SCORE_KINDS))
        p.add_argument("--theta", help="parameter file (JSON with 'theta', or comma/newline separated)")
        p.add_argument("--method", default="qr", choices=["qr", "svd"])
        if name == "scores":
            p.add_argument("--theta-source", default="pilot", choices=["file", "pilot"])
        else:
            p.add_argument("--k", type=int, default=10)
            p.add_argument("--top-fraction", type=float, default=0.01)
            p.add_argument("--mad", type=float, help="use the median + MAD rule with this multiplier")
            p.add_argument("--label", default="")

    p = sub.add_parser("sample", parents=[common], help="draw an importance sample")
    p.add_argument("--scores", help="score file (CSV or JSON)")
    p.add_argument("--s", type=int, help="sample size")
    p.add_argument("--fraction", type=float, help="sample size as a fraction of n")
    p.add_argument("--stratified", action="store_true", help="systematic instead of i.i.d. sampling")

    p = sub.add_parser("train", parents=[common], help="projected gradient training")
    p.add_argument("--sample", help="sample JSON; omit to train on all rows")

    p = sub.add_parser("compare", parents=[common], help="compare sampling strategies")
    p.add_argument("--workers", type=int, default=1)
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    extra = {"optimizer": None, "constraint": None, "experiment": None, "synthetic": None}
    if args.config:
        if not os.path.exists(args.config):
            raise DataError(f"config file not found: {args.config}")
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise DataError("config must be a JSON object")
        flat = {k.replace("-", "_"): v for k, v in cfg.items() if k not in extra}
        extra.update({k: cfg[k] for k in extra if k in cfg})
        # config values act as defaults; explicit flags still win
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**flat)
        args = parser.parse_args(argv)
    for k, v in extra.items():
        setattr(args, k, v)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (TrainingError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
