"""Command line: ``recm train``, ``recm verify``, ``recm plotdata``.

Exit codes: 0 success, 1 verification failed, 2 usage or config error,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ContractError, NonFiniteLossError
from .experiments.model import build_model
from .experiments.tasks import TaskSpec, make_dataset
from .experiments.training import CSV_HEADER, TrainConfig, format_summary, train
from .serialization import save_model
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
MODEL_KEYS = ("layer_count", "widths", "m", "hidden", "terms", "norm_bound", "w_init", "term_init", "equivariant_only")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    task: TaskSpec
    train: TrainConfig
    model: dict = field(default_factory=dict)
    out: str | None = None
    verbosity: int = 0

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(d) - {"task", "train", "model", "out", "verbosity"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        model = dict(d.get("model") or {})
        bad = set(model) - set(MODEL_KEYS)
        if bad:
            raise ConfigError(f"unknown model fields: {sorted(bad)}")
        try:
            task = TaskSpec.from_dict(d.get("task") or {})
            tr = TrainConfig.from_dict(d.get("train") or {})
        except (ContractError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(task, tr, model, d.get("out"), int(d.get("verbosity", 0)))

    def to_dict(self):
        return {"task": self.task.to_dict(), "model": self.model, "train": self.train.to_dict()}


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(data)


def prepare_run(cfg):
    """Dataset and untrained model for ``cfg``; the model seed derives from the train seed."""
    dataset = make_dataset(cfg.task)
    kw = dict(cfg.model)
    layer_count = kw.pop("layer_count", 3)
    widths = kw.pop("widths", None)
    equivariant_only = bool(kw.pop("equivariant_only", False))
    for key in ("hidden", "terms"):
        if key in kw:
            kw[key] = tuple(kw[key])
    try:
        model = build_model(
            dataset,
            layer_count,
            widths,
            a=cfg.train.a,
            b=cfg.train.b,
            rng=np.random.default_rng([cfg.train.seed, 1]),
            **kw,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if equivariant_only:
        model.freeze_equivariant()
    return dataset, model


def run_training(cfg, progress=None):
    """Build dataset and model from ``cfg`` and train; returns (log, pruned model)."""
    dataset, model = prepare_run(cfg)
    return train(model, dataset, cfg.train, progress=progress)


def cmd_train(args):
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.train.seed = args.seed
        out = Path(args.out or cfg.out or "run")
        out.mkdir(parents=True, exist_ok=True)
        progress = None
        if args.verbose:
            every = max(cfg.train.steps // 20, 1)

            def progress(step, loss):
                if step % every == 0:
                    print(f"step {step:6d}  loss {loss:.5f}", file=sys.stderr)

        log, pruned = run_training(cfg, progress)
    except (ConfigError, ContractError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        out.joinpath("abort.txt").write_text(f"{exc}\n{exc.record}\n")
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    log.to_csv(out / "trajectory.csv")
    (out / "summary.txt").write_text(format_summary(log.final))
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    save_model(pruned, out / "model")
    final = log.final
    print(
        f"done: test loss {final['test_post_prune']['loss']:.5f} after pruning, "
        f"overhead {final['overhead_post_prune']:+.2f}"
    )
    return EXIT_OK


def cmd_verify(args):
    if args.trials < 1:
        print("--trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    result = run_suite(args.suite, args.trials, args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / f"verify_{args.suite}.csv")
    if not args.quiet:
        for r in result.records:
            print(("PASS " if r["pass"] else "FAIL ") + " ".join(f"{k}={v}" for k, v in r.items() if k != "pass"))
    if args.suite == "gradcheck":
        worst = max(r["rel_error"] for r in result.records)
        print(f"max relative error {worst:.3e}")
    print(result.summary())
    return EXIT_OK if result.passed else EXIT_FAILED


def _read_trajectory(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such file: {path}")
    rows = []
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ConfigError(f"unexpected header {header}; expected {','.join(CSV_HEADER)}")
        for n, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ConfigError(f"line {n}: expected {len(CSV_HEADER)} fields")
            try:
                rows.append((int(row[0]), row[2], row[3], float(row[4]), float(row[5])))
            except ValueError as exc:
                raise ConfigError(f"line {n}: {exc}") from exc
    return rows


def cmd_plotdata(args):
    try:
        rows = _read_trajectory(args.csv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    layers = sorted({r[1] for r in rows})
    if args.layer is not None and args.layer not in layers:
        print(f"error: layer {args.layer!r} not in {layers}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    alpha, beta = {}, {}
    for step, layer, term, a, b in rows:
        if args.layer is not None and layer != args.layer:
            continue
        alpha.setdefault((layer, term), []).append((step, a))
        beta.setdefault(layer, {})[step] = b
    written = []
    for (layer, term), series in alpha.items():
        path = out / f"alpha_{layer}_{term}.csv"
        _write_series(path, "alpha", series)
        written.append(path)
    for layer, by_step in beta.items():
        path = out / f"beta_{layer}.csv"
        _write_series(path, "beta", sorted(by_step.items()))
        written.append(path)
    print(f"wrote {len(written)} series to {out}")
    return EXIT_OK


def _write_series(path, name, series):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", name])
        for step, v in series:
            w.writerow([step, f"{v:.17g}"])


def build_parser():
    parser = argparse.ArgumentParser(prog="recm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a relaxed model from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run a randomized verification suite")
    p.add_argument("--suite", required=True, choices=SUITES)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("-q", "--quiet", action="store_true", help="aggregate line only")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plotdata", help="split a trajectory CSV into per-series CSVs")
    p.add_argument("csv")
    p.add_argument("--layer")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
