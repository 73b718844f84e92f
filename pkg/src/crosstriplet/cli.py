"""Command-line entry point: generate, train, eval, gradcheck, ablation, export-embeddings.

Exit codes: 0 success, 1 usage or I/O error, 2 numeric failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import PairedDataset, SynthConfig, load_binary, save_binary, split, synth_generate
from .evaluation import RANK_DISTANCES, EvalReport, evaluate, export_embeddings
from .gradcheck import TOLERANCE, run_gradcheck
from .model import EncoderConfig, load_checkpoint, save_checkpoint
from .triplets import PRESET_NAMES, parse_strategy, resolve_combos, strategy_name
from .trainer import NonFiniteLossError, TrainConfig, train

log = logging.getLogger("crosstriplet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3
DEFAULT_KS = (1, 5, 10, 20, 50, 100, 200, 500, 1000)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# -- run configuration ---------------------------------------------------------

ENCODER_KEYS = {"audio_dim", "visual_dim", "hidden", "activation", "init_seed", "label_dim"}
TOP_KEYS = {"seed", "out_dir", "dataset", "train_fraction", "split_seed", "encoder", "train",
            "synth", "eval", "ablation", "record_wall_time"}
EVAL_KEYS = {"ks", "distance"}
ABLATION_KEYS = {"presets", "seeds"}


def _reject_unknown(section: str, given: dict, allowed) -> None:
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise CliError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


@dataclass
class RunConfig:
    """Everything one run needs; ``effective()`` is the fully defaulted JSON form."""

    seed: int = 0
    out_dir: str = "runs"
    dataset: str | None = None
    train_fraction: float | None = 0.8
    split_seed: int | None = None
    encoder: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    synth: dict | None = None
    eval: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    record_wall_time: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise CliError("config must be a JSON object")
        _reject_unknown("config", doc, TOP_KEYS)
        _reject_unknown("encoder", doc.get("encoder") or {}, ENCODER_KEYS)
        _reject_unknown("train", doc.get("train") or {}, _field_names(TrainConfig))
        _reject_unknown("synth", doc.get("synth") or {}, _field_names(SynthConfig))
        _reject_unknown("eval", doc.get("eval") or {}, EVAL_KEYS)
        _reject_unknown("ablation", doc.get("ablation") or {}, ABLATION_KEYS)
        cfg = cls(**{k: v for k, v in doc.items() if v is not None or k in ("synth", "dataset", "train_fraction")})
        cfg.encoder = dict(cfg.encoder or {})
        cfg.train = dict(cfg.train or {})
        cfg.eval = dict(cfg.eval or {})
        cfg.ablation = dict(cfg.ablation or {})
        if cfg.synth is not None:
            cfg.synth = dict(cfg.synth)
        return cfg

    # Seeds not set explicitly follow the global seed.
    def synth_config(self) -> SynthConfig:
        if self.synth is None:
            raise CliError("config has no 'synth' section")
        return SynthConfig(**{"seed": self.seed, **self.synth})

    def train_config(self, **overrides) -> TrainConfig:
        return TrainConfig(**{"shuffle_seed": self.seed, **self.train, **overrides})

    def encoder_config(self, ds: PairedDataset) -> EncoderConfig:
        enc = {"init_seed": self.seed, "audio_dim": ds.audio_dim, "visual_dim": ds.visual_dim,
               "label_dim": ds.num_classes, **self.encoder}
        return EncoderConfig(**enc)

    def eval_ks(self) -> list[int]:
        return [int(k) for k in self.eval.get("ks", DEFAULT_KS)]

    def eval_distance(self) -> str:
        return self.eval.get("distance", "sqeuclidean")

    def effective_split_seed(self) -> int:
        return self.seed if self.split_seed is None else self.split_seed

    def effective(self, ds: PairedDataset | None = None, **train_overrides) -> dict:
        doc = {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "dataset": self.dataset,
            "train_fraction": self.train_fraction,
            "split_seed": self.effective_split_seed(),
            "record_wall_time": self.record_wall_time,
            "train": dataclasses.asdict(self.train_config(**train_overrides)),
            "eval": {"ks": self.eval_ks(), "distance": self.eval_distance()},
        }
        if ds is not None:
            enc = dataclasses.asdict(self.encoder_config(ds))
            enc["hidden"] = list(enc["hidden"])
            doc["encoder"] = enc
        else:
            doc["encoder"] = dict(self.encoder)
        doc["synth"] = dataclasses.asdict(self.synth_config()) if self.synth is not None else None
        if self.ablation:
            doc["ablation"] = dict(self.ablation)
        return doc


def load_run_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(doc)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- helpers -------------------------------------------------------------------


def _load_dataset(cfg: RunConfig) -> PairedDataset:
    if cfg.dataset:
        try:
            return load_binary(cfg.dataset)
        except FileNotFoundError as exc:
            raise CliError(str(exc)) from None
    if cfg.synth is not None:
        return synth_generate(cfg.synth_config())
    raise CliError("config needs either 'dataset' or 'synth'")


def _split(cfg: RunConfig, ds: PairedDataset):
    if cfg.train_fraction is None:
        return ds, None
    return split(ds, cfg.train_fraction, cfg.effective_split_seed())


def _new_run_dir(out_dir: Path, seed: int, run_id: str | None) -> Path:
    if run_id is None:
        run_id = f"{time.strftime('%Y%m%d-%H%M%S')}-s{seed}"
        candidate, k = out_dir / run_id, 1
        while candidate.exists():
            candidate = out_dir / f"{run_id}-{k}"
            k += 1
    else:
        candidate = out_dir / run_id
    candidate.mkdir(parents=True, exist_ok=run_id is not None)
    return candidate


def _fit_ks(ks, gallery: int) -> list[int]:
    return [k for k in ks if k <= gallery]


def _print_map(report: EvalReport, stream=None) -> None:
    stream = stream or sys.stdout
    print(f"map_a2v {report.map_a2v:.4f}", file=stream)
    print(f"map_v2a {report.map_v2a:.4f}", file=stream)
    print(f"map_avg {report.map_avg:.4f}", file=stream)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "dataset", None) is not None:
        cfg.dataset = args.dataset
    for key in ("combo", "epochs", "batch_size", "lr", "margin", "optimizer"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.train[key] = val
    return cfg


# -- commands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    synth = cfg.synth_config()
    ds = synth_generate(synth)
    out = Path(cfg.out_dir)
    save_binary(ds, out / "dataset")
    _write_json(out / "config.json", cfg.effective())
    print(f"wrote {len(ds)} pairs ({ds.num_classes} classes) to {out / 'dataset'}")
    return EXIT_OK


def train_run(cfg: RunConfig, run_dir: Path, ds: PairedDataset | None = None, **train_overrides):
    """Train and evaluate one configuration, writing all artifacts into ``run_dir``."""
    ds = _load_dataset(cfg) if ds is None else ds
    enc = cfg.encoder_config(ds)
    tcfg = cfg.train_config(**train_overrides)
    train_ds, test_ds = _split(cfg, ds)
    combos = resolve_combos(tcfg.combo)
    _write_json(run_dir / "config.json", cfg.effective(ds, **train_overrides))
    _write_json(run_dir / "run.json", {
        "run_id": run_dir.name,
        "dataset": ds.name,
        "combo": combos.name,
        "combo_patterns": [str(p) for p in combos],
        "triplet_strategy": strategy_name(parse_strategy(tcfg.triplet_strategy)),
        "self_pair_positive": "cross-modal only",
        "n_train": len(train_ds),
        "n_test": 0 if test_ds is None else len(test_ds),
        "version": __version__,
    })
    params, history = train(train_ds, enc, tcfg, checkpoint_dir=run_dir)
    save_checkpoint(run_dir / "checkpoint.xtlc", enc, params)
    history.write_csv(run_dir / "history.csv", wall_time=cfg.record_wall_time)
    history.write_timing_csv(run_dir / "timing.csv")
    report = None
    if test_ds is not None:
        report = evaluate(params, test_ds, enc.activation, cfg.eval_distance(),
                          _fit_ks(cfg.eval_ks(), len(test_ds)), checkpoint="checkpoint.xtlc")
        report.write_json(run_dir / "eval.json")
        report.write_curve_csv(run_dir / "curve.csv")
    return params, history, report


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    ds = _load_dataset(cfg)
    run_dir = _new_run_dir(Path(cfg.out_dir), cfg.seed, args.run_id)
    try:
        _, history, report = train_run(cfg, run_dir, ds)
    except NonFiniteLossError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    print(f"run directory: {run_dir}")
    if history.records:
        last = history.records[-1]
        print(f"final epoch {last.epoch}: total {last.total:.6f} (label {last.label_loss:.6f}, "
              f"cross {last.cross_loss:.6f})")
    if report is not None:
        _print_map(report)
    return EXIT_OK


def _parse_ks(text):
    try:
        return [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise CliError(f"--ks expects comma-separated integers, got {text!r}") from None


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    try:
        enc, params = load_checkpoint(args.checkpoint)
        ds = load_binary(args.dataset or cfg.dataset)
    except (FileNotFoundError, TypeError) as exc:
        raise CliError(f"cannot read inputs: {exc}") from None
    if args.subset != "all":
        fraction = cfg.train_fraction if cfg.train_fraction is not None else 0.8
        train_ds, test_ds = split(ds, fraction, cfg.effective_split_seed() if args.seed is None else args.seed)
        ds = test_ds if args.subset == "test" else train_ds
    ks = _parse_ks(args.ks) if args.ks else _fit_ks(cfg.eval_ks(), len(ds))
    distance = args.distance or cfg.eval_distance()
    report = evaluate(params, ds, enc.activation, distance, ks, checkpoint=str(args.checkpoint))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "eval.json")
    report.write_curve_csv(out / "curve.csv")
    _print_map(report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    widths = tuple(int(w) for w in args.widths.split(","))
    base = 0 if args.seed is None else args.seed
    seeds = [base + k for k in range(args.repeats)]
    rows = []
    for seed in seeds:
        rows += run_gradcheck(seed, widths, corrupt=args.corrupt_gradient)
    print(f"{'component':<36} {'seed':>5} {'max_rel_err':>12}  verdict")
    for r in rows:
        print(f"{r.component:<36} {r.seed:>5} {r.max_rel_error:>12.3e}  {'PASS' if r.passed else 'FAIL'}")
    worst = max(rows, key=lambda r: r.max_rel_error)
    if not worst.passed:
        print(f"gradient check failed: {worst.component} seed {worst.seed}, worst coordinate "
              f"{worst.worst_param} (rel err {worst.max_rel_error:.3e} >= {TOLERANCE:g})", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def run_ablation(cfg: RunConfig, out_dir: Path, presets=PRESET_NAMES, seeds=None):
    """Train one model per preset and seed; returns {preset: [EvalReport per seed]}."""
    seeds = list(seeds if seeds is not None else cfg.ablation.get("seeds", [cfg.seed]))
    results: dict[str, list[EvalReport]] = {p: [] for p in presets}
    for seed in seeds:
        seeded = dataclasses.replace(cfg, seed=seed, train=dict(cfg.train),
                                     synth=None if cfg.synth is None else dict(cfg.synth))
        ds = _load_dataset(seeded)
        for name in presets:
            run_dir = out_dir / f"{name}-s{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            _, _, report = train_run(seeded, run_dir, ds, combo=name)
            if report is None:
                raise CliError("ablation needs a train/test split (train_fraction)")
            log.info("ablation %s seed %d: map_avg %.4f", name, seed, report.map_avg)
            results[name].append(report)
    return results


def write_ablation_tables(results, out_dir: Path) -> list[tuple[str, float, float, float]]:
    rows = []
    for name, reports in results.items():
        rows.append((name,
                     float(np.median([r.map_a2v for r in reports])),
                     float(np.median([r.map_v2a for r in reports])),
                     float(np.median([r.map_avg for r in reports]))))
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["preset", "map_a2v", "map_v2a", "map_avg"])
        for row in rows:
            w.writerow([row[0]] + [repr(x) for x in row[1:]])
    lines = ["| preset | audio→visual | visual→audio | Average |", "|---|---|---|---|"]
    lines += [f"| {n} | {a:.3f} | {v:.3f} | {m:.3f} |" for n, a, v, m in rows]
    (out_dir / "ablation.md").write_text("\n".join(lines) + "\n")
    return rows


def cmd_ablation(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    presets = cfg.ablation.get("presets", list(PRESET_NAMES))
    for p in presets:
        resolve_combos(p)
    out_dir = _new_run_dir(Path(cfg.out_dir), cfg.seed, args.run_id)
    _write_json(out_dir / "config.json", cfg.effective())
    try:
        results = run_ablation(cfg, out_dir, presets)
    except NonFiniteLossError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from None
    write_ablation_tables(results, out_dir)
    print((out_dir / "ablation.md").read_text(), end="")
    return EXIT_OK


def cmd_export(args) -> int:
    try:
        enc, params = load_checkpoint(args.checkpoint)
        ds = load_binary(args.dataset)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".embeddings.csv")
    export_embeddings(params, ds, out, enc.activation)
    print(f"wrote {2 * len(ds)} rows to {out}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="crosstriplet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--dataset", help="binary dataset directory (overrides the config)")
    p.add_argument("--combo", choices=PRESET_NAMES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--run-id", help="fixed run directory name instead of timestamp + seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="binary dataset directory")
    p.add_argument("--ks", help="comma-separated precision-scope cutoffs, e.g. 10,100,1000")
    p.add_argument("--distance", choices=RANK_DISTANCES)
    p.add_argument("--subset", choices=("all", "train", "test"), default="all",
                   help="evaluate on the whole dataset or one side of the configured split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    p.add_argument("--widths", default="8,8,8")
    p.add_argument("--repeats", type=int, default=3, help="number of consecutive seeds")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablation", parents=[common], help="train and evaluate every combination preset")
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--run-id")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("export-embeddings", parents=[common], help="write label-space embeddings as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def _thread_limit():
    value = os.environ.get("XTL_THREADS")
    if value is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
