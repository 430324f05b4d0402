"""Command-line front end: ``python -m ctxot <command> ...``.

Every command writes one JSON run manifest (resolved config, seed, input
hashes, outputs with checksums, wall-clock).  Errors print a single line
starting with ``error:`` and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .degrade import DegradeConfig, degrade, degrade_suite
from .features import read_features
from .fileio import FormatError, atomic_write_bytes, read_ppm, sha256_file, write_ppm
from .gan import TrainConfig, Trainer, TrainingDiverged, load_checkpoint
from .gan.training import enhance_batch
from .imageops import center_crop_resize
from .metrics import MetricReport
from .plot import save_line_chart
from .retina import RetinaSpec, generate_dataset
from .transport import contextual_value, cost_matrix, emd_exact, rem_distance

__all__ = ["main", "main_exit", "build_parser", "parse_range"]

MANIFEST_NAME = "run_manifest.json"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(2)


def parse_range(text: str) -> list[float]:
    """``start:stop:step`` inclusive of ``stop``; e.g. ``10:100:10`` gives 10 values."""
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed range {text!r}, expected start:stop:step") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"malformed range {text!r}: need step > 0 and stop >= start")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(count)]


def _image_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".ppm")


def _load_pool(directory, size: int) -> tuple[np.ndarray, list[Path]]:
    files = _image_files(directory)
    if not files:
        raise CliError(f"no .ppm images in {directory}")
    return np.stack([center_crop_resize(read_ppm(p), size) for p in files]), files


class _Run:
    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self.start = time.perf_counter()
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.config: dict = {}
        self.seed = getattr(args, "seed", None)

    def read(self, *paths) -> None:
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def wrote(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "argv": {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items() if k != "func"},
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": [str(p) for p in self.outputs],
            "checksums": {str(p): sha256_file(p) for p in self.outputs if p.is_file()},
            "wall_clock_s": round(time.perf_counter() - self.start, 3),
            "version": __version__,
        }

    def finish(self, default_path) -> None:
        text = json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"
        target = self.args.manifest or default_path
        if target is None:
            sys.stderr.write(text)
        else:
            atomic_write_bytes(target, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, run: _Run):
    spec = RetinaSpec(size=args.size, seed=args.seed)
    run.config = {"size": spec.size, "seed": spec.seed, "count": args.count}
    rows = generate_dataset(args.count, spec, args.out)
    out = Path(args.out)
    run.wrote(*(out / name for name, _ in rows), out / "manifest.csv")
    return out / MANIFEST_NAME


def _degrade_config(args) -> DegradeConfig:
    cfg = DegradeConfig()
    if args.config:
        cfg = DegradeConfig.from_text(Path(args.config).read_text())
    return cfg


def cmd_degrade(args, run: _Run):
    cfg = _degrade_config(args)
    run.config = {"degrade": cfg.to_text(), "suite": args.suite}
    if args.config:
        run.read(args.config)
    files = _image_files(args.inp)
    if not files:
        raise CliError(f"no .ppm images in {args.inp}")
    out = Path(args.out)
    for k, path in enumerate(files):
        run.read(path)
        image = read_ppm(path)
        seed = args.seed + k
        if args.suite:
            variants = degrade_suite(image, seed, cfg)
        else:
            variants = {None: degrade(image, replace(cfg, seed=seed))}
        for name, (noisy, applied) in variants.items():
            stem = path.stem if name is None else f"{path.stem}__{name}"
            write_ppm(out / f"{stem}.ppm", noisy)
            atomic_write_bytes(out / f"{stem}.params", applied.to_text().encode("utf-8"))
            run.wrote(out / f"{stem}.ppm", out / f"{stem}.params")
    return out / MANIFEST_NAME


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(image_size=32)
    if args.config:
        cfg = TrainConfig.from_text(Path(args.config).read_text())
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["max_steps"] = args.steps
    return replace(cfg, **overrides)


def cmd_train(args, run: _Run):
    cfg = _train_config(args)
    run.config = {"train": cfg.to_text()}
    run.seed = cfg.seed
    if args.config:
        run.read(args.config)
    clean, clean_files = _load_pool(args.clean, cfg.image_size)
    noisy, noisy_files = _load_pool(args.noisy, cfg.image_size)
    run.read(*clean_files, *noisy_files)
    ckpt = Path(args.out)
    log = Path(args.log) if args.log else ckpt.with_suffix(".loss.csv")
    trainer = Trainer(cfg)
    trainer.fit(clean, noisy, checkpoint=ckpt, log=log)
    run.wrote(ckpt, log)
    return ckpt.with_name(ckpt.name + ".manifest.json")


def cmd_enhance(args, run: _Run):
    run.read(args.ckpt)
    trainer = load_checkpoint(args.ckpt)
    run.config = {"train": trainer.cfg.to_text()}
    run.seed = trainer.cfg.seed
    files = _image_files(args.inp)
    if not files:
        raise CliError(f"no .ppm images in {args.inp}")
    out = Path(args.out)
    for path in files:
        run.read(path)
        result = enhance_batch(trainer, read_ppm(path)[None])[0]
        write_ppm(out / path.name, result)
        run.wrote(out / path.name)
    return out / MANIFEST_NAME


def _evaluate_dirs(ref_dir, test_dir, run: _Run | None = None) -> MetricReport:
    refs = _image_files(ref_dir)
    if not refs:
        raise CliError(f"no .ppm images in {ref_dir}")
    triples = []
    for ref in refs:
        test = Path(test_dir) / ref.name
        if not test.is_file():
            raise CliError(f"{test} missing: test directory must mirror reference file names")
        if run is not None:
            run.read(ref, test)
        triples.append((ref.name, read_ppm(ref), read_ppm(test)))
    return MetricReport.evaluate(triples)


def cmd_eval(args, run: _Run):
    report = _evaluate_dirs(args.ref, args.test, run)
    report.write(args.out)
    run.wrote(Path(args.out))
    return Path(str(args.out) + ".manifest.json")


def cmd_ablate(args, run: _Run):
    base = _train_config(args)
    run.config = {"train": base.to_text(), "lambdas": args.lambdas}
    run.seed = base.seed
    clean, clean_files = _load_pool(args.clean, base.image_size)
    noisy, noisy_files = _load_pool(args.noisy, base.image_size)
    run.read(*clean_files, *noisy_files)
    eval_files = _image_files(args.eval_noisy)
    refs = {p.name: read_ppm(p) for p in _image_files(args.eval_ref)}
    tests = []
    for p in eval_files:
        if p.name not in refs:
            raise CliError(f"{p.name} has no reference image in {args.eval_ref}")
        run.read(p, Path(args.eval_ref) / p.name)
        tests.append((p.name, read_ppm(p)))
    out = Path(args.out)
    rows = []
    for lam in sorted(args.lambdas):
        trainer = Trainer(replace(base, w_ctx=float(lam)))
        trainer.fit(clean, noisy)
        batch = np.stack([img for _, img in tests])
        enhanced = enhance_batch(trainer, batch)
        report = MetricReport.evaluate((name, refs[name], e) for (name, _), e in zip(tests, enhanced))
        rows.append((lam, report.mean_psnr, report.mean_ssim))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lambda", "psnr", "ssim"])
    writer.writerows([(repr(float(l)), repr(p), repr(s)) for l, p, s in rows])
    atomic_write_bytes(out / "ablation.csv", buf.getvalue().encode("ascii"))
    save_line_chart(out / "ablation.ppm", [r[0] for r in rows], [[r[1] for r in rows], [r[2] for r in rows]])
    run.wrote(out / "ablation.csv", out / "ablation.ppm")
    return out / MANIFEST_NAME


def cmd_otcost(args, run: _Run):
    a, b = read_features(args.a), read_features(args.b)
    run.read(args.a, args.b)
    run.config = {"cost": args.cost, "h": args.h, "mode": args.mode}
    kind = "exp" if args.cost == "exp" else "sqeuclid"
    c = cost_matrix(a, b, kind, args.h)
    if args.mode == "emd":
        value = emd_exact(c)[0]
    elif args.mode == "rem":
        value = rem_distance(c)
    else:
        value = contextual_value(c)
    print(f"{value:.12f}")
    return None


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctxot", description="Context-aware optimal-transport image enhancement toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--manifest", type=Path, help="where to write the JSON run manifest")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate synthetic fundus images and a manifest.csv")
    p.add_argument("--count", type=int, required=True, help="number of images")
    p.add_argument("--size", type=int, default=32, help="image side, a power of two >= 32")
    p.add_argument("--seed", type=int, default=0, help="seed of the first image; later images use seed+k")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("degrade", cmd_degrade, "synthesise degraded copies of every .ppm image in a directory")
    p.add_argument("--in", dest="inp", type=Path, required=True, help="directory of clean .ppm images")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--config", type=Path, help="degradation config (key = value text)")
    p.add_argument("--seed", type=int, default=0, help="seed of the first image (name order); later images use seed+k")
    p.add_argument("--suite", action="store_true", help="write the six canonical variants per image")

    p = add("train", cmd_train, "train the generator and critic on unpaired clean/noisy pools")
    p.add_argument("--clean", type=Path, required=True, help="directory of high-quality .ppm images")
    p.add_argument("--noisy", type=Path, required=True, help="directory of low-quality .ppm images")
    p.add_argument("--config", type=Path, help="training config (key = value text)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, help="loss-curve CSV (default: <out>.loss.csv)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--steps", type=int, help="override max_steps")

    p = add("enhance", cmd_enhance, "enhance every .ppm image in a directory with a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint written by train")
    p.add_argument("--in", dest="inp", type=Path, required=True, help="directory of .ppm images")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("eval", cmd_eval, "PSNR/SSIM of test images against same-named references")
    p.add_argument("--ref", type=Path, required=True, help="reference (clean) directory")
    p.add_argument("--test", type=Path, required=True, help="test directory with matching names")
    p.add_argument("--out", type=Path, required=True, help="report CSV")

    p = add("ablate", cmd_ablate, "sweep the contextual weight and plot PSNR/SSIM")
    p.add_argument("--lambdas", type=parse_range, required=True, help="start:stop:step, inclusive")
    p.add_argument("--clean", type=Path, required=True, help="training clean pool")
    p.add_argument("--noisy", type=Path, required=True, help="training noisy pool")
    p.add_argument("--eval-ref", type=Path, required=True, help="held-out clean references")
    p.add_argument("--eval-noisy", type=Path, required=True, help="held-out degraded images, same names")
    p.add_argument("--config", type=Path, help="training config (key = value text)")
    p.add_argument("--steps", type=int, help="training steps per lambda")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = add("otcost", cmd_otcost, "transport value between two feature files")
    p.add_argument("--a", type=Path, required=True, help="feature file (rows i)")
    p.add_argument("--b", type=Path, required=True, help="feature file (columns j)")
    p.add_argument("--cost", choices=["sqeuclid", "exp"], default="exp", help="cost kind")
    p.add_argument("--h", type=float, default=0.5, help="bandwidth of the exp cost")
    p.add_argument("--mode", choices=["emd", "rem", "context"], required=True, help="which value to print")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    run = _Run(args.command, args)
    try:
        manifest_path = args.func(args, run)
        run.finish(manifest_path)
    except TrainingDiverged as exc:
        sys.stderr.write(f"error: training diverged: {exc}\n")
        return 3
    except (CliError, FormatError, FileNotFoundError, PermissionError, ValueError, OSError) as exc:
        reason = " ".join(str(exc).split()) or type(exc).__name__
        sys.stderr.write(f"error: {type(exc).__name__}: {reason}\n")
        return 1
    return 0


def main_exit() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
