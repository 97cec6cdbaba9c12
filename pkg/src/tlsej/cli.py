"""
Command-line entry point.

Every subcommand accepts ``--config``, ``--seed`` and ``--out``. Exit codes:
0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import TlsejError

log = logging.getLogger("tlsej")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output file or directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="tlsej", description="Noise-robust anti-spoofing pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("fixture", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--n", type=int, help="utterances per class")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("augment", help="corrupt a manifest once with the training policy")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--noise", type=Path, help="noise inventory root")

    p = sub.add_parser("maketests", help="generate the 19 corrupted test conditions")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--noise", type=Path, help="evaluation noise inventory root")
    p.add_argument("--train-noise", type=Path, help="training inventory, checked for overlap")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train-frontend", help="pre-train the enhancement front-end alone")
    _common(p)
    p.add_argument("--train", type=Path)
    p.add_argument("--noise", type=Path)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train", help="train a system")
    _common(p)
    p.add_argument("--train", type=Path)
    p.add_argument("--dev", type=Path)
    p.add_argument("--noise", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("score", help="score a manifest with a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("eval", help="EER of a score file")
    _common(p)
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--protocol", type=Path, required=True)

    p = sub.add_parser("report", help="condition-wise EER table")
    _common(p)
    p.add_argument("--protocol", type=Path, required=True)
    p.add_argument("--system", action="append", required=True, metavar="NAME=DIR",
                   help="score directory holding <condition>.txt files; repeatable")

    p = sub.add_parser("ablate", help="train and evaluate a list of named runs")
    _common(p)
    p.add_argument("--runs", type=Path, required=True, help="YAML list of {name, train: overrides}")
    p.add_argument("--train", type=Path)
    p.add_argument("--dev", type=Path)
    p.add_argument("--tests", type=Path, help="directory of condition sub-directories")
    p.add_argument("--noise", type=Path)
    return parser


def _resolve(args):
    from .config import dump_config, load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.train.seed = cfg.seed
    log.info("resolved configuration (seed %d):\n%s", cfg.seed, dump_config(cfg))
    return cfg


def _need(value, flag):
    if value is None:
        raise UsageError(f"{flag} is required (on the command line or in the config paths)")
    return value


def cmd_fixture(args, cfg):
    from .fixture import make_fixture

    fx = cfg.fixture
    if args.n is not None:
        fx = dataclasses.replace(fx, n_per_class=args.n)
    out = make_fixture(_need(args.out, "--out"), fx, seed=cfg.seed, force=args.force)
    print(out)


def cmd_augment(args, cfg):
    import numpy as np

    from .augment import NoiseInventory, augment_online
    from .protocol import ManifestEntry, read_manifest, write_manifest
    from .signal import read_wav, write_wav

    out = Path(_need(args.out, "--out"))
    noise = args.noise or cfg.paths.noise_train
    inv = NoiseInventory.from_dir(noise) if noise else None
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for e in read_manifest(args.manifest):
        y, rec = augment_online(read_wav(e.path), cfg.train.augmentation, rng, inv, e.utt_id)
        path = out / f"{e.utt_id}.wav"
        write_wav(path, y)
        rows.append(ManifestEntry(e.utt_id, path, e.label, dict(rec.to_dict(), clean_path=str(Path(e.path).resolve()))))
    write_manifest(out / "manifest.tsv", rows)
    print(out / "manifest.tsv")


def cmd_maketests(args, cfg):
    from .augment import NoiseInventory, generate_test_sets
    from .protocol import read_manifest

    noise = _need(args.noise or cfg.paths.noise_eval, "--noise")
    inv = NoiseInventory.from_dir(noise)
    train_noise = args.train_noise or cfg.paths.noise_train
    if train_noise:
        NoiseInventory.from_dir(train_noise).check_disjoint(inv)
    written = generate_test_sets(read_manifest(args.manifest), _need(args.out, "--out"), inv,
                                 seed=cfg.seed, force=args.force)
    for cond, path in written.items():
        print(f"{cond}\t{path}")


def cmd_train_frontend(args, cfg):
    from .backends.weights import export_manifest
    from .protocol import read_manifest
    from .trainer import pretrain_frontend_on

    tc = cfg.train
    noise = args.noise or cfg.paths.noise_train
    if noise:
        tc = dataclasses.replace(tc, noise_dir=str(noise))
    entries = read_manifest(_need(args.train or cfg.paths.train_manifest, "--train"))
    epochs = args.epochs if args.epochs is not None else max(1, tc.frontend_pretrain_epochs)
    model, hist = pretrain_frontend_on(tc, entries, epochs=epochs)
    out = export_manifest(model, _need(args.out, "--out"))
    for i, v in enumerate(hist):
        print(f"{i}\t{v:.6f}")
    log.info("front-end manifest written to %s (mse %.4f -> %.4f)", out, hist[0], hist[-1])


def cmd_train(args, cfg):
    from .trainer import train

    tc = cfg.train
    if args.noise or cfg.paths.noise_train:
        tc = dataclasses.replace(tc, noise_dir=str(args.noise or cfg.paths.noise_train))
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    out = Path(_need(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    from .config import dump_config

    dump_config(dataclasses.replace(cfg, train=tc), out / "resolved_config.yaml")
    trainer = train(tc, _need(args.train or cfg.paths.train_manifest, "--train"),
                    _need(args.dev or cfg.paths.dev_manifest, "--dev"), out, resume=args.resume)
    st = trainer.state
    print(f"best dev total loss {st.best_dev:.6f} at epoch {st.best_epoch}; checkpoint {out / 'best'}")


def cmd_score(args, cfg):
    from .evaluate import score_dataset, write_scores
    from .protocol import read_manifest
    from .trainer import load_checkpoint

    stack, _, _ = load_checkpoint(args.checkpoint)
    scores = score_dataset(stack, read_manifest(args.manifest))
    out = _need(args.out, "--out")
    write_scores(out, scores)
    if scores.errors:
        print(f"{len(scores.errors)} trials could not be scored", file=sys.stderr)
    print(f"{len(scores)} scores written to {out}")


def _labels(protocol):
    from .protocol import parse_protocol

    return {e.utt_id: e.label for e in parse_protocol(protocol)}


def cmd_eval(args, cfg):
    from .evaluate import compute_eer, join_scores, read_scores

    s = join_scores(read_scores(args.scores), _labels(args.protocol))
    eer, theta = compute_eer(s)
    print(f"EER%: {100 * eer:.4f}")
    log.info("threshold %.6f over %d trials", theta, len(s))


def cmd_report(args, cfg):
    from .evaluate import condition_report, join_scores, read_scores

    labels = _labels(args.protocol)
    results = {}
    for spec in args.system:
        name, sep, d = spec.partition("=")
        if not sep:
            raise UsageError(f"--system expects NAME=DIR, got {spec!r}")
        results[name] = {p.stem: join_scores(read_scores(p), labels) for p in sorted(Path(d).glob("*.txt"))}
    report = condition_report(results)
    text = report.to_text()
    print(text, end="")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text, encoding="utf-8")
        (args.out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")


def cmd_ablate(args, cfg):
    import yaml

    from .errors import ConfigError
    from .schema import from_dict, to_dict
    from .trainer import TrainConfig, ablation_matrix, ablation_tsv

    spec = yaml.safe_load(args.runs.read_text(encoding="utf-8"))
    if not isinstance(spec, list):
        raise ConfigError(f"{args.runs}: expected a list of runs")
    base = to_dict(cfg.train)
    if args.noise or cfg.paths.noise_train:
        base["noise_dir"] = str(args.noise or cfg.paths.noise_train)
    runs = []
    for i, item in enumerate(spec):
        if not isinstance(item, dict) or "name" not in item:
            raise ConfigError(f"{args.runs}: run {i} needs a name")
        merged = _merge(base, item.get("train") or {})
        runs.append((str(item["name"]), from_dict(TrainConfig, merged, f"runs[{i}].train")))
    tests = Path(_need(args.tests or cfg.paths.test_sets, "--tests"))
    test_sets = {d.name: d / "manifest.tsv" for d in sorted(tests.iterdir()) if (d / "manifest.tsv").exists()}
    out = Path(_need(args.out, "--out"))
    rows = ablation_matrix(runs, _need(args.train or cfg.paths.train_manifest, "--train"),
                           _need(args.dev or cfg.paths.dev_manifest, "--dev"), test_sets, out_dir=out)
    text = ablation_tsv(rows)
    (out / "ablation.tsv").write_text(text, encoding="utf-8")
    print(text, end="")


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


COMMANDS = {
    "fixture": cmd_fixture,
    "augment": cmd_augment,
    "maketests": cmd_maketests,
    "train-frontend": cmd_train_frontend,
    "train": cmd_train,
    "score": cmd_score,
    "eval": cmd_eval,
    "report": cmd_report,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _resolve(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"tlsej {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (TlsejError, OSError, ValueError, RuntimeError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
