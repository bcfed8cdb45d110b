"""Command-line entry point: ``python3 -m ffsv <command> [options]``.

Exit status is 0 on success, 1 when some inputs failed but the rest were
processed, and 2 for configuration or usage errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .audio_io import WavError, read_wav, write_wav
from .config import ConfigError, PipelineConfig, format_config, load_config
from .dsp import NoSpeechError
from .nn.checkpoint import CheckpointError
from .roomsim import convolve_rir, mix_noise, sample_room_configs, simulate_rir
from .scoring import read_trials, write_scores

log = logging.getLogger("ffsv")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="config file of 'section.key = value' lines")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", help="output directory (default: paths.out_dir)")
    p.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffsv", description="Far-field speaker verification toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="run the front end (WPE / beamformer / selection) on wav files")
    _common(p)
    p.add_argument("inputs", nargs="+", help="multichannel wav files")

    p = sub.add_parser("simulate", help="sample rooms, write RIRs, optionally reverberate inputs")
    _common(p)
    p.add_argument("inputs", nargs="*", help="mono wav files to pass through each room")
    p.add_argument("--noise", help="noise wav mixed in at simulate.snr_db")

    p = sub.add_parser("train", help="two-stage training from a manifest")
    _common(p)
    p.add_argument("--manifest", help="'wav-path speaker-id [domain-id]' lines (default: paths.manifest)")

    p = sub.add_parser("score", help="score a trial list with a checkpoint")
    _common(p)
    p.add_argument("--trials", help="default: paths.trials")
    p.add_argument("--checkpoint", help="default: paths.checkpoint")
    p.add_argument("--audio-root", help="default: paths.audio_root")

    p = sub.add_parser("ablate", help="16-way stage ablation on the seeded synthetic devset")
    _common(p)

    p = sub.add_parser("tune-theta", help="grid search of selection threshold and enrollment RIR set")
    _common(p)
    p.add_argument("--manifest", help="dev manifest with 'close' and 'far' domains")
    p.add_argument("--checkpoint", help="default: paths.checkpoint")
    p.add_argument("--thetas", default="0.5,0.6,0.7,0.8,0.9,1.01")
    p.add_argument("--t60-sets", default="0.2:0.4,0.4:0.6,0.6:0.9",
                   help="comma-separated lo:hi T60 ranges in seconds")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(value, what):
    if not value:
        raise ConfigError(f"{what} is not set")
    return value


def _existing(value, what):
    if not Path(_need(value, what)).exists():
        raise ConfigError(f"{what} {value} does not exist")
    return value


def cmd_enhance(args, cfg) -> int:
    out = _out_dir(args, cfg)
    net = None
    if cfg.stages.selection:
        net = pl.load_net(_existing(cfg.paths.checkpoint, "paths.checkpoint"), cfg)
    failed = 0
    decisions = []
    for path in args.inputs:
        try:
            res = pl.select_front_end(read_wav(path), cfg, net)
        except (OSError, WavError, NoSpeechError, ValueError) as exc:
            log.error("%s: %s", path, exc)
            failed += 1
            continue
        write_wav(res.waveform, out / Path(path).name, "float32")
        score = float("nan") if res.score is None else res.score
        decisions.append(f"{Path(path).name}\t{score:.9g}\t{res.decision or 'no_selection'}\n")
    (out / "selection.tsv").write_text("".join(decisions))
    return _status(failed, len(args.inputs))


def _status(failed, total) -> int:
    return EXIT_OK if failed == 0 else EXIT_PARTIAL


def cmd_simulate(args, cfg) -> int:
    out = _out_dir(args, cfg)
    rooms = sample_room_configs(cfg.simulate.num_rooms, cfg.seed, cfg.room)
    rirs = pl.parallel_map(simulate_rir, rooms, args.workers)
    noise = read_wav(args.noise) if args.noise else None
    failed = 0
    for r, (room, rir) in enumerate(zip(rooms, rirs)):
        (out / f"room{r:03d}.txt").write_text(room.to_text())
        write_wav(rir.as_waveform(), out / f"room{r:03d}_rir.wav", "float32")
        for path in args.inputs:
            try:
                w = read_wav(path)
                rev = convolve_rir(w, rir)
                if noise is not None:
                    rev = mix_noise(rev, noise, cfg.simulate.snr_db)
                write_wav(rev, out / f"{Path(path).stem}_room{r:03d}.wav", "float32")
            except (OSError, WavError, ValueError) as exc:
                log.error("%s in room %d: %s", path, r, exc)
                failed += 1
    return _status(failed, len(rooms) * len(args.inputs))


def cmd_train(args, cfg) -> int:
    out = _out_dir(args, cfg)
    entries = pl.read_manifest(_need(args.manifest or cfg.paths.manifest, "paths.manifest"))
    if cfg.stages.dat and (any(e.domain is None for e in entries)
                           or len({e.domain for e in entries}) < 2):
        raise ConfigError("stages.dat needs a manifest with domain ids covering two or more domains")
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / "model.ffnn"
    pl.train_and_save(entries, cfg, cfg.stages.dat, ckpt, out / "loss_history.tsv", args.workers)
    (out / "config.txt").write_text(format_config(cfg))
    log.info("wrote %s", ckpt)
    return EXIT_OK


def cmd_score(args, cfg) -> int:
    out = _out_dir(args, cfg)
    trials = read_trials(_need(args.trials or cfg.paths.trials, "paths.trials"))
    net = pl.load_net(_existing(args.checkpoint or cfg.paths.checkpoint, "checkpoint"), cfg)
    root = _need(args.audio_root or cfg.paths.audio_root, "paths.audio_root")
    run = pl.score_trials_with(trials, cfg, net, root, args.workers)
    kept = [(t, s) for t, s in zip(trials, run.scores) if s is not None]
    write_scores(out / "scores.tsv", [t for t, _ in kept], [s for _, s in kept])
    report = run.report(cfg)
    if report:
        (out / "report.txt").write_text(report)
        log.info("%s", report.splitlines()[0])
    return _status(len(run.excluded), len(trials))


def cmd_ablate(args, cfg) -> int:
    out = _out_dir(args, cfg)
    rows = pl.run_ablation(cfg, out, args.workers)
    table = pl.format_ablation(rows)
    (out / "ablation.txt").write_text(table)
    with open(out / "ablation.tsv", "w") as fh:
        fh.write("wpe\tbeamformer\tdat\tselection\teer\tmin_dcf\terror\n")
        for r in rows:
            eer = "" if r.eer is None else f"{r.eer:.9g}"
            dcf = "" if r.min_dcf is None else f"{r.min_dcf:.9g}"
            fh.write(f"{int(r.wpe)}\t{int(r.beamformer)}\t{int(r.dat)}\t{int(r.selection)}\t{eer}\t{dcf}\t{r.error or ''}\n")
    log.info("ablation table:\n%s", table.rstrip())
    return _status(sum(r.eer is None for r in rows), len(rows))


def cmd_tune_theta(args, cfg) -> int:
    out = _out_dir(args, cfg)
    try:
        thetas = [float(t) for t in args.thetas.split(",")]
        t60_sets = pl.parse_t60_sets(args.t60_sets)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    entries = pl.read_manifest(_need(args.manifest or cfg.paths.manifest, "paths.manifest"))
    net = pl.load_net(_existing(args.checkpoint or cfg.paths.checkpoint, "checkpoint"), cfg)
    result = pl.run_tuning(cfg, entries, net, t60_sets, thetas)
    with open(out / "tuning.tsv", "w") as fh:
        fh.write("t60_lo\tt60_hi\ttheta\teer\n")
        for (lo, hi), theta, value in result.grid:
            fh.write(f"{lo:g}\t{hi:g}\t{theta:g}\t{value:.9g}\n")
    lo, hi = result.rir_set
    line = f"theta={result.theta:g} t60={lo:g}:{hi:g} dev_EER={100 * result.eer:.4f}%"
    (out / "best.txt").write_text(line + "\n")
    log.info("%s", line)
    return EXIT_OK


COMMANDS = {
    "enhance": cmd_enhance,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "score": cmd_score,
    "ablate": cmd_ablate,
    "tune-theta": cmd_tune_theta,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, WavError, CheckpointError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
