"""End-to-end flows: front-end enhancement, training from a manifest, trial
scoring, the synthetic devset, the toggle ablation and threshold tuning."""
from __future__ import annotations

import copy
import dataclasses
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .audio_io import MultichannelWaveform, read_wav, to_mono, write_wav
from .beamform import cgmm_mvdr
from .config import PipelineConfig
from .dsp import NoSpeechError, istft, stft
from .nn.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .nn.model import MicroResNetBam
from .nn.train import Dataset, TrainHistory, extract_embedding, speech_features, train
from .roomsim import (
    RoomRanges,
    convolve_rir,
    mix_noise,
    reflection_for_t60,
    sample_room_configs,
    simulate_rir,
    with_reflection,
)
from .scoring import (
    KEEP_ENHANCED,
    DevPair,
    Trial,
    average_embeddings,
    cosine_score,
    eer,
    format_report,
    min_dcf,
    read_trials,
    select_enhanced,
    tune_theta,
    write_scores,
)
from .synth import Speaker, synth_utterance
from .wpe import wpe

log = logging.getLogger(__name__)


def parallel_map(fn, items, workers: int = 1):
    """Order-preserving map, in worker processes when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- front end --------------------------------------------------------------------------

def front_end(w: MultichannelWaveform, cfg: PipelineConfig) -> MultichannelWaveform:
    """Optional WPE then optional CGMM-MVDR; always returns mono.

    With both stages off this is exactly channel 0. The beamformer is
    skipped (with a warning) on single-channel input.
    """
    st = cfg.stages
    beamform = st.beamformer and w.num_channels >= 2
    if st.beamformer and not beamform:
        log.warning("beamformer needs multichannel input; using channel 0")
    if not (st.wpe or beamform):
        return to_mono(w, 0)
    s = stft(w, cfg.stft)
    if st.wpe:
        s = wpe(s, cfg.wpe)
    s = cgmm_mvdr(s, cfg.cgmm) if beamform else s.with_data(s.data[:1])
    return istft(s, w.num_samples)


@dataclass
class Enhanced:
    waveform: MultichannelWaveform
    embedding: np.ndarray | None = None
    score: float | None = None
    decision: str | None = None


def select_front_end(w: MultichannelWaveform, cfg: PipelineConfig, net: MicroResNetBam | None,
                     enhanced: MultichannelWaveform | None = None) -> Enhanced:
    """Front end plus, when enabled, the cosine check against channel 0.

    ``enhanced`` may carry a precomputed ``front_end`` output. An enhanced
    signal with no detectable speech is discarded like a low score.
    """
    enhanced = front_end(w, cfg) if enhanced is None else enhanced
    if not cfg.stages.selection:
        return Enhanced(enhanced)
    if net is None:
        raise ValueError("selection needs an embedding network")
    original = to_mono(w, 0)
    e_orig = extract_embedding(original, net)
    try:
        e_enh = extract_embedding(enhanced, net)
    except NoSpeechError:
        return Enhanced(original, e_orig, float("nan"), "keep_original")
    score = cosine_score(e_orig, e_enh)
    decision = select_enhanced(e_orig, e_enh, cfg.selection)
    if decision == KEEP_ENHANCED:
        return Enhanced(enhanced, e_enh, score, decision)
    return Enhanced(original, e_orig, score, decision)


def test_embedding(w, cfg, net, enhanced=None) -> np.ndarray:
    out = select_front_end(w, cfg, net, enhanced)
    return out.embedding if out.embedding is not None else extract_embedding(out.waveform, net)


def enroll_embedding(w, net) -> np.ndarray:
    return extract_embedding(to_mono(w, 0), net)


# --- networks and training ------------------------------------------------------------------

def load_net(path, cfg: PipelineConfig) -> MicroResNetBam:
    """Build the configured network with the head size stored in ``path``, then load it."""
    tensors = read_checkpoint(path)
    if "speaker_head.W" not in tensors:
        raise ValueError(f"{path}: no speaker head in checkpoint")
    net_cfg = dataclasses.replace(cfg.net, num_speakers=int(tensors["speaker_head.W"].shape[1]))
    return load_checkpoint(MicroResNetBam(net_cfg), path).eval()


@dataclass
class ManifestEntry:
    path: str
    speaker: str
    domain: str | None


def parse_manifest(lines, base_dir=None) -> list[ManifestEntry]:
    entries = []
    for n, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) not in (2, 3):
            raise ValueError(f"manifest line {n}: expected 'wav-path speaker-id [domain-id]'")
        path = Path(parts[0])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        entries.append(ManifestEntry(str(path), parts[1], parts[2] if len(parts) == 3 else None))
    return entries


def read_manifest(path) -> list[ManifestEntry]:
    with open(path) as fh:
        return parse_manifest(fh, Path(path).parent)


def manifest_dataset(entries, workers=1) -> tuple[Dataset, list[str], list[str]]:
    speakers = sorted({e.speaker for e in entries})
    has_domains = all(e.domain is not None for e in entries)
    domains = sorted({e.domain for e in entries}) if has_domains else []
    feats = parallel_map(_load_features, [e.path for e in entries], workers)
    spk = np.array([speakers.index(e.speaker) for e in entries])
    dom = np.array([domains.index(e.domain) for e in entries]) if has_domains else None
    return Dataset(feats, spk, dom), speakers, domains


def _load_features(path):
    return speech_features(to_mono(read_wav(path), 0))


@dataclass
class TrainOutcome:
    net: MicroResNetBam
    history: list  # (stage, epoch, loss, accuracy)


def pretrain(data: Dataset, cfg: PipelineConfig) -> TrainOutcome:
    """Stage 1: speaker-only training from a seeded initialisation."""
    net_cfg = dataclasses.replace(cfg.net, num_speakers=int(data.speakers.max()) + 1, seed=cfg.seed)
    net = MicroResNetBam(net_cfg)
    t = dataclasses.replace(cfg.train, crop_frames=net_cfg.input_frames, seed=cfg.seed,
                            epochs=cfg.schedule.pretrain_epochs)
    hist = train(net, data, t, "speaker")
    return TrainOutcome(net, [("pretrain", i, l, a) for i, (l, a) in
                              enumerate(zip(hist.epoch_loss, hist.epoch_accuracy))])


def finetune(start: TrainOutcome, data: Dataset, cfg: PipelineConfig, use_dat: bool) -> TrainOutcome:
    """Stage 2 on a copy of ``start``: DAT when ``use_dat``, otherwise more speaker-only epochs.

    The learning rate continues from where the pre-training schedule ended.
    """
    if use_dat and (data.domains is None or len(np.unique(data.domains)) < 2):
        raise ValueError("the DAT stage needs domain ids with at least two domains")
    net = copy.deepcopy(start.net)
    rows = list(start.history)
    if cfg.schedule.finetune_epochs:
        t = dataclasses.replace(cfg.train, crop_frames=cfg.net.input_frames, seed=cfg.seed + 1,
                                epochs=cfg.schedule.finetune_epochs,
                                learning_rate=cfg.train.lr_at(cfg.schedule.pretrain_epochs))
        stage = "dat" if use_dat else "speaker"
        hist = train(net, data, t, stage)
        rows += [("finetune-" + stage, i, l, a)
                 for i, (l, a) in enumerate(zip(hist.epoch_loss, hist.epoch_accuracy))]
    return TrainOutcome(net.eval(), rows)


def train_two_stage(data: Dataset, cfg: PipelineConfig, use_dat: bool) -> TrainOutcome:
    if use_dat and (data.domains is None or len(np.unique(data.domains)) < 2):
        raise ValueError("the DAT stage needs domain ids with at least two domains")
    return finetune(pretrain(data, cfg), data, cfg, use_dat)


def write_history(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("stage\tepoch\tloss\taccuracy\n")
        for stage, epoch, loss, acc in rows:
            fh.write(f"{stage}\t{epoch}\t{loss:.9g}\t{acc:.6f}\n")


def save_outcome(outcome: TrainOutcome, cfg: PipelineConfig, checkpoint, history_path) -> MicroResNetBam:
    """Write checkpoint and history; return the network as stored (float32 weights)."""
    save_checkpoint(outcome.net, checkpoint)
    write_history(history_path, outcome.history)
    return load_net(checkpoint, cfg)


def train_and_save(entries, cfg: PipelineConfig, use_dat: bool, checkpoint, history_path, workers=1):
    data, _, _ = manifest_dataset(entries, workers)
    outcome = train_two_stage(data, cfg, use_dat)
    return save_outcome(outcome, cfg, checkpoint, history_path), outcome.history


# --- scoring -----------------------------------------------------------------------------------

def resolve_audio(root, uid: str) -> list[Path]:
    """``<root>/<uid>.wav``, or every wav inside ``<root>/<uid>/`` (sorted)."""
    base = Path(root)
    single = base / f"{uid}.wav"
    if single.is_file():
        return [single]
    folder = base / uid
    if folder.is_dir():
        wavs = sorted(folder.glob("*.wav"))
        if wavs:
            return wavs
    raise FileNotFoundError(f"no audio for id {uid!r} under {base}")


def _embed_id(job, cfg, net):
    side, paths = job
    try:
        embs = []
        for p in paths:
            w = read_wav(p)
            embs.append(enroll_embedding(w, net) if side == "enroll" else test_embedding(w, cfg, net))
        return average_embeddings(embs), None
    except NoSpeechError as exc:
        return None, f"no speech: {exc}"


@dataclass
class ScoreRun:
    trials: list
    scores: list  # float or None when excluded
    excluded: list  # (trial, reason)
    eer: float | None = None
    min_dcf: float | None = None

    def report(self, cfg: PipelineConfig) -> str | None:
        if self.eer is None:
            return None
        return (format_report(self.eer, self.min_dcf, cfg.dcf)
                + f"\ntrials_scored={sum(s is not None for s in self.scores)} excluded={len(self.excluded)}\n")


def score_trials_with(trials, cfg: PipelineConfig, net, audio_root, workers=1, cache=None) -> ScoreRun:
    """Embed every id once (test side through the front end) and score all trials."""
    jobs = sorted({("enroll", t.enroll) for t in trials} | {("test", t.test) for t in trials})
    cache = {} if cache is None else cache
    todo, resolved = [], []
    for side, uid in (j for j in jobs if j not in cache):
        try:
            resolved.append((side, resolve_audio(audio_root, uid)))
            todo.append((side, uid))
        except FileNotFoundError as exc:
            cache[(side, uid)] = (None, f"missing audio: {exc}")
    for job, result in zip(todo, parallel_map(partial(_embed_id, cfg=cfg, net=net), resolved, workers)):
        cache[job] = result
    scores, excluded = [], []
    for t in trials:
        (e, why_e), (x, why_x) = cache[("enroll", t.enroll)], cache[("test", t.test)]
        if e is None or x is None:
            scores.append(None)
            excluded.append((t, why_e or why_x))
            log.warning("trial %s %s excluded (%s)", t.enroll, t.test, why_e or why_x)
            continue
        scores.append(cosine_score(e, x))
    run = ScoreRun(list(trials), scores, excluded)
    labelled = [(s, t.label) for t, s in zip(trials, scores) if s is not None and t.label is not None]
    if len({lab for _, lab in labelled}) == 2:
        s, lab = zip(*labelled)
        run.eer = eer(s, lab)[0]
        run.min_dcf = min_dcf(s, lab, cfg.dcf)[0]
    return run


# --- synthetic devset ------------------------------------------------------------------------

@dataclass
class DevsetFiles:
    root: Path
    audio: Path
    train_manifest: Path
    trials: Path
    dev_manifest: Path


def _rng(seed, *tags):
    return np.random.default_rng([seed, *tags])


def _unit_power(x):
    p = np.mean(x ** 2)
    return x / np.sqrt(p) if p > 0 else x


def speech_shaped_noise(rng, n: int, fs: int) -> np.ndarray:
    """Stationary noise with the long-term spectrum of an unrelated synthetic talker."""
    talker = synth_utterance(Speaker.random(rng), n / fs, fs, rng).samples[0]
    mag = np.abs(np.fft.rfft(talker))
    mag = np.convolve(mag, np.ones(65) / 65, mode="same")  # keep the envelope, drop the harmonics
    phase = rng.uniform(0, 2 * np.pi, mag.shape)
    return np.fft.irfft(mag * np.exp(1j * phase), n)


def add_sensor_noise(x: np.ndarray, snr_db: float, rng) -> np.ndarray:
    """Independent white noise per channel at ``snr_db`` below the signal's mean power.

    Synthetic audio otherwise has almost no energy at high frequencies,
    and log-mel features of such near-empty bands swing on any processing
    leakage.
    """
    power = np.mean(x ** 2)
    if power == 0:
        return x
    return x + np.sqrt(power / 10 ** (snr_db / 10)) * rng.normal(size=x.shape)


def close_talk(src: MultichannelWaveform, rng, cfg: PipelineConfig) -> MultichannelWaveform:
    """A close-talk recording: the dry source plus microphone self-noise."""
    return MultichannelWaveform(add_sensor_noise(src.samples, cfg.devset.sensor_snr_db, rng), src.sample_rate)


def far_field_scene(src: MultichannelWaveform, rng, cfg: PipelineConfig, num_mics: int, snr_db: float):
    """Reverberant array capture of ``src`` in a sampled room plus noise.

    The noise mixes independent speech-shaped point sources spread around
    the room (an approximately diffuse field) with noise that is
    independent per microphone, and everything passes a microphone
    high-pass. Returns ``(mixture, speech_image)``, both
    peak-normalised by the same gain.
    """
    dv = cfg.devset
    ranges = dataclasses.replace(cfg.room, num_mics=num_mics, max_order=16, distance=dv.distance,
                                 length=(4.0, 8.0), width=(4.0, 8.0))
    room = sample_room_configs(1, int(rng.integers(2**31)), ranges)[0]
    try:
        room = with_reflection(room, reflection_for_t60(room.dimensions, float(rng.uniform(*dv.t60))))
    except ValueError:
        pass  # T60 unreachable in this room; keep the sampled walls
    n = src.num_samples
    image = convolve_rir(src, simulate_rir(room)).samples[:, :n]
    lx, ly, lz = room.dimensions
    smooth = partial(speech_shaped_noise, n=n, fs=src.sample_rate)
    diffuse = np.zeros((num_mics, n))
    for _ in range(dv.noise_sources):
        pos = (float(rng.uniform(0.3, lx - 0.3)), float(rng.uniform(0.3, ly - 0.3)),
               float(rng.uniform(0.3, lz - 0.3)))
        rir = simulate_rir(dataclasses.replace(room, source=pos, max_order=6))
        diffuse += convolve_rir(MultichannelWaveform(smooth(rng), src.sample_rate), rir).samples[:, :n]
    independent = np.stack([smooth(rng) for _ in range(num_mics)])
    noise = np.sqrt(dv.uncorrelated_noise) * _unit_power(independent)
    if dv.noise_sources:
        noise = noise + np.sqrt(1 - dv.uncorrelated_noise) * _unit_power(diffuse)
    mixed = mix_noise(MultichannelWaveform(image, src.sample_rate),
                      MultichannelWaveform(noise, src.sample_rate), snr_db).samples
    mixed = add_sensor_noise(mixed, dv.sensor_snr_db, rng)
    if dv.highpass_hz > 0:
        sos = butter(4, dv.highpass_hz, btype="highpass", fs=src.sample_rate, output="sos")
        mixed, image = sosfilt(sos, mixed, axis=-1), sosfilt(sos, image, axis=-1)
    gain = 0.5 / max(np.max(np.abs(mixed)), 1e-12)
    return (MultichannelWaveform(gain * mixed, src.sample_rate),
            MultichannelWaveform(gain * image, src.sample_rate))


def _far_field(src, rng, cfg, num_mics, snr_db):
    return far_field_scene(src, rng, cfg, num_mics, snr_db)[0]


def _utterance(spk: Speaker, cfg, rng):
    return synth_utterance(spk, cfg.devset.duration, 16000, rng)


def build_devset(cfg: PipelineConfig, root) -> DevsetFiles:
    """Write the seeded synthetic train / enroll / test data under ``root``.

    Training speakers get close-talk (domain ``close``) and far-field
    (``far``, channel 0 of a simulated array) utterances. Evaluation
    speakers enroll with close-talk audio and are tested with multichannel
    far-field captures.
    """
    dv, seed = cfg.devset, cfg.seed
    root = Path(root)
    audio = root / "audio"
    audio.mkdir(parents=True, exist_ok=True)
    write = lambda w, name: write_wav(w, audio / f"{name}.wav", "float32")

    train_lines = []
    for i in range(dv.train_speakers):
        spk = Speaker.random(_rng(seed, 1, i))
        for k in range(dv.train_utterances):
            rng = _rng(seed, 2, i, k)
            src = _utterance(spk, cfg, rng)
            write(close_talk(src, rng, cfg), f"trn_s{i:02d}_{k:02d}_close")
            far = _far_field(src, rng, cfg, 1, float(rng.uniform(*dv.snr_db)))
            write(far, f"trn_s{i:02d}_{k:02d}_far")
            train_lines += [f"audio/trn_s{i:02d}_{k:02d}_close.wav spk{i:02d} close",
                            f"audio/trn_s{i:02d}_{k:02d}_far.wav spk{i:02d} far"]

    trial_lines, dev_lines = [], []
    for j in range(dv.eval_speakers):
        spk = Speaker.random(_rng(seed, 3, j))
        enroll_id = f"enr_s{j:02d}"
        if dv.enroll_utterances > 1:
            (audio / enroll_id).mkdir(exist_ok=True)
        for k in range(dv.enroll_utterances):
            rng = _rng(seed, 4, j, k)
            w = close_talk(_utterance(spk, cfg, rng), rng, cfg)
            name = f"{enroll_id}/{k:02d}" if dv.enroll_utterances > 1 else enroll_id
            write(w, name)
            dev_lines.append(f"audio/{name}.wav eval{j:02d} close")
        for k in range(dv.test_utterances):
            rng = _rng(seed, 5, j, k)
            src = _utterance(spk, cfg, rng)
            write(_far_field(src, rng, cfg, dv.num_mics, float(rng.uniform(*dv.snr_db))), f"tst_s{j:02d}_{k:02d}")
            dev_lines.append(f"audio/tst_s{j:02d}_{k:02d}.wav eval{j:02d} far")
    for j in range(dv.eval_speakers):
        for jj in range(dv.eval_speakers):
            for k in range(dv.test_utterances):
                trial_lines.append(f"enr_s{j:02d} tst_s{jj:02d}_{k:02d} {int(j == jj)}")

    files = DevsetFiles(root, audio, root / "train.manifest", root / "trials.txt", root / "dev.manifest")
    files.train_manifest.write_text("\n".join(train_lines) + "\n")
    files.trials.write_text("\n".join(trial_lines) + "\n")
    files.dev_manifest.write_text("\n".join(dev_lines) + "\n")
    return files


# --- ablation ------------------------------------------------------------------------------

TOGGLES = ("wpe", "beamformer", "dat", "selection")


@dataclass
class AblationRow:
    wpe: bool
    beamformer: bool
    dat: bool
    selection: bool
    eer: float | None
    min_dcf: float | None
    error: str | None = None


def ablation_grid():
    return [dict(zip(TOGGLES, bits)) for bits in itertools.product((False, True), repeat=4)]


def cell_tag(cell) -> str:
    """File stem for a grid cell, e.g. ``wpe1_bf0_dat1_sel0``."""
    return "_".join(f"{short}{int(cell[name])}" for short, name in
                    zip(("wpe", "bf", "dat", "sel"), TOGGLES))


def _front_end_job(args):
    path, cfg = args
    return front_end(read_wav(path), cfg)


def run_ablation(cfg: PipelineConfig, out_dir, workers=1) -> list[AblationRow]:
    """All 16 (WPE, beamformer, DAT, selection) cells on the seeded devset.

    Front-end toggles act on test audio only, so one pre-training and one
    base plus one DAT fine-tune serve all sixteen cells. Devset audio is
    read back from disk and both networks are reloaded from their
    checkpoints, so every cell goes through the same code as ``score``.
    """
    out = Path(out_dir)
    files = build_devset(cfg, out / "devset")
    data, _, _ = manifest_dataset(read_manifest(files.train_manifest), workers)
    start = pretrain(data, cfg)
    nets = {}
    for use_dat in (False, True):
        tag = "dat" if use_dat else "base"
        nets[use_dat] = save_outcome(finetune(start, data, cfg, use_dat), cfg,
                                     out / f"model_{tag}.ffnn", out / f"history_{tag}.tsv")
        log.info("trained %s network", tag)

    trials = read_trials(files.trials)
    test_ids = sorted({t.test for t in trials})
    paths = {uid: resolve_audio(files.audio, uid)[0] for uid in test_ids}

    # front-end outputs do not depend on the network; compute each variant once
    enhanced = {}
    for w_on, b_on in itertools.product((False, True), repeat=2):
        if not (w_on or b_on):
            continue
        fe_cfg = cfg.with_stages(wpe=w_on, beamformer=b_on)
        outs = parallel_map(_front_end_job, [(paths[u], fe_cfg) for u in test_ids], workers)
        enhanced[(w_on, b_on)] = dict(zip(test_ids, outs))
        log.info("front end wpe=%s bf=%s done", w_on, b_on)

    score_dir = out / "scores"
    score_dir.mkdir(exist_ok=True)
    rows = []
    for cell in ablation_grid():
        cell_cfg = cfg.with_stages(**cell)
        net = nets[cell["dat"]]
        try:
            cache = {}
            pre = enhanced.get((cell["wpe"], cell["beamformer"]))
            if pre is not None:
                for uid in test_ids:
                    w = read_wav(paths[uid])
                    try:
                        cache[("test", uid)] = (average_embeddings([test_embedding(w, cell_cfg, net, pre[uid])]), None)
                    except NoSpeechError as exc:
                        cache[("test", uid)] = (None, f"no speech: {exc}")
            run = score_trials_with(trials, cell_cfg, net, files.audio, workers, cache)
            kept = [(t, x) for t, x in zip(trials, run.scores) if x is not None]
            write_scores(score_dir / f"{cell_tag(cell)}.tsv", [t for t, _ in kept], [x for _, x in kept])
            rows.append(AblationRow(**cell, eer=run.eer, min_dcf=run.min_dcf,
                                    error=None if run.eer is not None else "no metrics"))
        except Exception as exc:  # a failed cell is reported, not fatal
            log.error("cell %s failed: %s", cell, exc)
            rows.append(AblationRow(**cell, eer=None, min_dcf=None, error=str(exc)))
        log.info("cell %s -> %s", cell, rows[-1].eer)
    return rows


def format_ablation(rows) -> str:
    mark = lambda b: "x" if b else "-"
    lines = [f"{'WPE':>4} {'BF':>4} {'DAT':>4} {'SEL':>4} {'EER(%)':>9} {'minDCF':>8}"]
    for r in rows:
        if r.eer is None:
            metrics = f"{'FAILED':>9} {'':>8}"
        else:
            metrics = f"{100 * r.eer:9.4f} {r.min_dcf:8.4f}"
        lines.append(f"{mark(r.wpe):>4} {mark(r.beamformer):>4} {mark(r.dat):>4} {mark(r.selection):>4} {metrics}")
    return "\n".join(lines) + "\n"


# --- theta / RIR tuning ----------------------------------------------------------------------

def parse_t60_sets(text: str) -> list[tuple[float, float]]:
    sets = []
    for item in text.split(","):
        lo, _, hi = item.strip().partition(":")
        lo, hi = float(lo), float(hi or lo)
        if not 0 < lo <= hi:
            raise ValueError(f"bad T60 range {item!r}")
        sets.append((lo, hi))
    return sets


def simulated_enrollment(w: MultichannelWaveform, t60: tuple[float, float], seed: int, ranges: RoomRanges):
    """Close-talk audio pushed through a simulated single-microphone room."""
    rng = np.random.default_rng(seed)
    room = sample_room_configs(1, int(rng.integers(2**31)), dataclasses.replace(ranges, num_mics=1))[0]
    try:
        room = with_reflection(room, reflection_for_t60(room.dimensions, float(rng.uniform(*t60))))
    except ValueError:
        pass
    rev = convolve_rir(to_mono(w, 0), simulate_rir(room))
    return MultichannelWaveform(rev.samples[:, :w.num_samples], w.sample_rate)


def run_tuning(cfg: PipelineConfig, entries, net, t60_sets, thetas):
    """Dev-EER grid search over simulated-enrollment RIR sets and selection thresholds."""
    by_speaker: dict[str, dict[str, list]] = {}
    for e in entries:
        if e.domain not in ("close", "far"):
            raise ValueError("tuning manifest domains must be 'close' or 'far'")
        by_speaker.setdefault(e.speaker, {"close": [], "far": []})[e.domain].append(e.path)
    tests = {}
    for spk, d in sorted(by_speaker.items()):
        for path in d["far"]:
            w = read_wav(path)
            orig = enroll_embedding(w, net)
            enh = extract_embedding(front_end(w, cfg), net)
            tests.setdefault(spk, []).append((orig, enh))
    dev_sets = {}
    for n, t60 in enumerate(t60_sets):
        pairs = []
        for spk, d in sorted(by_speaker.items()):
            if not d["close"] or spk not in tests:
                continue
            embs = [extract_embedding(simulated_enrollment(read_wav(p), t60, cfg.seed * 1000 + n * 100 + i, cfg.room), net)
                    for i, p in enumerate(d["close"])]
            enroll = average_embeddings(embs)
            pairs += [DevPair(enroll, o, e, spk) for o, e in tests[spk]]
        dev_sets[t60] = pairs
    return tune_theta(dev_sets, thetas)


def finite(x) -> bool:
    return x is not None and math.isfinite(x)
