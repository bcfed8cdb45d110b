"""Cosine scoring, EER / minDCF, and the cosine-threshold selection of enhanced audio."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class DegenerateEmbeddingError(ValueError):
    pass


@dataclass(frozen=True)
class Trial:
    enroll: str
    test: str
    label: int | None = None  # 1 target, 0 nontarget

    def __post_init__(self):
        if not self.enroll or not self.test:
            raise ValueError("trial ids must be non-empty")
        if self.label not in (None, 0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass(frozen=True)
class DcfParams:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must lie in (0, 1)")
        if not (self.c_miss > 0 and self.c_fa > 0):
            raise ValueError("costs must be positive")


@dataclass(frozen=True)
class SelectionPolicy:
    theta: float = 0.7

    def __post_init__(self):
        if not np.isfinite(self.theta):
            raise ValueError("theta must be finite")


KEEP_ENHANCED = "keep_enhanced"
KEEP_ORIGINAL = "keep_original"


def _vector(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).ravel()
    if not np.all(np.isfinite(a)):
        raise ValueError("embedding has non-finite entries")
    return a


def cosine_score(a, b) -> float:
    a, b = _vector(a), _vector(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateEmbeddingError("cannot score a zero embedding")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def average_embeddings(embeddings: Sequence) -> np.ndarray:
    """Mean of the L2-normalised embeddings (not renormalised)."""
    if len(embeddings) == 0:
        raise ValueError("nothing to average")
    rows = [_vector(e) for e in embeddings]
    if len({r.size for r in rows}) != 1:
        raise ValueError("embeddings differ in dimension")
    norms = [np.linalg.norm(r) for r in rows]
    if min(norms) == 0:
        raise DegenerateEmbeddingError("cannot normalise a zero embedding")
    return np.mean([r / n for r, n in zip(rows, norms)], axis=0)


def _split(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    if labels is None or any(lab is None for lab in labels):
        raise ValueError("every trial needs a label")
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    tar, non = np.sort(scores[labels == 1]), np.sort(scores[labels == 0])
    if len(tar) == 0 or len(non) == 0:
        raise ValueError("need at least one target and one nontarget trial")
    return scores, tar, non


def error_rates(scores, labels, thresholds):
    """Miss and false-alarm rates when accepting score >= t."""
    _, tar, non = _split(scores, labels)
    t = np.asarray(thresholds, dtype=np.float64)
    p_miss = np.searchsorted(tar, t, side="left") / len(tar)
    p_fa = (len(non) - np.searchsorted(non, t, side="left")) / len(non)
    return p_miss, p_fa


def eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its (interpolated) threshold."""
    s, _, _ = _split(scores, labels)
    thr = np.append(np.unique(s), np.inf)
    p_miss, p_fa = error_rates(scores, labels, thr)
    # miss rises and fa falls with t; the lowest threshold always has miss 0 < fa
    k = int(np.argmax(p_miss >= p_fa))
    d0 = p_fa[k - 1] - p_miss[k - 1]
    d1 = p_miss[k] - p_fa[k]
    alpha = d0 / (d0 + d1)
    rate = p_miss[k - 1] + alpha * (p_miss[k] - p_miss[k - 1])
    t0, t1 = thr[k - 1], thr[k]
    threshold = t0 + alpha * (t1 - t0) if np.isfinite(t1) else t0
    return float(rate), float(threshold)


def min_dcf(scores, labels, params: DcfParams = DcfParams()) -> tuple[float, float]:
    """Normalised minimum detection cost over every threshold, +-inf included."""
    s, _, _ = _split(scores, labels)
    thr = np.concatenate([[-np.inf], np.unique(s), [np.inf]])
    p_miss, p_fa = error_rates(scores, labels, thr)
    p = params.p_target
    dcf = params.c_miss * p_miss * p + params.c_fa * p_fa * (1 - p)
    dcf /= min(params.c_miss * p, params.c_fa * (1 - p))
    k = int(np.argmin(dcf))
    return float(dcf[k]), float(thr[k])


def select_enhanced(original, enhanced, policy: SelectionPolicy = SelectionPolicy()) -> str:
    """Keep the enhanced version unless it drifted below theta from the original."""
    return KEEP_ENHANCED if cosine_score(original, enhanced) >= policy.theta else KEEP_ORIGINAL


def choose_embedding(original, enhanced, policy: SelectionPolicy = SelectionPolicy()) -> np.ndarray:
    return np.asarray(enhanced if select_enhanced(original, enhanced, policy) == KEEP_ENHANCED else original)


def score_trials(trials: Sequence[Trial], embeddings: Mapping[str, np.ndarray]) -> np.ndarray:
    missing = sorted({i for t in trials for i in (t.enroll, t.test)} - set(embeddings))
    if missing:
        raise KeyError(f"no embedding for {missing[:5]}")
    return np.array([cosine_score(embeddings[t.enroll], embeddings[t.test]) for t in trials])


# --- dev-set tuning -------------------------------------------------------------------

@dataclass
class DevPair:
    """One dev speaker's simulated enrollment and a far-field test recording."""

    enroll: np.ndarray
    test_original: np.ndarray
    test_enhanced: np.ndarray
    speaker: str


@dataclass
class TuneResult:
    theta: float
    rir_set: object
    eer: float
    grid: list  # (rir_set, theta, eer) in evaluation order


def dev_eer(pairs: Sequence[DevPair], theta: float) -> float:
    """EER over every enrollment x test combination after selection at theta."""
    policy = SelectionPolicy(theta)
    tests = [choose_embedding(p.test_original, p.test_enhanced, policy) for p in pairs]
    scores, labels = [], []
    for e in pairs:
        for p, t in zip(pairs, tests):
            scores.append(cosine_score(e.enroll, t))
            labels.append(int(e.speaker == p.speaker))
    return eer(scores, labels)[0]


def tune_theta(dev_sets: Mapping[object, Sequence[DevPair]], thetas: Sequence[float]) -> TuneResult:
    """Grid search over (RIR set, theta) minimising dev EER.

    ``dev_sets`` maps each candidate RIR parameter set to the dev pairs
    simulated with it. Ties go to the larger theta, then to the earlier
    RIR set.
    """
    if len(dev_sets) == 0 or len(thetas) == 0:
        raise ValueError("empty tuning grid")
    grid, best = [], None
    for rir_set, pairs in dev_sets.items():
        if len({p.speaker for p in pairs}) < 2:
            raise ValueError("dev pairs must span at least two speakers")
        for theta in thetas:
            value = dev_eer(pairs, theta)
            grid.append((rir_set, float(theta), value))
            if best is None or value < best[2] or (value == best[2] and theta > best[1]):
                best = (rir_set, float(theta), value)
    return TuneResult(best[1], best[0], best[2], grid)


# --- file formats ---------------------------------------------------------------------

def parse_trials(lines) -> list[Trial]:
    trials = []
    for n, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) not in (2, 3):
            raise ValueError(f"trial line {n}: expected 2 or 3 fields, got {len(parts)}")
        label = None
        if len(parts) == 3:
            if parts[2] not in ("0", "1"):
                raise ValueError(f"trial line {n}: label must be 0 or 1")
            label = int(parts[2])
        trials.append(Trial(parts[0], parts[1], label))
    return trials


def read_trials(path) -> list[Trial]:
    with open(path) as fh:
        return parse_trials(fh)


def format_scores(trials: Sequence[Trial], scores) -> str:
    return "".join(f"{t.enroll}\t{t.test}\t{float(s):.9g}\n" for t, s in zip(trials, scores))


def write_scores(path, trials: Sequence[Trial], scores) -> None:
    with open(path, "w") as fh:
        fh.write(format_scores(trials, scores))


def read_scores(path) -> list[tuple[str, str, float]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                a, b, s = line.rstrip("\n").split("\t")
                out.append((a, b, float(s)))
    return out


def format_report(eer_value: float, dcf_value: float, params: DcfParams = DcfParams()) -> str:
    return f"EER={100 * eer_value:.4f}% minDCF={dcf_value:.4f} at p_target={params.p_target:g}"
