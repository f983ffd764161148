"""Two-alternative forced-choice realism testing: trial generation over
log-spaced stimulus sizes, response bookkeeping, and accuracy-by-size
curves with Wilson score intervals (chance = 0.5).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import CorpusError, ProtocolError, SpecError
from .imagecore import Image, resize

CHANCE_LEVEL = 0.5
Z_95 = 1.959963984540054  # two-sided 95% normal quantile

DEFAULT_MIN_SIDE = 16
DEFAULT_MAX_SIDE = 64
DEFAULT_STEPS = 4
DEFAULT_PER_SIZE = 10


def size_ladder(min_side: int = DEFAULT_MIN_SIDE, max_side: int = DEFAULT_MAX_SIDE, steps: int = DEFAULT_STEPS) -> list[int]:
    """Geometrically spaced pixel sizes, rounded half-up, endpoints exact."""
    if steps < 2:
        raise SpecError(f"ladder needs at least 2 steps, got {steps}")
    if not 0 < min_side < max_side:
        raise SpecError(f"need 0 < min_side < max_side, got {min_side}..{max_side}")
    ratio = max_side / min_side
    sizes = [int(math.floor(min_side * ratio ** (k / (steps - 1)) + 0.5)) for k in range(steps)]
    sizes[0], sizes[-1] = min_side, max_side
    return sizes


@dataclass(frozen=True)
class TrialSpec:
    trial_id: str
    size: int
    real_image_id: str
    synth_image_id: str
    synth_source: str
    left_is_real: bool


@dataclass(frozen=True)
class Response:
    trial_id: str
    participant_id: str
    chose_left: bool
    correct: bool
    latency_ms: float | None = None


def make_response(trial: TrialSpec, participant_id: str, chose_left: bool, latency_ms: float | None = None) -> Response:
    """Build a response with correctness derived server-side."""
    return Response(
        trial_id=trial.trial_id,
        participant_id=participant_id,
        chose_left=bool(chose_left),
        correct=bool(chose_left) == trial.left_is_real,
        latency_ms=latency_ms,
    )


SynthSampler = Callable[[np.random.Generator], Image]


@dataclass
class TrialSet:
    """A session's trial list plus the full-resolution stimuli behind it.

    Stimuli are rendered to a trial's size on demand (Lanczos), so large
    simulated sessions never materialize thousands of rasters up front.
    """

    trials: list[TrialSpec]
    images: dict[str, Image]
    _rendered: dict[tuple[str, int], Image] = field(default_factory=dict, repr=False)

    def by_id(self, trial_id: str) -> TrialSpec:
        for trial in self.trials:
            if trial.trial_id == trial_id:
                return trial
        raise ProtocolError(f"unknown trial id {trial_id!r}")

    def stimulus(self, image_id: str, size: int) -> Image:
        key = (image_id, size)
        if key not in self._rendered:
            if image_id not in self.images:
                raise ProtocolError(f"unknown stimulus image {image_id!r}")
            self._rendered[key] = resize(self.images[image_id], size, size)
        return self._rendered[key]

    def trial_pair(self, trial: TrialSpec) -> tuple[Image, Image]:
        """(left, right) stimuli at the trial's size."""
        real = self.stimulus(trial.real_image_id, trial.size)
        synth = self.stimulus(trial.synth_image_id, trial.size)
        return (real, synth) if trial.left_is_real else (synth, real)


def make_session_trials(
    real_pool: Mapping[str, Image],
    generators: Mapping[str, SynthSampler],
    rng: np.random.Generator,
    ladder: Sequence[int] | None = None,
    per_size: int = DEFAULT_PER_SIZE,
) -> TrialSet:
    """per_size trials at each ladder size (40 at the defaults): each pairs a
    training image against a fresh sample from a uniformly chosen generator,
    with uniform left/right placement and a shuffled overall order."""
    if not real_pool:
        raise CorpusError("real image pool is empty")
    if not generators:
        raise CorpusError("no synthesis sources provided")
    if per_size < 1:
        raise SpecError(f"per_size must be >= 1, got {per_size}")
    sizes = list(ladder) if ladder is not None else size_ladder()
    real_ids = sorted(real_pool)
    labels = sorted(generators)
    images: dict[str, Image] = dict(real_pool)
    specs: list[tuple[int, str, str, str, bool]] = []
    serial = 0
    for size in sizes:
        for _ in range(per_size):
            real_id = real_ids[rng.integers(0, len(real_ids))]
            label = labels[rng.integers(0, len(labels))]
            synth_id = f"{label}-{serial:05d}"
            serial += 1
            images[synth_id] = generators[label](rng)
            specs.append((size, real_id, synth_id, label, bool(rng.integers(0, 2))))
    order = rng.permutation(len(specs))
    trials = [
        TrialSpec(
            trial_id=f"t{slot:04d}",
            size=specs[src][0],
            real_image_id=specs[src][1],
            synth_image_id=specs[src][2],
            synth_source=specs[src][3],
            left_is_real=specs[src][4],
        )
        for slot, src in enumerate(order)
    ]
    return TrialSet(trials=trials, images=images)


def wilson_interval(n_correct: int, n_trials: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n_trials < 1:
        raise SpecError("Wilson interval needs at least one trial")
    p = n_correct / n_trials
    denom = 1.0 + z * z / n_trials
    center = (p + z * z / (2.0 * n_trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n_trials + z * z / (4.0 * n_trials * n_trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class CurvePoint:
    size: int
    n_trials: int
    n_correct: int
    accuracy: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class DetectionCurve:
    """Accuracy of real-vs-synthesized judgments per stimulus size."""

    generator: str
    points: tuple[CurvePoint, ...]
    chance_level: float = CHANCE_LEVEL


def detection_curve(responses: Sequence[Response], trials: Sequence[TrialSpec], generator: str) -> DetectionCurve:
    """Per-size accuracy with 95% Wilson intervals for one synthesis source.

    Sizes with zero answered trials are omitted.
    """
    by_id = {t.trial_id: t for t in trials}
    tallies: dict[int, list[int]] = {}
    for resp in responses:
        trial = by_id.get(resp.trial_id)
        if trial is None:
            raise ProtocolError(f"response references unknown trial {resp.trial_id!r}")
        if trial.synth_source != generator:
            continue
        counts = tallies.setdefault(trial.size, [0, 0])
        counts[0] += 1
        counts[1] += int(resp.correct)
    points = []
    for size in sorted(tallies):
        n, k = tallies[size]
        lo, hi = wilson_interval(k, n)
        points.append(CurvePoint(size=size, n_trials=n, n_correct=k, accuracy=k / n, ci_low=lo, ci_high=hi))
    return DetectionCurve(generator=generator, points=tuple(points))


def simulated_observer(
    psychometric: Mapping[int, float],
    rng: np.random.Generator,
    participant_id: str = "sim",
) -> Callable[[TrialSpec], Response]:
    """Response provider that answers correctly with probability p(size)."""
    for size, p in psychometric.items():
        if not 0.0 <= p <= 1.0:
            raise SpecError(f"p(correct) must be in [0, 1], got {p} for size {size}")

    def respond(trial: TrialSpec) -> Response:
        if trial.size not in psychometric:
            raise SpecError(f"observer has no p(correct) for size {trial.size}")
        correct = rng.random() < psychometric[trial.size]
        chose_left = trial.left_is_real if correct else not trial.left_is_real
        return make_response(trial, participant_id, chose_left)

    return respond


def run_simulated_session(
    trial_set: TrialSet,
    observer: Callable[[TrialSpec], Response],
) -> list[Response]:
    return [observer(trial) for trial in trial_set.trials]


def curves_to_rows(curves: Mapping[str, DetectionCurve]) -> list[dict]:
    rows = []
    for generator in sorted(curves):
        for pt in curves[generator].points:
            rows.append(
                {
                    "generator": generator,
                    "size": pt.size,
                    "n_trials": pt.n_trials,
                    "n_correct": pt.n_correct,
                    "accuracy": pt.accuracy,
                    "ci_low": pt.ci_low,
                    "ci_high": pt.ci_high,
                }
            )
    return rows


CSV_COLUMNS = ["generator", "size", "n_trials", "n_correct", "accuracy", "ci_low", "ci_high"]


def curves_to_csv(curves: Mapping[str, DetectionCurve]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in curves_to_rows(curves):
        writer.writerow(row)
    return buf.getvalue()


def curves_to_json(curves: Mapping[str, DetectionCurve]) -> str:
    return json.dumps({"chance_level": CHANCE_LEVEL, "curves": curves_to_rows(curves)}, indent=2, sort_keys=True)


def write_curves(curves: Mapping[str, DetectionCurve], csv_path: str | Path, json_path: str | Path) -> None:
    Path(csv_path).write_text(curves_to_csv(curves))
    Path(json_path).write_text(curves_to_json(curves) + "\n")


def fit_logistic_curve(curve: DetectionCurve) -> dict:
    """Optional 2-parameter logistic summary with the lower asymptote pinned
    at chance: p(size) = 0.5 + 0.5 / (1 + exp(-(log size - mu) / width)).

    Maximum-likelihood fit over the curve's binomial counts.
    """
    from scipy.optimize import minimize

    if not curve.points:
        raise SpecError("cannot fit an empty curve")
    logs = np.array([math.log(pt.size) for pt in curve.points])
    n = np.array([pt.n_trials for pt in curve.points], dtype=float)
    k = np.array([pt.n_correct for pt in curve.points], dtype=float)

    def nll(params: np.ndarray) -> float:
        mu, log_width = params
        p = 0.5 + 0.5 / (1.0 + np.exp(-(logs - mu) / math.exp(log_width)))
        p = np.clip(p, 1e-9, 1.0 - 1e-9)
        return float(-(k * np.log(p) + (n - k) * np.log(1.0 - p)).sum())

    start = np.array([float(logs.mean()), 0.0])
    result = minimize(nll, start, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000})
    mu, log_width = result.x
    return {"mu": float(mu), "width": float(math.exp(log_width)), "converged": bool(result.success)}
