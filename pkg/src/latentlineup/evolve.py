"""Rank-aggregated evolution-strategy search through a latent space.

Each round decodes a lineup of portraits from spherical Gaussian
perturbations of the current seed, collects full resemblance rankings from
a quorum of participants, scores each portrait by its average rank
(rank n = strongest resemblance), and moves the seed by

    theta' = theta + alpha * (1 / (n * sigma)) * sum_i F_i * eps_i

where the F_i are the mean-centered average ranks. Centering removes the
pure-noise drift term a constant rank offset would otherwise inject; the
uncentered behavior stays available behind ``use_raw_scores`` for fidelity
runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    AbortedSearchError,
    ProtocolError,
    SearchCompleteError,
    SpecError,
    UndefinedValueError,
)
from .facespace import Decoder
from .imagecore import Image


@dataclass(frozen=True)
class SearchConfig:
    d: int
    n: int = 8
    sigma: float = 0.3
    alpha: float = 1.0
    rounds: int = 10
    quorum: int = 10
    use_raw_scores: bool = False

    def __post_init__(self):
        if self.d < 1:
            raise SpecError(f"latent dimension must be >= 1, got {self.d}")
        if self.n < 2:
            raise SpecError(f"lineup size must be >= 2, got {self.n}")
        if self.sigma < 0.0:
            raise SpecError(f"sigma must be >= 0, got {self.sigma}")
        if self.alpha <= 0.0:
            raise SpecError(f"alpha must be > 0, got {self.alpha}")
        if self.rounds < 0:
            raise SpecError(f"rounds must be >= 0, got {self.rounds}")
        if self.quorum < 1:
            raise SpecError(f"quorum must be >= 1, got {self.quorum}")


@dataclass(frozen=True)
class Lineup:
    """One round's candidates: portrait i decodes points[i] = theta + sigma * noise[i]."""

    round: int
    noise: np.ndarray  # (n, d)
    points: np.ndarray  # (n, d)
    portrait_ids: tuple[str, ...]

    def __post_init__(self):
        noise = np.asarray(self.noise, dtype=np.float64)
        points = np.asarray(self.points, dtype=np.float64)
        if noise.ndim != 2 or points.shape != noise.shape:
            raise SpecError(f"noise {noise.shape} and points {points.shape} must be matching (n, d)")
        if not (np.all(np.isfinite(noise)) and np.all(np.isfinite(points))):
            raise SpecError("lineup noise and points must be finite")
        if len(self.portrait_ids) != noise.shape[0]:
            raise SpecError("one portrait id required per lineup entry")
        for name, arr in (("noise", noise), ("points", points)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "portrait_ids", tuple(self.portrait_ids))

    @property
    def n(self) -> int:
        return self.noise.shape[0]


@dataclass(frozen=True)
class Ballot:
    """One participant's full ranking: ranking[i] is portrait i's rank, n = best."""

    participant_id: str
    round: int
    ranking: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ranking", tuple(int(r) for r in self.ranking))

    def validate(self, n: int) -> None:
        if len(self.ranking) != n or sorted(self.ranking) != list(range(1, n + 1)):
            raise ProtocolError(
                f"ballot from {self.participant_id!r} is not a permutation of 1..{n}: {self.ranking}"
            )


@dataclass(frozen=True)
class ScoreVector:
    raw: np.ndarray
    centered: np.ndarray

    def __post_init__(self):
        for name in ("raw", "centered"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "ScoreVector":
        raw = np.asarray(raw, dtype=np.float64)
        return cls(raw=raw, centered=raw - raw.mean())


@dataclass(frozen=True)
class RoundRecord:
    round: int
    lineup: Lineup
    raw_scores: np.ndarray
    centered_scores: np.ndarray
    theta_after: np.ndarray

    def __post_init__(self):
        for name in ("raw_scores", "centered_scores", "theta_after"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass
class SearchState:
    """Mutable state of one search session; owned by exactly one session."""

    config: SearchConfig
    theta: np.ndarray = None  # type: ignore[assignment]
    round: int = 0
    history: list[RoundRecord] = field(default_factory=list)
    pending: Lineup | None = None

    def __post_init__(self):
        if self.theta is None:
            self.theta = np.zeros(self.config.d)  # seed at the origin
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.shape[0] != self.config.d:
            raise SpecError(f"theta has dimension {self.theta.shape[0]}, config says {self.config.d}")

    @property
    def finished(self) -> bool:
        return self.round >= self.config.rounds


def propose_lineup(state: SearchState, rng: np.random.Generator) -> Lineup:
    """Draw the round's spherical Gaussian noise and stage the lineup."""
    if state.finished:
        raise SearchCompleteError(f"search already ran its {state.config.rounds} rounds")
    if state.pending is not None:
        raise ProtocolError(f"round {state.round} already has a pending lineup")
    cfg = state.config
    noise = rng.standard_normal((cfg.n, cfg.d))
    points = state.theta[None, :] + cfg.sigma * noise
    ids = tuple(f"r{state.round}p{i}" for i in range(cfg.n))
    lineup = Lineup(round=state.round, noise=noise, points=points, portrait_ids=ids)
    state.pending = lineup
    return lineup


def aggregate_ranks(ballots: Sequence[Ballot], n: int) -> ScoreVector:
    """Average rank per portrait across ballots, plus the centered copy.

    The centered scores always sum to zero; the raw mean is (n + 1) / 2 by
    construction since every ballot is a permutation.
    """
    if not ballots:
        raise ProtocolError("need at least one ballot to aggregate")
    rounds = {b.round for b in ballots}
    if len(rounds) != 1:
        raise ProtocolError(f"ballots mix rounds {sorted(rounds)}")
    for ballot in ballots:
        ballot.validate(n)
    raw = np.stack([np.asarray(b.ranking, dtype=np.float64) for b in ballots]).mean(axis=0)
    return ScoreVector.from_raw(raw)


def nes_update(state: SearchState, lineup: Lineup, scores: ScoreVector) -> SearchState:
    """Apply one round's update and append it to the history."""
    cfg = state.config
    if lineup.round != state.round:
        raise ProtocolError(f"lineup is for round {lineup.round}, state is at round {state.round}")
    if scores.raw.shape[0] != cfg.n:
        raise ProtocolError(f"scores have length {scores.raw.shape[0]}, lineup size is {cfg.n}")
    if cfg.sigma == 0.0:
        raise UndefinedValueError("update is undefined for sigma = 0")
    weights = scores.raw if cfg.use_raw_scores else scores.centered
    step = (cfg.alpha / (cfg.n * cfg.sigma)) * (weights @ lineup.noise)
    theta_next = state.theta + step
    state.history.append(
        RoundRecord(
            round=state.round,
            lineup=lineup,
            raw_scores=scores.raw,
            centered_scores=scores.centered,
            theta_after=theta_next,
        )
    )
    state.theta = theta_next
    state.round += 1
    state.pending = None
    return state


def oracle_ballot(
    lineup: Lineup,
    decoder: Decoder,
    target: Image,
    noise_level: float,
    rng: np.random.Generator,
    participant_id: str = "oracle",
) -> Ballot:
    """Simulated participant: ranks portraits by image-space distance to the
    target, with Gaussian judgment noise scaled to the spread of distances.

    The portrait with the smallest (perturbed) distance receives rank n.
    """
    if target.width != decoder.output_side or target.height != decoder.output_side:
        raise SpecError(
            f"target is {target.width}x{target.height}, decoder renders {decoder.output_side}"
        )
    if noise_level < 0.0:
        raise SpecError(f"noise_level must be >= 0, got {noise_level}")
    target_flat = target.flat()
    distances = np.array(
        [np.linalg.norm(decoder.decode(z).flat() - target_flat) for z in lineup.points]
    )
    if noise_level > 0.0:
        spread = float(distances.max() - distances.min())
        distances = distances + noise_level * spread * rng.standard_normal(lineup.n)
    order = np.argsort(distances, kind="stable")  # ascending distance; ties to lower index
    ranking = np.empty(lineup.n, dtype=int)
    ranking[order] = np.arange(lineup.n, 0, -1)
    return Ballot(participant_id=participant_id, round=lineup.round, ranking=tuple(ranking))


BallotSource = Callable[[SearchState, Lineup], Sequence[Ballot] | None]


def run_search(
    config: SearchConfig,
    decoder: Decoder,
    ballot_source: BallotSource,
    rng: np.random.Generator,
    initial_theta: np.ndarray | None = None,
) -> SearchState:
    """Run propose -> collect quorum -> aggregate -> update for every round.

    The ballot source is called once per round and must return at least
    ``config.quorum`` ballots; returning None (or raising) aborts the search
    with the partial history preserved on the exception.
    """
    if decoder.latent_dim != config.d:
        raise SpecError(f"decoder dimension {decoder.latent_dim} != config d {config.d}")
    state = SearchState(config=config, theta=initial_theta)
    for _ in range(config.rounds):
        lineup = propose_lineup(state, rng)
        try:
            ballots = ballot_source(state, lineup)
        except Exception as exc:
            raise AbortedSearchError(f"ballot source failed at round {state.round}: {exc}", state) from exc
        if ballots is None:
            raise AbortedSearchError(f"ballot source stopped at round {state.round}", state)
        ballots = list(ballots)[: config.quorum]
        if len(ballots) < config.quorum:
            raise AbortedSearchError(
                f"round {state.round} got {len(ballots)} ballots, quorum is {config.quorum}", state
            )
        scores = aggregate_ranks(ballots, config.n)
        nes_update(state, lineup, scores)
    return state


def trajectory_records(state: SearchState) -> list[dict]:
    """One JSON-ready record per completed round."""
    return [
        {
            "round": rec.round,
            "theta": [float(v) for v in rec.theta_after],
            "noise": [[float(v) for v in row] for row in rec.lineup.noise],
            "raw_scores": [float(v) for v in rec.raw_scores],
            "centered_scores": [float(v) for v in rec.centered_scores],
            "portrait_ids": list(rec.lineup.portrait_ids),
        }
        for rec in state.history
    ]


def export_trajectory(state: SearchState, path: str | Path) -> None:
    """Write the per-round history as JSON lines."""
    with open(path, "w") as fh:
        for record in trajectory_records(state):
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
