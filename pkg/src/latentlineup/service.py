"""Multi-session service core plus its HTTP facade.

Persistence is an append-only JSON-lines event log per session (creation,
ballots, responses, round advances, lifecycle) with periodic state
snapshots. Loading a store replays every log through the same code paths
as live traffic, so a crash-and-restart reconstructs identical state; all
randomness derives from the seed captured in each session's creation
event. Decoded images are content-addressed PNGs, so a latent point maps
to one stable URL for a fixed model. Per-session locks serialize writes;
quorum can advance a round exactly once no matter how many ballots race.
"""

import hashlib
import json
import threading
import time
import uuid
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import ServiceConfig
from .errors import LatentLineupError, ProtocolError, SpecError
from .evolve import Ballot, Lineup, SearchConfig, SearchState, aggregate_ranks, nes_update, propose_lineup
from .facespace import EigenfaceModel, bootstrap_sample, sample_prior
from .imagecore import Image, png_bytes, resize
from .turing import TrialSet, make_response, detection_curve, make_session_trials, size_ladder

SNAPSHOT_EVERY = 16


class UnknownSessionError(LatentLineupError):
    pass


class StaleRoundError(ProtocolError):
    pass


class DuplicateParticipantError(ProtocolError):
    pass


class StaleTrialError(ProtocolError):
    pass


class ImageStore:
    """Content-addressed PNG store: hash of the encoded bytes names the file."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def put(self, img: Image) -> str:
        data = png_bytes(img)
        content_hash = hashlib.sha256(data).hexdigest()[:24]
        path = self.root / f"{content_hash}.png"
        with self._lock:
            if not path.exists():
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(data)
                tmp.replace(path)
        return content_hash

    def url(self, content_hash: str) -> str:
        return f"/images/{content_hash}.png"

    def read(self, content_hash: str) -> bytes:
        if not content_hash.isalnum():
            raise UnknownSessionError(f"malformed image id {content_hash!r}")
        path = self.root / f"{content_hash}.png"
        if not path.exists():
            raise UnknownSessionError(f"no stored image {content_hash!r}")
        return path.read_bytes()


class EventLog:
    """Per-session append-only JSONL log with strictly increasing sequence numbers."""

    def __init__(self, path: Path):
        self.path = path
        self.count = 0

    def append(self, session_id: str, kind: str, payload: dict, ts: float) -> dict:
        record = {
            "seq": self.count,
            "ts": ts,
            "session_id": session_id,
            "type": kind,
            "payload": payload,
        }
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
            fh.flush()
        self.count += 1
        return record

    @staticmethod
    def read_all(path: Path) -> list[dict]:
        records = []
        for line in path.read_text().splitlines():
            if line.strip():
                records.append(json.loads(line))
        for seq, record in enumerate(records):
            if record["seq"] != seq:
                raise SpecError(f"{path}: event sequence corrupt at {seq}")
        return records


class SearchRuntime:
    """Live state of one evolutionary-search session."""

    kind = "search"

    def __init__(self, session_id: str, created_at: float, doc: dict, model: EigenfaceModel, images: ImageStore, render_side: int):
        self.session_id = session_id
        self.created_at = created_at
        self.model = model
        self.images = images
        self.render_side = render_side
        self.seed = int(doc["seed"])
        self.prompt = str(doc.get("prompt", ""))
        self.config = SearchConfig(
            d=model.latent_dim,
            n=int(doc.get("n", 8)),
            sigma=float(doc.get("sigma", 0.3)),
            alpha=float(doc.get("alpha", 1.0)),
            rounds=int(doc.get("rounds", 10)),
            quorum=int(doc.get("quorum", 10)),
            use_raw_scores=bool(doc.get("use_raw_scores", False)),
        )
        self.rng = np.random.default_rng(self.seed)
        self.state = SearchState(self.config)
        self.status = "active"
        self.ballots: list[dict] = []
        self.lineup_hashes: list[str] = []
        self.seed_hashes: list[str] = []  # decoded theta after each round
        if self.config.rounds > 0:
            self._propose()
        else:
            self.status = "complete"

    def _render(self, z: np.ndarray) -> str:
        decoded = self.model.decode(z)
        if decoded.width != self.render_side:
            decoded = resize(decoded, self.render_side, self.render_side)
        return self.images.put(decoded)

    def _propose(self) -> None:
        lineup = propose_lineup(self.state, self.rng)
        self.lineup_hashes = [self._render(z) for z in lineup.points]
        self.state.pending = Lineup(
            round=lineup.round,
            noise=lineup.noise,
            points=lineup.points,
            portrait_ids=tuple(self.lineup_hashes),
        )

    def config_doc(self) -> dict:
        doc = asdict(self.config)
        doc["seed"] = self.seed
        doc["prompt"] = self.prompt
        return doc

    def lineup_payload(self) -> dict:
        if self.status != "active" or self.state.pending is None:
            return {
                "session_id": self.session_id,
                "round": self.state.round,
                "complete": True,
                "prompt": self.prompt,
                "portraits": [],
            }
        return {
            "session_id": self.session_id,
            "round": self.state.round,
            "complete": False,
            "prompt": self.prompt,
            "quorum": self.config.quorum,
            "ballots_so_far": len(self.ballots),
            "portraits": [
                {"portrait_id": h, "url": self.images.url(h)} for h in self.lineup_hashes
            ],
        }

    def check_ballot(self, participant_id: str, round_: int, ranking: list[int]) -> None:
        if self.status != "active":
            raise StaleRoundError(f"session {self.session_id} is {self.status}")
        if round_ != self.state.round:
            raise StaleRoundError(f"ballot is for round {round_}, current round is {self.state.round}")
        if any(b["participant_id"] == participant_id for b in self.ballots):
            raise DuplicateParticipantError(f"{participant_id!r} already voted in round {round_}")
        Ballot(participant_id, round_, tuple(ranking)).validate(self.config.n)

    def apply_ballot(self, participant_id: str, round_: int, ranking: list[int], ts: float) -> dict:
        """Record a validated ballot; advance the round exactly when the
        quorum ballot lands."""
        self.ballots.append(
            {"participant_id": participant_id, "round": round_, "ranking": list(ranking), "ts": ts}
        )
        advanced = False
        if len(self.ballots) >= self.config.quorum:
            ballots = [Ballot(b["participant_id"], b["round"], tuple(b["ranking"])) for b in self.ballots]
            scores = aggregate_ranks(ballots, self.config.n)
            nes_update(self.state, self.state.pending, scores)
            self.seed_hashes.append(self._render(self.state.theta))
            self.ballots = []
            advanced = True
            if self.state.finished:
                self.status = "complete"
                self.lineup_hashes = []
            else:
                self._propose()
        return {
            "accepted": True,
            "ballots_so_far": len(self.ballots),
            "round_advanced": advanced,
            "round": self.state.round,
        }

    def abort(self) -> None:
        if self.status == "active":
            self.status = "aborted"

    def results_payload(self) -> dict:
        rounds = []
        for rec, seed_hash in zip(self.state.history, self.seed_hashes):
            rounds.append(
                {
                    "round": rec.round,
                    "theta": [float(v) for v in rec.theta_after],
                    "raw_scores": [float(v) for v in rec.raw_scores],
                    "centered_scores": [float(v) for v in rec.centered_scores],
                    "portrait_ids": list(rec.lineup.portrait_ids),
                    "portrait_urls": [self.images.url(h) for h in rec.lineup.portrait_ids],
                    "seed_image_url": self.images.url(seed_hash),
                }
            )
        return {
            "kind": "search",
            "session_id": self.session_id,
            "status": self.status,
            "prompt": self.prompt,
            "rounds": rounds,
            "theta": [float(v) for v in self.state.theta],
        }

    def snapshot(self) -> dict:
        pending = None
        if self.state.pending is not None:
            pending = {
                "round": self.state.pending.round,
                "noise": [[float(v) for v in row] for row in self.state.pending.noise],
                "portrait_ids": list(self.state.pending.portrait_ids),
            }
        return {
            "session_id": self.session_id,
            "kind": "search",
            "status": self.status,
            "created_at": self.created_at,
            "config": self.config_doc(),
            "round": self.state.round,
            "theta": [float(v) for v in self.state.theta],
            "ballots": [dict(b) for b in self.ballots],
            "pending": pending,
            "history": [
                {
                    "round": rec.round,
                    "theta_after": [float(v) for v in rec.theta_after],
                    "raw_scores": [float(v) for v in rec.raw_scores],
                    "centered_scores": [float(v) for v in rec.centered_scores],
                    "portrait_ids": list(rec.lineup.portrait_ids),
                    "seed_image": seed_hash,
                }
                for rec, seed_hash in zip(self.state.history, self.seed_hashes)
            ],
        }


class TuringRuntime:
    """Live state of one 2AFC test session."""

    kind = "turing"

    def __init__(self, session_id: str, created_at: float, doc: dict, model: EigenfaceModel, corpus: dict[str, Image], images: ImageStore):
        if not corpus:
            raise SpecError("turing sessions need a training corpus (configure corpus_dir)")
        self.session_id = session_id
        self.created_at = created_at
        self.images = images
        self.seed = int(doc["seed"])
        self.per_size = int(doc.get("per_size", 10))
        ladder_doc = doc.get("ladder", {})
        self.ladder = size_ladder(
            int(ladder_doc.get("min_side", 16)),
            int(ladder_doc.get("max_side", 64)),
            int(ladder_doc.get("steps", 4)),
        )
        self.generators = list(doc.get("generators", ["model", "bootstrap"]))
        samplers = {}
        corpus_list = [corpus[k] for k in sorted(corpus)]
        for label in self.generators:
            if label == "model":
                samplers[label] = lambda rng: model.decode(sample_prior(model, rng))
            elif label == "bootstrap":
                samplers[label] = lambda rng: bootstrap_sample(corpus_list, rng)
            else:
                raise SpecError(f"unknown generator {label!r}; choose from model, bootstrap")
        rng = np.random.default_rng(self.seed)
        self.trial_set: TrialSet = make_session_trials(
            corpus, samplers, rng, ladder=self.ladder, per_size=self.per_size
        )
        self.responses: list[dict] = []
        self.status = "active"

    def config_doc(self) -> dict:
        return {
            "seed": self.seed,
            "per_size": self.per_size,
            "ladder": list(self.ladder),
            "generators": list(self.generators),
        }

    def _answered(self, participant_id: str) -> int:
        return sum(1 for r in self.responses if r["participant_id"] == participant_id)

    def trial_payload(self, participant_id: str) -> dict:
        index = self._answered(participant_id)
        total = len(self.trial_set.trials)
        if index >= total:
            return {"session_id": self.session_id, "complete": True, "total": total, "index": total}
        trial = self.trial_set.trials[index]
        left, right = self.trial_set.trial_pair(trial)
        left_hash = self.images.put(left)
        right_hash = self.images.put(right)
        return {
            "session_id": self.session_id,
            "complete": False,
            "trial_id": trial.trial_id,
            "index": index,
            "total": total,
            "size": trial.size,
            "left_url": self.images.url(left_hash),
            "right_url": self.images.url(right_hash),
        }

    def check_response(self, participant_id: str, trial_id: str) -> None:
        if self.status != "active":
            raise StaleTrialError(f"session {self.session_id} is {self.status}")
        index = self._answered(participant_id)
        if index >= len(self.trial_set.trials):
            raise StaleTrialError(f"{participant_id!r} already answered every trial")
        current = self.trial_set.trials[index]
        if trial_id != current.trial_id:
            raise StaleTrialError(
                f"expected a response to {current.trial_id!r}, got {trial_id!r}"
            )

    def apply_response(self, participant_id: str, trial_id: str, chose_left: bool, ts: float) -> dict:
        trial = self.trial_set.by_id(trial_id)
        response = make_response(trial, participant_id, chose_left)
        self.responses.append(
            {
                "participant_id": participant_id,
                "trial_id": trial_id,
                "chose_left": bool(chose_left),
                "correct": response.correct,
                "ts": ts,
            }
        )
        remaining = len(self.trial_set.trials) - self._answered(participant_id)
        return {"accepted": True, "remaining": remaining}

    def abort(self) -> None:
        if self.status == "active":
            self.status = "aborted"

    def results_payload(self) -> dict:
        responses = [
            make_response(self.trial_set.by_id(r["trial_id"]), r["participant_id"], r["chose_left"])
            for r in self.responses
        ]
        curves = {}
        for label in sorted(set(t.synth_source for t in self.trial_set.trials)):
            curve = detection_curve(responses, self.trial_set.trials, label)
            curves[label] = [asdict(pt) for pt in curve.points]
        return {
            "kind": "turing",
            "session_id": self.session_id,
            "status": self.status,
            "chance_level": 0.5,
            "n_responses": len(self.responses),
            "curves": curves,
        }

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "kind": "turing",
            "status": self.status,
            "created_at": self.created_at,
            "config": self.config_doc(),
            "trials": [asdict(t) for t in self.trial_set.trials],
            "responses": [dict(r) for r in self.responses],
        }


class SessionStore:
    """All sessions, their event logs, and the content-addressed image store."""

    def __init__(self, data_dir: str | Path, model: EigenfaceModel, config: ServiceConfig | None = None, corpus: dict[str, Image] | None = None):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.model = model
        self.config = config or ServiceConfig()
        self.corpus = dict(corpus or {})
        self.images = ImageStore(self.data_dir / "images")
        self._runtimes: dict[str, SearchRuntime | TuringRuntime] = {}
        self._logs: dict[str, EventLog] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._store_lock = threading.RLock()
        self._replay_all()

    # -- construction / replay ------------------------------------------------

    def _build_runtime(self, session_id: str, created_at: float, kind: str, doc: dict):
        if kind == "search":
            return SearchRuntime(
                session_id, created_at, doc, self.model, self.images, self.config.lineup_render_side
            )
        if kind == "turing":
            return TuringRuntime(session_id, created_at, doc, self.model, self.corpus, self.images)
        raise SpecError(f"unknown session kind {kind!r}; choose search or turing")

    def _replay_all(self) -> None:
        self.unreplayable: dict[str, str] = {}
        for path in sorted(self.sessions_dir.glob("*.jsonl")):
            records = EventLog.read_all(path)
            if not records:
                continue
            session_id = records[0]["session_id"]
            try:
                runtime = None
                for record in records:
                    payload = record["payload"]
                    if record["type"] == "created":
                        runtime = self._build_runtime(
                            record["session_id"], record["ts"], payload["kind"], payload["config"]
                        )
                    elif record["type"] == "ballot":
                        runtime.apply_ballot(
                            payload["participant_id"], payload["round"], payload["ranking"], record["ts"]
                        )
                    elif record["type"] == "response":
                        runtime.apply_response(
                            payload["participant_id"], payload["trial_id"], payload["chose_left"], record["ts"]
                        )
                    elif record["type"] == "aborted":
                        runtime.abort()
                    # round records are derived from ballots; replay recomputes them
            except LatentLineupError as exc:
                # e.g. a turing log replayed without its corpus configured
                self.unreplayable[session_id] = str(exc)
                continue
            log = EventLog(path)
            log.count = len(records)
            self._runtimes[session_id] = runtime
            self._logs[session_id] = log
            self._locks[session_id] = threading.RLock()

    # -- helpers ---------------------------------------------------------------

    def _get(self, session_id: str):
        runtime = self._runtimes.get(session_id)
        if runtime is None:
            if session_id in self.unreplayable:
                raise SpecError(
                    f"session {session_id!r} could not be replayed: {self.unreplayable[session_id]}"
                )
            raise UnknownSessionError(f"no session {session_id!r}")
        return runtime

    def _lock(self, session_id: str) -> threading.RLock:
        return self._locks[session_id]

    def _record(self, session_id: str, kind: str, payload: dict, ts: float) -> None:
        log = self._logs[session_id]
        log.append(session_id, kind, payload, ts)
        if log.count % SNAPSHOT_EVERY == 0:
            self.write_snapshot(session_id)

    def write_snapshot(self, session_id: str) -> Path:
        snapshot = self._get(session_id).snapshot()
        path = self.sessions_dir / f"{session_id}.snapshot.json"
        path.write_text(json.dumps(snapshot, sort_keys=True) + "\n")
        return path

    def session_summary(self, session_id: str) -> dict:
        runtime = self._get(session_id)
        return {
            "session_id": session_id,
            "kind": runtime.kind,
            "status": runtime.status,
            "created_at": runtime.created_at,
            "config": runtime.config_doc(),
        }

    def serialize_state(self, session_id: str) -> str:
        """Canonical byte representation of one session's full state."""
        return json.dumps(self._get(session_id).snapshot(), sort_keys=True)

    # -- public operations -------------------------------------------------

    def list_sessions(self) -> list[dict]:
        with self._store_lock:
            return [self.session_summary(sid) for sid in sorted(self._runtimes)]

    def create_session(self, kind: str, config: dict | None = None) -> dict:
        doc = dict(config or {})
        if "seed" not in doc:
            doc["seed"] = int(np.random.SeedSequence().entropy % (2**31))
        with self._store_lock:
            session_id = uuid.uuid4().hex[:12]
            ts = time.time()
            runtime = self._build_runtime(session_id, ts, kind, doc)
            path = self.sessions_dir / f"{session_id}.jsonl"
            log = EventLog(path)
            log.append(session_id, "created", {"kind": kind, "config": doc}, ts)
            self._runtimes[session_id] = runtime
            self._logs[session_id] = log
            self._locks[session_id] = threading.RLock()
            return self.session_summary(session_id)

    def get_lineup(self, session_id: str) -> dict:
        runtime = self._get(session_id)
        if runtime.kind != "search":
            raise SpecError(f"session {session_id} is not a search session")
        with self._lock(session_id):
            return runtime.lineup_payload()

    def submit_ballot(self, session_id: str, participant_id: str, round_: int, ranking: list[int]) -> dict:
        runtime = self._get(session_id)
        if runtime.kind != "search":
            raise SpecError(f"session {session_id} is not a search session")
        with self._lock(session_id):
            runtime.check_ballot(participant_id, round_, ranking)
            ts = time.time()
            receipt = runtime.apply_ballot(participant_id, round_, list(ranking), ts)
            self._record(
                session_id,
                "ballot",
                {"participant_id": participant_id, "round": round_, "ranking": list(ranking)},
                ts,
            )
            if receipt["round_advanced"]:
                self._record(
                    session_id,
                    "round",
                    {"round": runtime.state.round, "theta": [float(v) for v in runtime.state.theta]},
                    time.time(),
                )
            return receipt

    def next_trial(self, session_id: str, participant_id: str) -> dict:
        runtime = self._get(session_id)
        if runtime.kind != "turing":
            raise SpecError(f"session {session_id} is not a turing session")
        with self._lock(session_id):
            return runtime.trial_payload(participant_id)

    def submit_response(self, session_id: str, participant_id: str, trial_id: str, chose_left: bool) -> dict:
        runtime = self._get(session_id)
        if runtime.kind != "turing":
            raise SpecError(f"session {session_id} is not a turing session")
        with self._lock(session_id):
            runtime.check_response(participant_id, trial_id)
            ts = time.time()
            receipt = runtime.apply_response(participant_id, trial_id, bool(chose_left), ts)
            self._record(
                session_id,
                "response",
                {"participant_id": participant_id, "trial_id": trial_id, "chose_left": bool(chose_left)},
                ts,
            )
            return receipt

    def get_results(self, session_id: str) -> dict:
        runtime = self._get(session_id)
        with self._lock(session_id):
            return runtime.results_payload()

    def abort_session(self, session_id: str) -> dict:
        runtime = self._get(session_id)
        with self._lock(session_id):
            runtime.abort()
            self._record(session_id, "aborted", {}, time.time())
            return self.session_summary(session_id)

    def read_image(self, content_hash: str) -> bytes:
        return self.images.read(content_hash)


def build_app(store: SessionStore):
    """FastAPI facade over a SessionStore."""
    from fastapi import FastAPI, HTTPException, Query, Response
    from fastapi.middleware.cors import CORSMiddleware
    from pydantic import BaseModel

    class CreateSessionBody(BaseModel):
        kind: str
        config: dict = {}

    class BallotBody(BaseModel):
        participant_id: str
        round: int
        ranking: list[int]

    class ResponseBody(BaseModel):
        participant_id: str
        trial_id: str
        chose_left: bool

    app = FastAPI(title="latentlineup", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def run(fn, *args):
        try:
            return fn(*args)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except (StaleRoundError, DuplicateParticipantError, StaleTrialError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (SpecError, ProtocolError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/api/sessions")
    def list_sessions():
        return run(store.list_sessions)

    @app.post("/api/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        return run(store.create_session, body.kind, body.config)

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        return run(store.session_summary, session_id)

    @app.get("/api/sessions/{session_id}/lineup")
    def get_lineup(session_id: str):
        return run(store.get_lineup, session_id)

    @app.post("/api/sessions/{session_id}/ballots")
    def submit_ballot(session_id: str, body: BallotBody):
        return run(store.submit_ballot, session_id, body.participant_id, body.round, body.ranking)

    @app.get("/api/sessions/{session_id}/trial")
    def next_trial(session_id: str, participant: str = Query(...)):
        return run(store.next_trial, session_id, participant)

    @app.post("/api/sessions/{session_id}/responses")
    def submit_response(session_id: str, body: ResponseBody):
        return run(store.submit_response, session_id, body.participant_id, body.trial_id, body.chose_left)

    @app.get("/api/sessions/{session_id}/results")
    def get_results(session_id: str):
        return run(store.get_results, session_id)

    @app.get("/images/{content_hash}.png")
    def get_image(content_hash: str):
        data = run(store.read_image, content_hash)
        return Response(content=data, media_type="image/png")

    return app
