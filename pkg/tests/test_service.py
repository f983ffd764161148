import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from latentlineup.config import ServiceConfig, load_config
from latentlineup.errors import SpecError
from latentlineup.facespace import fit_eigenfaces
from latentlineup.imagecore import Image
from latentlineup.service import (
    DuplicateParticipantError,
    EventLog,
    SessionStore,
    StaleRoundError,
    StaleTrialError,
    UnknownSessionError,
    build_app,
)


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(0)
    images = [Image(0.5 + rng.uniform(-0.05, 0.05, (8, 8, 3))) for _ in range(12)]
    return fit_eigenfaces(images, d=4)


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(1)
    return {f"real-{i}": Image(rng.random((8, 8, 3))) for i in range(4)}


def make_store(tmp_path, model, corpus):
    return SessionStore(tmp_path / "data", model, ServiceConfig(), corpus)


SEARCH_CFG = {"seed": 11, "n": 4, "quorum": 3, "rounds": 2, "sigma": 0.4}


class TestSessionCreation:
    def test_search_session_proposes_first_lineup(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        summary = store.create_session("search", {"seed": 5, "n": 8, "rounds": 10})
        lineup = store.get_lineup(summary["session_id"])
        assert lineup["round"] == 0
        assert len(lineup["portraits"]) == 8
        assert all(p["url"].startswith("/images/") for p in lineup["portraits"])

    def test_turing_session_queues_forty_trials(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        summary = store.create_session("turing", {"seed": 6})
        runtime = store._get(summary["session_id"])
        assert len(runtime.trial_set.trials) == 40

    def test_invalid_configs_rejected(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        with pytest.raises(SpecError):
            store.create_session("search", {"seed": 1, "n": 1})
        with pytest.raises(SpecError):
            store.create_session("mystery", {})
        with pytest.raises(SpecError):
            store.create_session("turing", {"seed": 1, "generators": ["nope"]})

    def test_turing_without_corpus_rejected(self, tmp_path, model):
        store = SessionStore(tmp_path / "data", model, ServiceConfig(), corpus=None)
        with pytest.raises(SpecError):
            store.create_session("turing", {"seed": 1})

    def test_status_lifecycle_forward_only(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        summary = store.create_session("search", SEARCH_CFG)
        sid = summary["session_id"]
        assert store.session_summary(sid)["status"] == "active"
        store.abort_session(sid)
        assert store.session_summary(sid)["status"] == "aborted"
        store.abort_session(sid)  # idempotent, never goes backward
        assert store.session_summary(sid)["status"] == "aborted"


class TestLineupAndBallots:
    def test_reads_are_idempotent_until_quorum(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        first = store.get_lineup(sid)
        again = store.get_lineup(sid)
        assert first == again
        store.submit_ballot(sid, "a", 0, [1, 2, 3, 4])
        ids_before = [p["portrait_id"] for p in store.get_lineup(sid)["portraits"]]
        assert ids_before == [p["portrait_id"] for p in first["portraits"]]

    def test_quorum_advances_round_with_new_portraits(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        before = store.get_lineup(sid)
        receipts = [
            store.submit_ballot(sid, name, 0, [1, 2, 3, 4])
            for name in ("a", "b")
        ]
        assert all(not r["round_advanced"] for r in receipts)
        final = store.submit_ballot(sid, "c", 0, [2, 1, 4, 3])
        assert final["round_advanced"] and final["round"] == 1
        after = store.get_lineup(sid)
        assert after["round"] == 1
        assert [p["portrait_id"] for p in after["portraits"]] != [
            p["portrait_id"] for p in before["portraits"]
        ]

    def test_duplicate_participant_rejected_and_count_unchanged(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        store.submit_ballot(sid, "a", 0, [1, 2, 3, 4])
        with pytest.raises(DuplicateParticipantError):
            store.submit_ballot(sid, "a", 0, [4, 3, 2, 1])
        assert store.get_lineup(sid)["ballots_so_far"] == 1

    def test_wrong_round_rejected(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        with pytest.raises(StaleRoundError):
            store.submit_ballot(sid, "a", 5, [1, 2, 3, 4])

    def test_invalid_permutation_rejected(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        from latentlineup.errors import ProtocolError

        with pytest.raises(ProtocolError):
            store.submit_ballot(sid, "a", 0, [1, 1, 3, 4])

    def test_completed_session_rejects_ballots_and_reports_complete(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        cfg = dict(SEARCH_CFG, rounds=1)
        sid = store.create_session("search", cfg)["session_id"]
        for name in ("a", "b", "c"):
            store.submit_ballot(sid, name, 0, [1, 2, 3, 4])
        assert store.session_summary(sid)["status"] == "complete"
        payload = store.get_lineup(sid)
        assert payload["complete"] is True
        with pytest.raises(StaleRoundError):
            store.submit_ballot(sid, "d", 1, [1, 2, 3, 4])

    def test_unknown_session_raises(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        with pytest.raises(UnknownSessionError):
            store.get_lineup("nope")


class TestTrialFlow:
    def test_trials_served_in_order_and_idempotently(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 8, "per_size": 1})["session_id"]
        first = store.next_trial(sid, "p1")
        again = store.next_trial(sid, "p1")
        assert first["trial_id"] == again["trial_id"]
        assert first["index"] == 0 and first["total"] == 4
        assert first["left_url"] != first["right_url"]

    def test_full_session_reaches_completion(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 9, "per_size": 1})["session_id"]
        for expected_remaining in (3, 2, 1, 0):
            trial = store.next_trial(sid, "p1")
            receipt = store.submit_response(sid, "p1", trial["trial_id"], True)
            assert receipt["remaining"] == expected_remaining
        assert store.next_trial(sid, "p1")["complete"] is True

    def test_participants_progress_independently(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 10, "per_size": 1})["session_id"]
        t1 = store.next_trial(sid, "p1")
        store.submit_response(sid, "p1", t1["trial_id"], True)
        assert store.next_trial(sid, "p2")["index"] == 0
        assert store.next_trial(sid, "p1")["index"] == 1

    def test_stale_or_answered_trial_rejected(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 11, "per_size": 1})["session_id"]
        trial = store.next_trial(sid, "p1")
        store.submit_response(sid, "p1", trial["trial_id"], False)
        with pytest.raises(StaleTrialError):
            store.submit_response(sid, "p1", trial["trial_id"], True)

    def test_correctness_computed_server_side(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 12, "per_size": 1})["session_id"]
        runtime = store._get(sid)
        trial = store.next_trial(sid, "p1")
        spec = runtime.trial_set.by_id(trial["trial_id"])
        store.submit_response(sid, "p1", trial["trial_id"], chose_left=True)
        assert runtime.responses[0]["correct"] == (spec.left_is_real is True)


class TestResults:
    def run_search_to_completion(self, store, rounds=2):
        sid = store.create_session("search", dict(SEARCH_CFG, rounds=rounds))["session_id"]
        for round_ in range(rounds):
            for name in ("a", "b", "c"):
                store.submit_ballot(sid, name, round_, [1, 2, 3, 4])
        return sid

    def test_search_results_hold_full_history(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = self.run_search_to_completion(store)
        results = store.get_results(sid)
        assert results["kind"] == "search"
        assert len(results["rounds"]) == 2
        for record in results["rounds"]:
            assert len(record["portrait_ids"]) == 4
            assert record["seed_image_url"].startswith("/images/")

    def test_ten_round_search_reports_ten_records_and_final_seed(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        cfg = {"seed": 99, "n": 4, "quorum": 1, "rounds": 10}
        sid = store.create_session("search", cfg)["session_id"]
        for round_ in range(10):
            store.submit_ballot(sid, "solo", round_, [1, 2, 3, 4])
        results = store.get_results(sid)
        assert results["status"] == "complete"
        assert len(results["rounds"]) == 10
        assert results["rounds"][-1]["seed_image_url"].startswith("/images/")
        assert len(results["theta"]) == model.latent_dim

    def test_aborted_search_retains_partial_history(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        for name in ("a", "b", "c"):
            store.submit_ballot(sid, name, 0, [1, 2, 3, 4])
        store.abort_session(sid)
        results = store.get_results(sid)
        assert results["status"] == "aborted"
        assert len(results["rounds"]) == 1

    def test_empty_turing_results_omit_unanswered_sizes(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 13, "per_size": 1})["session_id"]
        results = store.get_results(sid)
        assert results["kind"] == "turing"
        assert all(len(points) == 0 for points in results["curves"].values())

    def test_turing_results_report_curves_after_responses(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 14, "per_size": 2})["session_id"]
        while True:
            trial = store.next_trial(sid, "p1")
            if trial.get("complete"):
                break
            store.submit_response(sid, "p1", trial["trial_id"], True)
        results = store.get_results(sid)
        total = sum(pt["n_trials"] for pts in results["curves"].values() for pt in pts)
        assert total == 8


class TestContentAddressing:
    def test_same_seed_yields_identical_portrait_ids_and_bytes(self, tmp_path, model, corpus):
        store_a = SessionStore(tmp_path / "a", model, ServiceConfig(), corpus)
        store_b = SessionStore(tmp_path / "b", model, ServiceConfig(), corpus)
        sid_a = store_a.create_session("search", SEARCH_CFG)["session_id"]
        sid_b = store_b.create_session("search", SEARCH_CFG)["session_id"]
        ids_a = [p["portrait_id"] for p in store_a.get_lineup(sid_a)["portraits"]]
        ids_b = [p["portrait_id"] for p in store_b.get_lineup(sid_b)["portraits"]]
        assert ids_a == ids_b
        for h in ids_a:
            assert store_a.read_image(h) == store_b.read_image(h)

    def test_repeat_render_is_stable_within_store(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        z = np.array([0.5, -1.0, 0.25, 2.0])
        runtime_hash_1 = store.images.put(model.decode(z))
        runtime_hash_2 = store.images.put(model.decode(z))
        assert runtime_hash_1 == runtime_hash_2


class TestDurability:
    def random_workload(self, store, rng):
        """Scripted mixed workload over both session kinds."""
        sids = [
            store.create_session("search", dict(SEARCH_CFG, seed=int(rng.integers(1e6))))["session_id"],
            store.create_session("turing", {"seed": int(rng.integers(1e6)), "per_size": 1})["session_id"],
        ]
        search_id, turing_id = sids
        round_ = 0
        for i in range(int(rng.integers(3, 8))):
            store.submit_ballot(search_id, f"p{i}", round_, [int(v) for v in rng.permutation(4) + 1])
            if (i + 1) % 3 == 0:
                round_ += 1
            if round_ >= 2:
                break
        for _ in range(int(rng.integers(1, 5))):
            trial = store.next_trial(turing_id, "walker")
            if trial.get("complete"):
                break
            store.submit_response(turing_id, "walker", trial["trial_id"], bool(rng.integers(2)))
        return sids

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_kill_and_replay_reconstructs_identical_state(self, tmp_path, model, corpus, seed):
        data_dir = tmp_path / f"data{seed}"
        store = SessionStore(data_dir, model, ServiceConfig(), corpus)
        rng = np.random.default_rng(seed)
        sids = self.random_workload(store, rng)
        before = {sid: store.serialize_state(sid) for sid in sids}
        # crash: drop the store, rebuild purely from the event logs
        revived = SessionStore(data_dir, model, ServiceConfig(), corpus)
        after = {sid: revived.serialize_state(sid) for sid in sids}
        assert before == after

    def test_replayed_store_continues_serving(self, tmp_path, model, corpus):
        data_dir = tmp_path / "data"
        store = SessionStore(data_dir, model, ServiceConfig(), corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        store.submit_ballot(sid, "a", 0, [1, 2, 3, 4])
        revived = SessionStore(data_dir, model, ServiceConfig(), corpus)
        receipt = revived.submit_ballot(sid, "b", 0, [4, 3, 2, 1])
        assert receipt["ballots_so_far"] == 2

    def test_event_log_sequences_strictly_increase(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("search", SEARCH_CFG)["session_id"]
        for name in ("a", "b", "c"):
            store.submit_ballot(sid, name, 0, [1, 2, 3, 4])
        records = EventLog.read_all(store.sessions_dir / f"{sid}.jsonl")
        assert [r["seq"] for r in records] == list(range(len(records)))
        assert records[0]["type"] == "created"
        assert any(r["type"] == "round" for r in records)

    def test_snapshot_file_written_periodically(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        sid = store.create_session("turing", {"seed": 15, "per_size": 10})["session_id"]
        for _ in range(20):
            trial = store.next_trial(sid, "p1")
            store.submit_response(sid, "p1", trial["trial_id"], True)
        snap_path = store.sessions_dir / f"{sid}.snapshot.json"
        assert snap_path.exists()
        snapshot = json.loads(snap_path.read_text())
        assert snapshot["session_id"] == sid


class TestQuorumRace:
    def test_concurrent_submissions_advance_exactly_once(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        cfg = {"seed": 21, "n": 4, "quorum": 10, "rounds": 5}
        sid = store.create_session("search", cfg)["session_id"]
        outcomes = []
        barrier = threading.Barrier(32)

        def submit(i):
            barrier.wait()
            try:
                receipt = store.submit_ballot(sid, f"p{i}", 0, [1, 2, 3, 4])
                outcomes.append(receipt)
            except Exception as exc:  # stale or duplicate racers
                outcomes.append(exc)

        threads = [threading.Thread(target=submit, args=(i,)) for i in range(32)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        receipts = [o for o in outcomes if isinstance(o, dict)]
        advances = [r for r in receipts if r["round_advanced"]]
        assert len(receipts) == 10  # quorum accepted, 22 rejected
        assert len(advances) == 1
        assert store._get(sid).state.round == 1


class TestHttpApi:
    @pytest.fixture()
    def client(self, tmp_path, model, corpus):
        store = make_store(tmp_path, model, corpus)
        return TestClient(build_app(store))

    def test_fresh_store_lists_no_sessions(self, client):
        response = client.get("/api/sessions")
        assert response.status_code == 200
        assert response.json() == []

    def test_search_flow_over_http(self, client):
        created = client.post("/api/sessions", json={"kind": "search", "config": SEARCH_CFG})
        assert created.status_code == 201
        sid = created.json()["session_id"]
        assert client.get(f"/api/sessions/{sid}").status_code == 200
        lineup = client.get(f"/api/sessions/{sid}/lineup").json()
        assert len(lineup["portraits"]) == 4
        for name in ("a", "b"):
            body = {"participant_id": name, "round": 0, "ranking": [1, 2, 3, 4]}
            assert client.post(f"/api/sessions/{sid}/ballots", json=body).status_code == 200
        final = client.post(
            f"/api/sessions/{sid}/ballots",
            json={"participant_id": "c", "round": 0, "ranking": [4, 3, 2, 1]},
        )
        assert final.json()["round_advanced"] is True
        image_url = lineup["portraits"][0]["url"]
        image = client.get(image_url)
        assert image.status_code == 200
        assert image.headers["content-type"] == "image/png"
        assert image.content.startswith(b"\x89PNG")

    def test_turing_flow_over_http(self, client):
        created = client.post("/api/sessions", json={"kind": "turing", "config": {"seed": 3, "per_size": 1}})
        sid = created.json()["session_id"]
        trial = client.get(f"/api/sessions/{sid}/trial", params={"participant": "p1"}).json()
        assert trial["index"] == 0
        receipt = client.post(
            f"/api/sessions/{sid}/responses",
            json={"participant_id": "p1", "trial_id": trial["trial_id"], "chose_left": True},
        )
        assert receipt.status_code == 200
        assert receipt.json()["remaining"] == 3
        results = client.get(f"/api/sessions/{sid}/results")
        assert results.status_code == 200

    def test_error_mappings(self, client):
        assert client.get("/api/sessions/ghost").status_code == 404
        assert client.get("/api/sessions/ghost/lineup").status_code == 404
        bad = client.post("/api/sessions", json={"kind": "search", "config": {"n": 1, "seed": 1}})
        assert bad.status_code == 422
        created = client.post("/api/sessions", json={"kind": "search", "config": SEARCH_CFG})
        sid = created.json()["session_id"]
        stale = client.post(
            f"/api/sessions/{sid}/ballots",
            json={"participant_id": "a", "round": 9, "ranking": [1, 2, 3, 4]},
        )
        assert stale.status_code == 409
        malformed = client.post(
            f"/api/sessions/{sid}/ballots",
            json={"participant_id": "a", "round": 0, "ranking": [1, 1, 3, 4]},
        )
        assert malformed.status_code == 422
        assert client.get("/images/doesnotexist.png").status_code == 404


class TestConfigLoading:
    def test_defaults(self):
        cfg = load_config(path=None, env={})
        assert cfg.bind == "127.0.0.1:8000"
        assert cfg.per_size == 10
        assert cfg.ladder.steps == 4

    def test_file_values_and_env_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(
            json.dumps(
                {
                    "model_path": "model.npz",
                    "data_dir": "store",
                    "bind": "0.0.0.0:9000",
                    "per_size": 5,
                    "search": {"quorum": 4},
                    "ladder": {"steps": 3},
                }
            )
        )
        env = {"LL_DATA_DIR": "/elsewhere", "LL_BIND": "127.0.0.1:7777"}
        cfg = load_config(path, env=env)
        assert str(cfg.model_path) == "model.npz"
        assert str(cfg.data_dir) == "/elsewhere"
        assert cfg.bind == "127.0.0.1:7777"
        assert cfg.port == 7777
        assert cfg.search.quorum == 4
        assert cfg.ladder.steps == 3

    def test_ll_config_env_selects_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"per_size": 7}))
        cfg = load_config(path=None, env={"LL_CONFIG": str(path)})
        assert cfg.per_size == 7

    def test_missing_file_rejected(self):
        with pytest.raises(SpecError):
            load_config("/does/not/exist.json", env={})
