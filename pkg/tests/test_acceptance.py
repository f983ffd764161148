"""Acceptance suite: one test per criterion, at the stated tolerances.

Run with `pytest tests/test_acceptance.py -v -s` to see one [PASS] line per
criterion; any assertion failure marks that criterion red.
"""

import json
import math
import threading
import time

import numpy as np
import pytest
from scipy import stats

from latentlineup.align import LandmarkSet, SimilarityTransform, alignment_residual, fit_similarity
from latentlineup.config import ServiceConfig
from latentlineup.evolve import Ballot, ScoreVector, SearchConfig, SearchState, aggregate_ranks, nes_update, oracle_ballot, propose_lineup, run_search
from latentlineup.facespace import bootstrap_sample, fit_eigenfaces
from latentlineup.imagecore import Image, ResampleSpec, lanczos_resample
from latentlineup.service import SessionStore
from latentlineup.turing import (
    detection_curve,
    make_session_trials,
    run_simulated_session,
    simulated_observer,
    size_ladder,
)

from oracles import lanczos_resample_direct, rank_d_sse, random_orthonormal_basis, top_eigenbasis


def report(name: str, elapsed: float | None = None, limit: float | None = None) -> None:
    timing = f"  ({elapsed:.2f}s < {limit:.0f}s)" if limit is not None else ""
    print(f"[PASS] {name}{timing}")


def flat_spectrum_model(seed=1000, n_img=24, side=16, d=16):
    rng = np.random.default_rng(seed)
    images = [Image(0.5 + rng.uniform(-0.02, 0.02, (side, side, 3))) for _ in range(n_img)]
    return fit_eigenfaces(images, d=d)


def test_lanczos_oracle_equivalence():
    """Resampler matches a direct convolution-sum oracle on random 8x8 -> 4x4
    images, max abs error < 1e-12, in under 5 seconds."""
    start = time.monotonic()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        img = Image(rng.random((8, 8, 3)))
        got = lanczos_resample(img, ResampleSpec(4, 4, 3))
        want = lanczos_resample_direct(img.pixels, 4, 4, 3)
        worst = max(worst, float(np.abs(got.pixels - want).max()))
    elapsed = time.monotonic() - start
    assert worst < 1e-12, f"max abs error {worst}"
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    report(f"Lanczos oracle equivalence: 100 random 8x8->4x4 images, max err {worst:.2e}", elapsed, 5.0)


def _residuals_vectorized(scales, rotations, txs, tys, src, dst):
    """Independent vectorized residual evaluation for a batch of transforms."""
    c = np.cos(rotations)[:, None]
    s = np.sin(rotations)[:, None]
    x, y = src[:, 0][None, :], src[:, 1][None, :]
    sx = scales[:, None] * (c * x - s * y) + txs[:, None]
    sy = scales[:, None] * (s * x + c * y) + tys[:, None]
    return ((sx - dst[:, 0][None, :]) ** 2 + (sy - dst[:, 1][None, :]) ** 2).sum(axis=1)


def test_procrustes_recovery_and_optimality():
    """1,000 random similarity transforms on random 68-point sets recovered
    with parameter error < 1e-9, each confirmed optimal against 1e4 random
    perturbed transforms, in under 30 seconds."""
    start = time.monotonic()
    rng = np.random.default_rng(202)
    n_cases = 1000
    n_perturb = 10_000
    worst_param = 0.0
    for case in range(n_cases):
        src_pts = rng.standard_normal((68, 2)) * 50.0
        true_scale = rng.uniform(0.5, 2.0)
        true_rot = rng.uniform(-math.pi, math.pi)
        true_tx, true_ty = rng.uniform(-50.0, 50.0, 2)
        truth = SimilarityTransform(true_scale, true_rot, true_tx, true_ty)
        src = LandmarkSet(src_pts)
        dst = LandmarkSet(truth.apply(src_pts))
        fit = fit_similarity(src, dst)
        rot_err = abs(math.remainder(fit.rotation - true_rot, 2.0 * math.pi))
        worst_param = max(
            worst_param,
            abs(fit.scale - true_scale),
            rot_err,
            abs(fit.tx - true_tx),
            abs(fit.ty - true_ty),
        )
        fitted_residual = alignment_residual(fit, src, dst)
        # perturb at several magnitudes around the solution
        mags = 10.0 ** rng.uniform(-6.0, -1.0, n_perturb)
        scales = fit.scale * np.exp(mags * rng.standard_normal(n_perturb))
        rots = fit.rotation + mags * rng.standard_normal(n_perturb)
        txs = fit.tx + 50.0 * mags * rng.standard_normal(n_perturb)
        tys = fit.ty + 50.0 * mags * rng.standard_normal(n_perturb)
        residuals = _residuals_vectorized(scales, rots, txs, tys, src_pts, dst.points)
        assert residuals.min() >= fitted_residual, f"case {case}: beaten by a perturbation"
    elapsed = time.monotonic() - start
    assert worst_param < 1e-9, f"worst parameter error {worst_param}"
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    report(
        f"Procrustes recovery: 1000 cases, worst param err {worst_param:.2e}, optimal vs 1e4 perturbations each",
        elapsed,
        30.0,
    )


def test_eigenface_optimality():
    """On 20 random 8x8 images with d=5 the reconstruction SSE matches a dense
    eigensolver oracle within 1e-8 and beats 100 random rank-5 bases, in
    under 10 seconds."""
    start = time.monotonic()
    rng = np.random.default_rng(303)
    images = [Image(rng.random((8, 8, 3))) for _ in range(20)]
    model = fit_eigenfaces(images, d=5)
    data = np.stack([img.flat() for img in images])
    model_sse = rank_d_sse(data, model.basis)
    oracle_sse = rank_d_sse(data, top_eigenbasis(data, 5))
    assert abs(model_sse - oracle_sse) < 1e-8, f"SSE gap {abs(model_sse - oracle_sse)}"
    for _ in range(100):
        sse = rank_d_sse(data, random_orthonormal_basis(data.shape[1], 5, rng))
        assert model_sse <= sse
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"took {elapsed:.2f}s"
    report(
        f"Eigenface optimality: SSE gap to dense-eigh oracle {abs(model_sse - oracle_sse):.2e}, beats 100 random bases",
        elapsed,
        10.0,
    )


def test_nes_closed_loop_convergence():
    """With the bundled decoder (d=16), zero-noise oracle rankers, n=8,
    quorum=10, sigma=0.3, alpha=1.0, and 10 rounds, the target latent
    distance halves in at least 90 of 100 seeded runs, in under 60 seconds."""
    start = time.monotonic()
    model = flat_spectrum_model()
    config = SearchConfig(d=16, n=8, sigma=0.3, alpha=1.0, rounds=10, quorum=10)
    halved = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        direction = rng.standard_normal(16)
        z_star = 50.0 * direction / np.linalg.norm(direction)
        target = model.decode(z_star)

        def source(state, lineup):
            return [oracle_ballot(lineup, model, target, 0.0, rng, f"p{i}") for i in range(10)]

        state = run_search(config, model, source, rng)
        if np.linalg.norm(state.theta - z_star) < 0.5 * np.linalg.norm(z_star):
            halved += 1
    elapsed = time.monotonic() - start
    assert halved >= 90, f"distance halved in only {halved}/100 runs"
    assert elapsed < 60.0, f"took {elapsed:.2f}s"
    report(f"NES closed loop: target distance halved in {halved}/100 seeded runs", elapsed, 60.0)


def test_nes_algebraic_invariants():
    """Shift invariance under constant rank offsets (exact), zero step under
    uniform centered scores (exact), and linearity of the step in the score
    scale (< 1e-12)."""
    # shift invariance, bitwise: 8 ballots keep every average rank dyadic
    rng = np.random.default_rng(404)
    cfg = SearchConfig(d=6, n=4, sigma=0.3)
    ballots = [Ballot(f"p{i}", 0, tuple(int(v) for v in rng.permutation(4) + 1)) for i in range(8)]
    scores = aggregate_ranks(ballots, 4)
    for offset in (1.0, 7.0, -3.0):
        shifted = ScoreVector.from_raw(scores.raw + offset)
        state_a, state_b = SearchState(cfg), SearchState(cfg)
        lineup_a = propose_lineup(state_a, np.random.default_rng(9))
        lineup_b = propose_lineup(state_b, np.random.default_rng(9))
        nes_update(state_a, lineup_a, scores)
        nes_update(state_b, lineup_b, shifted)
        assert np.array_equal(state_a.theta, state_b.theta), "shift invariance violated"

    # zero step, bitwise
    state = SearchState(cfg, theta=np.array([1.0, -2.0, 0.5, 3.25, -0.125, 9.0]))
    before = state.theta.copy()
    lineup = propose_lineup(state, np.random.default_rng(10))
    opposed = aggregate_ranks(
        [Ballot("a", 0, (1, 2, 3, 4)), Ballot("b", 0, (4, 3, 2, 1))], 4
    )
    nes_update(state, lineup, opposed)
    assert np.array_equal(state.theta, before), "nonzero step from uniform centered scores"

    # linearity in the score scale
    centered = rng.standard_normal(4)
    centered -= centered.mean()
    for c in (0.5, 3.0, 11.0):
        state_a, state_b = SearchState(cfg), SearchState(cfg)
        lineup_a = propose_lineup(state_a, np.random.default_rng(11))
        lineup_b = propose_lineup(state_b, np.random.default_rng(11))
        nes_update(state_a, lineup_a, ScoreVector(raw=centered, centered=centered))
        nes_update(state_b, lineup_b, ScoreVector(raw=c * centered, centered=c * centered))
        assert np.abs(state_b.theta - c * state_a.theta).max() < 1e-12, "step not linear in scores"
    report("NES algebraic invariants: shift invariance (exact), zero step (exact), linearity (<1e-12)")


def test_turing_harness_fidelity():
    """Default sessions emit exactly 40 trials, 10 per size over
    [16, 25, 40, 64]; a known observer is recovered within 3 binomial SEs at
    1e3 trials/size; a chance observer's Wilson intervals contain 0.5 at
    every size in >= 95% of 100 seeded default-scale sessions; < 60 s."""
    start = time.monotonic()
    ladder = size_ladder()
    assert ladder == [16, 25, 40, 64]

    def pools(rng):
        reals = {f"real-{i}": Image(rng.random((4, 4, 3))) for i in range(3)}
        return reals, {"control": lambda r: Image(r.random((4, 4, 3)))}

    # exact trial counts at defaults
    rng = np.random.default_rng(505)
    reals, generators = pools(rng)
    trial_set = make_session_trials(reals, generators, rng)
    assert len(trial_set.trials) == 40
    per_size = {size: 0 for size in ladder}
    for trial in trial_set.trials:
        per_size[trial.size] += 1
    assert all(count == 10 for count in per_size.values())

    # recovery of a known psychometric function at 1e3 trials per size
    p_true = {16: 0.5, 25: 0.6, 40: 0.7, 64: 0.8}
    rng = np.random.default_rng(77)
    reals, generators = pools(rng)
    big = make_session_trials(reals, generators, rng, per_size=1000)
    responses = run_simulated_session(big, simulated_observer(p_true, rng))
    curve = detection_curve(responses, big.trials, "control")
    worst_dev = 0.0
    for pt in curve.points:
        se = math.sqrt(p_true[pt.size] * (1.0 - p_true[pt.size]) / pt.n_trials)
        dev = abs(pt.accuracy - p_true[pt.size])
        worst_dev = max(worst_dev, dev / se)
        assert dev <= 3.0 * se, f"size {pt.size}: {dev:.4f} > 3 SE"

    # chance-observer coverage across 100 seeded default-scale sessions
    contains = {size: 0 for size in ladder}
    for rep in range(100):
        rep_rng = np.random.default_rng(rep)
        reals, generators = pools(rep_rng)
        rep_set = make_session_trials(reals, generators, rep_rng)
        rep_obs = simulated_observer({size: 0.5 for size in ladder}, rep_rng)
        rep_curve = detection_curve(run_simulated_session(rep_set, rep_obs), rep_set.trials, "control")
        for pt in rep_curve.points:
            if pt.ci_low <= 0.5 <= pt.ci_high:
                contains[pt.size] += 1
    assert all(contains[size] >= 95 for size in ladder), f"coverage {contains}"
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"took {elapsed:.2f}s"
    report(
        f"Turing harness fidelity: 40 trials (10/size on {ladder}), recovery worst dev {worst_dev:.2f} SE, "
        f"chance coverage {min(contains.values())}-{max(contains.values())}/100 per size",
        elapsed,
        60.0,
    )


def test_bootstrap_control_marginals():
    """Per-location chi-square against the corpus empirical distribution does
    not reject at alpha = 0.01 on a 4-image toy corpus with 1e4 draws."""
    rng_corpus = np.random.default_rng(606)
    corpus = [Image(rng_corpus.random((2, 2, 3))) for _ in range(4)]
    stack = np.stack([img.pixels for img in corpus])
    draws = 10_000
    rng = np.random.default_rng(607)
    counts = np.zeros((4, 2, 2))
    for _ in range(draws):
        out = bootstrap_sample(corpus, rng)
        which = (np.abs(stack - out.pixels[None]) < 1e-15).all(axis=3).argmax(axis=0)
        counts[which, np.arange(2)[:, None], np.arange(2)[None, :]] += 1
    threshold = stats.chi2.ppf(0.99, df=3)
    expected = draws / 4.0
    worst = 0.0
    for y in range(2):
        for x in range(2):
            statistic = float((((counts[:, y, x] - expected) ** 2) / expected).sum())
            worst = max(worst, statistic)
            assert statistic < threshold, f"location ({x},{y}): chi2 {statistic:.2f} >= {threshold:.2f}"
    report(f"Bootstrap control marginals: worst per-location chi2 {worst:.2f} < {threshold:.2f} (alpha=0.01)")


@pytest.fixture(scope="module")
def service_fixtures(tmp_path_factory):
    model = flat_spectrum_model(seed=1000, n_img=12, side=8, d=4)
    rng = np.random.default_rng(4)
    corpus = {f"real-{i}": Image(rng.random((8, 8, 3))) for i in range(4)}
    return model, corpus, tmp_path_factory


def test_service_durability_and_atomicity(service_fixtures):
    """Random kill-and-replay reconstructs identical session state, and a
    32-way concurrent quorum race advances the round exactly once in
    100/100 stress iterations."""
    model, corpus, tmp_path_factory = service_fixtures

    # durability: random workloads, killed and replayed at random points
    for seed in range(10):
        data_dir = tmp_path_factory.mktemp(f"durability{seed}")
        store = SessionStore(data_dir, model, ServiceConfig(), corpus)
        rng = np.random.default_rng(seed)
        search_id = store.create_session(
            "search", {"seed": int(rng.integers(1e6)), "n": 4, "quorum": 3, "rounds": 3}
        )["session_id"]
        turing_id = store.create_session(
            "turing", {"seed": int(rng.integers(1e6)), "per_size": 2}
        )["session_id"]
        participants = 0
        round_ = 0
        for step in range(int(rng.integers(5, 14))):
            if rng.random() < 0.5 and round_ < 3:
                store.submit_ballot(
                    search_id, f"p{participants}", round_, [int(v) for v in rng.permutation(4) + 1]
                )
                participants += 1
                if participants % 3 == 0:
                    round_ += 1
            else:
                trial = store.next_trial(turing_id, "walker")
                if not trial.get("complete"):
                    store.submit_response(turing_id, "walker", trial["trial_id"], bool(rng.integers(2)))
            if rng.random() < 0.3:  # random kill point
                before = {sid: store.serialize_state(sid) for sid in (search_id, turing_id)}
                store = SessionStore(data_dir, model, ServiceConfig(), corpus)  # crash + replay
                after = {sid: store.serialize_state(sid) for sid in (search_id, turing_id)}
                assert before == after, f"replay diverged (seed {seed}, step {step})"
        before = {sid: store.serialize_state(sid) for sid in (search_id, turing_id)}
        revived = SessionStore(data_dir, model, ServiceConfig(), corpus)
        after = {sid: revived.serialize_state(sid) for sid in (search_id, turing_id)}
        assert before == after

    # atomicity: 32 concurrent submitters racing to complete a quorum of 10
    data_dir = tmp_path_factory.mktemp("race")
    store = SessionStore(data_dir, model, ServiceConfig(), corpus)
    for iteration in range(100):
        sid = store.create_session(
            "search", {"seed": iteration, "n": 4, "quorum": 10, "rounds": 5}
        )["session_id"]
        receipts = []
        barrier = threading.Barrier(32)

        def submit(i, session_id=sid):
            barrier.wait()
            try:
                receipts.append(store.submit_ballot(session_id, f"p{i}", 0, [1, 2, 3, 4]))
            except Exception:
                pass  # losers of the race are rejected as stale/duplicate

        threads = [threading.Thread(target=submit, args=(i,)) for i in range(32)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        advances = [r for r in receipts if r["round_advanced"]]
        assert len(receipts) == 10, f"iteration {iteration}: {len(receipts)} accepted"
        assert len(advances) == 1, f"iteration {iteration}: {len(advances)} advances"
        assert store._get(sid).state.round == 1
    report("Service durability and atomicity: 10 random kill-and-replay workloads identical, 100/100 races advanced exactly once")
