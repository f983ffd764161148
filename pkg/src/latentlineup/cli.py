"""Batch entry points: corpus alignment, model fitting, figure grids,
closed-loop simulations, result exports, and the HTTP service.

Exit codes are a stable contract for scripts: 0 success, 1 usage,
2 data error, 3 runtime error. Every randomized command takes --seed and
defaults to a fixed constant.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .align import (
    LandmarkSet,
    alignment_residual,
    fit_similarity,
    mean_landmarks,
    read_landmarks,
    rescale_landmarks,
    warp,
)
from .align import CROP_SIDE, TRAINING_SIDE, WORKING_SIDE
from .config import load_config
from .errors import CorpusError, LatentLineupError, ShapeError, SpecError
from .evolve import SearchConfig, export_trajectory, oracle_ballot, run_search
from .facespace import (
    EigenfaceModel,
    bootstrap_sample,
    fit_eigenfaces,
    interpolate,
    nearest_neighbor,
    perturb,
    sample_prior,
)
from .imagecore import Image, center_crop, read_png, resize, write_png
from .report import save_detection_figure, save_distance_figure, save_grid
from .turing import (
    detection_curve,
    make_session_trials,
    run_simulated_session,
    simulated_observer,
    size_ladder,
    write_curves,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

DEFAULT_SEED = 1234


class UsageExit(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageExit(message)


def build_parser() -> Parser:
    # global flags are accepted both before and after the subcommand; the
    # subparser copies suppress their defaults so they never overwrite a
    # value parsed up front
    def global_flags(parser, suppress):
        kw = {"default": argparse.SUPPRESS} if suppress else {}
        parser.add_argument("--seed", type=int, help="random seed (fixed default)",
                            **(kw or {"default": DEFAULT_SEED}))
        parser.add_argument("--config", type=str, help="service config file (or LL_CONFIG)",
                            **(kw or {"default": None}))
        parser.add_argument("--verbose", action="store_true", **kw)

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)

    parser = Parser(prog="latentlineup", description=__doc__)
    global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p_align = add_parser("align", help="align a portrait corpus to its landmark composite")
    p_align.add_argument("in_dir", type=Path)
    p_align.add_argument("landmarks_dir", type=Path)
    p_align.add_argument("out_dir", type=Path)
    p_align.add_argument("--working-side", type=int, default=WORKING_SIDE)
    p_align.add_argument("--crop-side", type=int, default=CROP_SIDE)
    p_align.add_argument("--out-side", type=int, default=TRAINING_SIDE)

    p_fit = add_parser("fit", help="fit the linear face-space model to an aligned corpus")
    p_fit.add_argument("aligned_dir", type=Path)
    p_fit.add_argument("-d", "--latent-dim", type=int, default=64)
    p_fit.add_argument("--out", type=Path, required=True)

    p_fig = add_parser("figures", help="render sample/interpolation/perturbation/neighbor grids")
    p_fig.add_argument("--model", type=Path, required=True)
    p_fig.add_argument("--mode", choices=["samples", "interp", "perturb", "nn"], required=True)
    p_fig.add_argument("--out-dir", type=Path, required=True)
    p_fig.add_argument("--corpus", type=Path, help="aligned corpus dir (required for nn mode)")
    p_fig.add_argument("--rows", type=int, default=None)
    p_fig.add_argument("--cols", type=int, default=None)
    p_fig.add_argument("--count", type=int, default=8, help="sample/neighbor pairs in nn mode")
    p_fig.add_argument("--base-sigma", type=float, default=0.25)

    p_sim = add_parser("simulate", help="closed-loop search or observer simulations")
    p_sim.add_argument("--mode", choices=["evolve", "turing"], required=True)
    p_sim.add_argument("--model", type=Path, required=True)
    p_sim.add_argument("--out-dir", type=Path, required=True)
    p_sim.add_argument("--rounds", type=int, default=10)
    p_sim.add_argument("-n", "--lineup-size", type=int, default=8)
    p_sim.add_argument("--sigma", type=float, default=0.3)
    p_sim.add_argument("--alpha", type=float, default=1.0)
    p_sim.add_argument("--quorum", type=int, default=10)
    p_sim.add_argument("--noise-level", type=float, default=0.0)
    p_sim.add_argument("--target-norm", type=float, default=50.0)
    p_sim.add_argument("--observer", type=str, default=None, help="per-size p(correct), e.g. 16:0.5,25:0.6")
    p_sim.add_argument("--per-size", type=int, default=1000)
    p_sim.add_argument("--reps", type=int, default=100, help="chance-observer coverage repetitions")

    p_serve = add_parser("serve", help="run the HTTP session service")
    p_serve.add_argument("--bind", type=str, default=None)
    p_serve.add_argument("--data-dir", type=Path, default=None)

    p_res = add_parser("results", help="export a stored session's results")
    p_res.add_argument("--data-dir", type=Path, required=True)
    p_res.add_argument("--model", type=Path, required=True)
    p_res.add_argument("--session", type=str, required=True)
    p_res.add_argument("--out-dir", type=Path, required=True)
    p_res.add_argument("--corpus", type=Path, default=None, help="aligned corpus dir (needed to replay turing sessions)")

    return parser


# -- align ----------------------------------------------------------------


def _corpus_hash(paths: list[Path]) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def cmd_align(args) -> int:
    if not args.in_dir.is_dir():
        raise CorpusError(f"input directory not found: {args.in_dir}")
    if not args.landmarks_dir.is_dir():
        raise CorpusError(f"landmarks directory not found: {args.landmarks_dir}")
    args.out_dir.mkdir(parents=True, exist_ok=True)
    image_paths = sorted(args.in_dir.glob("*.png"))
    if not image_paths:
        raise CorpusError(f"no .png portraits in {args.in_dir}")
    failures: list[str] = []
    loaded: list[tuple[str, Image, LandmarkSet]] = []
    expected_count = None
    for path in image_paths:
        lm_path = args.landmarks_dir / f"{path.stem}.json"
        try:
            if not lm_path.exists():
                raise CorpusError(f"missing landmark file {lm_path.name}")
            img = read_png(path)
            lm = read_landmarks(lm_path, expected_count)
            if expected_count is None:
                expected_count = len(lm)
            loaded.append((path.stem, img, lm))
        except Exception as exc:
            failures.append(f"{path.name}: {exc}")
    if not loaded:
        raise CorpusError("no portrait could be loaded; " + "; ".join(failures))
    rescaled = [
        rescale_landmarks(lm, (img.width, img.height), (args.working_side, args.working_side))
        for _, img, lm in loaded
    ]
    target = mean_landmarks(rescaled)
    outputs = []
    for (stem, img, _), lm in zip(loaded, rescaled):
        try:
            working = resize(img, args.working_side, args.working_side)
            transform = fit_similarity(lm, target)
            aligned = resize(
                center_crop(warp(working, transform, args.working_side), args.crop_side),
                args.out_side,
                args.out_side,
            )
            out_path = args.out_dir / f"{stem}.png"
            write_png(aligned, out_path)
            outputs.append(out_path.name)
            if args.verbose:
                residual = alignment_residual(transform, lm, target)
                print(f"{stem}: residual {residual:.4f}")
        except Exception as exc:
            failures.append(f"{stem}: {exc}")
    manifest = {
        "images": [p.name for p in image_paths],
        "landmark_count": expected_count,
        "aligned": outputs,
        "failures": sorted(failures),
        "out_side": args.out_side,
        "corpus_hash": _corpus_hash(
            image_paths + [args.landmarks_dir / f"{p.stem}.json" for p in image_paths if (args.landmarks_dir / f"{p.stem}.json").exists()]
        ),
    }
    (args.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"aligned {len(outputs)}/{len(image_paths)} portraits -> {args.out_dir}")
    for failure in failures:
        print(f"error: {failure}", file=sys.stderr)
    return EXIT_DATA if failures else EXIT_OK


# -- fit --------------------------------------------------------------------


def _read_corpus(directory: Path) -> tuple[list[str], list[Image]]:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise CorpusError(f"no .png images in {directory}")
    return [p.stem for p in paths], [read_png(p) for p in paths]


def cmd_fit(args) -> int:
    _, images = _read_corpus(args.aligned_dir)
    model = fit_eigenfaces(images, d=args.latent_dim)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    model.save(args.out)
    variances = model.scales**2
    total = float(np.sum(variances)) or 1.0
    for k, var in enumerate(variances):
        print(f"component {k}: variance {var:.6e} ({100.0 * var / total:.2f}%)")
    print(f"model ({model.d} components, {model.image_side}px) -> {args.out}")
    return EXIT_OK


# -- figures ------------------------------------------------------------------


def cmd_figures(args) -> int:
    model = EigenfaceModel.load(args.model)
    rng = np.random.default_rng(args.seed)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out_path = args.out_dir / f"{args.mode}.png"
    if args.mode == "samples":
        rows = args.rows or 2
        cols = args.cols or 4
        tiles = [model.decode(sample_prior(model, rng)) for _ in range(rows * cols)]
        save_grid(tiles, rows, cols, out_path)
    elif args.mode == "interp":
        rows = args.rows or 3
        cols = 7  # seven-point interpolations, endpoints included
        tiles = []
        for _ in range(rows):
            z0 = sample_prior(model, rng)
            z1 = sample_prior(model, rng)
            tiles.extend(model.decode(z) for z in interpolate(z0, z1, cols))
        save_grid(tiles, rows, cols, out_path)
    elif args.mode == "perturb":
        rows = 4  # the four intensity levels
        cols = args.cols or 8
        base = sample_prior(model, rng)
        tiles = [
            model.decode(perturb(base, level, args.base_sigma, rng))
            for level in (1, 2, 3, 4)
            for _ in range(cols)
        ]
        save_grid(tiles, rows, cols, out_path)
    elif args.mode == "nn":
        if args.corpus is None:
            raise SpecError("nn mode needs --corpus")
        _, corpus = _read_corpus(args.corpus)
        corpus = [img if img.width == model.image_side else resize(img, model.image_side, model.image_side) for img in corpus]
        samples = [model.decode(sample_prior(model, rng)) for _ in range(args.count)]
        neighbors = []
        for i, sample in enumerate(samples):
            idx, corr = nearest_neighbor(corpus, sample)
            neighbors.append(corpus[idx])
            print(f"sample {i}: neighbor {idx} correlation {corr:.4f}")
        save_grid(samples + neighbors, 2, args.count, out_path)
    print(f"wrote {out_path}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------


def _parse_observer(text: str | None, ladder: list[int]) -> dict[int, float]:
    if text is None:
        return {size: 0.5 for size in ladder}
    table = {}
    for item in text.split(","):
        size, _, prob = item.partition(":")
        table[int(size.strip())] = float(prob)
    missing = [size for size in ladder if size not in table]
    if missing:
        raise SpecError(f"observer is missing sizes {missing}")
    return table


def cmd_simulate(args) -> int:
    model = EigenfaceModel.load(args.model)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    if args.mode == "evolve":
        return _simulate_evolve(args, model, rng)
    return _simulate_turing(args, model, rng)


def _simulate_evolve(args, model: EigenfaceModel, rng: np.random.Generator) -> int:
    direction = rng.standard_normal(model.latent_dim)
    z_star = args.target_norm * direction / np.linalg.norm(direction)
    raw = model.reconstruct(z_star)
    clamped = float(np.mean((raw < 0.0) | (raw > 1.0)))
    if clamped > 0.01:
        print(
            f"warning: target decode clamps {100 * clamped:.0f}% of pixels; oracle rankings lose "
            f"signal there. Try a smaller --target-norm for this model.",
            file=sys.stderr,
        )
    target = model.decode(z_star)
    config = SearchConfig(
        d=model.latent_dim,
        n=args.lineup_size,
        sigma=args.sigma,
        alpha=args.alpha,
        rounds=args.rounds,
        quorum=args.quorum,
    )

    def source(state, lineup):
        return [
            oracle_ballot(lineup, model, target, args.noise_level, rng, f"sim-{i}")
            for i in range(config.quorum)
        ]

    state = run_search(config, model, source, rng)
    distances = [float(np.linalg.norm(z_star))]  # theta_0 is the origin
    distances += [float(np.linalg.norm(rec.theta_after - z_star)) for rec in state.history]
    ratio = distances[-1] / distances[0]
    metrics = {
        "mode": "evolve",
        "seed": args.seed,
        "config": {
            "n": config.n,
            "sigma": config.sigma,
            "alpha": config.alpha,
            "rounds": config.rounds,
            "quorum": config.quorum,
            "d": config.d,
            "noise_level": args.noise_level,
            "target_norm": args.target_norm,
        },
        "initial_distance": distances[0],
        "final_distance": distances[-1],
        "distance_ratio": ratio,
        "per_round_distance": distances,
    }
    (args.out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    with open(args.out_dir / "rounds.csv", "w") as fh:
        fh.write("round,distance\n")
        for round_, dist in enumerate(distances):
            fh.write(f"{round_},{dist!r}\n")
    export_trajectory(state, args.out_dir / "trajectory.jsonl")
    save_distance_figure(distances, args.out_dir / "distance.png")
    seeds = [model.decode(rec.theta_after) for rec in state.history]
    if seeds:
        save_grid(seeds, 1, len(seeds), args.out_dir / "strip.png")
    print(f"distance ratio after {config.rounds} rounds: {ratio:.4f}")
    return EXIT_OK


def _simulate_turing(args, model: EigenfaceModel, rng: np.random.Generator) -> int:
    ladder = size_ladder()
    observer_p = _parse_observer(args.observer, ladder)
    reals = {f"real-{i}": model.decode(sample_prior(model, rng)) for i in range(4)}
    generators = {"model": lambda r: model.decode(sample_prior(model, r))}

    trial_set = make_session_trials(reals, generators, rng, ladder=ladder, per_size=args.per_size)
    responses = run_simulated_session(trial_set, simulated_observer(observer_p, rng))
    curve = detection_curve(responses, trial_set.trials, "model")
    curves = {"model": curve}
    write_curves(curves, args.out_dir / "curves.csv", args.out_dir / "curves.json")
    save_detection_figure(curves, args.out_dir / "detection.png")

    recovery = {}
    for pt in curve.points:
        p_true = observer_p[pt.size]
        se = float(np.sqrt(p_true * (1.0 - p_true) / pt.n_trials)) if 0.0 < p_true < 1.0 else 0.0
        recovery[str(pt.size)] = {
            "true_p": p_true,
            "accuracy": pt.accuracy,
            "binomial_se": se,
            "deviation_in_se": abs(pt.accuracy - p_true) / se if se else 0.0,
        }

    coverage = {str(size): 0 for size in ladder}
    for rep in range(args.reps):
        rep_rng = np.random.default_rng(np.random.SeedSequence([args.seed, rep]))
        rep_trials = make_session_trials(reals, generators, rep_rng, ladder=ladder, per_size=10)
        rep_obs = simulated_observer({size: 0.5 for size in ladder}, rep_rng)
        rep_curve = detection_curve(run_simulated_session(rep_trials, rep_obs), rep_trials.trials, "model")
        for pt in rep_curve.points:
            if pt.ci_low <= 0.5 <= pt.ci_high:
                coverage[str(pt.size)] += 1
    metrics = {
        "mode": "turing",
        "seed": args.seed,
        "per_size": args.per_size,
        "observer": {str(k): v for k, v in observer_p.items()},
        "recovery": recovery,
        "chance_coverage_reps": args.reps,
        "chance_coverage": {
            size: (count / args.reps if args.reps else None) for size, count in coverage.items()
        },
    }
    (args.out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    worst = max((entry["deviation_in_se"] for entry in recovery.values()), default=0.0)
    print(f"recovered {len(recovery)} sizes; worst deviation {worst:.2f} binomial SEs")
    return EXIT_OK


# -- serve / results ---------------------------------------------------------


def _load_store(data_dir: Path, model_path: Path, config=None):
    from .service import SessionStore

    if not Path(model_path).exists():
        raise CorpusError(f"model file not found: {model_path}")
    model = EigenfaceModel.load(model_path)
    corpus = {}
    if config is not None and config.corpus_dir is not None:
        names, images = _read_corpus(config.corpus_dir)
        corpus = dict(zip(names, images))
    return SessionStore(data_dir, model, config, corpus)


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    config = load_config(args.config)
    if args.bind:
        config.bind = args.bind
    if args.data_dir:
        config.data_dir = args.data_dir
    if config.model_path is None:
        raise CorpusError("service config must name a model_path")
    store = _load_store(config.data_dir, config.model_path, config)
    app = build_app(store)
    print(f"serving on {config.host}:{config.port} (data in {config.data_dir})")
    uvicorn.run(app, host=config.host, port=config.port, log_level="info" if args.verbose else "warning")
    return EXIT_OK


def cmd_results(args) -> int:
    from .service import SessionStore

    if not args.model.exists():
        raise CorpusError(f"model file not found: {args.model}")
    model = EigenfaceModel.load(args.model)
    corpus = {}
    if args.corpus is not None:
        names, images = _read_corpus(args.corpus)
        corpus = dict(zip(names, images))
    store = SessionStore(args.data_dir, model, corpus=corpus)
    results = store.get_results(args.session)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    (args.out_dir / "results.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    if results["kind"] == "search":
        runtime = store._get(args.session)
        export_trajectory(runtime.state, args.out_dir / "trajectory.jsonl")
        seeds = [model.decode(np.asarray(r["theta"])) for r in results["rounds"]]
        if seeds:
            save_grid(seeds, 1, len(seeds), args.out_dir / "strip.png")
    else:
        from .turing import CurvePoint, DetectionCurve

        curves = {
            label: DetectionCurve(generator=label, points=tuple(CurvePoint(**pt) for pt in points))
            for label, points in results["curves"].items()
        }
        write_curves(curves, args.out_dir / "curves.csv", args.out_dir / "curves.json")
        save_detection_figure(curves, args.out_dir / "detection.png")
    print(f"exported session {args.session} -> {args.out_dir}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

COMMANDS = {
    "align": cmd_align,
    "fit": cmd_fit,
    "figures": cmd_figures,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "results": cmd_results,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageExit as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageExit as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpecError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ShapeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LatentLineupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
