"""Human-in-the-loop search over a learned latent face space.

The package bundles the full platform: raster primitives and corpus
alignment, a linear eigen-decomposition face space with the pixel
bootstrap control, rank-aggregated evolution-strategy search, a 2AFC
realism-test harness with psychometric analysis, an HTTP session service,
and batch CLI entry points.
"""

from .align import LandmarkSet, SimilarityTransform, align_corpus, fit_similarity, mean_landmarks, warp
from .errors import LatentLineupError
from .evolve import (
    Ballot,
    Lineup,
    ScoreVector,
    SearchConfig,
    SearchState,
    aggregate_ranks,
    nes_update,
    oracle_ballot,
    propose_lineup,
    run_search,
)
from .facespace import (
    Decoder,
    EigenfaceModel,
    bootstrap_sample,
    fit_eigenfaces,
    interpolate,
    nearest_neighbor,
    perturb,
    sample_prior,
)
from .imagecore import Image, ResampleSpec, center_crop, lanczos_resample, pixel_correlation, read_png, write_png
from .turing import (
    DetectionCurve,
    Response,
    TrialSpec,
    detection_curve,
    make_session_trials,
    simulated_observer,
    size_ladder,
    wilson_interval,
)

__version__ = "0.1.0"

__all__ = [
    "Ballot",
    "Decoder",
    "DetectionCurve",
    "EigenfaceModel",
    "Image",
    "LandmarkSet",
    "LatentLineupError",
    "Lineup",
    "ResampleSpec",
    "Response",
    "ScoreVector",
    "SearchConfig",
    "SearchState",
    "SimilarityTransform",
    "TrialSpec",
    "aggregate_ranks",
    "align_corpus",
    "bootstrap_sample",
    "center_crop",
    "detection_curve",
    "fit_eigenfaces",
    "fit_similarity",
    "interpolate",
    "lanczos_resample",
    "make_session_trials",
    "mean_landmarks",
    "nearest_neighbor",
    "nes_update",
    "oracle_ballot",
    "perturb",
    "pixel_correlation",
    "propose_lineup",
    "read_png",
    "run_search",
    "sample_prior",
    "simulated_observer",
    "size_ladder",
    "warp",
    "wilson_interval",
    "write_png",
]
