"""Exploration/exploitation engine for ranking interchangeable creatives.

Three layers: a linear visual-prior scorer trained on logged clicks, a
catalog of bandit policies centered on a hybrid Bayesian-linear Thompson
sampler warm-startable from the scorer, and an unbiased offline replay
evaluator over uniformly-logged impression data.
"""

from .bandit import (
    FusionConfig,
    HybridArmState,
    HybridPolicy,
    NigPosterior,
    NigPrior,
    Policy,
    PosteriorParams,
    batch_posterior,
    fusion_lambda,
    make_policy,
    thompson_draw,
)
from .core import cholesky, rng_stream, sample_inverse_gamma, sample_mvn
from .data import (
    Dataset,
    GeneratorConfig,
    ImpressionRecord,
    MushroomData,
    build_groups,
    generate,
    generate_mushroom,
    load_dataset,
    load_features,
    load_impressions,
    load_mushroom,
    split,
)
from .prior import (
    BetaSmoother,
    CreativeScorer,
    ProductGroup,
    SmoothingPrior,
    combined_loss,
    empirical_ctr,
    fit_smoothing_prior,
    listwise_loss,
    pointwise_loss,
    rank_labels,
    sampling_weight,
    smoothed_ctr,
    top1_probabilities,
)
from .replay import (
    EvalReport,
    MushroomResult,
    mushroom_run,
    normalized_regret,
    oracle_ctr,
    replay,
    write_report,
)

__version__ = "0.1.0"

__all__ = [
    "BetaSmoother",
    "CreativeScorer",
    "Dataset",
    "EvalReport",
    "FusionConfig",
    "GeneratorConfig",
    "HybridArmState",
    "HybridPolicy",
    "ImpressionRecord",
    "MushroomData",
    "MushroomResult",
    "NigPosterior",
    "NigPrior",
    "Policy",
    "PosteriorParams",
    "ProductGroup",
    "SmoothingPrior",
    "batch_posterior",
    "build_groups",
    "cholesky",
    "combined_loss",
    "empirical_ctr",
    "fit_smoothing_prior",
    "fusion_lambda",
    "generate",
    "generate_mushroom",
    "listwise_loss",
    "load_dataset",
    "load_features",
    "load_impressions",
    "load_mushroom",
    "make_policy",
    "mushroom_run",
    "normalized_regret",
    "oracle_ctr",
    "pointwise_loss",
    "rank_labels",
    "replay",
    "rng_stream",
    "sample_inverse_gamma",
    "sample_mvn",
    "sampling_weight",
    "smoothed_ctr",
    "split",
    "thompson_draw",
    "top1_probabilities",
    "write_report",
]
