"""Bandit policy catalog.

The centerpiece is a Normal-Inverse-Gamma Bayesian linear regression over
creative features, used three ways: shared across all products (the linear
baselines), per product, and fused per creative through a sigmoid gate on the
product's impression count (the hybrid policy). Context-free baselines
(uniform, epsilon-greedy, UCB1, Beta-Bernoulli Thompson) are included for
comparison runs.

All policies expose ``choose``/``observe`` and never own a random stream:
callers pass one in, which keeps replays deterministic and parallelizable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dtrtri

from .core import as_vector, cholesky
from .exceptions import (
    EmptyCandidateSet,
    InvalidHyperparameter,
    NotPositiveDefinite,
    UnknownArm,
    UnknownPolicyKind,
)

DEFAULT_ETA = 6.0
DEFAULT_RIDGE_SCALE = 0.25
DEFAULT_EPSILON = 0.05
DEFAULT_UCB_ALPHA = 1.0

# Accumulated precision is re-symmetrized after this many rank-1 updates to
# stop floating-point drift from ever reaching the factorization.
RESYMMETRIZE_EVERY = 1024


# ---------------------------------------------------------------------------
# Normal-Inverse-Gamma posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NigPrior:
    """Prior over (weights, noise variance) for Bayesian linear regression.

    The noise variance gets InverseGamma(eta, eta); given it, weights are
    Gaussian with mean ``mu0`` and precision ``ridge_scale * I`` (scaled by
    the variance). ``mu0=None`` means zeros; supplying trained scorer weights
    here is the warm start.
    """

    eta: float = DEFAULT_ETA
    ridge_scale: float = DEFAULT_RIDGE_SCALE
    mu0: np.ndarray | None = None

    def __post_init__(self):
        if self.eta <= 1:
            raise InvalidHyperparameter(f"eta must be > 1, got {self.eta}")
        if self.ridge_scale <= 0:
            raise InvalidHyperparameter(f"ridge_scale must be > 0, got {self.ridge_scale}")
        if self.mu0 is not None:
            object.__setattr__(self, "mu0", as_vector(self.mu0))

    def mean0(self, d: int) -> np.ndarray:
        if self.mu0 is None:
            return np.zeros(d)
        if self.mu0.size != d:
            raise ValueError(f"mu0 has dimension {self.mu0.size}, expected {d}")
        return self.mu0


class PosteriorParams(NamedTuple):
    """Plain closed-form posterior parameters (the batch oracle's output)."""

    mu: np.ndarray
    precision: np.ndarray
    a: float
    b: float


def batch_posterior(prior: NigPrior, d: int, features, rewards) -> PosteriorParams:
    """Closed-form conjugate posterior computed directly from full history.

    Deliberately independent of the incremental accumulator: a direct
    transcription of the update equations used as its correctness oracle.
    """
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(rewards, dtype=np.float64).ravel()
    if F.size == 0:
        F = F.reshape(0, d)
    if F.shape[0] != y.size or (F.size and F.shape[1] != d):
        raise ValueError("features and rewards shapes disagree")
    t = y.size
    sigma0 = prior.ridge_scale * np.eye(d)
    mu0 = prior.mean0(d)
    precision = F.T @ F + sigma0
    mu = np.linalg.solve(precision, sigma0 @ mu0 + F.T @ y)
    a = prior.eta + t / 2.0
    b = prior.eta + 0.5 * (y @ y + mu0 @ sigma0 @ mu0 - mu @ precision @ mu)
    return PosteriorParams(mu, precision, float(a), float(b))


class NigPosterior:
    """Incrementally updated conjugate posterior for one weight distribution.

    Keeps the sufficient statistics (feature Gram matrix, feature-reward
    cross term, squared rewards, count) and derives (mu, precision, a, b)
    lazily, caching the Cholesky factor of the precision between updates.
    Rewards may be any reals; clicks are simply {0, 1}.
    """

    __slots__ = ("prior", "d", "_xtx", "_xty", "_yty", "t", "_sigma0_diag",
                 "_mu0", "_m0s0m0", "_sigma0_eye", "_s0mu0", "_cache",
                 "_updates_since_sym")

    def __init__(self, prior: NigPrior, d: int):
        self.prior = prior
        self.d = int(d)
        self._xtx = np.zeros((d, d))
        self._xty = np.zeros(d)
        self._yty = 0.0
        self.t = 0
        self._sigma0_diag = prior.ridge_scale
        self._mu0 = prior.mean0(d)
        self._m0s0m0 = prior.ridge_scale * float(self._mu0 @ self._mu0)
        self._sigma0_eye = prior.ridge_scale * np.eye(d)
        self._s0mu0 = prior.ridge_scale * self._mu0
        self._cache = None
        self._updates_since_sym = 0

    # -- update ------------------------------------------------------------

    def observe(self, feature, reward: float) -> "NigPosterior":
        """Fold one (feature, reward) pair into the sufficient statistics."""
        f = np.asarray(feature, dtype=np.float64)
        if f.shape != (self.d,):
            raise ValueError(f"expected feature of dimension {self.d}, got {f.shape}")
        self._xtx += np.outer(f, f)
        self._xty += reward * f
        self._yty += reward * reward
        self.t += 1
        self._updates_since_sym += 1
        if self._updates_since_sym >= RESYMMETRIZE_EVERY:
            self._xtx = (self._xtx + self._xtx.T) / 2.0
            self._updates_since_sym = 0
        self._cache = None
        return self

    def _materialize(self):
        if self._cache is None:
            precision = self._xtx + self._sigma0_eye
            try:
                # xtx is symmetric by construction; skip the generic checks.
                L = np.linalg.cholesky(precision)
            except np.linalg.LinAlgError:
                # Drift fallback: rebuild the Gram matrix symmetrically and retry.
                self._xtx = (self._xtx + self._xtx.T) / 2.0
                precision = self._xtx + self._sigma0_eye
                L = cholesky(precision)
            linv, info = dtrtri(L, lower=1)
            if info != 0:
                raise NotPositiveDefinite(f"triangular inversion failed (info={info})")
            rhs = self._s0mu0 + self._xty
            mu = linv.T @ (linv @ rhs)
            # mu solves precision @ mu = rhs, so mu' precision mu == mu . rhs.
            b = self.prior.eta + 0.5 * (self._yty + self._m0s0m0 - float(mu @ rhs))
            if not b > 0:
                raise NotPositiveDefinite(
                    f"posterior scale parameter became non-positive (b={b})"
                )
            self._cache = (mu, precision, L, linv, b)
        return self._cache

    # -- posterior parameters ----------------------------------------------

    @property
    def mu(self) -> np.ndarray:
        return self._materialize()[0].copy()

    @property
    def precision(self) -> np.ndarray:
        return self._materialize()[1].copy()

    @property
    def a(self) -> float:
        return self.prior.eta + self.t / 2.0

    @property
    def b(self) -> float:
        return self._materialize()[4]

    def params(self) -> PosteriorParams:
        mu, precision, _, _, b = self._materialize()
        return PosteriorParams(mu.copy(), precision.copy(), self.a, b)

    # -- sampling ------------------------------------------------------------

    def sample_sigma2(self, rng, size: int | None = None):
        """Noise-variance draw(s) from InverseGamma(a, b)."""
        b = self._materialize()[4]
        return 1.0 / rng.gamma(shape=self.a, scale=1.0 / b, size=size)

    def sample_w(self, rng, sigma2: float) -> np.ndarray:
        """One weight draw from N(mu, sigma2 * precision^-1); consumes d normals."""
        mu, _, _, linv, _ = self._materialize()
        z = rng.standard_normal(self.d)
        return mu + np.sqrt(sigma2) * (z @ linv)

    def sample_w_batch(self, rng, sigma2s: np.ndarray) -> np.ndarray:
        """Independent weight draws, one per entry of sigma2s; shape (n, d)."""
        mu, _, _, linv, _ = self._materialize()
        z = rng.standard_normal((sigma2s.size, self.d))
        return mu + np.sqrt(sigma2s)[:, None] * (z @ linv)

    def mean_score(self, feature) -> float:
        return float(feature @ self._materialize()[0])

    def mean_scores(self, features: np.ndarray) -> np.ndarray:
        return features @ self._materialize()[0]

    def score_variance(self, feature) -> float:
        """Plug-in variance of feature @ w using E[sigma^2] = b / (a - 1)."""
        _, _, _, linv, b = self._materialize()
        z = linv @ np.asarray(feature, dtype=np.float64)
        return float(b / (self.a - 1.0) * (z @ z))

    def score_variances(self, features: np.ndarray) -> np.ndarray:
        _, _, _, linv, b = self._materialize()
        z = features @ linv.T
        return b / (self.a - 1.0) * np.einsum("md,md->m", z, z)

    # -- serialization --------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-ready posterior state: mu, precision lower triangle, a, b, t."""
        mu, precision, _, _, b = self._materialize()
        idx = np.tril_indices(self.d)
        return {
            "d": self.d,
            "mu": mu.tolist(),
            "precision_lower": precision[idx].tolist(),
            "a": self.a,
            "b": b,
            "t": self.t,
        }

    @classmethod
    def from_snapshot(cls, prior: NigPrior, snapshot: dict) -> "NigPosterior":
        d = int(snapshot["d"])
        post = cls(prior, d)
        precision = np.zeros((d, d))
        idx = np.tril_indices(d)
        precision[idx] = snapshot["precision_lower"]
        precision = precision + np.tril(precision, -1).T
        mu = np.asarray(snapshot["mu"], dtype=np.float64)
        sigma0 = prior.ridge_scale * np.eye(d)
        mu0 = prior.mean0(d)
        post._xtx = precision - sigma0
        post._xty = precision @ mu - sigma0 @ mu0
        post._yty = (
            2.0 * (float(snapshot["b"]) - prior.eta)
            - float(mu0 @ sigma0 @ mu0)
            + float(mu @ precision @ mu)
        )
        post.t = int(snapshot["t"])
        return post


def thompson_draw(posterior: NigPosterior, rng) -> np.ndarray:
    """One posterior-sampled weight vector: sigma^2 then w given sigma^2."""
    return posterior.sample_w(rng, posterior.sample_sigma2(rng))


# ---------------------------------------------------------------------------
# Hybrid fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionConfig:
    """Sigmoid gate between product-wise and creative-specific predictions."""

    theta1: float = 50.0
    theta2: float = 150.0

    def __post_init__(self):
        if self.theta1 <= 0:
            raise InvalidHyperparameter(f"theta1 must be > 0, got {self.theta1}")


def fusion_lambda(impressions: float, fusion: FusionConfig) -> float:
    """Specific-model weight: 1 / (1 + exp((-impressions + theta2) / theta1)).

    Grows from ~0 (rely on the shared model) to ~1 (trust the creative's own
    posterior) as the product accumulates impressions.
    """
    x = (-float(impressions) + fusion.theta2) / fusion.theta1
    if x >= 0:
        return 1.0 / (1.0 + math.exp(x))
    return 1.0 / (1.0 + 1.0 / math.exp(-x))


@dataclass
class HybridArmState:
    """Introspection view of one creative's paired posteriors."""

    shared: NigPosterior
    specific: NigPosterior
    product_impressions: int


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


class Policy:
    """Common choose/observe surface.

    ``choose`` scores the candidates and returns the argmax creative id,
    breaking ties by the lowest candidate index. ``observe`` feeds back one
    display's reward; policies track which creatives each product has offered
    and reject observations for unknown ones.
    """

    group_attr: str | None = None  # grouping hint for the mushroom runner
    is_static = False  # True when observe never changes future choices

    def __init__(self):
        self._rosters: dict = {}

    def choose(self, product_id, creative_ids, features, rng):
        return creative_ids[self.choose_index(product_id, creative_ids, features, rng)]

    def choose_index(self, product_id, creative_ids, features, rng) -> int:
        if len(creative_ids) == 0:
            raise EmptyCandidateSet(f"no candidates for product {product_id!r}")
        roster = self._rosters.setdefault(product_id, set())
        roster.update(creative_ids)
        scores = self._scores(product_id, creative_ids, np.asarray(features), rng)
        return int(np.argmax(scores))

    def observe(self, product_id, creative_id, feature, reward):
        known = self._rosters.get(product_id)
        if known is None or creative_id not in known:
            raise UnknownArm(f"creative {creative_id!r} was never offered for {product_id!r}")
        self._update(product_id, creative_id, np.asarray(feature, dtype=np.float64), reward)

    # subclass hooks
    def _scores(self, product_id, creative_ids, features, rng) -> np.ndarray:
        raise NotImplementedError

    def _update(self, product_id, creative_id, feature, reward):
        pass


class UniformPolicy(Policy):
    """Pick uniformly at random; ignores all feedback."""

    def _scores(self, product_id, creative_ids, features, rng):
        scores = np.zeros(len(creative_ids))
        scores[rng.integers(len(creative_ids))] = 1.0
        return scores


class EpsilonGreedyPolicy(Policy):
    """Context-free: per-arm empirical mean reward with epsilon exploration."""

    def __init__(self, epsilon: float = DEFAULT_EPSILON):
        super().__init__()
        if not 0 <= epsilon <= 1:
            raise InvalidHyperparameter(f"epsilon must be in [0, 1], got {epsilon}")
        self.epsilon = epsilon
        self._stats: dict = {}  # (product, creative) -> [pulls, reward sum]

    def _mean(self, product_id, creative_id) -> float:
        n, total = self._stats.get((product_id, creative_id), (0, 0.0))
        return total / n if n else 0.0

    def _scores(self, product_id, creative_ids, features, rng):
        if self.epsilon > 0 and rng.random() < self.epsilon:
            scores = np.zeros(len(creative_ids))
            scores[rng.integers(len(creative_ids))] = 1.0
            return scores
        return np.array([self._mean(product_id, c) for c in creative_ids])

    def _update(self, product_id, creative_id, feature, reward):
        n, total = self._stats.get((product_id, creative_id), (0, 0.0))
        self._stats[(product_id, creative_id)] = (n + 1, total + reward)


class Ucb1Policy(Policy):
    """Context-free UCB1: mean reward plus sqrt(2 ln t / pulls)."""

    def __init__(self):
        super().__init__()
        self._stats: dict = {}
        self._plays: dict = {}  # product -> total pulls

    def _scores(self, product_id, creative_ids, features, rng):
        t = max(self._plays.get(product_id, 0), 1)
        scores = np.empty(len(creative_ids))
        for i, cid in enumerate(creative_ids):
            n, total = self._stats.get((product_id, cid), (0, 0.0))
            if n == 0:
                scores[i] = np.inf
            else:
                scores[i] = total / n + math.sqrt(2.0 * math.log(t) / n)
        return scores

    def _update(self, product_id, creative_id, feature, reward):
        n, total = self._stats.get((product_id, creative_id), (0, 0.0))
        self._stats[(product_id, creative_id)] = (n + 1, total + reward)
        self._plays[product_id] = self._plays.get(product_id, 0) + 1


class BetaBernoulliTsPolicy(Policy):
    """Context-free Thompson sampling with a Beta posterior per arm."""

    def __init__(self, alpha0: float = 1.0, beta0: float = 1.0):
        super().__init__()
        if alpha0 <= 0 or beta0 <= 0:
            raise InvalidHyperparameter("Beta prior parameters must be positive")
        self.alpha0 = alpha0
        self.beta0 = beta0
        self._stats: dict = {}  # (product, creative) -> [clicks, misses]

    def _scores(self, product_id, creative_ids, features, rng):
        a = np.empty(len(creative_ids))
        b = np.empty(len(creative_ids))
        for i, cid in enumerate(creative_ids):
            s, f = self._stats.get((product_id, cid), (0.0, 0.0))
            a[i] = self.alpha0 + s
            b[i] = self.beta0 + f
        return rng.beta(a, b)

    def _update(self, product_id, creative_id, feature, reward):
        if reward not in (0, 1):
            raise ValueError("Beta-Bernoulli Thompson sampling needs rewards in {0, 1}")
        s, f = self._stats.get((product_id, creative_id), (0.0, 0.0))
        self._stats[(product_id, creative_id)] = (s + reward, f + (1 - reward))


class PriorGreedyPolicy(Policy):
    """Deterministic scoring by fixed prior weights; never learns."""

    is_static = True

    def __init__(self, weights):
        super().__init__()
        self.weights = as_vector(weights)

    def _scores(self, product_id, creative_ids, features, rng):
        return features @ self.weights


class _NigPolicyBase(Policy):
    """Shared plumbing for policies backed by NIG linear posteriors.

    ``scope`` controls how many posteriors exist: one ("global"), one per
    product ("product"), or one per creative ("creative").
    """

    def __init__(self, prior: NigPrior | None = None, scope: str = "global"):
        super().__init__()
        if scope not in ("global", "product", "creative"):
            raise InvalidHyperparameter(f"unknown scope {scope!r}")
        self.prior = prior if prior is not None else NigPrior()
        self.scope = scope
        self._posteriors: dict = {}

    def _key(self, product_id, creative_id):
        if self.scope == "global":
            return ()
        if self.scope == "product":
            return (product_id,)
        return (product_id, creative_id)

    def posterior(self, product_id, creative_id, d: int) -> NigPosterior:
        key = self._key(product_id, creative_id)
        post = self._posteriors.get(key)
        if post is None:
            post = NigPosterior(self.prior, d)
            self._posteriors[key] = post
        return post

    def _update(self, product_id, creative_id, feature, reward):
        self.posterior(product_id, creative_id, feature.size).observe(feature, reward)


def _ts_scores_shared(post: NigPosterior, features: np.ndarray, rng) -> np.ndarray:
    """Per-candidate Thompson scores from ONE posterior, draws batched.

    The batch layout (all sigma^2 draws, then all weight draws) is the
    contract that makes a pinned-gate hybrid's stream consumption coincide
    with the scoped Thompson policies, so keep both sides on this helper.
    """
    sigma2s = np.atleast_1d(post.sample_sigma2(rng, size=features.shape[0]))
    W = post.sample_w_batch(rng, sigma2s)
    return np.einsum("md,md->m", features, W)


def _ts_scores_individual(posteriors, features: np.ndarray, rng) -> np.ndarray:
    """Per-candidate Thompson scores, one distinct posterior per candidate.

    Batches the random draws (vectorized gamma, one normal block) and loops
    only the per-posterior linear algebra.
    """
    m = features.shape[0]
    caches = [post._materialize() for post in posteriors]
    a_vec = np.empty(m)
    b_vec = np.empty(m)
    for i, post in enumerate(posteriors):
        a_vec[i] = post.prior.eta + post.t / 2.0
        b_vec[i] = caches[i][4]
    sigma = np.sqrt(1.0 / rng.gamma(shape=a_vec, scale=1.0 / b_vec))
    Z = rng.standard_normal((m, features.shape[1]))
    scores = np.empty(m)
    for i, cache in enumerate(caches):
        scores[i] = features[i] @ (cache[0] + sigma[i] * (Z[i] @ cache[3]))
    return scores


class LinThompsonPolicy(_NigPolicyBase):
    """Thompson sampling on the linear posterior, one draw per candidate."""

    def _scores(self, product_id, creative_ids, features, rng):
        d = features.shape[1]
        if self.scope == "creative":
            posts = [self.posterior(product_id, cid, d) for cid in creative_ids]
            return _ts_scores_individual(posts, features, rng)
        return _ts_scores_shared(self.posterior(product_id, None, d), features, rng)


class LinGreedyPolicy(_NigPolicyBase):
    """Posterior-mean scoring with epsilon exploration."""

    def __init__(self, prior=None, scope="global", epsilon=DEFAULT_EPSILON):
        super().__init__(prior, scope)
        if not 0 <= epsilon <= 1:
            raise InvalidHyperparameter(f"epsilon must be in [0, 1], got {epsilon}")
        self.epsilon = epsilon

    def _scores(self, product_id, creative_ids, features, rng):
        if self.epsilon > 0 and rng.random() < self.epsilon:
            scores = np.zeros(len(creative_ids))
            scores[rng.integers(len(creative_ids))] = 1.0
            return scores
        d = features.shape[1]
        if self.scope == "creative":
            return np.array(
                [
                    self.posterior(product_id, cid, d).mean_score(features[i])
                    for i, cid in enumerate(creative_ids)
                ]
            )
        return self.posterior(product_id, None, d).mean_scores(features)


class NigUcbPolicy(_NigPolicyBase):
    """UCB on the NIG posterior: mean score plus alpha posterior std."""

    def __init__(self, prior=None, scope="global", alpha=DEFAULT_UCB_ALPHA):
        super().__init__(prior, scope)
        self.alpha = alpha

    def _scores(self, product_id, creative_ids, features, rng):
        d = features.shape[1]
        if self.scope == "creative":
            scores = np.empty(len(creative_ids))
            for i, cid in enumerate(creative_ids):
                post = self.posterior(product_id, cid, d)
                scores[i] = post.mean_score(features[i]) + self.alpha * math.sqrt(
                    post.score_variance(features[i])
                )
            return scores
        post = self.posterior(product_id, None, d)
        return post.mean_scores(features) + self.alpha * np.sqrt(
            post.score_variances(features)
        )


class LinUcbPolicy(Policy):
    """Classic ridge-regression UCB: f'theta + alpha sqrt(f' A^-1 f)."""

    def __init__(self, alpha: float = DEFAULT_UCB_ALPHA, ridge: float = 1.0):
        super().__init__()
        if ridge <= 0:
            raise InvalidHyperparameter(f"ridge must be > 0, got {ridge}")
        self.alpha = alpha
        self.ridge = ridge
        self._A = None
        self._bvec = None
        self._chol = None

    def _ensure(self, d):
        if self._A is None:
            self._A = self.ridge * np.eye(d)
            self._bvec = np.zeros(d)
        if self._chol is None:
            self._chol = cholesky(self._A)

    def _scores(self, product_id, creative_ids, features, rng):
        self._ensure(features.shape[1])
        L = self._chol
        z = solve_triangular(L, self._bvec, lower=True)
        theta = solve_triangular(L, z, lower=True, trans="T")
        zf = solve_triangular(L, features.T, lower=True)
        bonus = np.sqrt(np.sum(zf * zf, axis=0))
        return features @ theta + self.alpha * bonus

    def _update(self, product_id, creative_id, feature, reward):
        self._ensure(feature.size)
        self._A += np.outer(feature, feature)
        self._bvec += reward * feature
        self._chol = None


class HybridPolicy(Policy):
    """Product-wise plus creative-specific posteriors fused by a sigmoid gate.

    Every product owns a shared posterior over its creatives' weights; every
    creative owns a specific posterior. A candidate's score mixes independent
    Thompson draws from both, weighted by ``fusion_lambda`` of the product's
    observed impression count, so fresh products lean on the shared (possibly
    warm-started) weights and mature ones on creative-level evidence.

    ``fixed_lambda`` pins the gate for diagnostics: 0.0 reproduces a
    product-scoped Thompson policy, 1.0 a creative-scoped one, draw for draw.

    The specific posteriors may carry their own prior (``specific_prior``):
    a tight shared prior encodes trust in warm-started weights while a looser
    specific prior lets creative-level evidence take over once the gate opens.
    By default both sides share one prior.
    """

    def __init__(
        self,
        prior: NigPrior | None = None,
        fusion: FusionConfig | None = None,
        fixed_lambda: float | None = None,
        group_attr: str | None = None,
        specific_prior: NigPrior | None = None,
    ):
        super().__init__()
        self.prior = prior if prior is not None else NigPrior()
        self.specific_prior = specific_prior if specific_prior is not None else self.prior
        self.fusion = fusion if fusion is not None else FusionConfig()
        if fixed_lambda is not None and not 0.0 <= fixed_lambda <= 1.0:
            raise InvalidHyperparameter(f"fixed_lambda must be in [0, 1], got {fixed_lambda}")
        self.fixed_lambda = fixed_lambda
        self.group_attr = group_attr
        self._shared: dict = {}
        self._specific: dict = {}
        self._impressions: dict = {}

    # -- state accessors -----------------------------------------------------

    def shared_posterior(self, product_id, d: int) -> NigPosterior:
        post = self._shared.get(product_id)
        if post is None:
            post = NigPosterior(self.prior, d)
            self._shared[product_id] = post
        return post

    def specific_posterior(self, product_id, creative_id, d: int) -> NigPosterior:
        key = (product_id, creative_id)
        post = self._specific.get(key)
        if post is None:
            post = NigPosterior(self.specific_prior, d)
            self._specific[key] = post
        return post

    def product_impressions(self, product_id) -> int:
        return self._impressions.get(product_id, 0)

    def arm_state(self, product_id, creative_id, d: int) -> HybridArmState:
        return HybridArmState(
            shared=self.shared_posterior(product_id, d),
            specific=self.specific_posterior(product_id, creative_id, d),
            product_impressions=self.product_impressions(product_id),
        )

    def current_lambda(self, product_id) -> float:
        if self.fixed_lambda is not None:
            return self.fixed_lambda
        return fusion_lambda(self.product_impressions(product_id), self.fusion)

    # -- policy surface --------------------------------------------------------

    def _scores(self, product_id, creative_ids, features, rng):
        d = features.shape[1]
        lam = self.current_lambda(product_id)
        shared_scores = (
            _ts_scores_shared(self.shared_posterior(product_id, d), features, rng)
            if lam < 1.0
            else 0.0
        )
        if lam > 0.0:
            posts = [self.specific_posterior(product_id, cid, d) for cid in creative_ids]
            specific_scores = _ts_scores_individual(posts, features, rng)
        else:
            specific_scores = 0.0
        return (1.0 - lam) * shared_scores + lam * specific_scores

    def _update(self, product_id, creative_id, feature, reward):
        d = feature.size
        self.shared_posterior(product_id, d).observe(feature, reward)
        self.specific_posterior(product_id, creative_id, d).observe(feature, reward)
        self._impressions[product_id] = self.product_impressions(product_id) + 1

    # -- serialization -----------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "shared": {pid: post.snapshot() for pid, post in self._shared.items()},
            "specific": {
                f"{pid}\x1f{cid}": post.snapshot()
                for (pid, cid), post in self._specific.items()
            },
            "impressions": dict(self._impressions),
        }

    def restore(self, snapshot: dict):
        self._shared = {
            pid: NigPosterior.from_snapshot(self.prior, snap)
            for pid, snap in snapshot["shared"].items()
        }
        self._specific = {}
        for key, snap in snapshot["specific"].items():
            pid, cid = key.split("\x1f")
            self._specific[(pid, cid)] = NigPosterior.from_snapshot(self.specific_prior, snap)
        self._impressions = dict(snapshot["impressions"])


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

POLICY_KINDS = (
    "uniform",
    "epsilon_greedy",
    "ucb1",
    "beta_bernoulli_ts",
    "lin_greedy",
    "lin_thompson",
    "lin_ucb",
    "neural_ucb",
    "prior_greedy",
    "hbm",
)


def make_policy(kind: str, **config) -> Policy:
    """Build a policy by kind name.

    NIG-backed kinds accept ``eta``, ``ridge_scale`` and ``warm_start``
    (weights for the prior mean); ``hbm`` additionally takes ``theta1``,
    ``theta2``, ``fixed_lambda`` and ``group_attr``. Unknown kinds raise
    UnknownPolicyKind, unknown options TypeError.
    """

    def nig_prior(cfg):
        return NigPrior(
            eta=cfg.pop("eta", DEFAULT_ETA),
            ridge_scale=cfg.pop("ridge_scale", DEFAULT_RIDGE_SCALE),
            mu0=cfg.pop("warm_start", None),
        )

    cfg = dict(config)
    try:
        if kind == "uniform":
            policy = UniformPolicy()
        elif kind == "epsilon_greedy":
            policy = EpsilonGreedyPolicy(epsilon=cfg.pop("epsilon", DEFAULT_EPSILON))
        elif kind == "ucb1":
            policy = Ucb1Policy()
        elif kind == "beta_bernoulli_ts":
            policy = BetaBernoulliTsPolicy(
                alpha0=cfg.pop("alpha0", 1.0), beta0=cfg.pop("beta0", 1.0)
            )
        elif kind == "lin_greedy":
            policy = LinGreedyPolicy(
                prior=nig_prior(cfg),
                scope=cfg.pop("scope", "global"),
                epsilon=cfg.pop("epsilon", DEFAULT_EPSILON),
            )
        elif kind == "lin_thompson":
            policy = LinThompsonPolicy(prior=nig_prior(cfg), scope=cfg.pop("scope", "global"))
        elif kind == "lin_ucb":
            policy = LinUcbPolicy(
                alpha=cfg.pop("alpha", DEFAULT_UCB_ALPHA), ridge=cfg.pop("ridge", 1.0)
            )
        elif kind == "neural_ucb":
            policy = NigUcbPolicy(
                prior=nig_prior(cfg),
                scope=cfg.pop("scope", "global"),
                alpha=cfg.pop("alpha", DEFAULT_UCB_ALPHA),
            )
        elif kind == "prior_greedy":
            policy = PriorGreedyPolicy(weights=cfg.pop("weights"))
        elif kind == "hbm":
            prior = nig_prior(cfg)
            specific_prior = None
            if "specific_eta" in cfg or "specific_ridge_scale" in cfg:
                specific_prior = NigPrior(
                    eta=cfg.pop("specific_eta", prior.eta),
                    ridge_scale=cfg.pop("specific_ridge_scale", prior.ridge_scale),
                    mu0=prior.mu0,
                )
            policy = HybridPolicy(
                prior=prior,
                fusion=FusionConfig(
                    theta1=cfg.pop("theta1", 50.0), theta2=cfg.pop("theta2", 150.0)
                ),
                fixed_lambda=cfg.pop("fixed_lambda", None),
                group_attr=cfg.pop("group_attr", None),
                specific_prior=specific_prior,
            )
        else:
            raise UnknownPolicyKind(f"no policy kind {kind!r}; known: {POLICY_KINDS}")
    except KeyError as exc:
        raise TypeError(f"missing required option for {kind!r}: {exc}") from exc
    if cfg:
        raise TypeError(f"unknown options for policy {kind!r}: {sorted(cfg)}")
    return policy
