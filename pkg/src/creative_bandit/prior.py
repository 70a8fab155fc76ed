"""Visual-prior scorer: list-wise ranking loss, point-wise regularizer,
Beta-Binomial label smoothing, and impression-weighted training.

The scorer is a linear map from precomputed d-dimensional creative features
to an attractiveness score; trained weights seed the bandit's posterior mean.
An optional one-hidden-layer variant exists for benchmarks whose features are
not linearly separable, but only linear weights can warm-start the bandit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import psi
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import rng_stream
from .exceptions import DegenerateDataWarning, NonFiniteLoss, ZeroImpressions

DEFAULT_GAMMA = 0.5
DEFAULT_TEMPERATURE = 0.01


# ---------------------------------------------------------------------------
# Empirical and smoothed click-through rates
# ---------------------------------------------------------------------------


class SmoothingPrior(NamedTuple):
    """Beta prior over creative CTRs, fitted by maximum likelihood."""

    alpha: float
    beta: float

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


def empirical_ctr(clicks: int, impressions: int) -> float:
    """Raw click ratio clicks / impressions."""
    if impressions < 1:
        raise ZeroImpressions("empirical CTR needs at least one impression")
    if clicks < 0 or clicks > impressions:
        raise ValueError(f"clicks must lie in [0, impressions], got {clicks}/{impressions}")
    return clicks / impressions


def smoothed_ctr(clicks, impressions, prior: SmoothingPrior):
    """Posterior-mean CTR (clicks + alpha) / (impressions + alpha + beta).

    Total on valid inputs: zero impressions return the prior mean. Accepts
    scalars or aligned arrays.
    """
    c = np.asarray(clicks, dtype=np.float64)
    n = np.asarray(impressions, dtype=np.float64)
    if np.any(c < 0) or np.any(c > n):
        raise ValueError("clicks must lie in [0, impressions]")
    out = (c + prior.alpha) / (n + prior.alpha + prior.beta)
    return float(out) if out.ndim == 0 else out


def fit_smoothing_prior(
    clicks,
    impressions,
    max_iter: int = 500,
    tol: float = 1e-8,
    min_creatives: int = 100,
    variance_floor: float = 1e-8,
) -> SmoothingPrior:
    """Fit Beta(alpha, beta) over CTRs by Beta-Binomial maximum likelihood.

    Initialization is method-of-moments; refinement is the digamma fixed-point
    iteration, stopped when the relative parameter change drops below ``tol``
    or after ``max_iter`` rounds. Creatives with zero impressions are ignored.
    If all observed CTRs are identical the likelihood has no interior optimum;
    the method-of-moments estimate with a floored variance is returned and a
    DegenerateDataWarning is emitted.
    """
    c = np.asarray(clicks, dtype=np.float64)
    n = np.asarray(impressions, dtype=np.float64)
    if c.shape != n.shape or c.ndim != 1:
        raise ValueError("clicks and impressions must be aligned 1-d arrays")
    keep = n >= 1
    c, n = c[keep], n[keep]
    if c.size < min_creatives:
        raise ValueError(
            f"need at least {min_creatives} creatives with impressions, got {c.size}"
        )
    if np.any(c < 0) or np.any(c > n):
        raise ValueError("clicks must lie in [0, impressions]")

    ctr = c / n
    mean = float(np.mean(ctr))
    var = float(np.var(ctr, ddof=1))
    degenerate = var < variance_floor
    if degenerate:
        warnings.warn(
            "all observed CTRs are (near-)identical; falling back to "
            "method of moments with a floored variance",
            DegenerateDataWarning,
        )
        var = variance_floor
    # Moment-matched Beta, with the mean nudged inside (0, 1) so the shape
    # parameters stay positive for all-zero or all-one click data.
    m = min(max(mean, 1e-6), 1.0 - 1e-6)
    common = m * (1.0 - m) / var - 1.0
    alpha = max(m * common, 1e-6)
    beta = max((1.0 - m) * common, 1e-6)
    if degenerate:
        return SmoothingPrior(alpha, beta)

    for _ in range(max_iter):
        denom = np.sum(psi(n + alpha + beta) - psi(alpha + beta))
        new_alpha = alpha * np.sum(psi(c + alpha) - psi(alpha)) / denom
        new_beta = beta * np.sum(psi(n - c + beta) - psi(beta)) / denom
        change = max(
            abs(new_alpha - alpha) / max(alpha, 1e-12),
            abs(new_beta - beta) / max(beta, 1e-12),
        )
        alpha, beta = float(new_alpha), float(new_beta)
        if change < tol:
            break
    return SmoothingPrior(alpha, beta)


class BetaSmoother(BaseEstimator):
    """Estimator wrapper around the Beta-Binomial CTR smoother.

    ``fit`` takes ``X`` of shape (n_creatives, 2) with columns
    (clicks, impressions); ``transform`` maps the same layout to smoothed
    CTRs. Exposed so the smoother composes with sklearn pipelines.
    """

    def __init__(self, max_iter=500, tol=1e-8, min_creatives=100, variance_floor=1e-8):
        self.max_iter = max_iter
        self.tol = tol
        self.min_creatives = min_creatives
        self.variance_floor = variance_floor

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("expected X of shape (n_creatives, 2): clicks, impressions")
        self.prior_ = fit_smoothing_prior(
            X[:, 0],
            X[:, 1],
            max_iter=self.max_iter,
            tol=self.tol,
            min_creatives=self.min_creatives,
            variance_floor=self.variance_floor,
        )
        return self

    def transform(self, X):
        if not hasattr(self, "prior_"):
            raise NotFittedError("BetaSmoother is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return smoothed_ctr(X[:, 0], X[:, 1], self.prior_)


# ---------------------------------------------------------------------------
# Ranking losses
# ---------------------------------------------------------------------------


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - np.max(scores)
    return shifted - np.log(np.sum(np.exp(shifted)))


def top1_probabilities(scores) -> np.ndarray:
    """Probability of each candidate being ranked first: softmax of scores.

    Computed with max-subtraction, so arbitrarily large score gaps do not
    overflow; output entries are in (0, 1) and sum to 1.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 1:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return np.exp(_log_softmax(s))


def rank_labels(ctrs, temperature: float = DEFAULT_TEMPERATURE) -> np.ndarray:
    """Target top-1 distribution: softmax of CTRs sharpened by a temperature.

    CTRs are a few percent, so dividing by a small temperature spreads the
    labels enough that the best candidate's probability approaches one.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    c = np.asarray(ctrs, dtype=np.float64)
    if np.any(c < 0) or np.any(c > 1):
        raise ValueError("ctrs must lie in [0, 1]")
    return top1_probabilities(c / temperature)


def _check_label_vector(labels: np.ndarray):
    if np.any(labels < 0) or abs(labels.sum() - 1.0) > 1e-6:
        raise ValueError("labels must form a probability vector")


def listwise_loss(scores, labels) -> float:
    """Cross entropy between target top-1 labels and score-induced top-1 probs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    _check_label_vector(y)
    return float(-np.dot(y, _log_softmax(s)))


def listwise_grad(scores, labels) -> np.ndarray:
    """d(listwise_loss)/d(scores) = softmax(scores) - labels."""
    return top1_probabilities(scores) - np.asarray(labels, dtype=np.float64)


def pointwise_loss(scores, ctrs) -> float:
    """Squared-error regression of scores onto CTRs, summed over candidates."""
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(ctrs, dtype=np.float64)
    if s.shape != c.shape:
        raise ValueError("scores and ctrs must have equal length")
    return float(np.sum((c - s) ** 2))


def pointwise_grad(scores, ctrs) -> np.ndarray:
    """d(pointwise_loss)/d(scores) = 2 (scores - ctrs)."""
    return 2.0 * (np.asarray(scores, dtype=np.float64) - np.asarray(ctrs, dtype=np.float64))


def combined_loss(scores, ctrs, labels, gamma: float = DEFAULT_GAMMA) -> float:
    """Listwise loss plus gamma times the pointwise regularizer."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return listwise_loss(scores, labels) + gamma * pointwise_loss(scores, ctrs)


def combined_grad(scores, ctrs, labels, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return listwise_grad(scores, labels) + gamma * pointwise_grad(scores, ctrs)


def sampling_weight(impressions) -> float:
    """Training weight of a product: log(1 + impressions).

    The +1 shift keeps zero-impression products finite (and never drawn).
    """
    n = np.asarray(impressions, dtype=np.float64)
    if np.any(n < 0):
        raise ValueError("impressions must be >= 0")
    out = np.log1p(n)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Product groups and the trainable scorer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProductGroup:
    """All candidate creatives of one product with their impression counts."""

    product_id: str
    creative_ids: tuple
    features: np.ndarray  # (M, d)
    impressions: np.ndarray  # (M,) int
    clicks: np.ndarray  # (M,) int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        imp = np.asarray(self.impressions, dtype=np.int64)
        clk = np.asarray(self.clicks, dtype=np.int64)
        if f.ndim != 2 or f.shape[0] != len(self.creative_ids):
            raise ValueError("features must be (n_creatives, d)")
        if f.shape[0] < 2:
            raise ValueError("a product group needs at least 2 creatives")
        if imp.shape != (f.shape[0],) or clk.shape != (f.shape[0],):
            raise ValueError("impressions/clicks must align with creatives")
        if np.any(clk < 0) or np.any(clk > imp):
            raise ValueError("clicks must lie in [0, impressions] per creative")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "impressions", imp)
        object.__setattr__(self, "clicks", clk)

    @property
    def total_impressions(self) -> int:
        return int(self.impressions.sum())


class _LinearModel:
    """Scores are f @ w; zero init keeps the per-batch objective convex."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.w = np.zeros(d)

    def scores(self, features: np.ndarray) -> np.ndarray:
        return features @ self.w

    def grad(self, features: np.ndarray, dscores: np.ndarray) -> dict:
        return {"w": features.T @ dscores}

    def step(self, grads: dict, lr: float):
        self.w -= lr * grads["w"]

    def export(self) -> dict:
        return {"kind": "linear", "w": self.w.tolist()}


class _OneHiddenLayerModel:
    """tanh hidden layer; used only where features are not linearly rankable."""

    def __init__(self, d: int, rng: np.random.Generator, width: int):
        self.w1 = rng.uniform(-1, 1, size=(width, d)) / np.sqrt(d)
        self.b1 = np.zeros(width)
        self.w2 = rng.uniform(-1, 1, size=width) / np.sqrt(width)
        self.b2 = 0.0

    def scores(self, features: np.ndarray) -> np.ndarray:
        return np.tanh(features @ self.w1.T + self.b1) @ self.w2 + self.b2

    def grad(self, features: np.ndarray, dscores: np.ndarray) -> dict:
        hidden = np.tanh(features @ self.w1.T + self.b1)  # (M, h)
        dhidden = np.outer(dscores, self.w2) * (1.0 - hidden**2)
        return {
            "w1": dhidden.T @ features,
            "b1": dhidden.sum(axis=0),
            "w2": hidden.T @ dscores,
            "b2": float(dscores.sum()),
        }

    def step(self, grads: dict, lr: float):
        self.w1 -= lr * grads["w1"]
        self.b1 -= lr * grads["b1"]
        self.w2 -= lr * grads["w2"]
        self.b2 -= lr * grads["b2"]

    def export(self) -> dict:
        return {
            "kind": "one_hidden_layer",
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2,
        }


class CreativeScorer(BaseEstimator):
    """Linear attractiveness scorer trained with the combined ranking loss.

    Mini-batch SGD over products: each product contributes the cross-entropy
    between its score-induced and CTR-induced top-1 distributions plus
    ``gamma`` times a squared-error regression of scores onto CTRs. Products
    are sampled proportionally to log(1 + impressions) when
    ``weighted_sampling`` is on, so reliable CTRs dominate the gradient.

    Parameters
    ----------
    gamma : float
        Weight of the pointwise regression regularizer.
    temperature : float
        Label softmax temperature; CTR gaps of a few percent need a small
        value to produce informative labels.
    learning_rate, lr_final : float
        Initial step size, and an optional final step size reached by
        geometric decay across epochs (constant schedule when omitted).
    epochs, batch_size : int
        SGD schedule; one epoch visits as many product samples as there are
        products.
    weighted_sampling : bool
        Sample products by log-impressions (with replacement) instead of a
        uniform shuffle.
    smoothing : bool or "auto"
        Replace empirical CTR labels with Beta-smoothed ones. "auto" enables
        smoothing whenever at least ``min_creatives_for_smoothing`` creatives
        carry impressions; True insists and raises otherwise.
    hidden_units : int
        0 for the linear scorer; a positive width switches to the tanh
        one-hidden-layer variant (whose weights cannot warm-start the bandit).
    seed : int
        Drives batch sampling and hidden-layer init; fits are bit-reproducible.
    """

    def __init__(
        self,
        gamma=DEFAULT_GAMMA,
        temperature=DEFAULT_TEMPERATURE,
        learning_rate=0.05,
        lr_final=None,
        epochs=20,
        batch_size=32,
        weighted_sampling=True,
        smoothing="auto",
        min_creatives_for_smoothing=100,
        hidden_units=0,
        seed=0,
    ):
        self.gamma = gamma
        self.temperature = temperature
        self.learning_rate = learning_rate
        self.lr_final = lr_final
        self.epochs = epochs
        self.batch_size = batch_size
        self.weighted_sampling = weighted_sampling
        self.smoothing = smoothing
        self.min_creatives_for_smoothing = min_creatives_for_smoothing
        self.hidden_units = hidden_units
        self.seed = seed

    # -- training ----------------------------------------------------------

    def fit(self, groups: Sequence[ProductGroup], y=None):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        groups = list(groups)
        if not groups:
            raise ValueError("need at least one product group")
        d = groups[0].features.shape[1]
        for g in groups:
            if g.features.shape[1] != d:
                raise ValueError("feature dimension differs across groups")

        self.smoother_ = self._fit_smoother(groups)
        targets = [self._target_ctrs(g) for g in groups]
        labels = [rank_labels(t, self.temperature) for t in targets]

        rng = rng_stream(self.seed, 0)
        model = (
            _LinearModel(d, rng)
            if self.hidden_units == 0
            else _OneHiddenLayerModel(d, rng, self.hidden_units)
        )

        weights = sampling_weight(np.array([g.total_impressions for g in groups]))
        total_weight = float(np.sum(weights))
        if self.weighted_sampling and total_weight <= 0:
            raise ValueError("weighted sampling needs at least one impression overall")

        trace = [self._evaluate(model, groups, targets, labels)]
        n = len(groups)
        for epoch in range(self.epochs):
            lr = self._lr_at(epoch)
            if self.weighted_sampling:
                order = rng.choice(n, size=n, replace=True, p=weights / total_weight)
            else:
                order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start : start + self.batch_size]
                self._step(model, groups, targets, labels, batch, lr)
            trace.append(self._evaluate(model, groups, targets, labels))
            # Runaway growth counts as divergence even before hitting inf.
            ceiling = 1e6 * max(trace[0][2], 1.0)
            if not np.isfinite(trace[-1][2]) or trace[-1][2] > ceiling:
                raise NonFiniteLoss(
                    f"training loss diverged at epoch {epoch + 1}; lower the learning rate"
                )

        self.n_features_in_ = d
        self.model_ = model
        if isinstance(model, _LinearModel):
            self.coef_ = model.w.copy()
        self.loss_trace_ = np.array(trace)  # rows: (listwise, pointwise, combined)
        return self

    def _fit_smoother(self, groups):
        if self.smoothing is False:
            return None
        clicks = np.concatenate([g.clicks for g in groups])
        imps = np.concatenate([g.impressions for g in groups])
        enough = int(np.sum(imps >= 1)) >= self.min_creatives_for_smoothing
        if self.smoothing == "auto" and not enough:
            return None
        return fit_smoothing_prior(
            clicks, imps, min_creatives=self.min_creatives_for_smoothing
        )

    def _target_ctrs(self, group: ProductGroup) -> np.ndarray:
        if self.smoother_ is not None:
            return smoothed_ctr(group.clicks, group.impressions, self.smoother_)
        imp = np.maximum(group.impressions, 1)
        return group.clicks / imp

    def _lr_at(self, epoch: int) -> float:
        if self.lr_final is None or self.epochs <= 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        return float(self.learning_rate * (self.lr_final / self.learning_rate) ** frac)

    def _step(self, model, groups, targets, labels, batch, lr):
        total = None
        for i in batch:
            g = groups[i]
            scores = model.scores(g.features)
            dscores = combined_grad(scores, targets[i], labels[i], self.gamma)
            if not np.all(np.isfinite(dscores)):
                raise NonFiniteLoss("gradient diverged; lower the learning rate")
            grads = model.grad(g.features, dscores)
            if total is None:
                total = grads
            else:
                for key, value in grads.items():
                    total[key] = total[key] + value
        model.step(total, lr / len(batch))

    def _evaluate(self, model, groups, targets, labels):
        lw = pw = 0.0
        for g, t, lab in zip(groups, targets, labels):
            scores = model.scores(g.features)
            lw += listwise_loss(scores, lab)
            pw += pointwise_loss(scores, t)
        n = len(groups)
        lw, pw = lw / n, pw / n
        return (lw, pw, lw + self.gamma * pw)

    # -- inference and export ------------------------------------------------

    def predict(self, X) -> np.ndarray:
        """Attractiveness scores for feature rows X (n, d)."""
        if not hasattr(self, "model_"):
            raise NotFittedError("CreativeScorer is not fitted")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        s = self.model_.scores(X)
        return float(s[0]) if single else s

    def export_weights(self) -> dict:
        """JSON-ready snapshot: dimension, weights, config and final losses."""
        if not hasattr(self, "model_"):
            raise NotFittedError("CreativeScorer is not fitted")
        doc = {
            "d": self.n_features_in_,
            "config": self.get_params(),
            "final_losses": {
                "listwise": self.loss_trace_[-1][0],
                "pointwise": self.loss_trace_[-1][1],
                "combined": self.loss_trace_[-1][2],
            },
        }
        doc.update(self.model_.export())
        if self.smoother_ is not None:
            doc["smoothing_prior"] = {
                "alpha": self.smoother_.alpha,
                "beta": self.smoother_.beta,
            }
        return doc
