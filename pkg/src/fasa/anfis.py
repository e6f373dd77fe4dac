"""Five-layer Takagi-Sugeno ANFIS binary classifier with hybrid training.

Layers, in order: Gaussian membership degrees, rule firing strengths (product
T-norm), normalization, affine rule consequents weighted by the normalized
strengths, and a summing output node. The raw output is passed through a
logistic link for probabilities and binary cross-entropy.

Training alternates a ridge least-squares solve for the consequent matrix
(forward pass, one iteratively reweighted least-squares step on the BCE,
halved until the loss does not rise) with one full-batch ADAM step on the premise parameters {amplitude, center, width}
(backward pass).
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

FORMAT_VERSION = 1

SIGMA_MIN = 1e-4
AMPLITUDE_MIN = 1e-4
DEGENERATE_SUM = 1e-300
PROB_CLIP = 1e-12


class AnfisError(ValueError):
    """Invalid model, data or training request."""


class ModelFormatError(AnfisError):
    """Malformed or incompatible model document."""


# --------------------------------------------------------------------------
# Layer 1: membership functions
# --------------------------------------------------------------------------


def _width_factor(standard_gaussian: bool) -> float:
    # exponent denominator is factor * sigma**2
    return 2.0 if standard_gaussian else 4.0


@dataclass
class GaussianMF:
    """Gaussian membership function ``a * exp(-(x - c)**2 / (2*sigma)**2)``.

    With ``standard_gaussian=True`` in :func:`eval_mf` the denominator becomes
    the conventional ``2*sigma**2``.
    """

    a: float = 1.0
    c: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise AnfisError(f"sigma must be > 0, got {self.sigma}")

    def __call__(self, x, standard_gaussian: bool = False):
        return eval_mf(self, x, standard_gaussian)


def eval_mf(mf: GaussianMF, x, standard_gaussian: bool = False):
    """Membership degree of ``x`` (scalar or array) in ``mf``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise AnfisError("non-finite input")
    if not mf.sigma > 0:
        raise AnfisError(f"sigma must be > 0, got {mf.sigma}")
    k = _width_factor(standard_gaussian)
    out = mf.a * np.exp(-((x - mf.c) ** 2) / (k * mf.sigma**2))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Model containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RuleBase:
    """Full grid partition: one rule per combination of per-input MF indices."""

    n_inputs: int
    mfs_per_input: int = 2

    def __post_init__(self):
        if self.n_inputs < 1:
            raise AnfisError("n_inputs must be >= 1")
        if self.mfs_per_input < 1:
            raise AnfisError("mfs_per_input must be >= 1")

    @property
    def n_rules(self) -> int:
        return self.mfs_per_input**self.n_inputs

    @property
    def rules(self) -> np.ndarray:
        """(n_rules, n_inputs) integer array of MF indices."""
        grid = itertools.product(range(self.mfs_per_input), repeat=self.n_inputs)
        return np.array(list(grid), dtype=np.int64).reshape(self.n_rules, self.n_inputs)


@dataclass
class AnfisModel:
    """Premise arrays are shaped (n_inputs, mfs_per_input); ``consequents`` is
    (n_rules, n_inputs + 1) with the bias in the last column."""

    amplitudes: np.ndarray
    centers: np.ndarray
    sigmas: np.ndarray
    consequents: np.ndarray
    threshold: float = 0.5
    standard_gaussian: bool = False
    feature_names: list[str] = field(default_factory=list)
    scaler: Optional[dict] = None

    def __post_init__(self):
        self.amplitudes = np.array(self.amplitudes, dtype=float, ndmin=2)
        self.centers = np.array(self.centers, dtype=float, ndmin=2)
        self.sigmas = np.array(self.sigmas, dtype=float, ndmin=2)
        self.consequents = np.array(self.consequents, dtype=float, ndmin=2)
        self.feature_names = list(self.feature_names)
        self._rules = None
        self.check()

    @property
    def n_inputs(self) -> int:
        return self.centers.shape[0]

    @property
    def mfs_per_input(self) -> int:
        return self.centers.shape[1]

    @property
    def rule_base(self) -> RuleBase:
        return RuleBase(self.n_inputs, self.mfs_per_input)

    @property
    def rules(self) -> np.ndarray:
        if self._rules is None or self._rules.shape[1] != self.n_inputs:
            self._rules = self.rule_base.rules
        return self._rules

    @property
    def n_rules(self) -> int:
        return self.mfs_per_input**self.n_inputs

    @property
    def mfs(self) -> list[list[GaussianMF]]:
        return [
            [GaussianMF(float(a), float(c), float(s)) for a, c, s in zip(ar, cr, sr)]
            for ar, cr, sr in zip(self.amplitudes, self.centers, self.sigmas)
        ]

    def check(self):
        shape = self.centers.shape
        if self.amplitudes.shape != shape or self.sigmas.shape != shape:
            raise AnfisError("premise arrays must share one (n_inputs, mfs_per_input) shape")
        if self.consequents.shape != (self.n_rules, self.n_inputs + 1):
            raise AnfisError(
                f"consequents must be {(self.n_rules, self.n_inputs + 1)}, "
                f"got {self.consequents.shape}"
            )
        if not np.all(self.sigmas > 0):
            raise AnfisError("all sigmas must be > 0")
        if self.feature_names and len(self.feature_names) != self.n_inputs:
            raise AnfisError("feature_names length must equal n_inputs")
        if not 0.0 < self.threshold < 1.0:
            raise AnfisError("threshold must lie in (0, 1)")

    def copy(self) -> "AnfisModel":
        return copy.deepcopy(self)

    # premise parameters flattened as [amplitudes, centers, sigmas]
    def premise_vector(self) -> np.ndarray:
        return np.concatenate([self.amplitudes.ravel(), self.centers.ravel(), self.sigmas.ravel()])

    def set_premise_vector(self, theta: np.ndarray):
        a, c, s = np.split(np.asarray(theta, dtype=float), 3)
        shape = self.centers.shape
        self.amplitudes = a.reshape(shape).copy()
        self.centers = c.reshape(shape).copy()
        self.sigmas = s.reshape(shape).copy()


def init_grid(
    n_inputs: int,
    mfs_per_input: int = 2,
    ranges: Optional[Sequence[tuple[float, float]]] = None,
    *,
    standard_gaussian: bool = False,
    feature_names: Sequence[str] = (),
) -> AnfisModel:
    """Grid-partition model with evenly spaced centers and zero consequents.

    ``ranges`` gives the observed (min, max) per feature; the default is the
    normalized interval [0, 1] for every input.
    """
    if n_inputs < 1:
        raise AnfisError("n_inputs must be >= 1")
    if mfs_per_input < 2:
        raise AnfisError("mfs_per_input must be >= 2")
    if ranges is None:
        ranges = [(0.0, 1.0)] * n_inputs
    if len(ranges) != n_inputs:
        raise AnfisError("need one (min, max) range per input")

    centers = np.empty((n_inputs, mfs_per_input))
    sigmas = np.empty((n_inputs, mfs_per_input))
    for i, (lo, hi) in enumerate(ranges):
        centers[i] = np.linspace(lo, hi, mfs_per_input)
        spacing = (hi - lo) / (mfs_per_input - 1)
        sigmas[i] = max(spacing / 2.0, SIGMA_MIN)
    n_rules = mfs_per_input**n_inputs
    return AnfisModel(
        amplitudes=np.ones_like(centers),
        centers=centers,
        sigmas=sigmas,
        consequents=np.zeros((n_rules, n_inputs + 1)),
        standard_gaussian=standard_gaussian,
        feature_names=list(feature_names),
    )


# --------------------------------------------------------------------------
# Forward computation (layers 1-5)
# --------------------------------------------------------------------------


def _as_batch(model: AnfisModel, X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise AnfisError(f"expected {model.n_inputs} features, got shape {np.shape(X)}")
    if not np.all(np.isfinite(X)):
        raise AnfisError("non-finite input")
    return X, single


def memberships(model: AnfisModel, X: np.ndarray) -> np.ndarray:
    """(N, n_inputs, mfs_per_input) membership degrees."""
    k = _width_factor(model.standard_gaussian)
    d = X[:, :, None] - model.centers[None]
    return model.amplitudes[None] * np.exp(-(d**2) / (k * model.sigmas[None] ** 2))


def _firing(model: AnfisModel, X: np.ndarray) -> np.ndarray:
    mu = memberships(model, X)
    rules = model.rules
    w = np.ones((X.shape[0], model.n_rules))
    for i in range(model.n_inputs):
        w *= mu[:, i, rules[:, i]]
    return w


def firing_strengths(model: AnfisModel, x) -> np.ndarray:
    """Per-rule product of membership degrees for one sample or a batch."""
    X, single = _as_batch(model, x)
    w = _firing(model, X)
    return w[0] if single else w


def _normalize(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = w.sum(axis=1)
    degenerate = s < DEGENERATE_SUM
    safe = np.where(degenerate, 1.0, s)
    wbar = w / safe[:, None]
    wbar[degenerate] = 1.0 / w.shape[1]
    return wbar, degenerate


def normalize_strengths(w) -> np.ndarray:
    """Divide strengths by their sum; an all-but-zero sum yields a uniform vector."""
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    if np.any(w < 0):
        raise AnfisError("firing strengths must be non-negative")
    wbar, _ = _normalize(np.atleast_2d(w))
    return wbar[0] if single else wbar


def rule_outputs(consequents: np.ndarray, x) -> np.ndarray:
    """Affine rule outputs ``f_r = p_r . x + r_r``."""
    consequents = np.atleast_2d(np.asarray(consequents, dtype=float))
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] + 1 != consequents.shape[1]:
        raise AnfisError(
            f"consequent rows have {consequents.shape[1]} entries, need n_inputs + 1 = {X.shape[1] + 1}"
        )
    f = X @ consequents[:, :-1].T + consequents[:, -1]
    return f[0] if single else f


def _forward(model: AnfisModel, X: np.ndarray):
    w = _firing(model, X)
    wbar, degenerate = _normalize(w)
    f = rule_outputs(model.consequents, X)
    y = np.einsum("nr,nr->n", wbar, f)
    return w, wbar, degenerate, f, y


def predict_raw(model: AnfisModel, x):
    """Raw Takagi-Sugeno output ``sum_r wbar_r * f_r``."""
    X, single = _as_batch(model, x)
    y = _forward(model, X)[-1]
    return float(y[0]) if single else y


def logistic(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_proba(model: AnfisModel, x):
    X, single = _as_batch(model, x)
    p = logistic(_forward(model, X)[-1])
    return float(p[0]) if single else p


def classify(model: AnfisModel, x):
    """Return ``(label, probability)``; label 1 (attack) iff probability >= threshold.

    Works on a single vector (scalars returned) or a batch (arrays returned).
    """
    p = predict_proba(model, x)
    label = np.asarray(p) >= model.threshold
    if np.ndim(p) == 0:
        return int(label), p
    return label.astype(np.int64), p


# --------------------------------------------------------------------------
# Forward pass: consequent least squares
# --------------------------------------------------------------------------


def _design(wbar: np.ndarray, X: np.ndarray) -> np.ndarray:
    X1 = np.hstack([X, np.ones((X.shape[0], 1))])
    return (wbar[:, :, None] * X1[:, None, :]).reshape(X.shape[0], -1)


def design_matrix(model: AnfisModel, X) -> np.ndarray:
    """Rows ``[wbar_1*[x,1], ..., wbar_R*[x,1]]`` of the consequent LSQ problem."""
    X, _ = _as_batch(model, X)
    _, wbar, _, _, _ = _forward(model, X)
    return _design(wbar, X)


def lsq_objective(model: AnfisModel, X, targets, ridge: float = 0.0) -> float:
    """``||A theta - y||^2 + ridge * ||theta||^2`` at the current consequents."""
    resid = predict_raw(model, X) - np.asarray(targets, dtype=float)
    return float(resid @ resid + ridge * np.sum(model.consequents**2))


def _normal_equations(wbar: np.ndarray, X: np.ndarray, weights: np.ndarray, response: np.ndarray, chunk: int):
    # gram = A^T diag(weights) A via a symmetric rank-k update, rhs = A^T response
    n_params = wbar.shape[1] * (X.shape[1] + 1)
    gram = np.zeros((n_params, n_params), order="F")
    rhs = np.zeros(n_params)
    root = np.sqrt(weights)
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, start + chunk)
        A = _design(wbar[sl], X[sl])
        rhs += A.T @ response[sl]
        A *= root[sl, None]
        # A.T is Fortran-ordered, so BLAS reads it without a copy; only the upper triangle is filled
        gram = scipy.linalg.blas.dsyrk(1.0, A.T, beta=1.0, c=gram, trans=0, overwrite_c=True)
    return gram + np.triu(gram, 1).T, rhs


def _solve(model: AnfisModel, gram: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    if ridge > 0:
        gram[np.diag_indices_from(gram)] += ridge
        try:
            theta = scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs)
        except np.linalg.LinAlgError:
            theta = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    else:
        try:
            factor = scipy.linalg.cho_factor(gram)
        except np.linalg.LinAlgError:
            raise AnfisError("singular normal equations; use ridge > 0") from None
        diag = np.diag(factor[0]) ** 2
        if diag.min() <= 1e-12 * diag.max():
            raise AnfisError("ill-conditioned normal equations; use ridge > 0")
        theta = scipy.linalg.cho_solve(factor, rhs)
    model.consequents = theta.reshape(model.n_rules, model.n_inputs + 1)
    return model.consequents


def solve_consequents(
    model: AnfisModel, X, targets, ridge: float = 1e-6, weights=None, chunk: int = 4096
) -> np.ndarray:
    """Ridge least-squares solve for the consequent matrix; updates ``model`` in place.

    Minimizes ``sum_n weights_n * (A_n theta - targets_n)**2 + ridge * ||theta||**2``.
    The normal equations are accumulated over row chunks so memory stays at
    O(chunk * n_params + n_params**2).
    """
    X, _ = _as_batch(model, X)
    t = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] < 1:
        raise AnfisError("need at least one sample")
    if t.shape[0] != X.shape[0]:
        raise AnfisError("targets length must match samples")
    if ridge < 0:
        raise AnfisError("ridge must be >= 0")
    s = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float).ravel()
    if s.shape != t.shape or np.any(s < 0):
        raise AnfisError("weights must be non-negative, one per sample")
    wbar = _forward(model, X)[1]
    gram, rhs = _normal_equations(wbar, X, s, s * t, chunk)
    return _solve(model, gram, rhs, ridge)


def irls_objective(model: AnfisModel, X, y, anchor: np.ndarray, ridge: float) -> float:
    """Quadratic model of the BCE around the raw outputs ``anchor`` (up to a constant).

    ``sum_n s_n * d_n**2 - 2 * (y_n - p_n) * d_n + ridge * ||theta||**2`` with
    ``d = y_raw - anchor`` and ``p, s`` the probabilities and their variances
    at the anchor.
    """
    p = logistic(anchor)
    s = p * (1 - p)
    d = predict_raw(model, X) - anchor
    return float(np.sum(s * d**2 - 2.0 * (np.asarray(y, dtype=float) - p) * d) + ridge * np.sum(model.consequents**2))


def irls_consequents(model: AnfisModel, X, y, ridge: float = 1e-6, chunk: int = 4096) -> np.ndarray:
    """One Newton (iteratively reweighted least squares) step for the consequents.

    Weighted least squares with weights ``p(1-p)`` and working response
    ``y_raw + (y - p) / (p(1-p))``, which is the exact minimizer of the
    quadratic BCE model in :func:`irls_objective`. From all-zero consequents it
    reduces to plain least squares on targets ``(y - 0.5) / 0.25``.
    """
    X, _ = _as_batch(model, X)
    y = np.asarray(y, dtype=float).ravel()
    _, wbar, _, _, eta = _forward(model, X)
    return _irls_step(model, X, y, wbar, eta, ridge, chunk)


def _irls_step(model, X, y, wbar, eta, ridge, chunk=4096):
    p = logistic(eta)
    s = p * (1 - p)
    gram, rhs = _normal_equations(wbar, X, s, s * eta + (y - p), chunk)
    return _solve(model, gram, rhs, ridge)


# --------------------------------------------------------------------------
# Backward pass: BCE loss, analytic premise gradients, ADAM
# --------------------------------------------------------------------------


def bce_loss(model: AnfisModel, X, y) -> float:
    """Mean binary cross-entropy of ``logistic(y_raw)`` with clamped probabilities."""
    p = np.clip(predict_proba(model, X), PROB_CLIP, 1 - PROB_CLIP)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


@dataclass
class PremiseGradient:
    amplitudes: np.ndarray
    centers: np.ndarray
    sigmas: np.ndarray
    loss: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.amplitudes.ravel(), self.centers.ravel(), self.sigmas.ravel()])


def premise_gradients(model: AnfisModel, X, y) -> PremiseGradient:
    """Analytic gradient of mean BCE w.r.t. every MF's amplitude, center and width."""
    X, _ = _as_batch(model, X)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise AnfisError("labels length must match samples")
    _, wbar, degenerate, f, out = _forward(model, X)
    return _premise_gradients(model, X, y, wbar, degenerate, f, out)


def _premise_gradients(model, X, y, wbar, degenerate, f, out) -> PremiseGradient:
    n = X.shape[0]
    p = logistic(out)
    pc = np.clip(p, PROB_CLIP, 1 - PROB_CLIP)
    loss = float(-np.mean(y * np.log(pc) + (1 - y) * np.log1p(-pc)))
    if not np.isfinite(loss):
        raise AnfisError("non-finite loss")
    # the clamp is flat outside its bounds
    dl_dout = np.where((p > PROB_CLIP) & (p < 1 - PROB_CLIP), p - y, 0.0) / n

    # d out / d log w_r = wbar_r * (f_r - out); zero where wbar is the uniform fallback
    q = dl_dout[:, None] * wbar * (f - out[:, None])
    q[degenerate] = 0.0

    k = _width_factor(model.standard_gaussian)
    rules = model.rules
    m = model.mfs_per_input
    ga = np.empty_like(model.amplitudes)
    gc = np.empty_like(model.centers)
    gs = np.empty_like(model.sigmas)
    for i in range(model.n_inputs):
        onehot = np.eye(m)[rules[:, i]]  # (R, m)
        Q = q @ onehot  # (N, m)
        d = X[:, i, None] - model.centers[i]
        s = model.sigmas[i]
        ga[i] = Q.sum(axis=0) / model.amplitudes[i]
        gc[i] = (Q * (2.0 * d / (k * s**2))).sum(axis=0)
        gs[i] = (Q * (2.0 * d**2 / (k * s**3))).sum(axis=0)
    return PremiseGradient(ga, gc, gs, loss)


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    k_folds: int = 5
    ridge_lambda: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise AnfisError("learning_rate must be > 0")
        if self.k_folds < 2:
            raise AnfisError("k_folds must be >= 2")
        if self.epochs < 1:
            raise AnfisError("epochs must be >= 1")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(params, grads, state: AdamState, step: int, config: Optional[TrainConfig] = None) -> np.ndarray:
    """One bias-corrected ADAM update; ``step`` counts from 1. Mutates ``state``."""
    cfg = config or TrainConfig()
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if state.m.shape != params.shape or grads.shape != params.shape:
        raise AnfisError("ADAM state, params and grads must share one shape")
    if step < 1:
        raise AnfisError("ADAM step index starts at 1")
    state.m = cfg.beta1 * state.m + (1 - cfg.beta1) * grads
    state.v = cfg.beta2 * state.v + (1 - cfg.beta2) * grads**2
    m_hat = state.m / (1 - cfg.beta1**step)
    v_hat = state.v / (1 - cfg.beta2**step)
    return params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


# --------------------------------------------------------------------------
# Hybrid training loop
# --------------------------------------------------------------------------


@dataclass
class TrainReport:
    losses: list[float]
    lsq_before: list[float]
    lsq_after: list[float]
    fold_metrics: list[dict] = field(default_factory=list)
    snapshot_id: str = ""

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "lsq_before": self.lsq_before,
            "lsq_after": self.lsq_after,
            "fold_metrics": self.fold_metrics,
            "snapshot_id": self.snapshot_id,
        }


def _check_labels(y: np.ndarray):
    values = set(np.unique(y).tolist())
    if not values <= {0, 1}:
        raise AnfisError(f"labels must be 0/1, got {sorted(values)}")
    if len(values) < 2:
        raise AnfisError("degenerate labels: both classes must be present")


def _raw_bce(raw: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def _damped_irls(model: AnfisModel, X, y, wbar, anchor, ridge, max_halvings: int = 30) -> np.ndarray:
    """IRLS step with backtracking; returns the accepted raw outputs.

    A full Newton step overshoots once the data are close to separable
    (``p(1-p)`` near zero), so halve it until the BCE stops increasing.
    """
    old = model.consequents.copy()
    base = _raw_bce(anchor, y)
    full = _irls_step(model, X, y, wbar, anchor, ridge).copy()
    t = 1.0
    for _ in range(max_halvings):
        model.consequents = old + t * (full - old)
        out = np.einsum("nr,nr->n", wbar, rule_outputs(model.consequents, X))
        if np.isfinite(out).all() and _raw_bce(out, y) <= base:
            return out
        t *= 0.5
    model.consequents = old
    return anchor


def _clamp_premises(model: AnfisModel):
    np.maximum(model.sigmas, SIGMA_MIN, out=model.sigmas)
    np.maximum(model.amplitudes, AMPLITUDE_MIN, out=model.amplitudes)


def _hybrid_train(model: AnfisModel, X: np.ndarray, y: np.ndarray, cfg: TrainConfig):
    state = AdamState.zeros(model.premise_vector().size)
    losses, before, after = [], [], []
    yf = y.astype(float)
    for epoch in range(1, cfg.epochs + 1):
        # premises are fixed within an epoch, so one set of strengths serves both passes
        _, wbar, degenerate, f, anchor = _forward(model, X)
        # the quadratic model is zero at its own anchor
        before.append(float(cfg.ridge_lambda * np.sum(model.consequents**2)))
        out = _damped_irls(model, X, yf, wbar, anchor, cfg.ridge_lambda)
        f = rule_outputs(model.consequents, X)
        p = logistic(anchor)
        d = out - anchor
        after.append(float(np.sum(p * (1 - p) * d**2 - 2.0 * (yf - p) * d)
                           + cfg.ridge_lambda * np.sum(model.consequents**2)))
        grad = _premise_gradients(model, X, yf, wbar, degenerate, f, out)
        losses.append(grad.loss)
        theta = adam_step(model.premise_vector(), grad.vector(), state, epoch, cfg)
        model.set_premise_vector(theta)
        _clamp_premises(model)
    # consequents must match the final premises
    _, wbar, _, _, anchor = _forward(model, X)
    _damped_irls(model, X, yf, wbar, anchor, cfg.ridge_lambda)
    return losses, before, after


def fit(model: AnfisModel, X, y, config: Optional[TrainConfig] = None, *, cross_validate: bool = False) -> TrainReport:
    """Hybrid-train ``model`` in place on (X, y).

    With ``cross_validate`` a copy of the initial model is first trained on each
    stratified fold split and scored on the held-out fold; the given model is
    then trained on all the data.
    """
    from fasa import metrics
    from fasa.preprocess import stratified_kfold

    cfg = config or TrainConfig()
    X, _ = _as_batch(model, X)
    y = np.asarray(y).ravel().astype(np.int64)
    if X.shape[0] == 0:
        raise AnfisError("empty dataset")
    if y.shape[0] != X.shape[0]:
        raise AnfisError("labels length must match samples")
    _check_labels(y)

    fold_metrics = []
    if cross_validate:
        folds = stratified_kfold(y, cfg.k_folds, cfg.seed)
        for k in range(cfg.k_folds):
            test = folds == k
            sub = model.copy()
            _hybrid_train(sub, X[~test], y[~test], cfg)
            pred, prob = classify(sub, X[test])
            report = metrics.scores(metrics.confusion(pred, y[test]))
            row = {"fold": k, **report.to_dict()}
            if len(np.unique(y[test])) == 2:
                row["auc"] = metrics.roc_auc(prob, y[test]).auc
            fold_metrics.append(row)

    losses, before, after = _hybrid_train(model, X, y, cfg)
    return TrainReport(losses, before, after, fold_metrics, snapshot_id(model))


# --------------------------------------------------------------------------
# Model document
# --------------------------------------------------------------------------


def to_document(model: AnfisModel) -> dict:
    return {
        "version": FORMAT_VERSION,
        "n_inputs": model.n_inputs,
        "mfs_per_input": model.mfs_per_input,
        "standard_gaussian": model.standard_gaussian,
        "feature_names": list(model.feature_names),
        "membership": [
            [[float(a), float(c), float(s)] for a, c, s in zip(ar, cr, sr)]
            for ar, cr, sr in zip(model.amplitudes, model.centers, model.sigmas)
        ],
        "consequents": model.consequents.tolist(),
        "threshold": float(model.threshold),
        "scaler": model.scaler,
    }


def from_document(doc: dict) -> AnfisModel:
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelFormatError("model document has no version field")
    if doc["version"] != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc['version']!r} (expected {FORMAT_VERSION})")
    try:
        mem = np.array(doc["membership"], dtype=float)
        if mem.ndim != 3 or mem.shape[2] != 3:
            raise ModelFormatError("membership must be an n_inputs x mfs x 3 array")
        model = AnfisModel(
            amplitudes=mem[:, :, 0],
            centers=mem[:, :, 1],
            sigmas=mem[:, :, 2],
            consequents=np.array(doc["consequents"], dtype=float),
            threshold=float(doc.get("threshold", 0.5)),
            standard_gaussian=bool(doc.get("standard_gaussian", False)),
            feature_names=doc.get("feature_names") or [],
            scaler=doc.get("scaler"),
        )
    except KeyError as exc:
        raise ModelFormatError(f"model document missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"bad model document: {exc}") from None
    if model.n_inputs != doc.get("n_inputs", model.n_inputs):
        raise ModelFormatError("n_inputs disagrees with membership array")
    return model


def serialize(model: AnfisModel) -> str:
    return json.dumps(to_document(model), indent=1, sort_keys=True)


def deserialize(text: str | bytes) -> AnfisModel:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ModelFormatError(f"malformed model document at byte offset {offset}: {exc.msg}") from None
    return from_document(doc)


def save(model: AnfisModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(model))
        fh.write("\n")


def load(path) -> AnfisModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def snapshot_id(model: AnfisModel) -> str:
    return hashlib.sha256(serialize(model).encode()).hexdigest()[:16]
