"""Fairness audit quantities: excessive risk, model sensitivity, the sensitivity
and risk upper bounds, closeness to the decision boundary, rank correlations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .models import (
    ModelParams,
    augment,
    stacked_logit_margin_grad,
    stacked_loss_grad,
    stacked_losses,
    stacked_proba,
)

RISK_MODES = ("with_reg", "loss_only")


class AuditError(ValueError):
    pass


def _stack(theta_tilde_samples, template: ModelParams) -> np.ndarray:
    if isinstance(theta_tilde_samples, np.ndarray):
        arr = np.atleast_2d(np.asarray(theta_tilde_samples, dtype=float))
    else:
        samples = list(theta_tilde_samples)
        for s in samples:
            if isinstance(s, ModelParams) and (s.arch, s.dims) != (template.arch, template.dims):
                raise AuditError("private and non-private models have different architectures")
        arr = np.stack([s.theta if isinstance(s, ModelParams) else np.asarray(s, dtype=float) for s in samples])
    if arr.shape[0] == 0:
        raise AuditError("need at least one private repetition")
    if arr.shape[1] != template.theta.size:
        raise AuditError(f"parameter length {arr.shape[1]} does not match {template.theta.size}")
    return arr


@dataclass(frozen=True)
class SensitivityStats:
    u1: float
    u2: float
    rep_count: int
    per_rep_norms: np.ndarray

    @property
    def u1_se(self) -> float:
        return _se(self.per_rep_norms)

    @property
    def u2_se(self) -> float:
        return _se(self.per_rep_norms**2)


def _se(samples: np.ndarray) -> float:
    n = len(samples)
    return float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def sensitivity_stats(theta_star: ModelParams, theta_tilde_samples) -> SensitivityStats:
    """Moments of ``||theta* - theta~||`` over the private repetitions."""
    tilde = _stack(theta_tilde_samples, theta_star)
    norms = np.linalg.norm(tilde - theta_star.theta, axis=1)
    return SensitivityStats(float(norms.mean()), float((norms**2).mean()), len(norms), norms)


def sample_loss_gaps(
    theta_star: ModelParams,
    theta_tilde_samples,
    X: np.ndarray,
    targets: np.ndarray,
    lam: float,
    mode: str = "with_reg",
) -> np.ndarray:
    """Per-repetition, per-sample ``loss(theta~) - loss(theta*)``, shape ``(R, n)``.

    In ``with_reg`` mode each sample also carries the change in
    ``lam * ||theta||^2``. The mean-form objective is the average of
    ``loss_i + lam ||theta||^2``, so averaging these values over any subset
    gives that subset's excessive risk.
    """
    if mode not in RISK_MODES:
        raise AuditError(f"unknown risk mode {mode!r}")
    tilde = _stack(theta_tilde_samples, theta_star)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    a, dims = theta_star.arch, theta_star.dims
    T = np.asarray(targets, dtype=float)
    gaps = stacked_losses(a, dims, tilde, X, T) - stacked_losses(a, dims, theta_star.theta[None], X, T)
    if mode == "with_reg":
        reg = lam * (np.einsum("rp,rp->r", tilde, tilde) - theta_star.theta @ theta_star.theta)
        gaps = gaps + reg[:, None]
    return gaps


def per_sample_risk(theta_star, theta_tilde_samples, X, targets, lam, mode="with_reg"):
    """Individual excessive risks and their Monte Carlo standard errors."""
    gaps = sample_loss_gaps(theta_star, theta_tilde_samples, X, targets, lam, mode)
    R = gaps.shape[0]
    se = gaps.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(gaps.shape[1])
    return gaps.mean(axis=0), se


def excessive_risk(S: np.ndarray, theta_star: ModelParams, theta_tilde_samples, targets: np.ndarray, lam: float) -> float:
    """``E[L(theta~; S)] - L(theta*; S)`` with the mean-form regularized objective.

    ``targets`` are the clean ensemble labels of ``S`` as class-weight rows.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] == 0:
        raise AuditError("excessive risk needs a nonempty sample set")
    tilde = _stack(theta_tilde_samples, theta_star)
    a, dims = theta_star.arch, theta_star.dims
    T = np.asarray(targets, dtype=float)
    L_tilde = stacked_losses(a, dims, tilde, S, T).mean(axis=1) + lam * np.einsum("rp,rp->r", tilde, tilde)
    L_star = stacked_losses(a, dims, theta_star.theta[None], S, T).mean() + lam * theta_star.theta @ theta_star.theta
    return float(L_tilde.mean() - L_star)


def _check_bound_args(lam: float, m: int, flip_probs, grad_dist_norms) -> tuple[np.ndarray, np.ndarray]:
    if not lam > 0:
        raise AuditError("the sensitivity bounds are undefined for lambda <= 0")
    p = np.asarray(flip_probs, dtype=float)
    g = np.asarray(grad_dist_norms, dtype=float)
    if p.shape != g.shape or p.shape[0] != m:
        raise AuditError(f"expected {m} flip probabilities and gradient norms, got {p.shape} and {g.shape}")
    return p, g


def thm1_rhs(c_abs: float, lam: float, m: int, flip_probs, grad_dist_norms) -> float:
    """Upper bound on ``E||theta* - theta~||``: ``|c|/(m lam) * sum p_x ||g_x||``.

    For logistic regression pass ``c_abs=1`` and the bias-augmented input
    norms as ``grad_dist_norms``.
    """
    p, g = _check_bound_args(lam, m, flip_probs, grad_dist_norms)
    return float(c_abs / (m * lam) * np.sum(p * g))


def cor2_rhs(c_abs: float, lam: float, m: int, flip_probs, grad_dist_norms) -> float:
    """Upper bound on ``E||theta* - theta~||^2``: ``|c|^2/(m lam^2) * sum p_x^2 ||g_x||^2``."""
    p, g = _check_bound_args(lam, m, flip_probs, grad_dist_norms)
    return float(c_abs**2 / (m * lam**2) * np.sum(p**2 * g**2))


def thm3_rhs(grad_norm_at_star, beta_x, stats: SensitivityStats):
    """Per-sample risk bound ``||grad loss(theta*)|| U1 + beta_x U2 / 2`` (vectorizes)."""
    return np.asarray(grad_norm_at_star) * stats.u1 + 0.5 * np.asarray(beta_x) * stats.u2


def closeness(p: ModelParams, x):
    """``1 - sum_c f_c(x)^2``; 0 for one-hot outputs, ``1 - 1/C`` for uniform ones."""
    x = np.asarray(x, dtype=float)
    P = stacked_proba(p.arch, p.dims, p.theta[None], np.atleast_2d(x))[0]
    s = 1.0 - (P**2).sum(axis=-1)
    return float(s[0]) if x.ndim == 1 else s


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns ``nan`` when either sequence is constant (no variance).
    """
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise AuditError("spearman needs two equal-length sequences of length >= 2")
    return _pearson(rankdata(xs), rankdata(ys))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        return math.nan
    return float(np.clip((a @ b) / den, -1.0, 1.0))


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    p_value: float
    permutations: int


def spearman_permutation_test(xs, ys, permutations: int = 5000, seed: int = 0) -> PermutationResult:
    """One-sided test of positive rank correlation by permuting ``ys``.

    ``p = (1 + #{rho_perm >= rho_obs}) / (1 + permutations)``.
    """
    rx = rankdata(np.asarray(xs, dtype=float))
    ry = rankdata(np.asarray(ys, dtype=float))
    obs = _pearson(rx, ry)
    if math.isnan(obs):
        return PermutationResult(obs, 1.0, 0)
    rng = np.random.default_rng(seed)
    a = rx - rx.mean()
    b = ry - ry.mean()
    scale = math.sqrt(float(a @ a) * float(b @ b))
    perms = rng.permuted(np.broadcast_to(b, (permutations, b.size)), axis=1)
    null = perms @ a / scale
    # tolerance absorbs summation-order rounding for permutations equal to the observed order
    hits = int(np.sum(null >= obs - 1e-12))
    return PermutationResult(obs, (1 + hits) / (1 + permutations), permutations)


@dataclass
class FairnessReport:
    """Audit of one private-vs-clean student comparison on the public set.

    Per-sample arrays are aligned with the public training rows.
    """

    groups: np.ndarray
    risk: np.ndarray
    risk_se: np.ndarray
    group_risk: dict[int, float]
    population_risk: float
    risk_gap: float
    sensitivity: SensitivityStats
    flip_prob: np.ndarray
    flip_prob_se: np.ndarray
    input_norm: np.ndarray
    grad_norm: np.ndarray
    closeness: np.ndarray
    beta: np.ndarray
    thm1: float
    cor2: float
    thm3: np.ndarray
    risk_loss_only: np.ndarray
    risk_loss_only_se: np.ndarray
    accuracy_private: float
    accuracy_nonprivate: float
    accuracy_private_reps: np.ndarray = field(default_factory=lambda: np.zeros(0))
    correlations: dict[str, float] = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        return {
            "group": self.groups,
            "excess_risk": self.risk,
            "excess_risk_se": self.risk_se,
            "excess_risk_loss_only": self.risk_loss_only,
            "excess_risk_loss_only_se": self.risk_loss_only_se,
            "thm3_rhs": self.thm3,
            "flip_prob": self.flip_prob,
            "flip_prob_se": self.flip_prob_se,
            "input_norm": self.input_norm,
            "grad_norm": self.grad_norm,
            "beta": self.beta,
            "closeness": self.closeness,
        }

    def summary(self) -> dict:
        return {
            "group_risk": {str(a): v for a, v in self.group_risk.items()},
            "group_sizes": {str(a): int(np.sum(self.groups == a)) for a in self.group_risk},
            "population_risk": self.population_risk,
            "risk_gap": self.risk_gap,
            "u1": self.sensitivity.u1,
            "u2": self.sensitivity.u2,
            "u1_se": self.sensitivity.u1_se,
            "u2_se": self.sensitivity.u2_se,
            "repetitions": self.sensitivity.rep_count,
            "thm1_rhs": self.thm1,
            "cor2_rhs": self.cor2,
            "mean_flip_prob": float(np.mean(self.flip_prob)),
            "accuracy_private": self.accuracy_private,
            "accuracy_nonprivate": self.accuracy_nonprivate,
            "correlations": dict(self.correlations),
        }


def gradient_distortion(theta_star: ModelParams, tilde: np.ndarray, X: np.ndarray) -> np.ndarray:
    """``g_x`` per sample.

    Exact ``||x_aug||`` for logistic regression; for binary networks the
    largest ``||grad_theta (logit_0 - logit_1)||`` over the clean and all
    private parameter vectors (a tractable stand-in for the max over theta).
    Returns ``nan`` where no decomposition exists (more than two classes).
    """
    if theta_star.arch == "logistic":
        return np.linalg.norm(augment(X), axis=1)
    if theta_star.class_count != 2:
        return np.full(X.shape[0], np.nan)
    thetas = np.vstack([theta_star.theta[None], tilde])
    g = stacked_logit_margin_grad(theta_star.arch, theta_star.dims, thetas, X)
    return np.linalg.norm(g, axis=2).max(axis=0)


def audit(
    theta_star: ModelParams,
    theta_tilde_samples,
    X: np.ndarray,
    groups: np.ndarray,
    clean_targets: np.ndarray,
    lam: float,
    flip_prob: np.ndarray,
    flip_prob_se: np.ndarray,
    closeness_model: ModelParams,
    X_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
    group_count: int | None = None,
    correlation_permutations: int = 2000,
    seed: int = 0,
) -> FairnessReport:
    """Compute every audit column for one run on the public training set."""
    tilde = _stack(theta_tilde_samples, theta_star)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(clean_targets, dtype=float)
    m = X.shape[0]
    groups = np.asarray(groups, dtype=np.int64)
    A = int(groups.max()) + 1 if group_count is None else group_count

    risk, risk_se = per_sample_risk(theta_star, tilde, X, T, lam, "with_reg")
    risk_lo, risk_lo_se = per_sample_risk(theta_star, tilde, X, T, lam, "loss_only")
    group_risk = {}
    for a in range(A):
        idx = groups == a
        group_risk[a] = excessive_risk(X[idx], theta_star, tilde, T[idx], lam) if idx.any() else math.nan
    population = excessive_risk(X, theta_star, tilde, T, lam)
    gap = group_gap(list(group_risk.values()))

    stats = sensitivity_stats(theta_star, tilde)
    a_, dims = theta_star.arch, theta_star.dims
    per_grad = np.stack(
        [stacked_loss_grad(a_, dims, theta_star.theta[None], X[i : i + 1], T[i : i + 1])[1][0] for i in range(m)]
    )
    grad_norm = np.linalg.norm(per_grad, axis=1)
    input_norm = np.linalg.norm(X, axis=1)
    g_x = gradient_distortion(theta_star, tilde, X)
    if theta_star.arch == "logistic":
        beta = 0.25 * np.sum(augment(X) ** 2, axis=1) * T.sum(axis=1)
    else:
        beta = np.full(m, np.nan)
    if lam > 0 and np.all(np.isfinite(g_x)):
        t1 = thm1_rhs(1.0, lam, m, flip_prob, g_x)
        c2 = cor2_rhs(1.0, lam, m, flip_prob, g_x)
    else:
        t1 = c2 = math.nan
    t3 = thm3_rhs(grad_norm, beta, stats)
    s = closeness(closeness_model, X)

    acc_nonpriv = acc_priv = math.nan
    acc_reps = np.zeros(0)
    if X_test is not None and y_test is not None and len(y_test):
        Xt = np.atleast_2d(np.asarray(X_test, dtype=float))
        pred_star = np.argmax(stacked_proba(a_, dims, theta_star.theta[None], Xt)[0], axis=-1)
        acc_nonpriv = float(np.mean(pred_star == y_test))
        pred_t = np.argmax(stacked_proba(a_, dims, tilde, Xt), axis=-1)
        acc_reps = (pred_t == np.asarray(y_test)[None]).mean(axis=1)
        acc_priv = float(acc_reps.mean())

    rep = FairnessReport(
        groups=groups,
        risk=risk,
        risk_se=risk_se,
        group_risk=group_risk,
        population_risk=population,
        risk_gap=float(gap),
        sensitivity=stats,
        flip_prob=np.asarray(flip_prob, dtype=float),
        flip_prob_se=np.asarray(flip_prob_se, dtype=float),
        input_norm=input_norm,
        grad_norm=grad_norm,
        closeness=s,
        beta=beta,
        thm1=t1,
        cor2=c2,
        thm3=np.asarray(t3, dtype=float),
        risk_loss_only=risk_lo,
        risk_loss_only_se=risk_lo_se,
        accuracy_private=acc_priv,
        accuracy_nonprivate=acc_nonpriv,
        accuracy_private_reps=acc_reps,
    )
    rep.correlations = correlation_table(rep, correlation_permutations, seed)
    return rep


CORRELATION_PAIRS: tuple[tuple[str, str], ...] = (
    ("input_norm", "excess_risk"),
    ("closeness", "flip_prob"),
    ("flip_prob", "excess_risk"),
    ("input_norm", "grad_norm"),
)


def correlation_table(rep: FairnessReport, permutations: int, seed: int) -> dict[str, float]:
    cols = rep.columns()
    out: dict[str, float] = {}
    for a, b in CORRELATION_PAIRS:
        res = spearman_permutation_test(cols[a], cols[b], permutations, seed) if permutations else None
        out[f"spearman:{a}:{b}"] = spearman(cols[a], cols[b])
        if res is not None:
            out[f"pvalue:{a}:{b}"] = res.p_value
    return out


def group_gap(values: Sequence[float]) -> float:
    """Largest difference between group excessive risks (``|R_0 - R_1|`` for two groups)."""
    finite = [v for v in values if not math.isnan(v)]
    return (max(finite) - min(finite)) if len(finite) >= 2 else 0.0
