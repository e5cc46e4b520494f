"""Transductive assignment solver.

Minimizes, over soft assignments z (simplex rows), class means mu, and a
diagonal variance sigma^2, the objective

    -(1/N) sum_i z_i . log p_i                (Gaussian clustering fit)
    - sum_{i,j} w_ij  z_i . z_j               (graph agreement)
    + sum_i [ z_i . log z_i - lam * z_i . log y_i ]   (entropy / text prior)

by block updates: the graph term is linearized at the current z (a tight
bound whenever W is PSD, since z -> z^T W z is convex), which decouples the
z block into independent per-row softmax updates; mu and sigma^2 have
closed-form weighted-moment minimizers.  Labeled rows stay clamped to
their one-hot vectors throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import AffinityGraph
from .prior import compute_text_prior, log_softmax_rows, softmax_rows
from .state import (
    SIGMA_FLOOR,
    Assignments,
    AttributeBank,
    FeatureMatrix,
    GmmState,
    TextPrior,
)

GMM_WEIGHT_AS_WRITTEN = "as-written"
GMM_WEIGHT_UNNORMALIZED = "unnormalized"


@dataclass
class SolverConfig:
    """Knobs of the block-MM solver.

    lam weights the text-prior term; gmm_weight_mode keeps (default) or
    drops the 1/N factor on the clustering term; per_class_variance swaps
    the shared diagonal variance for one per class.
    """

    lam: float = 1.0
    max_outer_iters: int = 25
    z_tol: float = 1e-6
    inner_z_iters: int = 3
    gmm_weight_mode: str = GMM_WEIGHT_AS_WRITTEN
    per_class_variance: bool = False
    record_iterates: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.z_tol <= 0:
            raise ValueError(f"z_tol must be > 0, got {self.z_tol}")
        if self.max_outer_iters < 1 or self.inner_z_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.gmm_weight_mode not in (GMM_WEIGHT_AS_WRITTEN, GMM_WEIGHT_UNNORMALIZED):
            raise ValueError(f"unknown gmm_weight_mode {self.gmm_weight_mode!r}")

    def cluster_weight(self, n: int) -> float:
        return 1.0 / n if self.gmm_weight_mode == GMM_WEIGHT_AS_WRITTEN else 1.0


@dataclass
class TransductTrace:
    """Objective value after init and after every block update, plus
    optional per-outer-iteration snapshots for debugging/oracles."""

    objective_values: list[float] = field(default_factory=list)
    z_iterates: list[np.ndarray] = field(default_factory=list)
    mu_iterates: list[np.ndarray] = field(default_factory=list)
    sigma2_iterates: list[np.ndarray] = field(default_factory=list)


def gaussian_log_density(features: FeatureMatrix, gmm: GmmState) -> np.ndarray:
    """N x M log densities, up to the shared -D/2 log(2 pi) constant:

        log p[i, j] = -1/2 sum_d [ log sigma2_d + (f_id - mu_jd)^2 / sigma2_d ]

    Rows are not normalized; the assignment update's softmax absorbs any
    per-row constant.
    """
    f = features.data
    mu = gmm.mu
    sigma2 = np.atleast_2d(gmm.sigma2)  # (1, D) shared or (M, D) per class
    inv = 1.0 / sigma2
    # (f - mu)^2 / s2 expanded into three BLAS products
    quad = (f ** 2) @ inv.T - 2.0 * f @ (mu * inv).T + np.sum(mu ** 2 * inv, axis=1)
    logdet = np.sum(np.log(sigma2), axis=1)  # (1,) shared or (M,)
    return -0.5 * (logdet[None, :] + quad)


def gmm_update(
    features: FeatureMatrix,
    z: Assignments,
    per_class_variance: bool = False,
    previous: GmmState | None = None,
) -> GmmState:
    """Closed-form weighted-moment update of means and diagonal variance.

    mu_j is the z-weighted mean of the features; the shared variance is the
    total z-weighted squared deviation divided by N (per-class: divided by
    the class responsibility).  A class with zero total responsibility
    keeps its previous mean (falling back to the global mean if there is
    none) and triggers a warning.
    """
    f = features.data
    zz = z.z
    n, d = f.shape
    m = zz.shape[1]
    nk = zz.sum(axis=0)  # (M,)
    empty = nk == 0
    if np.any(empty):
        warnings.warn(
            f"classes {np.nonzero(empty)[0].tolist()} have zero responsibility; "
            "keeping their previous means",
            RuntimeWarning,
            stacklevel=2,
        )

    first = zz.T @ f          # (M, D) sum_i z_ij f_i
    second = zz.T @ (f ** 2)  # (M, D) sum_i z_ij f_i^2
    mu = np.empty((m, d))
    safe = ~empty
    mu[safe] = first[safe] / nk[safe, None]
    if np.any(empty):
        if previous is not None:
            mu[empty] = previous.mu[empty]
        else:
            mu[empty] = f.mean(axis=0)

    # sum_i z_ij (f - mu_j)^2 = second - 2 mu*first + nk mu^2, zero for empty classes
    dev = second - 2.0 * mu * first + nk[:, None] * mu ** 2
    dev[empty] = 0.0
    if per_class_variance:
        sigma2 = np.empty((m, d))
        sigma2[safe] = dev[safe] / nk[safe, None]
        if np.any(empty):
            if previous is not None and previous.per_class:
                sigma2[empty] = previous.sigma2[empty]
            else:
                sigma2[empty] = dev[safe].sum(axis=0) / nk[safe].sum()
    else:
        sigma2 = dev.sum(axis=0) / n
    sigma2 = np.maximum(sigma2, SIGMA_FLOOR)
    return GmmState(mu=mu, sigma2=sigma2)


def _clamp_rows(z: np.ndarray, clamped: np.ndarray, clamp_labels: np.ndarray | None) -> None:
    if clamp_labels is None or not np.any(clamped):
        return
    idx = np.nonzero(clamped)[0]
    z[idx] = 0.0
    z[idx, clamp_labels[idx]] = 1.0


def z_update(
    features: FeatureMatrix,
    gmm: GmmState,
    prior: TextPrior,
    graph: AffinityGraph,
    z_current: Assignments,
    cfg: SolverConfig,
) -> Assignments:
    """One z block: for every unclamped row,

        z_i <- softmax( c * log p_i + lam * log y_i + 2 (W z_old)_i )

    where c is 1/N (or 1 in unnormalized mode).  The linearization point
    refreshes between the cfg.inner_z_iters passes; clamped rows are
    untouched.
    """
    logp = gaussian_log_density(features, gmm)
    logy = log_softmax_rows(prior.s_bar)
    base = cfg.cluster_weight(features.n) * logp + cfg.lam * logy
    z = z_current.z
    for _ in range(cfg.inner_z_iters):
        z_new = softmax_rows(base + 2.0 * graph.propagate(z))
        _clamp_rows(z_new, z_current.clamped, z_current.clamp_labels)
        z = z_new
    return Assignments(z, z_current.clamped, z_current.clamp_labels)


def objective(
    features: FeatureMatrix,
    z: Assignments,
    gmm: GmmState,
    prior: TextPrior,
    graph: AffinityGraph,
    cfg: SolverConfig,
) -> float:
    """Value of the full objective at (z, mu, sigma^2), with 0 log 0 := 0."""
    zz = z.z
    logp = gaussian_log_density(features, gmm)
    logy = log_softmax_rows(prior.s_bar)
    cluster = -cfg.cluster_weight(features.n) * float(np.sum(zz * logp))
    lap = -float(np.sum(zz * graph.propagate(zz)))
    with np.errstate(divide="ignore", invalid="ignore"):
        zlogz = np.where(zz > 0, zz * np.log(zz), 0.0)
    entropy = float(np.sum(zlogz))
    agreement = -cfg.lam * float(np.sum(zz * logy))
    return cluster + lap + entropy + agreement


def transduct(
    features: FeatureMatrix,
    bank: AttributeBank | None,
    graph: AffinityGraph,
    init: Assignments | None = None,
    clamps: tuple[np.ndarray, np.ndarray] | None = None,
    cfg: SolverConfig | None = None,
    prior: TextPrior | None = None,
    temperature: float | None = None,
) -> tuple[Assignments, GmmState, TransductTrace]:
    """Run the full block-MM loop to convergence.

    The text prior comes from ``bank`` (or is passed directly via
    ``prior``).  z starts at the prior (or at ``init``), with clamped rows
    forced one-hot; mu/sigma^2 start from the moment update of that z.
    Stops when the max-abs z change falls below cfg.z_tol or after
    cfg.max_outer_iters outer iterations.  The trace records the objective
    after initialization and after every z / GMM block.
    """
    if cfg is None:
        cfg = SolverConfig()
    if (bank is None) == (prior is None):
        raise ValueError("provide exactly one of bank or prior")
    if prior is None:
        kwargs = {} if temperature is None else {"temperature": temperature}
        prior = compute_text_prior(features, bank, **kwargs)

    n, m = prior.y_hat.shape
    if clamps is not None:
        clamped, clamp_labels = clamps
        clamped = np.asarray(clamped, dtype=bool)
        if clamp_labels is not None:
            clamp_labels = np.asarray(clamp_labels, dtype=np.int64)
    elif init is not None:
        clamped, clamp_labels = init.clamped, init.clamp_labels
    else:
        clamped, clamp_labels = np.zeros(n, dtype=bool), None

    z0 = (init.z if init is not None else prior.y_hat).copy()
    _clamp_rows(z0, clamped, clamp_labels)
    z = Assignments(z0, clamped, clamp_labels)
    gmm = gmm_update(features, z, cfg.per_class_variance)

    trace = TransductTrace()
    trace.objective_values.append(objective(features, z, gmm, prior, graph, cfg))
    for _ in range(cfg.max_outer_iters):
        z_new = z_update(features, gmm, prior, graph, z, cfg)
        trace.objective_values.append(objective(features, z_new, gmm, prior, graph, cfg))
        gmm = gmm_update(features, z_new, cfg.per_class_variance, previous=gmm)
        trace.objective_values.append(objective(features, z_new, gmm, prior, graph, cfg))
        if cfg.record_iterates:
            trace.z_iterates.append(z_new.z.copy())
            trace.mu_iterates.append(gmm.mu.copy())
            trace.sigma2_iterates.append(gmm.sigma2.copy())
        delta = float(np.max(np.abs(z_new.z - z.z)))
        z = z_new
        if delta < cfg.z_tol:
            break
    return z, gmm, trace
