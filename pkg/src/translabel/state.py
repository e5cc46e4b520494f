"""Core numeric domain types shared by the whole engine.

All matrices are float64 row-major internally (file formats downcast to
float32 at the boundary).  The value types here are immutable after
construction and safe to share read-only; anything that evolves them
(solver, pipeline) builds new instances.  ``validate`` is a diagnostic:
constructors only coerce shapes/dtypes and never reject bad numerics, so
invalid states can be built on purpose and inspected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Variance floor for the shared diagonal covariance.  The Gaussian density
# divides by sigma^2; a constant feature coordinate would otherwise collapse
# a dimension to zero variance.
SIGMA_FLOOR = 1e-8

ROW_NORM_TOL = 1e-4
SIMPLEX_TOL = 1e-6

ORIGIN_STATIC = "static"
ORIGIN_DYNAMIC = "dynamic"


def normalize_whitespace(text: str) -> str:
    """Collapse runs of whitespace and trim; the canonical form for
    duplicate detection of attribute texts."""
    return " ".join(text.split())


def _as_f64(a, ndim: int) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"expected {ndim}-d array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FeatureMatrix:
    """N x D image embeddings, one unit-norm row per image."""

    data: np.ndarray
    ids: tuple[str, ...]

    def __init__(self, data, ids=None):
        data = _as_f64(data, 2)
        if ids is None:
            ids = tuple(str(i) for i in range(data.shape[0]))
        else:
            ids = tuple(str(i) for i in ids)
        if len(ids) != data.shape[0]:
            raise ValueError(f"{len(ids)} ids for {data.shape[0]} rows")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class AttributeRecord:
    """One attribute text with its unit-norm embedding and provenance."""

    text: str
    embedding: np.ndarray
    origin: str = ORIGIN_STATIC
    iteration_added: int = 0

    def __post_init__(self):
        object.__setattr__(self, "embedding", _as_f64(self.embedding, 1))
        if self.origin not in (ORIGIN_STATIC, ORIGIN_DYNAMIC):
            raise ValueError(f"unknown origin {self.origin!r}")


@dataclass
class AttributeBank:
    """Per-class attribute texts and embeddings.

    Growth is append-only and duplicate-free; ``add`` is the single
    mutation point and enforces both.  Every class keeps at least one
    entry (the class-prompt text) by convention.
    """

    classes: list[str]
    attrs: list[list[AttributeRecord]] = field(default_factory=list)

    def __post_init__(self):
        self.classes = [str(c) for c in self.classes]
        if not self.attrs:
            self.attrs = [[] for _ in self.classes]
        if len(self.attrs) != len(self.classes):
            raise ValueError(
                f"{len(self.attrs)} attribute lists for {len(self.classes)} classes"
            )

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def dim(self) -> int:
        for recs in self.attrs:
            if recs:
                return recs[0].embedding.shape[0]
        raise ValueError("bank has no attributes")

    def n_attributes(self, j: int) -> int:
        return len(self.attrs[j])

    def texts(self, j: int) -> list[str]:
        return [r.text for r in self.attrs[j]]

    def has_text(self, j: int, text: str) -> bool:
        """Duplicate check: case-insensitive exact match after whitespace
        collapse (the form used when merging generated attributes)."""
        key = normalize_whitespace(text).casefold()
        return any(normalize_whitespace(r.text).casefold() == key for r in self.attrs[j])

    def add(self, j: int, record: AttributeRecord) -> bool:
        """Append ``record`` to class ``j`` unless a duplicate text is
        already present.  Returns True when the record was added."""
        if self.has_text(j, record.text):
            return False
        self.attrs[j].append(record)
        return True

    def class_embedding_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-class (sum of attribute embeddings, count); the cacheable
        quantity behind the attribute-averaged text prior."""
        dim = self.dim
        sums = np.zeros((self.num_classes, dim))
        counts = np.zeros(self.num_classes)
        for j, recs in enumerate(self.attrs):
            for r in recs:
                sums[j] += r.embedding
            counts[j] = len(recs)
        return sums, counts

    def class_embedding_means(self) -> np.ndarray:
        sums, counts = self.class_embedding_sums()
        if np.any(counts == 0):
            empty = [self.classes[j] for j in np.nonzero(counts == 0)[0]]
            raise ValueError(f"classes with zero attributes: {empty}")
        return sums / counts[:, None]

    def snapshot_sizes(self) -> list[int]:
        return [len(recs) for recs in self.attrs]


@dataclass(frozen=True)
class Assignments:
    """Soft label matrix z (one simplex row per image) plus the clamp mask
    for labeled rows."""

    z: np.ndarray
    clamped: np.ndarray
    clamp_labels: np.ndarray | None = None

    def __init__(self, z, clamped=None, clamp_labels=None):
        z = _as_f64(z, 2)
        n = z.shape[0]
        if clamped is None:
            clamped = np.zeros(n, dtype=bool)
        else:
            clamped = np.asarray(clamped, dtype=bool)
        if clamped.shape != (n,):
            raise ValueError(f"clamp mask shape {clamped.shape} for {n} rows")
        if clamp_labels is not None:
            clamp_labels = np.asarray(clamp_labels, dtype=np.int64)
            if clamp_labels.shape != (n,):
                raise ValueError(f"clamp labels shape {clamp_labels.shape} for {n} rows")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "clamped", clamped)
        object.__setattr__(self, "clamp_labels", clamp_labels)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def num_classes(self) -> int:
        return self.z.shape[1]

    def labels(self) -> np.ndarray:
        return np.argmax(self.z, axis=1)


@dataclass(frozen=True)
class GmmState:
    """Class means (M x D) and diagonal variance: shape (D,) when shared
    across classes (the default density), (M, D) when per-class."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __init__(self, mu, sigma2):
        mu = _as_f64(mu, 2)
        sigma2 = np.asarray(sigma2, dtype=np.float64)
        if sigma2.ndim not in (1, 2):
            raise ValueError(f"sigma2 must be 1-d or 2-d, got shape {sigma2.shape}")
        if sigma2.shape[-1] != mu.shape[1]:
            raise ValueError(f"sigma2 shape {sigma2.shape} vs mu shape {mu.shape}")
        if sigma2.ndim == 2 and sigma2.shape[0] != mu.shape[0]:
            raise ValueError(f"per-class sigma2 shape {sigma2.shape} vs mu shape {mu.shape}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def per_class(self) -> bool:
        return self.sigma2.ndim == 2


@dataclass(frozen=True)
class TextPrior:
    """Attribute-averaged text predictions: y_hat is the row softmax of the
    pre-softmax mean similarities s_bar."""

    y_hat: np.ndarray
    s_bar: np.ndarray

    def __init__(self, y_hat, s_bar):
        y_hat = _as_f64(y_hat, 2)
        s_bar = _as_f64(s_bar, 2)
        if y_hat.shape != s_bar.shape:
            raise ValueError(f"y_hat shape {y_hat.shape} vs s_bar shape {s_bar.shape}")
        object.__setattr__(self, "y_hat", y_hat)
        object.__setattr__(self, "s_bar", s_bar)


def _check_finite(name: str, arr: np.ndarray, out: list[str]) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))
        first = tuple(int(v) for v in bad[0])
        out.append(f"{name} has {len(bad)} non-finite entries, first at {first}")


def _validate_features(fm: FeatureMatrix) -> list[str]:
    out: list[str] = []
    if fm.n < 1 or fm.dim < 1:
        out.append(f"empty feature matrix shape {fm.data.shape}")
        return out
    _check_finite("features", fm.data, out)
    norms = np.linalg.norm(fm.data, axis=1)
    for i in np.nonzero(np.abs(norms - 1.0) > ROW_NORM_TOL)[0]:
        out.append(f"row {i} norm {norms[i]:.6g} != 1")
    return out


def _validate_assignments(a: Assignments) -> list[str]:
    out: list[str] = []
    _check_finite("z", a.z, out)
    neg = np.argwhere(a.z < 0)
    for i, j in neg[:20]:
        out.append(f"z[{i},{j}] = {a.z[i, j]:.6g} negative")
    sums = a.z.sum(axis=1)
    for i in np.nonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)[0]:
        out.append(f"row {i} sum {sums[i]:.6g} != 1")
    if np.any(a.clamped):
        if a.clamp_labels is None:
            out.append("clamp mask set but clamp_labels missing")
        else:
            for i in np.nonzero(a.clamped)[0]:
                onehot = np.zeros(a.num_classes)
                onehot[a.clamp_labels[i]] = 1.0
                if not np.array_equal(a.z[i], onehot):
                    out.append(f"clamped row {i} not one-hot of label {a.clamp_labels[i]}")
    return out


def _validate_gmm(g: GmmState) -> list[str]:
    out: list[str] = []
    _check_finite("mu", g.mu, out)
    _check_finite("sigma2", g.sigma2, out)
    low = np.argwhere(np.atleast_2d(g.sigma2) < SIGMA_FLOOR)
    for idx in low[:20]:
        d = int(idx[-1])
        out.append(f"sigma2[{d}] = {np.atleast_2d(g.sigma2)[tuple(idx)]:.6g} below floor {SIGMA_FLOOR}")
    return out


def _validate_prior(p: TextPrior) -> list[str]:
    out: list[str] = []
    _check_finite("s_bar", p.s_bar, out)
    _check_finite("y_hat", p.y_hat, out)
    sums = p.y_hat.sum(axis=1)
    for i in np.nonzero(np.abs(sums - 1.0) > SIMPLEX_TOL)[0]:
        out.append(f"row {i} sum {sums[i]:.6g} != 1")
    nonpos = np.argwhere(p.y_hat <= 0)
    for i, j in nonpos[:20]:
        out.append(f"y_hat[{i},{j}] = {p.y_hat[i, j]:.6g} not strictly positive")
    return out


def _validate_bank(b: AttributeBank) -> list[str]:
    out: list[str] = []
    for j, recs in enumerate(b.attrs):
        if not recs:
            out.append(f"class {j} ({b.classes[j]!r}) has zero attributes")
            continue
        seen: dict[str, int] = {}
        for k, r in enumerate(recs):
            key = normalize_whitespace(r.text)
            if key in seen:
                out.append(f"class {j} duplicate text at {seen[key]} and {k}: {key!r}")
            else:
                seen[key] = k
            norm = float(np.linalg.norm(r.embedding))
            if abs(norm - 1.0) > ROW_NORM_TOL:
                out.append(f"class {j} attribute {k} embedding norm {norm:.6g} != 1")
    return out


def validate(state) -> list[str]:
    """Return every violated invariant of ``state`` (empty list == ok).

    Accepts any of the domain value types; messages carry the offending
    row/column indices.
    """
    if isinstance(state, FeatureMatrix):
        return _validate_features(state)
    if isinstance(state, Assignments):
        return _validate_assignments(state)
    if isinstance(state, GmmState):
        return _validate_gmm(state)
    if isinstance(state, TextPrior):
        return _validate_prior(state)
    if isinstance(state, AttributeBank):
        return _validate_bank(state)
    raise TypeError(f"validate() does not know type {type(state).__name__}")
