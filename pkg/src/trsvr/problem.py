"""Finite-sum objectives, datasets and the LIBSVM reader.

Every objective here has the form ``f(w) = (1/N) sum_i f_i(w)`` where the
regularizers are folded into each component, so per-sample gradients are
unbiased estimates of the full gradient.

The logistic components are

    f_i(w) = log(1 + exp(-y_i x_i^T w)) + (lam/2) ||w||^2
             + (gamma/d) sum_j (w_j^2 - a^2)^2

with the double-well term switched off (``gamma == 0``) in convex mode.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit


class ObjectiveMode(str, enum.Enum):
    CONVEX = "convex"
    NONCONVEX = "nonconvex"


class LibsvmParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class Dataset:
    """Sparse row-major design matrix with +/-1 labels.

    Stored as a CSR matrix with sorted column indices and no explicit zeros.
    """

    def __init__(self, X, y):
        X = sp.csr_matrix(X, dtype=np.float64)
        X.eliminate_zeros()
        X.sort_indices()
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"dataset needs N >= 1 and d >= 1, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"{y.shape[0]} labels for {X.shape[0]} rows")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be -1 or +1")
        if not np.all(np.isfinite(X.data)):
            raise ValueError("non-finite feature value")
        self.X = X
        self.y = y

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[tuple[int, float]]], labels, n_features: int):
        """Build from per-row ``(index, value)`` lists (0-based, strictly increasing)."""
        indptr = [0]
        indices: list[int] = []
        values: list[float] = []
        for r, row in enumerate(rows):
            prev = -1
            for j, v in row:
                if not prev < j < n_features:
                    raise ValueError(f"row {r}: index {j} out of order or >= d={n_features}")
                prev = j
                if v != 0.0:
                    indices.append(j)
                    values.append(float(v))
            indptr.append(len(indices))
        X = sp.csr_matrix(
            (np.array(values, dtype=np.float64), np.array(indices, dtype=np.int32), np.array(indptr)),
            shape=(len(rows), n_features),
        )
        return cls(X, labels)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    N = n_samples
    d = n_features

    @property
    def rows(self) -> list[list[tuple[int, float]]]:
        X = self.X
        return [
            list(zip(X.indices[X.indptr[i]:X.indptr[i + 1]].tolist(),
                     X.data[X.indptr[i]:X.indptr[i + 1]].tolist()))
            for i in range(X.shape[0])
        ]

    def subset(self, idx) -> "Dataset":
        out = Dataset.__new__(Dataset)
        out.X = self.X[idx]
        out.y = self.y[idx]
        return out

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        a, b = self.X, other.X
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self):
        return f"Dataset(N={self.n_samples}, d={self.n_features}, nnz={self.X.nnz})"


@dataclass(frozen=True)
class ObjectiveSpec:
    """Coefficients of the (possibly double-well regularized) logistic loss."""

    l2_coef: float = 1e-4
    dw_coef: float = 0.0
    dw_center: float = 0.5
    mode: ObjectiveMode = ObjectiveMode.CONVEX

    def __post_init__(self):
        object.__setattr__(self, "mode", ObjectiveMode(self.mode))
        if self.l2_coef < 0 or self.dw_coef < 0:
            raise ValueError("regularization coefficients must be nonnegative")
        if self.mode is ObjectiveMode.CONVEX and self.dw_coef != 0:
            raise ValueError("convex mode requires dw_coef == 0")

    @classmethod
    def convex(cls, l2_coef=1e-4):
        return cls(l2_coef=l2_coef)

    @classmethod
    def nonconvex(cls, l2_coef=1e-4, dw_coef=1e-4, dw_center=0.5):
        return cls(l2_coef, dw_coef, dw_center, ObjectiveMode.NONCONVEX)


@dataclass(frozen=True)
class LipschitzEstimate:
    L: float
    ball_radius: float
    per_component: np.ndarray | None = None


def _check_w(w, d):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (d,):
        raise ValueError(f"expected vector of shape ({d},), got {w.shape}")
    return w


class LogisticProblem:
    """Logistic loss with l2 and optional double-well terms over a Dataset."""

    def __init__(self, spec: ObjectiveSpec, data: Dataset):
        self.spec = spec
        self.data = data

    @property
    def n_samples(self) -> int:
        return self.data.n_samples

    @property
    def dim(self) -> int:
        return self.data.n_features

    def subsample(self, idx) -> "LogisticProblem":
        """The finite sum restricted to ``idx`` (duplicates kept)."""
        return LogisticProblem(self.spec, self.data.subset(np.asarray(idx, dtype=np.intp)))

    # regularizers
    def reg_value(self, w):
        s = self.spec
        val = 0.5 * s.l2_coef * float(w @ w)
        if s.dw_coef:
            val += s.dw_coef / w.shape[0] * float(np.sum((w * w - s.dw_center**2) ** 2))
        return val

    def reg_gradient(self, w):
        s = self.spec
        g = s.l2_coef * w
        if s.dw_coef:
            g = g + (4.0 * s.dw_coef / w.shape[0]) * (w * (w * w - s.dw_center**2))
        return g

    def reg_hvp(self, w, v):
        s = self.spec
        hv = s.l2_coef * v
        if s.dw_coef:
            hv = hv + (4.0 * s.dw_coef / w.shape[0]) * ((3.0 * w * w - s.dw_center**2) * v)
        return hv

    # data term
    def margins(self, w):
        return self.data.X @ w

    def residuals(self, margins):
        """d/dm of log(1 + exp(-y m)), i.e. -y * sigmoid(-y m)."""
        y = self.data.y
        return -y * expit(-y * margins)

    def value(self, w) -> float:
        w = _check_w(w, self.dim)
        m = self.margins(w)
        return float(np.mean(np.logaddexp(0.0, -self.data.y * m))) + self.reg_value(w)

    def gradient(self, w):
        w = _check_w(w, self.dim)
        r = self.residuals(self.margins(w))
        return (self.data.X.T @ r) / self.n_samples + self.reg_gradient(w)

    def hvp(self, w, v):
        """Exact Hessian-vector product of the (sub)problem mean."""
        w = _check_w(w, self.dim)
        v = _check_w(v, self.dim)
        X, y = self.data.X, self.data.y
        p = expit(-y * (X @ w))
        curv = p * (1.0 - p) * (X @ v)
        return (X.T @ curv) / self.n_samples + self.reg_hvp(w, v)

    def _row(self, i):
        if not 0 <= i < self.n_samples:
            raise IndexError(f"sample index {i} out of range [0, {self.n_samples})")
        X = self.data.X
        lo, hi = X.indptr[i], X.indptr[i + 1]
        return X.indices[lo:hi], X.data[lo:hi]

    def component_value(self, i: int, w) -> float:
        w = _check_w(w, self.dim)
        idx, val = self._row(i)
        m = float(val @ w[idx])
        return float(np.logaddexp(0.0, -self.data.y[i] * m)) + self.reg_value(w)

    def component_gradient(self, i: int, w):
        w = _check_w(w, self.dim)
        idx, val = self._row(i)
        yi = self.data.y[i]
        sigma = expit(-yi * float(val @ w[idx]))
        g = self.reg_gradient(w)
        g[idx] += (-yi * sigma) * val
        return g

    def lipschitz(self, ball_radius: float = 10.0) -> LipschitzEstimate:
        """Bound on the component-gradient Lipschitz constant.

        The double-well term has unbounded curvature, so in nonconvex mode the
        bound holds on the infinity-norm ball of radius ``ball_radius``.
        """
        if ball_radius <= 0:
            raise ValueError("ball_radius must be positive")
        s = self.spec
        sq = np.asarray(self.data.X.multiply(self.data.X).sum(axis=1)).ravel()
        per = s.l2_coef + sq / 4.0
        if s.dw_coef:
            a2 = s.dw_center**2
            per = per + 4.0 * s.dw_coef / self.dim * max(3.0 * ball_radius**2 - a2, a2)
        return LipschitzEstimate(float(per.max()), float(ball_radius), per)


class QuadraticProblem:
    """Components ``f_i(x) = 0.5 x^T A_i x - b_i^T x`` with dense symmetric ``A_i``.

    Used for closed-form reference runs; every oracle is exact.
    """

    def __init__(self, A, b=None):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim == 2:
            A = A[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise ValueError("A must have shape (N, d, d)")
        self.A = 0.5 * (A + A.transpose(0, 2, 1))
        self.b = np.zeros(A.shape[:2]) if b is None else np.asarray(b, dtype=np.float64).reshape(A.shape[:2])
        self._A_mean = self.A.mean(axis=0)
        self._b_mean = self.b.mean(axis=0)

    @property
    def n_samples(self):
        return self.A.shape[0]

    @property
    def dim(self):
        return self.A.shape[1]

    def subsample(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return QuadraticProblem(self.A[idx], self.b[idx])

    def value(self, w):
        w = _check_w(w, self.dim)
        return float(0.5 * w @ self._A_mean @ w - self._b_mean @ w)

    def gradient(self, w):
        w = _check_w(w, self.dim)
        return self._A_mean @ w - self._b_mean

    def hvp(self, w, v):
        return self._A_mean @ _check_w(v, self.dim)

    def component_value(self, i, w):
        w = _check_w(w, self.dim)
        return float(0.5 * w @ self.A[i] @ w - self.b[i] @ w)

    def component_gradient(self, i, w):
        return self.A[i] @ _check_w(w, self.dim) - self.b[i]

    def lipschitz(self, ball_radius: float = 10.0) -> LipschitzEstimate:
        per = np.array([np.linalg.norm(a, 2) for a in self.A])
        return LipschitzEstimate(float(per.max()), float(ball_radius), per)

    def minimizer(self):
        return np.linalg.solve(self._A_mean, self._b_mean)


# spec-shaped functional API over (spec, data)

def component_value(spec: ObjectiveSpec, data: Dataset, i: int, w) -> float:
    return LogisticProblem(spec, data).component_value(i, w)


def component_gradient(spec: ObjectiveSpec, data: Dataset, i: int, w):
    return LogisticProblem(spec, data).component_gradient(i, w)


def full_value(spec: ObjectiveSpec, data: Dataset, w) -> float:
    return LogisticProblem(spec, data).value(w)


def full_gradient(spec: ObjectiveSpec, data: Dataset, w):
    return LogisticProblem(spec, data).gradient(w)


def exact_hvp(spec: ObjectiveSpec, data: Dataset, i_set, w, v):
    """Average Hessian-vector product over ``i_set`` (``None`` means all samples)."""
    prob = LogisticProblem(spec, data)
    if i_set is not None:
        prob = prob.subsample(i_set)
    return prob.hvp(w, v)


def lipschitz_bound(spec: ObjectiveSpec, data: Dataset, ball_radius: float = 10.0) -> LipschitzEstimate:
    return LogisticProblem(spec, data).lipschitz(ball_radius)


def generate_synthetic(n_samples: int, n_features: int, condition_number: float, seed: int,
                       max_eigenvalue: float | None = None):
    """Gaussian design with a log-spaced covariance spectrum and logistic labels.

    The covariance is ``Q diag(s) Q^T`` with ``s`` log-spaced from 1 to
    ``condition_number`` and ``Q`` a random rotation. ``max_eigenvalue``
    rescales ``s`` so that its largest entry takes that value. Labels are +1 with probability
    ``sigmoid(x_i^T w_true)`` for a standard-normal ``w_true``.

    Returns ``(dataset, w_true)``.
    """
    if n_features < 2 or n_samples < n_features:
        raise ValueError("need n_samples >= n_features >= 2")
    if condition_number < 1:
        raise ValueError("condition_number must be >= 1")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n_features, n_features)))
    q = q * np.sign(np.diag(r))
    spectrum = np.logspace(0.0, math.log10(condition_number), n_features)
    if max_eigenvalue is not None:
        spectrum *= max_eigenvalue / spectrum[-1]
    z = rng.standard_normal((n_samples, n_features))
    X = (z * np.sqrt(spectrum)) @ q.T
    w_true = rng.standard_normal(n_features)
    p = expit(X @ w_true)
    y = np.where(rng.random(n_samples) < p, 1.0, -1.0)
    return Dataset(sp.csr_matrix(X), y), w_true


def parse_libsvm(stream) -> Dataset:
    """Parse LIBSVM text (``label idx:val ...`` with 1-based ascending indices).

    ``stream`` may be a string or a text file object. Labels 0 are mapped to -1.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    d = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        if label == 0.0:
            label = -1.0
        if label not in (1.0, -1.0):
            raise LibsvmParseError(lineno, f"label {tokens[0]!r} is not one of -1, 0, +1")
        prev = 0
        for tok in tokens[1:]:
            j_str, sep, v_str = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                j, v = int(j_str), float(v_str)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}") from None
            if j <= prev:
                raise LibsvmParseError(lineno, f"index {j} not strictly ascending (previous {prev})")
            if not math.isfinite(v):
                raise LibsvmParseError(lineno, f"non-finite value in {tok!r}")
            prev = j
            if v != 0.0:
                indices.append(j - 1)
                values.append(v)
        d = max(d, prev)
        labels.append(label)
        indptr.append(len(indices))
    if not labels:
        raise ValueError("no samples in LIBSVM input")
    X = sp.csr_matrix(
        (np.array(values, dtype=np.float64), np.array(indices, dtype=np.int32), np.array(indptr)),
        shape=(len(labels), max(d, 1)),
    )
    return Dataset(X, labels)


def load_libsvm(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh)


def dump_libsvm(data: Dataset) -> str:
    """Serialize with shortest round-trip float repr."""
    out = io.StringIO()
    for label, row in zip(data.y, data.rows):
        feats = " ".join(f"{j + 1}:{v!r}" for j, v in row)
        out.write(f"{int(label):+d}" + (" " + feats if feats else "") + "\n")
    return out.getvalue()


def save_libsvm(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_libsvm(data))
