"""Local cost functions with exact derivatives, and the housing regression data."""

from __future__ import annotations

import abc
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import huber_newton_terms


class DimensionError(ValueError):
    pass


class DatasetError(ValueError):
    pass


class CostFunction(abc.ABC):
    """Strongly convex C^2 cost on R^dim."""

    dim: int

    @abc.abstractmethod
    def value(self, x: np.ndarray) -> float: ...

    @abc.abstractmethod
    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def hessian(self, x: np.ndarray) -> np.ndarray: ...

    def derivatives(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.gradient(x), self.hessian(x)

    def curvature_bound(self) -> np.ndarray:
        """A matrix M with hessian(x) <= M (Loewner order) for every x."""
        raise NotImplementedError

    def newton_terms(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(H x - grad, H)`` evaluated at ``x``."""
        grad, hess = self.derivatives(x)
        return hess @ x - grad, hess

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionError(f"expected shape ({self.dim},), got {x.shape}")
        return x


class QuadraticCost(CostFunction):
    """f(x) = 1/2 (x - a)^T W (x - a) with W symmetric positive definite."""

    def __init__(self, w, a) -> None:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if w.shape != (a.size, a.size):
            raise DimensionError(f"w has shape {w.shape} but a has length {a.size}")
        if not np.array_equal(w, w.T):
            raise ValueError("w must be symmetric")
        if np.linalg.eigvalsh(w)[0] <= 0:
            raise ValueError("w must be positive definite")
        self.w = w
        self.a = a
        self.dim = a.size

    def value(self, x):
        d = self._check(x) - self.a
        return 0.5 * float(d @ self.w @ d)

    def gradient(self, x):
        return self.w @ (self._check(x) - self.a)

    def hessian(self, x):
        self._check(x)
        return self.w.copy()

    def curvature_bound(self):
        return self.w.copy()

    def __repr__(self) -> str:
        return f"QuadraticCost(w={self.w.tolist()}, a={self.a.tolist()})"


def huber_parts(r: np.ndarray, beta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, first and second derivative of r^2/(|r|+beta) with respect to r."""
    ar = np.abs(r)
    den = ar + beta
    val = r * r / den
    d1 = (r * ar + 2.0 * beta * r) / (den * den)
    d2 = 2.0 * beta * beta / (den * den * den)
    return val, d1, d2


class SmoothHuberRegressionCost(CostFunction):
    """Sum over rows of r^2/(|r|+beta) plus gamma*||w||^2.

    The decision variable stacks the regression weights ``w`` and the
    intercept last, ``r = y - features @ w - intercept``. The ridge term skips
    the intercept unless ``ridge_intercept`` is set.
    """

    def __init__(
        self,
        features,
        targets,
        beta: float = 1.0,
        gamma: float = 1.0,
        ridge_intercept: bool = False,
    ) -> None:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        targets = np.asarray(targets, dtype=float).reshape(-1)
        if features.shape[0] != targets.size:
            raise DimensionError("features and targets disagree on row count")
        if beta <= 0:
            raise ValueError("beta must be positive")
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        self.features = features
        self.targets = targets
        self.beta = float(beta)
        self.gamma = float(gamma)
        self.ridge_intercept = ridge_intercept
        self.design = np.hstack([features, np.ones((features.shape[0], 1))])
        self.dim = features.shape[1] + 1
        mask = np.ones(self.dim)
        if not ridge_intercept:
            mask[-1] = 0.0
        self._ridge = 2.0 * self.gamma * mask

    def _residuals(self, x):
        return self.targets - self.design @ x

    def value(self, x):
        x = self._check(x)
        val, _, _ = huber_parts(self._residuals(x), self.beta)
        return float(val.sum()) + 0.5 * float(self._ridge @ (x * x))

    def gradient(self, x):
        x = self._check(x)
        _, d1, _ = huber_parts(self._residuals(x), self.beta)
        return -self.design.T @ d1 + self._ridge * x

    def hessian(self, x):
        return self.derivatives(x)[1]

    def curvature_bound(self):
        # the per-residual second derivative peaks at 2/beta when r = 0
        m = (2.0 / self.beta) * (self.design.T @ self.design)
        m = 0.5 * (m + m.T)
        m[np.diag_indices_from(m)] += self._ridge
        return m

    def derivatives(self, x):
        _, hess, grad = huber_newton_terms(self.design, self.targets, self.beta, self._ridge, self._check(x))
        return grad, hess

    def newton_terms(self, x):
        newton, hess, _ = huber_newton_terms(self.design, self.targets, self.beta, self._ridge, self._check(x))
        return newton, hess


def total_cost(costs: Sequence[CostFunction]):
    """Value, gradient and Hessian of the sum of ``costs`` as three callables."""

    def value(x):
        return sum(c.value(x) for c in costs)

    def gradient(x):
        return sum(c.gradient(x) for c in costs)

    def hessian(x):
        return sum(c.hessian(x) for c in costs)

    return value, gradient, hessian


def random_quadratics(
    n_agents: int,
    rng: np.random.Generator,
    dim: int = 1,
    w_range: tuple[float, float] = (0.5, 2.0),
    a_range: tuple[float, float] = (-5.0, 5.0),
) -> list[QuadraticCost]:
    """Heterogeneous quadratics; for dim > 1 the curvature is a random rotation of uniform eigenvalues."""
    out = []
    for _ in range(n_agents):
        a = rng.uniform(*a_range, size=dim)
        eig = rng.uniform(*w_range, size=dim)
        if dim == 1:
            w = eig.reshape(1, 1)
        else:
            q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            w = (q * eig) @ q.T
            w = 0.5 * (w + w.T)
        out.append(QuadraticCost(w, a))
    return out


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    source: str = ""

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] != self.targets.shape[0]:
            raise DatasetError("features must be (rows, n_features) matching targets")

    def __len__(self) -> int:
        return self.targets.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def head(self, rows: int) -> "Dataset":
        return Dataset(self.features[:rows], self.targets[:rows], self.source)


def _split(line: str) -> list[str]:
    if "," in line:
        return [c.strip() for c in line.split(",")]
    return line.split()


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv_dataset(
    path: str | Path,
    feature_columns: Sequence[int],
    target_column: int,
    max_rows: int | None = None,
) -> Dataset:
    """Parse a comma- or whitespace-separated numeric file.

    A first line containing any non-numeric cell is treated as a header and
    skipped. Later non-numeric cells are errors that name the line.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    needed = max([*feature_columns, target_column]) if feature_columns else target_column
    feats: list[list[float]] = []
    targets: list[float] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        cells = _split(line)
        if lineno == 1 and not all(_is_float(c) for c in cells):
            continue
        if len(cells) <= needed:
            raise DatasetError(f"{path}:{lineno}: missing column {needed} (row has {len(cells)} cells)")
        try:
            feats.append([float(cells[c]) for c in feature_columns])
            targets.append(float(cells[target_column]))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: non-numeric cell") from None
        if max_rows is not None and len(targets) >= max_rows:
            break
    if not targets:
        raise DatasetError(f"{path}: no data rows")
    return Dataset(
        np.asarray(feats, dtype=float).reshape(len(targets), len(feature_columns)),
        np.asarray(targets, dtype=float),
        str(path),
    )


HOUSING_FEATURES = tuple(range(9))
HOUSING_TARGET = 13


def housing_path() -> Path:
    return Path(str(resources.files("nrconsensus") / "data" / "housing.csv"))


def load_housing(rows: int | None = 500, path: str | Path | None = None) -> Dataset:
    """The first nine housing attributes against median house value, first ``rows`` rows."""
    return load_csv_dataset(path or housing_path(), HOUSING_FEATURES, HOUSING_TARGET, max_rows=rows)


def partition_dataset(d: Dataset, n_agents: int, rng: np.random.Generator, max_resample: int = 1000) -> list[Dataset]:
    """Assign every row to a uniformly random agent, resampling until no agent is empty."""
    m = len(d)
    if n_agents < 1:
        raise ValueError("n_agents must be at least 1")
    if n_agents > m:
        raise DatasetError(f"cannot split {m} rows among {n_agents} agents without empty parts")
    for _ in range(max_resample):
        owner = rng.integers(n_agents, size=m)
        if np.unique(owner).size == n_agents:
            break
    else:
        # guaranteed-cover fallback: one random row per agent, the rest uniform
        owner = rng.integers(n_agents, size=m)
        owner[rng.permutation(m)[:n_agents]] = np.arange(n_agents)
    return [Dataset(d.features[owner == k], d.targets[owner == k], d.source) for k in range(n_agents)]


def huber_costs(parts: Sequence[Dataset], beta: float = 1.0, gamma: float = 1.0, ridge_intercept: bool = False):
    return [SmoothHuberRegressionCost(p.features, p.targets, beta, gamma, ridge_intercept) for p in parts]


def finite_difference_gradient(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        out[k] = (f(x + e) - f(x - e)) / (2 * step)
    return out


def finite_difference_jacobian(g, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((g(x + e) - g(x - e)) / (2 * step))
    return np.column_stack(cols)


def min_eigenvalue(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(m)[0]) if m.size > 1 else float(m.reshape(-1)[0])

