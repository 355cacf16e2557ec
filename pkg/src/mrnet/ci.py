"""Gaussian conditional-independence testing via partial correlation.

Partial correlations are computed from least-squares residuals (QR of the
conditioning design with an intercept) and tested with Fisher's z
transform. A residual-permutation test serves as a distribution-free check.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConditioningError

DEFAULT_ALPHA = 0.01
R_CLAMP = 1.0 - 1e-12
# QR pivots below this (relative to the largest) mean a rank-deficient design
RANK_TOL = 1e-10


@dataclass(frozen=True)
class CITestResult:
    x: str
    y: str
    cond_set: tuple[str, ...]
    partial_corr: float
    statistic: float
    p_value: float
    independent: bool
    n_eff: int
    alpha: float = DEFAULT_ALPHA

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cond_set"] = list(self.cond_set)
        return d

    def key(self) -> tuple:
        return (self.x, self.y, self.cond_set)


class FisherZ(NamedTuple):
    statistic: float
    p_value: float
    independent: bool


class DataColumns(Mapping):
    """Named, equal-length numeric columns backed by one matrix.

    ``kinds`` tags each column (``"omic"``, ``"iv"``, ``"outcome"``) so that
    callers can enforce which columns may enter a conditioning set.
    """

    def __init__(self, names: Sequence[str], matrix: np.ndarray, kinds: Mapping[str, str] | None = None):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != len(names):
            raise ValueError("matrix columns must match names")
        self.names = tuple(names)
        self.index = {n: i for i, n in enumerate(self.names)}
        if len(self.index) != len(self.names):
            raise ValueError("duplicate column names")
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self.kinds = dict(kinds or {})

    @classmethod
    def from_dataset(cls, dataset, ivs=None) -> "DataColumns":
        names = list(dataset.omics.features)
        blocks = [dataset.omics.values]
        kinds = {n: "omic" for n in names}
        if dataset.outcome is not None:
            names += list(dataset.outcome.features)
            blocks.append(dataset.outcome.values)
            kinds[dataset.outcome.features[0]] = "outcome"
        if ivs is not None:
            if tuple(ivs.samples) != tuple(dataset.samples):
                from .errors import AlignmentError
                raise AlignmentError("instrument samples do not match dataset samples")
            names += list(ivs.iv_ids)
            blocks.append(ivs.scores)
            kinds.update({n: "iv" for n in ivs.iv_ids})
        return cls(names, np.column_stack(blocks), kinds)

    @classmethod
    def from_dict(cls, columns: Mapping[str, Iterable[float]]) -> "DataColumns":
        names = list(columns)
        return cls(names, np.column_stack([np.asarray(columns[n], dtype=float) for n in names]))

    def __getitem__(self, name):
        return self.matrix[:, self.index[name]]

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]


def _as_columns(data) -> DataColumns:
    return data if isinstance(data, DataColumns) else DataColumns.from_dict(data)


def _check_args(n: int, x, y, cond_set) -> None:
    if x == y:
        raise ValueError("x and y must differ")
    if x in cond_set or y in cond_set:
        raise ValueError("x and y must not be in the conditioning set")
    if n - len(cond_set) - 3 < 1:
        raise ConditioningError(
            f"{n} samples leave no degrees of freedom for a conditioning set of size {len(cond_set)}")


def _residuals(targets: np.ndarray, conditioners: np.ndarray | None) -> np.ndarray:
    """Residuals of ``targets`` (n x k) after regression on an intercept plus ``conditioners``."""
    targets = targets - targets.mean(axis=0)
    if conditioners is None or conditioners.shape[1] == 0:
        return targets
    z = conditioners - conditioners.mean(axis=0)
    q, r = np.linalg.qr(z)
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOL * max(diag.max(), 1e-300):
        raise ConditioningError("conditioning design matrix is rank deficient")
    return targets - q @ (q.T @ targets)


def _corr_of_residuals(rx: np.ndarray, ry: np.ndarray, sx: float, sy: float) -> float:
    nx, ny = math.sqrt(rx @ rx), math.sqrt(ry @ ry)
    # a variable fully determined by the conditioning set is constant given it
    if nx <= 1e-10 * sx or ny <= 1e-10 * sy:
        return 0.0
    r = float(rx @ ry) / (nx * ny)
    return max(-1.0, min(1.0, r))


def partial_correlation(data, x: str, y: str, cond_set: Sequence[str] = ()) -> float:
    """Correlation of the residuals of ``x`` and ``y`` regressed on ``cond_set``.

    With an empty conditioning set this is the Pearson correlation.

    Raises
    ------
    ConditioningError
        If the conditioning design is rank deficient or leaves fewer than one
        degree of freedom for the Fisher z statistic.
    """
    cols = _as_columns(data)
    cond_set = tuple(cond_set)
    _check_args(cols.n_samples, x, y, cond_set)
    m = cols.matrix
    xy = m[:, [cols.index[x], cols.index[y]]]
    z = m[:, [cols.index[c] for c in cond_set]] if cond_set else None
    res = _residuals(xy, z)
    scale = np.sqrt(((xy - xy.mean(axis=0)) ** 2).sum(axis=0))
    return _corr_of_residuals(res[:, 0], res[:, 1], scale[0], scale[1])


def fisher_z_test(r: float, n: int, s_size: int, alpha: float = DEFAULT_ALPHA) -> FisherZ:
    """Two-sided Fisher z test of a (partial) correlation.

    ``|r|`` at or beyond ``1 - 1e-12`` is treated as exact dependence
    (p-value 0) instead of overflowing ``atanh``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    dof = n - s_size - 3
    if dof < 1:
        raise ConditioningError(f"n={n} too small for conditioning set size {s_size}")
    clamped = max(-R_CLAMP, min(R_CLAMP, r))
    statistic = math.sqrt(dof) * math.atanh(clamped)
    if abs(r) >= R_CLAMP:
        return FisherZ(statistic, 0.0, False)
    p_value = math.erfc(abs(statistic) / math.sqrt(2.0))
    p_value = min(1.0, max(0.0, p_value))
    return FisherZ(statistic, p_value, p_value > alpha)


def permutation_ci_test(
    data,
    x: str,
    y: str,
    cond_set: Sequence[str] = (),
    n_perm: int = 1000,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
) -> CITestResult:
    """Residual-permutation test of ``x`` independent of ``y`` given ``cond_set``.

    The residuals of ``x`` are permuted; the p-value is
    ``(1 + #{|r_perm| >= |r_obs|}) / (1 + n_perm)``. ``statistic`` holds the
    observed partial correlation.
    """
    if n_perm < 200:
        raise ValueError("n_perm must be at least 200")
    cols = _as_columns(data)
    cond_set = tuple(cond_set)
    n = cols.n_samples
    _check_args(n, x, y, cond_set)
    m = cols.matrix
    xy = m[:, [cols.index[x], cols.index[y]]]
    z = m[:, [cols.index[c] for c in cond_set]] if cond_set else None
    res = _residuals(xy, z)
    rx, ry = res[:, 0], res[:, 1]
    scale = np.sqrt(((xy - xy.mean(axis=0)) ** 2).sum(axis=0))
    observed = _corr_of_residuals(rx, ry, scale[0], scale[1])
    denom = math.sqrt(rx @ rx) * math.sqrt(ry @ ry)
    rng = np.random.default_rng(seed)
    hits = 0
    chunk = max(1, min(n_perm, 2_000_000 // max(n, 1)))
    done = 0
    while done < n_perm:
        k = min(chunk, n_perm - done)
        perms = rng.permuted(np.broadcast_to(rx, (k, n)), axis=1)
        rp = np.abs(perms @ ry) / denom if denom > 0 else np.zeros(k)
        # tolerance guards against ties broken by rounding
        hits += int(np.count_nonzero(rp >= abs(observed) - 1e-12))
        done += k
    p_value = (1 + hits) / (1 + n_perm)
    return CITestResult(x, y, cond_set, observed, observed, p_value, p_value > alpha,
                        n - len(cond_set) - 3, alpha)


class CITester:
    """Cached Fisher-z tester over a fixed set of columns, with an audit log.

    Results are keyed by the unordered pair and the sorted conditioning set,
    so ``test(x, y, S)`` and ``test(y, x, S)`` share one computation. The
    audit log lists each distinct test once, ordered by key, independent of
    the order (or thread) in which tests were requested.
    """

    def __init__(self, columns, alpha: float = DEFAULT_ALPHA):
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.columns = _as_columns(columns)
        self.alpha = alpha
        self._cache: dict[tuple, CITestResult] = {}
        self._lock = threading.Lock()

    @property
    def n_samples(self) -> int:
        return self.columns.n_samples

    def test(self, x: str, y: str, cond_set: Iterable[str] = (), alpha: float | None = None) -> CITestResult:
        alpha = self.alpha if alpha is None else alpha
        s = tuple(sorted(cond_set))
        a, b = (x, y) if x <= y else (y, x)
        key = (a, b, s, alpha)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            r = partial_correlation(self.columns, a, b, s)
            fz = fisher_z_test(r, self.n_samples, len(s), alpha)
            hit = CITestResult(a, b, s, r, fz.statistic, fz.p_value, fz.independent,
                               self.n_samples - len(s) - 3, alpha)
            with self._lock:
                hit = self._cache.setdefault(key, hit)
        if hit.x != x:
            hit = replace(hit, x=x, y=y)
        return hit

    def independent(self, x: str, y: str, cond_set: Iterable[str] = (), alpha: float | None = None) -> bool:
        return self.test(x, y, cond_set, alpha).independent

    def audit(self) -> list[CITestResult]:
        with self._lock:
            items = sorted(self._cache.items(), key=lambda kv: kv[0])
        return [v for _, v in items]

    def audit_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.audit())
