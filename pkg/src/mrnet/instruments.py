"""Instrument generation from genotypes, strength screening and validity checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .ci import DEFAULT_ALPHA, CITester, CITestResult
from .data import FeatureMatrix, GenotypeMatrix
from .errors import ConfigError, DataError, InvariantError, NumericalError

F_CAP = 1e12
ORTHO_TOL = 1e-8
ROTATIONS = ("none", "varimax")


@dataclass(frozen=True)
class InstrumentSet:
    samples: tuple[str, ...]
    iv_ids: tuple[str, ...]
    scores: np.ndarray  # (n_samples, n_ivs), standardized
    explained_variance: np.ndarray  # fraction of total genotype variance per IV
    loadings: np.ndarray  # (n_variants, n_ivs), unit-norm columns
    variants: tuple[str, ...] = ()
    rotation: str = "none"

    def __post_init__(self):
        for name in ("scores", "explained_variance", "loadings"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "iv_ids", tuple(self.iv_ids))
        object.__setattr__(self, "variants", tuple(self.variants))
        if self.scores.shape != (len(self.samples), len(self.iv_ids)):
            raise DataError("instrument score shape does not match ids")

    @property
    def n_ivs(self) -> int:
        return len(self.iv_ids)

    @property
    def component_variance(self) -> np.ndarray:
        """Genotype variance carried by each IV (eigenvalues when unrotated)."""
        return self.explained_variance * len(self.variants)

    def column(self, iv_id: str) -> np.ndarray:
        return self.scores[:, self.iv_ids.index(iv_id)]

    def max_abs_correlation(self) -> float:
        if self.n_ivs < 2:
            return 0.0
        c = np.corrcoef(self.scores, rowvar=False)
        np.fill_diagonal(c, 0.0)
        return float(np.abs(c).max())

    def reconstruct(self) -> np.ndarray:
        """Rank-truncated approximation of the standardized genotype matrix."""
        return self.scores @ (self.loadings * np.sqrt(self.component_variance)).T


def standardize_genotype(genotype: GenotypeMatrix) -> np.ndarray:
    x = genotype.values.astype(float)
    x = x - x.mean(axis=0)
    sd = np.sqrt((x ** 2).sum(axis=0) / (x.shape[0] - 1))
    zero = np.flatnonzero(sd <= 0)
    if zero.size:
        raise DataError("zero-variance variant; filter before generating instruments",
                        column=genotype.variants[zero[0]])
    return x / sd


def varimax(loadings: np.ndarray, max_iter: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """Orthogonal varimax rotation matrix for a (p x k) loading matrix."""
    p, k = loadings.shape
    rot = np.eye(k)
    if k < 2:
        return rot
    crit = 0.0
    for _ in range(max_iter):
        lr = loadings @ rot
        u, s, vt = np.linalg.svd(loadings.T @ (lr ** 3 - lr * ((lr ** 2).sum(axis=0) / p)))
        rot = u @ vt
        new = s.sum()
        if crit and new < crit * (1 + tol):
            break
        crit = new
    return rot


def _fix_signs(loadings: np.ndarray, scores: np.ndarray) -> None:
    """Make the largest-magnitude loading of each column positive (in place)."""
    for j in range(loadings.shape[1]):
        i = int(np.argmax(np.abs(loadings[:, j])))
        if loadings[i, j] < 0:
            loadings[:, j] *= -1
            scores[:, j] *= -1


def generate_ivs(
    genotype: GenotypeMatrix,
    max_ivs: int | None = None,
    min_explained_variance: float = 0.001,
    rotation: str = "none",
) -> InstrumentSet:
    """Principal-component instruments from the correlation matrix of the variants.

    Components come back in descending order of explained variance, keeping
    at most ``max_ivs`` (default ``n_samples // 10``) and only those that
    individually explain at least ``min_explained_variance`` of the total.
    Scores are standardized and mutually uncorrelated.

    With ``rotation="varimax"`` the retained components are rotated
    orthogonally toward sparse loadings before being re-sorted. Rotation
    keeps the scores uncorrelated and spans the same subspace, but each
    instrument then concentrates on a few variants, which matters when the
    eigenvalues are nearly tied (e.g. unlinked variants).
    """
    if rotation not in ROTATIONS:
        raise ConfigError(f"unknown rotation {rotation!r}; choose from {ROTATIONS}")
    n, p = genotype.values.shape
    if n < 3 or p < 1:
        raise DataError("need at least 3 samples and 1 variant to generate instruments")
    limit = min(n - 1, p)
    if max_ivs is None:
        max_ivs = min(max(1, n // 10), limit)
    elif max_ivs < 1:
        raise ConfigError("max_ivs must be at least 1")
    elif max_ivs > limit:
        raise ConfigError(f"max_ivs={max_ivs} exceeds min(n_samples - 1, n_variants) = {limit}")
    if not 0.0 <= min_explained_variance < 1.0:
        raise ConfigError("min_explained_variance must lie in [0, 1)")

    x = standardize_genotype(genotype)
    try:
        u, s, vt = np.linalg.svd(x, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"genotype decomposition failed: {exc}") from exc
    eig = s ** 2 / (n - 1)
    explained = eig / p
    usable = (explained >= min_explained_variance) & (eig > 1e-10 * max(eig[0], 1.0))
    k = 0
    while k < min(max_ivs, len(eig)) and usable[k]:
        k += 1
    if k == 0:
        raise NumericalError("no component reaches the explained-variance floor")

    scores = u[:, :k] * math.sqrt(n - 1)
    vectors = vt[:k].T.copy()
    if rotation == "varimax":
        structure = vectors * np.sqrt(eig[:k])
        rot = varimax(structure)
        structure = structure @ rot
        scores = scores @ rot
        var = (structure ** 2).sum(axis=0)
        order = np.argsort(-var, kind="stable")
        var, structure, scores = var[order], structure[:, order], scores[:, order]
        vectors = structure / np.sqrt(var)
        explained_k = var / p
    else:
        explained_k = explained[:k]
    scores = np.ascontiguousarray(scores)
    _fix_signs(vectors, scores)

    width = len(str(k))
    prefix = "RC" if rotation == "varimax" else "PC"
    ivs = InstrumentSet(
        samples=genotype.samples,
        iv_ids=tuple(f"{prefix}{j + 1:0{width}d}" for j in range(k)),
        scores=scores,
        explained_variance=explained_k,
        loadings=vectors,
        variants=genotype.variants,
        rotation=rotation,
    )
    worst = ivs.max_abs_correlation()
    if worst > ORTHO_TOL:
        raise InvariantError(f"generated instruments are correlated (max |r| = {worst:.3g})")
    return ivs


def _strength_from_r(r, n):
    r2 = np.minimum(np.asarray(r, dtype=float) ** 2, 1.0)
    with np.errstate(divide="ignore"):
        f = np.where(r2 >= 1.0 - 1e-15, F_CAP, r2 / np.maximum(1.0 - r2, 1e-300) * (n - 2))
    return np.minimum(f, F_CAP), r2


def instrument_strength(iv, component) -> tuple[float, float]:
    """F statistic and R^2 of the simple regression of ``component`` on ``iv``.

    A perfect instrument reports the capped F of 1e12.
    """
    iv = np.asarray(iv, dtype=float)
    component = np.asarray(component, dtype=float)
    n = len(iv)
    if n < 3:
        raise DataError("instrument strength needs at least 3 samples")
    if len(component) != n:
        raise DataError("instrument and component lengths differ")
    a, b = iv - iv.mean(), component - component.mean()
    denom = math.sqrt((a @ a) * (b @ b))
    r = 0.0 if denom == 0 else float(a @ b) / denom
    f, r2 = _strength_from_r(r, n)
    return float(f), float(r2)


@dataclass(frozen=True)
class AllocatedIV:
    iv: str
    f_statistic: float
    r_squared: float


@dataclass(frozen=True)
class Allocation:
    entries: Mapping[str, tuple[AllocatedIV, ...]]
    uncovered: tuple[str, ...] = ()
    f_threshold: float = 10.0
    max_per_component: int = 5

    def ivs_for(self, component: str) -> tuple[AllocatedIV, ...]:
        return tuple(self.entries.get(component, ()))

    def to_dict(self) -> dict:
        return {c: [{"iv": a.iv, "f": a.f_statistic, "r2": a.r_squared} for a in ivs]
                for c, ivs in sorted(self.entries.items())}

    def coverage_dict(self) -> dict:
        return {"uncovered": list(self.uncovered),
                "n_components": len(self.entries),
                "n_covered": len(self.entries) - len(self.uncovered),
                "f_threshold": self.f_threshold,
                "max_per_component": self.max_per_component}

    @classmethod
    def from_dict(cls, d: Mapping, f_threshold: float = 10.0, max_per_component: int = 5) -> "Allocation":
        entries = {c: tuple(AllocatedIV(e["iv"], float(e["f"]), float(e["r2"])) for e in items)
                   for c, items in d.items()}
        uncovered = tuple(sorted(c for c, v in entries.items() if not v))
        return cls(entries, uncovered, f_threshold, max_per_component)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def allocate(
    ivs: InstrumentSet,
    omics: FeatureMatrix,
    f_threshold: float = 10.0,
    max_per_component: int = 5,
    exclusive: bool = False,
) -> Allocation:
    """Assign to each component its strongest instruments with ``F >= f_threshold``.

    Ties in F are broken by instrument order. Components without any
    qualifying instrument are listed in ``uncovered``.

    With ``exclusive=True`` each component's top list is then reduced to
    the instruments whose strongest association (ties to the earlier
    component) is with that component. An instrument of an upstream component
    is otherwise also strong for everything downstream of it, and such
    borrowed instruments can pass the exclusion check in the wrong direction
    when a confounding path nearly cancels.
    """
    if max_per_component < 1:
        raise ConfigError("max_per_component must be at least 1")
    if tuple(ivs.samples) != tuple(omics.samples):
        from .errors import AlignmentError
        raise AlignmentError("instrument and omic samples are not aligned")
    n = omics.n_samples
    if n < 3:
        raise DataError("allocation needs at least 3 samples")
    s = ivs.scores - ivs.scores.mean(axis=0)
    o = omics.values - omics.values.mean(axis=0)
    denom = np.outer(np.sqrt((s ** 2).sum(axis=0)), np.sqrt((o ** 2).sum(axis=0)))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, (s.T @ o) / denom, 0.0)
    f, r2 = _strength_from_r(r, n)

    home = np.argmax(f, axis=1) if f.shape[1] else np.zeros(0, int)
    entries, uncovered = {}, []
    for j, comp in enumerate(omics.features):
        ok = np.flatnonzero(f[:, j] >= f_threshold)
        ranked = sorted(ok, key=lambda i: (-f[i, j], i))[:max_per_component]
        if exclusive:
            ranked = [i for i in ranked if home[i] == j]
        entries[comp] = tuple(AllocatedIV(ivs.iv_ids[i], float(f[i, j]), float(r2[i, j])) for i in ranked)
        if not ranked:
            uncovered.append(comp)
    return Allocation(entries, tuple(uncovered), f_threshold, max_per_component)


def _z_crit(alpha: float) -> float:
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


@dataclass(frozen=True)
class ValidityResult:
    iv: str
    exposure: str
    response: str
    relevance: CITestResult  # iv vs exposure, marginal
    exclusion: CITestResult  # iv vs response given exposure
    passed: bool

    def margin(self) -> float:
        """Smaller of the two distances (in z units) from the decision boundaries."""
        rel = abs(self.relevance.statistic) - _z_crit(self.relevance.alpha)
        exc = _z_crit(self.exclusion.alpha) - abs(self.exclusion.statistic)
        return min(rel, exc)

    def to_dict(self) -> dict:
        return {"kind": "validity", "iv": self.iv, "exposure": self.exposure,
                "response": self.response, "passed": self.passed,
                "relevance": self.relevance.to_dict(), "exclusion": self.exclusion.to_dict()}


def validity_check(tester: CITester, iv: str, exposure: str, response: str,
                   alpha: float | None = None, extra_sets: Sequence[Sequence[str]] = ()) -> ValidityResult:
    """Check that ``iv`` is usable for testing ``exposure -> response``.

    The instrument must be marginally dependent on the exposure and
    independent of the response once the exposure is conditioned on.

    ``extra_sets`` are further omic sets tried, in order, alongside the
    exposure when the plain exclusion test fails. They can only block
    back-door routes such as ``iv -> exposure <- A -> response``; when the
    response causes the exposure, ``iv -> exposure <- response`` stays open
    under any set containing the exposure, so no extra set can produce a
    false pass.
    """
    if exposure == response:
        raise ValueError("exposure and response must differ")
    rel = tester.test(iv, exposure, (), alpha)
    exc = tester.test(iv, response, (exposure,), alpha)
    if not rel.independent and not exc.independent:
        for extra in extra_sets:
            if exposure in extra or response in extra:
                raise ValueError("extra conditioning sets must not contain the exposure or response")
            trial = tester.test(iv, response, (exposure, *extra), alpha)
            if trial.independent:
                exc = trial
                break
    return ValidityResult(iv, exposure, response, rel, exc, (not rel.independent) and exc.independent)


def validity_filter(iv: str, exposure: str, response: str, data, alpha: float = DEFAULT_ALPHA) -> bool:
    """True when ``iv`` is admissible for testing ``exposure -> response``."""
    tester = data if isinstance(data, CITester) else CITester(data, alpha)
    return validity_check(tester, iv, exposure, response, alpha).passed


def read_instruments(path, variants: Sequence[str] = ()) -> InstrumentSet:
    """Load instrument scores written by :func:`instruments_csv` (loadings are not stored)."""
    from .data import read_matrix_csv
    samples, cols, values = read_matrix_csv(path)
    return InstrumentSet(tuple(samples), tuple(cols), values, np.zeros(len(cols)),
                         np.zeros((0, len(cols))), tuple(variants))


def instruments_csv(ivs: InstrumentSet) -> str:
    from .data import matrix_csv
    return matrix_csv(ivs.samples, ivs.iv_ids, ivs.scores)


def instruments_meta(ivs: InstrumentSet) -> dict:
    return {"iv_ids": list(ivs.iv_ids),
            "explained_variance": [float(v) for v in ivs.explained_variance],
            "rotation": ivs.rotation,
            "n_variants": len(ivs.variants)}
