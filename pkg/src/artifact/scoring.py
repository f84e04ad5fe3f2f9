"""Linear scoring models for C&C candidates and for domain similarity.

Features are min-max normalised with the training extrema before an ordinary
least-squares fit, so learned weights (and score thresholds) live on a common
[0, 1] feature scale. At scoring time normalised values are clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

MODEL_HEADER = "artifact-regression-model v1"

FeatureVector = Union[Mapping[str, float], Sequence[float]]


class DegenerateFitError(ValueError):
    """The normalised design matrix is rank deficient."""

    def __init__(self, collinear: Sequence[str]):
        self.collinear = list(collinear)
        super().__init__("singular design matrix; collinear columns: " + ", ".join(self.collinear))


@dataclass
class RegressionModel:
    weights: Dict[str, float]
    intercept: float
    norm_params: Dict[str, Tuple[float, float]]
    defaults: Dict[str, float] = field(default_factory=dict)
    name: str = "model"

    def __post_init__(self):
        for f in self.weights:
            if f not in self.norm_params:
                raise ValueError(f"feature {f!r} has no normalisation range")
            lo, hi = self.norm_params[f]
            if hi < lo:
                raise ValueError(f"feature {f!r}: max below min")

    @property
    def feature_names(self) -> List[str]:
        return list(self.weights)

    def normalize(self, name: str, value: float) -> float:
        lo, hi = self.norm_params[name]
        if hi == lo:
            return 0.0
        x = (value - lo) / (hi - lo)
        return min(max(x, 0.0), 1.0)

    def raw_coefficients(self) -> Tuple[Dict[str, float], float]:
        """Weights and intercept expressed on the unnormalised feature scale."""
        raw = {}
        b = self.intercept
        for f, w in self.weights.items():
            lo, hi = self.norm_params[f]
            span = hi - lo
            raw[f] = w / span if span else 0.0
            b -= raw[f] * lo
        return raw, b

    def save(self, path) -> None:
        lines = [MODEL_HEADER, f"name\t{self.name}", f"intercept\t{self.intercept!r}"]
        for f, w in self.weights.items():
            lo, hi = self.norm_params[f]
            default = self.defaults.get(f)
            lines.append(f"feature\t{f}\t{w!r}\t{lo!r}\t{hi!r}\t{'' if default is None else repr(default)}")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "RegressionModel":
        with open(path, encoding="utf-8") as fh:
            lines = [l.rstrip("\n") for l in fh if l.strip()]
        if not lines or lines[0] != MODEL_HEADER:
            raise ValueError(f"{path}: not a model file (expected header {MODEL_HEADER!r})")
        name, intercept = "model", 0.0
        weights, norm, defaults = {}, {}, {}
        for line in lines[1:]:
            parts = line.split("\t")
            if parts[0] == "name":
                name = parts[1]
            elif parts[0] == "intercept":
                intercept = float(parts[1])
            elif parts[0] == "feature" and len(parts) == 6:
                _, f, w, lo, hi, default = parts
                weights[f] = float(w)
                norm[f] = (float(lo), float(hi))
                if default:
                    defaults[f] = float(default)
            else:
                raise ValueError(f"{path}: unrecognised line {line!r}")
        return cls(weights, intercept, norm, defaults, name)


def _design(samples, feature_names):
    rows = []
    for x, _ in samples:
        if isinstance(x, Mapping):
            rows.append([float(x[f]) for f in feature_names])
        else:
            if len(x) != len(feature_names):
                raise ValueError("feature vector length does not match feature names")
            rows.append([float(v) for v in x])
    return np.asarray(rows, dtype=float)


def fit_ols(samples: Sequence[Tuple[FeatureVector, float]],
            feature_names: Optional[Sequence[str]] = None,
            defaults: Optional[Mapping[str, float]] = None,
            name: str = "model") -> RegressionModel:
    """Least-squares fit of ``label ~ intercept + sum(w_i * normalised_feature_i)``.

    Raises :class:`DegenerateFitError` naming the columns involved when the
    normalised design (with its intercept column) is rank deficient.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    if feature_names is None:
        first = samples[0][0]
        if not isinstance(first, Mapping):
            raise ValueError("feature_names required for sequence feature vectors")
        feature_names = list(first)
    feature_names = list(feature_names)
    if not feature_names:
        raise ValueError("need at least one feature")

    X = _design(samples, feature_names)
    y = np.asarray([float(lbl) for _, lbl in samples])
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    Xn = (X - lo) / span

    if np.all(y == y[0]):
        # constant target: the intercept alone is an exact fit
        weights = np.zeros(len(feature_names))
        intercept = float(y[0])
    else:
        A = np.hstack([Xn, np.ones((len(y), 1))])
        _check_rank(A, feature_names + ["(intercept)"])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        weights, intercept = coef[:-1], float(coef[-1])

    return RegressionModel(
        weights={f: float(w) for f, w in zip(feature_names, weights)},
        intercept=intercept,
        norm_params={f: (float(a), float(b)) for f, a, b in zip(feature_names, lo, hi)},
        defaults=dict(defaults or {}),
        name=name,
    )


def _check_rank(A: np.ndarray, columns: Sequence[str]) -> None:
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    tol = s.max() * max(A.shape) * np.finfo(float).eps if s.size else 0.0
    rank = int((s > tol).sum())
    if rank == A.shape[1]:
        return
    null = vt[rank:]
    involved = [c for j, c in enumerate(columns) if np.any(np.abs(null[:, j]) > 1e-8)]
    raise DegenerateFitError(involved)


def score_domain(model: RegressionModel, features: Mapping[str, float]) -> float:
    """Intercept plus weighted, clamped, normalised features; gaps filled from model defaults."""
    total = model.intercept
    for f, w in model.weights.items():
        v = features.get(f)
        if v is None or (isinstance(v, float) and math.isnan(v)):
            if f not in model.defaults:
                raise KeyError(f"missing feature {f!r} and no default")
            v = model.defaults[f]
        total += w * model.normalize(f, float(v))
    return total


@dataclass(frozen=True)
class Thresholds:
    cc_score_T_c: float = 0.4
    similarity_T_score: float = 0.4
    max_iterations: int = 5

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


# -- LANL-style variant (DNS data, no registration or HTTP features) ---------

IP_PROXIMITY_POINTS = {"none": 0, "ip16": 1, "ip24": 2}


def lanl_similarity_score(connectivity_hosts: int, timing_correlated: bool, ip_proximity: str) -> float:
    """Mean of three [0, 1] components: connectivity, timing correlation, IP proximity."""
    if connectivity_hosts < 1:
        raise ValueError("connectivity_hosts must be at least 1")
    c = min(connectivity_hosts - 1, 9) / 9.0
    t = 1.0 if timing_correlated else 0.0
    p = IP_PROXIMITY_POINTS[ip_proximity] / 2.0
    return (c + t + p) / 3.0


def lanl_detect_cc(automated_pairs: Iterable, window_s: float = 10.0, by: str = "period") -> bool:
    """At least two distinct hosts beaconing to the domain with matching timing.

    ``by`` selects what must agree within ``window_s``: the detected periods
    (``"period"``), the first-connection times (``"start"``), or either.
    """
    if by not in ("period", "start", "either"):
        raise ValueError(f"unknown match mode {by!r}")
    per_host: Dict[str, List] = {}
    for p in automated_pairs:
        per_host.setdefault(p.host, []).append(p)
    hosts = sorted(per_host)
    for i, a in enumerate(hosts):
        for b in hosts[i + 1:]:
            for pa in per_host[a]:
                for pb in per_host[b]:
                    close_period = abs(pa.period - pb.period) <= window_s
                    close_start = abs(pa.first_ts - pb.first_ts) <= window_s
                    if ((by == "period" and close_period) or (by == "start" and close_start)
                            or (by == "either" and (close_period or close_start))):
                        return True
    return False
