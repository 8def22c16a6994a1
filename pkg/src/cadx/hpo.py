"""Search spaces, random search and a Tree-structured Parzen Estimator.

TPE splits the evaluated trials into a "good" group (the best
``ceil(quantile_gamma * n)`` losses) and the rest, builds one density per
group and per dimension, draws candidates from the good density and keeps
the one with the largest good/bad density ratio.  Densities factorise over
dimensions:

* continuous dims (uniform, log-uniform in log space, integer on the
  half-open cells around each integer) use a mixture of Gaussians
  truncated to the domain, one per observation, plus one uniform
  component weighted like a single pseudo-observation;
* categorical dims use add-one smoothed category frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .utils import format_float

UNIFORM = "uniform"
LOG_UNIFORM = "log-uniform"
INTEGER = "integer"
CATEGORICAL = "categorical"
_KINDS = (UNIFORM, LOG_UNIFORM, INTEGER, CATEGORICAL)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kind {self.kind!r} for {self.name}")
        if self.kind == CATEGORICAL:
            if not self.choices:
                raise ValueError(f"{self.name}: categorical choices must be non-empty")
            object.__setattr__(self, "choices", tuple(self.choices))
        elif self.kind == INTEGER:
            if int(self.low) != self.low or int(self.high) != self.high or self.low > self.high:
                raise ValueError(f"{self.name}: integer bounds must satisfy low <= high, got {self.low}, {self.high}")
            object.__setattr__(self, "low", int(self.low))
            object.__setattr__(self, "high", int(self.high))
        else:
            if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
                raise ValueError(f"{self.name}: need finite low < high, got {self.low}, {self.high}")
            if self.kind == LOG_UNIFORM and self.low <= 0:
                raise ValueError(f"{self.name}: log-uniform bounds must be positive")

    @classmethod
    def uniform(cls, name, low, high):
        return cls(name, UNIFORM, float(low), float(high))

    @classmethod
    def log_uniform(cls, name, low, high):
        return cls(name, LOG_UNIFORM, float(low), float(high))

    @classmethod
    def integer(cls, name, low, high):
        return cls(name, INTEGER, low, high)

    @classmethod
    def categorical(cls, name, choices):
        return cls(name, CATEGORICAL, choices=tuple(choices))

    def contains(self, value) -> bool:
        if self.kind == CATEGORICAL:
            return value in self.choices
        if self.kind == INTEGER:
            return int(value) == value and self.low <= value <= self.high
        return self.low <= value <= self.high

    # internal continuous coordinates: [lo, hi] in which a density lives
    def _bounds(self) -> tuple[float, float]:
        if self.kind == LOG_UNIFORM:
            return math.log(self.low), math.log(self.high)
        if self.kind == INTEGER:
            return self.low - 0.5, self.high + 0.5
        return self.low, self.high

    def _to_internal(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return np.log(v) if self.kind == LOG_UNIFORM else v

    def _from_internal(self, u: float):
        if self.kind == LOG_UNIFORM:
            return float(min(max(math.exp(u), self.low), self.high))
        if self.kind == INTEGER:
            return int(min(max(math.floor(u + 0.5), self.low), self.high))
        return float(min(max(u, self.low), self.high))


class ParamSpace:
    """Ordered collection of :class:`ParamSpec` with unique names."""

    def __init__(self, specs: Sequence[ParamSpec]):
        self.specs = tuple(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.specs]

    def __iter__(self):
        return iter(self.specs)

    def __len__(self):
        return len(self.specs)

    def __add__(self, other: "ParamSpace") -> "ParamSpace":
        return ParamSpace(self.specs + other.specs)

    def __getitem__(self, name) -> ParamSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise KeyError(name)

    def contains(self, point: dict) -> bool:
        return set(point) == set(self.names) and all(s.contains(point[s.name]) for s in self.specs)

    def to_dict(self) -> list[dict]:
        out = []
        for s in self.specs:
            d = {"name": s.name, "kind": s.kind}
            if s.kind == CATEGORICAL:
                d["choices"] = list(s.choices)
            else:
                d["low"], d["high"] = s.low, s.high
            out.append(d)
        return out

    @classmethod
    def from_dict(cls, items) -> "ParamSpace":
        return cls([ParamSpec(d["name"], d["kind"], d.get("low"), d.get("high"), tuple(d.get("choices", ())))
                    for d in items])


def svm_space() -> ParamSpace:
    return ParamSpace([
        ParamSpec.log_uniform("C", 1e-5, 1e5),
        ParamSpec.log_uniform("gamma_rbf", 1e-5, 1e5),
    ])


def xgboost_space() -> ParamSpace:
    return ParamSpace([
        ParamSpec.uniform("eta", 0.2, 0.6),
        ParamSpec.integer("max_depth", 1, 13),
        ParamSpec.integer("min_child_weight", 1, 10),
        ParamSpec.uniform("gamma", 0.0, 1.0),
        ParamSpec.log_uniform("learning_rate", 1e-4, 1e-1),
    ])


def lbp_space() -> ParamSpace:
    return ParamSpace([
        ParamSpec.categorical("R", (7, 8)),
        ParamSpec.categorical("P", (40, 48)),
    ])


def full_space(classifier: str) -> ParamSpace:
    """Classifier dimensions followed by the LBP-TOP ``R``/``P`` dimensions."""
    if classifier == "svm":
        return svm_space() + lbp_space()
    if classifier == "xgboost":
        return xgboost_space() + lbp_space()
    raise ValueError(f"unknown classifier {classifier!r}")


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    point: dict
    loss: float


@dataclass(frozen=True)
class TpeConfig:
    quantile_gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24

    def __post_init__(self):
        if not 0 < self.quantile_gamma < 1:
            raise ValueError(f"quantile_gamma must be in (0, 1), got {self.quantile_gamma}")
        if self.n_startup < 1 or self.n_candidates < 1:
            raise ValueError("n_startup and n_candidates must be >= 1")


@dataclass
class SearchResult:
    history: list[TrialRecord] = field(default_factory=list)

    @property
    def best(self) -> TrialRecord:
        return min(self.history, key=lambda r: r.loss)

    def running_best(self) -> list[float]:
        return list(np.minimum.accumulate([r.loss for r in self.history]))


# ----------------------------------------------------------- random search


def _sample_spec(spec: ParamSpec, rng: np.random.Generator):
    if spec.kind == UNIFORM:
        return float(rng.uniform(spec.low, spec.high))
    if spec.kind == LOG_UNIFORM:
        return float(min(max(math.exp(rng.uniform(math.log(spec.low), math.log(spec.high))), spec.low), spec.high))
    if spec.kind == INTEGER:
        return int(rng.integers(spec.low, spec.high, endpoint=True))
    return spec.choices[int(rng.integers(len(spec.choices)))]


def sample_random(space: ParamSpace, rng: np.random.Generator) -> dict:
    return {spec.name: _sample_spec(spec, rng) for spec in space}


# ---------------------------------------------------------------------- TPE


class _Parzen:
    """Truncated-Gaussian mixture plus a uniform component on ``[lo, hi]``."""

    def __init__(self, obs: np.ndarray, lo: float, hi: float):
        self.lo, self.hi = lo, hi
        width = hi - lo
        self.mu = np.sort(np.asarray(obs, dtype=np.float64))
        n = len(self.mu)
        if n == 0:
            self.sigma = np.empty(0)
        else:
            # domain ends count as neighbours so edge observations keep exploring outward
            gaps = np.diff(np.concatenate([[lo], self.mu, [hi]]))
            self.sigma = np.maximum(gaps[:-1], gaps[1:])
        # the floor shrinks with the number of observations, down to 1% of the range
        self.sigma = np.clip(self.sigma, width / min(100.0, n + 1.0), width)
        self.weights = np.full(n + 1, 1.0 / (n + 1))  # last entry: uniform prior
        self._za = ndtr((lo - self.mu) / self.sigma)
        self._zb = ndtr((hi - self.mu) / self.sigma)
        self._mass = np.maximum(self._zb - self._za, 1e-300)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        u = rng.uniform(size=size)
        out = np.empty(size)
        prior = comp == len(self.mu)
        out[prior] = self.lo + u[prior] * (self.hi - self.lo)
        k = comp[~prior]
        if len(k):
            q = self._za[k] + u[~prior] * self._mass[k]
            q = np.clip(q, 1e-16, 1 - 1e-16)
            out[~prior] = self.mu[k] + self.sigma[k] * ndtri(q)
        return np.clip(out, self.lo, self.hi)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, None]
        comp = (ndtr((x - self.mu) / self.sigma) - self._za) / self._mass
        comp = np.clip(comp, 0.0, 1.0)
        uni = np.clip((x[:, 0] - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return comp @ self.weights[:-1] + self.weights[-1] * uni

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[:, None]
        z = (x - self.mu) / self.sigma
        comp = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigma * self._mass)
        dens = comp @ self.weights[:-1] + self.weights[-1] / (self.hi - self.lo)
        return np.log(dens)


def _log_density_cont(spec: ParamSpec, obs, values) -> np.ndarray:
    lo, hi = spec._bounds()
    parzen = _Parzen(spec._to_internal(obs), lo, hi)
    x = spec._to_internal(values)
    if spec.kind == INTEGER:
        mass = parzen.cdf(np.minimum(x + 0.5, hi)) - parzen.cdf(np.maximum(x - 0.5, lo))
        return np.log(np.maximum(mass, 1e-300))
    return parzen.log_pdf(x)


def _cat_probs(spec: ParamSpec, obs) -> np.ndarray:
    counts = np.ones(len(spec.choices))
    for v in obs:
        counts[spec.choices.index(v)] += 1
    return counts / counts.sum()


def tpe_suggest(space: ParamSpace, history: Sequence[TrialRecord], cfg: TpeConfig,
                rng: np.random.Generator) -> dict:
    """Propose the next point given the evaluated ``history``."""
    if len(history) < cfg.n_startup:
        return sample_random(space, rng)
    finite = sorted((r for r in history if math.isfinite(r.loss)), key=lambda r: (r.loss, r.trial_index))
    n_good = min(math.ceil(cfg.quantile_gamma * len(history)), len(finite))
    if n_good == 0:
        return sample_random(space, rng)
    good_ids = {r.trial_index for r in finite[:n_good]}
    good = [r.point for r in history if r.trial_index in good_ids]
    bad = [r.point for r in history if r.trial_index not in good_ids]

    n = cfg.n_candidates
    candidates: dict[str, list] = {}
    score = np.zeros(n)
    for spec in space:
        g_obs = [p[spec.name] for p in good]
        b_obs = [p[spec.name] for p in bad]
        if spec.kind == CATEGORICAL:
            pl, pg = _cat_probs(spec, g_obs), _cat_probs(spec, b_obs)
            idx = rng.choice(len(spec.choices), size=n, p=pl)
            candidates[spec.name] = [spec.choices[i] for i in idx]
            score += np.log(pl[idx]) - np.log(pg[idx])
        else:
            lo, hi = spec._bounds()
            draws = _Parzen(spec._to_internal(g_obs), lo, hi).sample(rng, n)
            values = [spec._from_internal(u) for u in draws]
            candidates[spec.name] = values
            score += _log_density_cont(spec, g_obs, values) - _log_density_cont(spec, b_obs, values)
    best = int(np.argmax(score))
    return {spec.name: candidates[spec.name][best] for spec in space}


# ------------------------------------------------------------------ driver


def run_search(objective: Callable[[dict], float], space: ParamSpace, n_trials: int,
               method: str = "tpe", cfg: TpeConfig = TpeConfig(),
               rng: np.random.Generator | int | None = None) -> SearchResult:
    """Evaluate ``n_trials`` points proposed by random search or TPE.

    Non-finite objective values are stored as ``+inf`` and never enter the
    TPE good group.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if method not in ("random", "tpe"):
        raise ValueError(f"method must be 'random' or 'tpe', got {method!r}")
    rng = np.random.default_rng(rng)
    result = SearchResult()
    for t in range(n_trials):
        if method == "tpe":
            point = tpe_suggest(space, result.history, cfg, rng)
        else:
            point = sample_random(space, rng)
        loss = float(objective(point))
        if not math.isfinite(loss):
            loss = math.inf
        result.history.append(TrialRecord(t, point, loss))
    return result


def trial_log_csv(result: SearchResult, space: ParamSpace) -> str:
    lines = [",".join(["trial_index", "loss", *space.names])]
    for r in result.history:
        vals = []
        for spec in space:
            v = r.point[spec.name]
            vals.append(format_float(v) if isinstance(v, float) else str(v))
        lines.append(",".join([str(r.trial_index), format_float(r.loss), *vals]))
    return "\n".join(lines) + "\n"

