"""Probability kernel: cdf/pdf/quantile/sampling for the distribution families
used by the interval constructors, plus the noncentral t.

All functions are pure; randomness is isolated in :class:`RngStream`, a value
object whose (seed, stream_id) pair fully determines the draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "ParameterDomainError",
    "DistSpec",
    "RngStream",
    "cdf",
    "pdf",
    "quantile",
    "sample",
    "noncentral_t_cdf",
    "noncentral_t_quantile",
]


class ParameterDomainError(ValueError):
    """A distribution parameter or function argument is outside its domain."""


FAMILIES = (
    "normal",
    "student_t",
    "noncentral_t",
    "chi_square",
    "f",
    "gamma",
    "exponential",
    "poisson",
    "binomial",
    "weibull",
)

DISCRETE_FAMILIES = ("poisson", "binomial")


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterDomainError(msg)


@dataclass(frozen=True)
class DistSpec:
    """Tagged distribution descriptor.

    Parameter conventions:
      normal(mean, sd); student_t(df); noncentral_t(df, nc);
      chi_square(df); f(df1, df2), non-integer df permitted;
      gamma(shape, scale); exponential(mean);
      poisson(lam); binomial(n, p); weibull(shape, scale).
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        _require(self.family in FAMILIES, f"unknown family {self.family!r}")
        p = self.params
        fam = self.family
        if fam == "normal":
            _require(p["sd"] > 0, "normal sd must be > 0")
        elif fam == "student_t":
            _require(p["df"] > 0, "t df must be > 0")
        elif fam == "noncentral_t":
            _require(p["df"] > 0, "noncentral t df must be > 0")
            _require(math.isfinite(p["nc"]), "noncentrality must be finite")
        elif fam == "chi_square":
            _require(p["df"] > 0, "chi-square df must be > 0")
        elif fam == "f":
            _require(p["df1"] > 0 and p["df2"] > 0, "F df must be > 0")
        elif fam == "gamma":
            _require(p["shape"] > 0 and p["scale"] > 0, "gamma shape/scale must be > 0")
        elif fam == "exponential":
            _require(p["mean"] > 0, "exponential mean must be > 0")
        elif fam == "poisson":
            _require(p["lam"] > 0, "poisson rate must be > 0")
        elif fam == "binomial":
            _require(int(p["n"]) == p["n"] and p["n"] >= 1, "binomial n must be integer >= 1")
            _require(0.0 <= p["p"] <= 1.0, "binomial p must be in [0,1]")
        elif fam == "weibull":
            _require(p["shape"] > 0 and p["scale"] > 0, "weibull shape/scale must be > 0")

    @property
    def is_discrete(self) -> bool:
        return self.family in DISCRETE_FAMILIES

    def _frozen(self):
        p = self.params
        fam = self.family
        if fam == "normal":
            return stats.norm(p["mean"], p["sd"])
        if fam == "student_t":
            return stats.t(p["df"])
        if fam == "noncentral_t":
            return stats.nct(p["df"], p["nc"])
        if fam == "chi_square":
            return stats.chi2(p["df"])
        if fam == "f":
            return stats.f(p["df1"], p["df2"])
        if fam == "gamma":
            return stats.gamma(p["shape"], scale=p["scale"])
        if fam == "exponential":
            return stats.expon(scale=p["mean"])
        if fam == "poisson":
            return stats.poisson(p["lam"])
        if fam == "binomial":
            return stats.binom(int(p["n"]), p["p"])
        if fam == "weibull":
            return stats.weibull_min(p["shape"], scale=p["scale"])
        raise ParameterDomainError(fam)


# convenience constructors

def normal(mean: float, sd: float) -> DistSpec:
    return DistSpec("normal", {"mean": mean, "sd": sd})


def gamma(shape: float, scale: float) -> DistSpec:
    return DistSpec("gamma", {"shape": shape, "scale": scale})


def exponential(mean: float) -> DistSpec:
    return DistSpec("exponential", {"mean": mean})


def f_dist(df1: float, df2: float) -> DistSpec:
    return DistSpec("f", {"df1": df1, "df2": df2})


def weibull(shape: float, scale: float) -> DistSpec:
    return DistSpec("weibull", {"shape": shape, "scale": scale})


def cdf(spec: DistSpec, x) -> float | np.ndarray:
    """Cumulative distribution function, vectorized over ``x``."""
    return spec._frozen().cdf(x)


def pdf(spec: DistSpec, x) -> float | np.ndarray:
    """Density (or pmf for discrete families)."""
    fr = spec._frozen()
    return fr.pmf(x) if spec.is_discrete else fr.pdf(x)


def quantile(spec: DistSpec, p) -> float | np.ndarray:
    """Inverse cdf; for discrete families, the smallest x with cdf(x) >= p."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ParameterDomainError("quantile probability must be in (0,1)")
    out = spec._frozen().ppf(p)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (seed, stream_id).

    Distinct stream_ids yield statistically independent substreams
    (numpy SeedSequence spawning keys).
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.seed, self.stream_id)))

    def substream(self, idx: int) -> "RngStream":
        # flat keying: (seed, stream_id) pairs never collide across substreams
        return RngStream(self.seed, self.stream_id * 1_000_003 + idx + 1)

    def uniforms(self, count: int) -> np.ndarray:
        return self.generator().random(count)


def sample(spec: DistSpec, rng: RngStream, count: int) -> np.ndarray:
    """Draw ``count`` variates; identical (seed, stream_id) reproduce draws.

    Exponential draws use inversion (-mean*log(U)) so they line up with the
    stream's uniforms; other families use the generator's native samplers.
    """
    if count < 0:
        raise ParameterDomainError("count must be >= 0")
    if count == 0:
        return np.empty(0)
    gen = rng.generator()
    p = spec.params
    fam = spec.family
    if fam == "exponential":
        return -p["mean"] * np.log(gen.random(count))
    if fam == "gamma":
        return gen.gamma(p["shape"], p["scale"], size=count)
    if fam == "normal":
        return gen.normal(p["mean"], p["sd"], size=count)
    if fam == "poisson":
        return gen.poisson(p["lam"], size=count).astype(float)
    if fam == "binomial":
        return gen.binomial(int(p["n"]), p["p"], size=count).astype(float)
    if fam == "weibull":
        return p["scale"] * gen.weibull(p["shape"], size=count)
    # remaining families via inversion of uniforms
    return np.asarray(quantile(spec, gen.random(count)))


def noncentral_t_cdf(x, df: float, nc: float) -> float | np.ndarray:
    """Noncentral-t cdf; reduces exactly to the central t at nc=0."""
    if df <= 0:
        raise ParameterDomainError("df must be > 0")
    if nc == 0.0:
        return stats.t.cdf(x, df)
    return stats.nct.cdf(x, df, nc)


def noncentral_t_quantile(p, df: float, nc: float) -> float | np.ndarray:
    """Inverse of :func:`noncentral_t_cdf`."""
    if df <= 0:
        raise ParameterDomainError("df must be > 0")
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ParameterDomainError("probability must be in (0,1)")
    if nc == 0.0:
        out = stats.t.ppf(p, df)
    else:
        out = stats.nct.ppf(p, df, nc)
    return float(out) if out.ndim == 0 else out
