"""Vehicle-to-cloud latency models.

Parametric latency distributions (Gamma, Normal, Nakagami, Rayleigh) with
pdf/sampling, maximum-likelihood fitting and SSE-based family ranking, plus
a queueing-theoretic end-to-end latency generator for a 5G link
(M/M/1 radio access with one HARQ retransmission, followed by core-network
node delays).

All latencies are in milliseconds.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy import special

from .errors import (
    ConfigurationError,
    FitDegenerateError,
    ParameterDomainError,
    StabilityError,
)

MIN_FIT_SAMPLES = 100


class Family(str, enum.Enum):
    GAMMA = "gamma"
    NORMAL = "normal"
    NAKAGAMI = "nakagami"
    RAYLEIGH = "rayleigh"


# enumeration order doubles as the ranking tie-break
FAMILIES = (Family.GAMMA, Family.NORMAL, Family.NAKAGAMI, Family.RAYLEIGH)

_PARAM_NAMES = {
    Family.GAMMA: ("shape", "scale"),
    Family.NORMAL: ("mean", "std"),
    Family.NAKAGAMI: ("shape", "spread"),
    Family.RAYLEIGH: ("scale",),
}


@dataclass(frozen=True)
class DistributionSpec:
    """A parameterized latency distribution.

    Parameters are keyed by name:

    ============ =====================================
    gamma        ``shape`` (k), ``scale`` (theta, ms)
    normal       ``mean`` (ms), ``std`` (ms)
    nakagami     ``shape`` (m >= 0.5), ``spread`` (Omega, ms^2)
    rayleigh     ``scale`` (sigma, ms)
    ============ =====================================
    """

    family: Family
    params: Mapping[str, float]

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        expected = _PARAM_NAMES[family]
        if set(self.params) != set(expected):
            raise ParameterDomainError(
                f"{family.value} expects parameters {expected}, got {tuple(self.params)}"
            )
        params = {name: float(self.params[name]) for name in expected}
        for name, value in params.items():
            if not (math.isfinite(value) and value > 0):
                raise ParameterDomainError(
                    f"{family.value} parameter {name} must be positive, got {value}"
                )
        if family is Family.NAKAGAMI and params["shape"] < 0.5:
            raise ParameterDomainError(
                f"nakagami shape must be >= 0.5, got {params['shape']}"
            )
        object.__setattr__(self, "params", params)

    @classmethod
    def gamma(cls, shape, scale):
        return cls(Family.GAMMA, {"shape": shape, "scale": scale})

    @classmethod
    def normal(cls, mean, std):
        return cls(Family.NORMAL, {"mean": mean, "std": std})

    @classmethod
    def nakagami(cls, shape, spread):
        return cls(Family.NAKAGAMI, {"shape": shape, "spread": spread})

    @classmethod
    def rayleigh(cls, scale):
        return cls(Family.RAYLEIGH, {"scale": scale})

    def mean(self) -> float:
        p = self.params
        if self.family is Family.GAMMA:
            return p["shape"] * p["scale"]
        if self.family is Family.NORMAL:
            return p["mean"]
        if self.family is Family.NAKAGAMI:
            m, omega = p["shape"], p["spread"]
            return math.exp(special.gammaln(m + 0.5) - special.gammaln(m)) * math.sqrt(omega / m)
        return p["scale"] * math.sqrt(math.pi / 2)

    def variance(self) -> float:
        p = self.params
        if self.family is Family.GAMMA:
            return p["shape"] * p["scale"] ** 2
        if self.family is Family.NORMAL:
            return p["std"] ** 2
        if self.family is Family.NAKAGAMI:
            return p["spread"] - self.mean() ** 2
        return (4 - math.pi) / 2 * p["scale"] ** 2

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DistributionSpec":
        return cls(Family(data["family"]), dict(data["params"]))


def pdf(spec: DistributionSpec, x):
    """Probability density of ``spec`` at latency ``x`` (1/ms).

    Gamma, Nakagami and Rayleigh have support ``x >= 0``; the density is 0
    for negative ``x``.
    """
    x = np.asarray(x, dtype=float)
    p = spec.params
    fam = spec.family
    if fam is Family.NORMAL:
        z = (x - p["mean"]) / p["std"]
        return np.exp(-0.5 * z * z) / (p["std"] * math.sqrt(2 * math.pi))

    pos = x > 0
    xp = np.where(pos, x, 1.0)
    if fam is Family.GAMMA:
        k, theta = p["shape"], p["scale"]
        logd = (k - 1) * np.log(xp) - xp / theta - special.gammaln(k) - k * math.log(theta)
        out = np.where(pos, np.exp(logd), 0.0)
        if k == 1:
            out = np.where(x == 0, 1.0 / theta, out)
        elif k < 1:
            out = np.where(x == 0, np.inf, out)
        return out
    if fam is Family.NAKAGAMI:
        m, omega = p["shape"], p["spread"]
        logd = (
            math.log(2)
            + m * math.log(m)
            - special.gammaln(m)
            - m * math.log(omega)
            + (2 * m - 1) * np.log(xp)
            - m * xp * xp / omega
        )
        out = np.where(pos, np.exp(logd), 0.0)
        if m == 0.5:
            out = np.where(x == 0, math.sqrt(2 / (math.pi * omega)), out)
        return out
    sigma = p["scale"]
    return np.where(pos, xp / sigma**2 * np.exp(-xp * xp / (2 * sigma**2)), 0.0)


def cdf(spec: DistributionSpec, x):
    """Cumulative distribution function of ``spec`` at ``x``."""
    x = np.asarray(x, dtype=float)
    p = spec.params
    fam = spec.family
    if fam is Family.NORMAL:
        return special.ndtr((x - p["mean"]) / p["std"])
    xp = np.maximum(x, 0.0)
    if fam is Family.GAMMA:
        return special.gammainc(p["shape"], xp / p["scale"])
    if fam is Family.NAKAGAMI:
        return special.gammainc(p["shape"], p["shape"] * xp * xp / p["spread"])
    return -np.expm1(-xp * xp / (2 * p["scale"] ** 2))


def sample_distribution(spec: DistributionSpec, rng: np.random.Generator, size=None):
    """Draw latencies from ``spec``. Normal draws are rejection-truncated at 0."""
    p = spec.params
    fam = spec.family
    if fam is Family.GAMMA:
        return rng.gamma(p["shape"], p["scale"], size)
    if fam is Family.NAKAGAMI:
        m, omega = p["shape"], p["spread"]
        return np.sqrt(rng.gamma(m, omega / m, size))
    if fam is Family.RAYLEIGH:
        return rng.rayleigh(p["scale"], size)
    if size is None:
        while True:
            value = rng.normal(p["mean"], p["std"])
            if value >= 0:
                return value
    out = np.empty(size, dtype=float).ravel()
    filled = 0
    while filled < out.size:
        draw = rng.normal(p["mean"], p["std"], out.size - filled)
        draw = draw[draw >= 0]
        out[filled:filled + draw.size] = draw
        filled += draw.size
    return out.reshape(size)


# ---------------------------------------------------------------------------
# histogram + fitting


@dataclass(frozen=True)
class LatencyHistogram:
    """Density-normalized histogram of latency samples."""

    bin_edges: np.ndarray
    densities: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        dens = np.asarray(self.densities, dtype=float)
        if edges.ndim != 1 or edges.size != dens.size + 1:
            raise ValueError("need exactly one density per bin")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(dens < 0):
            raise ValueError("densities must be nonnegative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "densities", dens)

    @classmethod
    def from_samples(cls, samples) -> "LatencyHistogram":
        """Bin with the Freedman-Diaconis rule."""
        samples = np.asarray(samples, dtype=float)
        edges = np.histogram_bin_edges(samples, bins="fd")
        dens, edges = np.histogram(samples, bins=edges, density=True)
        return cls(edges, dens)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def sse(self, spec: DistributionSpec) -> float:
        resid = self.densities - pdf(spec, self.centers)
        return float(np.dot(resid, resid))


@dataclass(frozen=True)
class FitResult:
    spec: DistributionSpec
    sse: float

    def to_dict(self) -> dict:
        return {"family": self.spec.family.value, "params": dict(self.spec.params), "sse": self.sse}


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ValueError("latency samples must be finite and >= 0")
    if np.ptp(x) == 0:
        raise FitDegenerateError("samples have zero variance")
    return x


def _gamma_shape_mle(s: float, tol: float = 1e-12, max_iter: int = 100) -> float:
    # solves log(k) - digamma(k) = s, s = log(mean) - mean(log x) > 0
    k = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    for _ in range(max_iter):
        f = math.log(k) - special.digamma(k) - s
        fprime = 1 / k - special.polygamma(1, k)
        step = f / fprime
        k_new = k - step
        if k_new <= 0:
            k_new = k / 2
        if abs(k_new - k) <= tol * k:
            return k_new
        k = k_new
    return k


def estimate(samples, family) -> DistributionSpec:
    """Estimate the parameters of ``family`` from ``samples``.

    Gamma uses MLE (Newton on the shape equation) and falls back to moment
    matching when any sample is exactly zero. Normal and Rayleigh use their
    closed-form MLEs; Nakagami uses the moment estimators
    ``m = E[x^2]^2 / Var[x^2]`` and ``Omega = E[x^2]``.
    """
    x = _check_samples(samples)
    family = Family(family)
    if family is Family.GAMMA:
        mean = x.mean()
        if np.all(x > 0):
            s = math.log(mean) - np.log(x).mean()
            if s <= 0:
                raise FitDegenerateError("samples have zero variance")
            k = _gamma_shape_mle(s)
        else:
            k = mean**2 / x.var()
        return DistributionSpec.gamma(k, mean / k)
    if family is Family.NORMAL:
        return DistributionSpec.normal(x.mean(), x.std())
    x2 = x * x
    omega = x2.mean()
    if family is Family.NAKAGAMI:
        m = max(omega**2 / x2.var(), 0.5)
        return DistributionSpec.nakagami(m, omega)
    return DistributionSpec.rayleigh(math.sqrt(omega / 2))


def fit(samples, family, histogram: Optional[LatencyHistogram] = None) -> FitResult:
    """Fit ``family`` to ``samples`` and score it against their histogram."""
    x = _check_samples(samples)
    spec = estimate(x, family)
    if histogram is None:
        histogram = LatencyHistogram.from_samples(x)
    return FitResult(spec, histogram.sse(spec))


def rank_families(samples) -> list:
    """Fit all four families on shared bins; return results by ascending SSE."""
    x = _check_samples(samples)
    hist = LatencyHistogram.from_samples(x)
    results = [fit(x, fam, hist) for fam in FAMILIES]
    order = sorted(range(len(results)), key=lambda i: (results[i].sse, i))
    return [results[i] for i in order]


def load_latency_csv(path) -> np.ndarray:
    """Read a single-column ``latency_ms`` CSV."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["latency_ms"]:
            raise ValueError(f"{path}: expected header 'latency_ms', got {header}")
        values = [float(row[0]) for row in reader if row and row[0].strip()]
    return np.asarray(values, dtype=float)


def fit_report_json(results: Sequence[FitResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2)


# ---------------------------------------------------------------------------
# queueing-theoretic generator


@dataclass(frozen=True)
class NodeDelay:
    """Delay of one network hop: a constant (ms) or an exponential (rate 1/ms)."""

    kind: str = "constant"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ConfigurationError(f"unknown node delay kind {self.kind!r}", "kind")
        if self.kind == "constant" and self.value < 0:
            raise ConfigurationError("constant delay must be >= 0", "value")
        if self.kind == "exponential" and self.value <= 0:
            raise ConfigurationError("exponential rate must be > 0", "value")

    @property
    def mean(self) -> float:
        return self.value if self.kind == "constant" else 1.0 / self.value

    def draw(self, rng, size=None):
        if self.kind == "constant":
            return self.value if size is None else np.full(size, self.value)
        return rng.exponential(1.0 / self.value, size)


NODE_NAMES = ("tn", "cn", "upf_as", "as")


@dataclass(frozen=True)
class QueueingGenerator:
    """End-to-end 5G latency generator.

    ``lambda1`` is the packet arrival rate and ``lambda2`` the service rate
    of the M/M/1 radio queue (both 1/ms), so the radio sojourn time is
    exponential with rate ``lambda2 - lambda1``. Each retransmission, taken
    with probability ``retx_prob`` up to ``n_max`` times, adds an
    exponential delay with rate ``mu2``. ``harq_fixed`` is the fixed HARQ
    latency. ``node_delays`` maps ``tn``, ``cn``, ``upf_as`` and ``as`` to
    :class:`NodeDelay`.
    """

    lambda1: float
    lambda2: float
    mu2: float
    retx_prob: float = 0.0
    harq_fixed: float = 0.0
    n_max: int = 1
    node_delays: Mapping[str, NodeDelay] = field(
        default_factory=lambda: {name: NodeDelay() for name in NODE_NAMES}
    )

    def __post_init__(self):
        if not self.lambda1 > 0:
            raise ConfigurationError("must be > 0", "lambda1")
        if not self.mu2 > 0:
            raise ConfigurationError("must be > 0", "mu2")
        if not 0 <= self.retx_prob <= 1:
            raise ConfigurationError("must lie in [0, 1]", "retx_prob")
        if self.harq_fixed < 0:
            raise ConfigurationError("must be >= 0", "harq_fixed")
        if self.n_max < 0:
            raise ConfigurationError("must be >= 0", "n_max")
        unknown = set(self.node_delays) - set(NODE_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown nodes {sorted(unknown)}", "node_delays")
        delays = {name: self.node_delays.get(name, NodeDelay()) for name in NODE_NAMES}
        object.__setattr__(self, "node_delays", delays)

    @property
    def mu1(self) -> float:
        return self.lambda2 - self.lambda1

    def mean(self) -> float:
        retx = sum(self.retx_prob**n for n in range(1, self.n_max + 1)) / self.mu2
        nodes = sum(d.mean for d in self.node_delays.values())
        return 1.0 / self.mu1 + retx + self.harq_fixed + nodes

    @classmethod
    def from_dict(cls, data: Mapping) -> "QueueingGenerator":
        data = dict(data)
        nodes = {k: NodeDelay(**v) for k, v in data.pop("node_delays", {}).items()}
        return cls(node_delays=nodes, **data)

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "mu2": self.mu2,
            "retx_prob": self.retx_prob,
            "harq_fixed": self.harq_fixed,
            "n_max": self.n_max,
            "node_delays": {k: {"kind": v.kind, "value": v.value} for k, v in self.node_delays.items()},
        }


def queueing_sample(gen: QueueingGenerator, rng: np.random.Generator, size=None):
    """Draw end-to-end latencies (ms) from ``gen``."""
    if gen.lambda1 >= gen.lambda2:
        raise StabilityError(
            f"unstable queue: lambda1={gen.lambda1} >= lambda2={gen.lambda2}"
        )
    total = rng.exponential(1.0 / gen.mu1, size) + gen.harq_fixed
    alive = None
    for _ in range(gen.n_max):
        retx = rng.random(size) < gen.retx_prob
        alive = retx if alive is None else alive & retx
        total = total + np.where(alive, rng.exponential(1.0 / gen.mu2, size), 0.0)
    for name in NODE_NAMES:
        total = total + gen.node_delays[name].draw(rng, size)
    return float(total) if size is None else total


@dataclass(frozen=True)
class GammaTheoryReport:
    mu: float
    n: int
    mean: float
    variance: float
    ks_distance: float

    @property
    def expected_mean(self) -> float:
        return 2.0 / self.mu

    @property
    def expected_variance(self) -> float:
        return 2.0 / self.mu**2


def gamma2_cdf(x, mu: float):
    """CDF of Gamma(shape 2, scale 1/mu)."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return 1.0 - np.exp(-mu * x) * (1.0 + mu * x)


def ks_distance(samples, cdf_fn) -> float:
    """Two-sided Kolmogorov-Smirnov statistic against an analytic CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    f = cdf_fn(x)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def verify_gamma_theory(gen: QueueingGenerator, n: int, rng: np.random.Generator) -> GammaTheoryReport:
    """Check that radio latency with one certain retransmission is Gamma(2, 1/mu)."""
    if n <= 0:
        raise ConfigurationError("sample count must be positive", "n")
    if gen.retx_prob != 1:
        raise ConfigurationError("requires retx_prob == 1", "retx_prob")
    if gen.n_max != 1:
        raise ConfigurationError("requires n_max == 1", "n_max")
    if not math.isclose(gen.mu2, gen.mu1, rel_tol=1e-12):
        raise ConfigurationError("requires mu2 == lambda2 - lambda1", "mu2")
    if gen.harq_fixed != 0:
        raise ConfigurationError("requires harq_fixed == 0", "harq_fixed")
    if any(d.kind != "constant" or d.value != 0 for d in gen.node_delays.values()):
        raise ConfigurationError("requires zero node delays", "node_delays")
    x = queueing_sample(gen, rng, n)
    mu = gen.mu1
    return GammaTheoryReport(
        mu=mu,
        n=n,
        mean=float(x.mean()),
        variance=float(x.var()),
        ks_distance=ks_distance(x, lambda v: gamma2_cdf(v, mu)),
    )


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class LatencyProfile:
    """Named per-leg latency source: zero, constant, distribution or queueing."""

    name: str
    kind: str = "zero"
    constant_ms: float = 0.0
    distribution: Optional[DistributionSpec] = None
    queueing: Optional[QueueingGenerator] = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "distribution", "queueing"):
            raise ConfigurationError(f"unknown latency source {self.kind!r}", "kind")
        if self.kind == "constant" and not self.constant_ms >= 0:
            raise ConfigurationError("must be >= 0", "constant_ms")
        if self.kind == "distribution" and self.distribution is None:
            raise ConfigurationError("distribution profile needs a spec", "distribution")
        if self.kind == "queueing" and self.queueing is None:
            raise ConfigurationError("queueing profile needs a generator", "queueing")

    @classmethod
    def zero(cls, name="NL"):
        return cls(name, "zero")

    @classmethod
    def constant(cls, name, ms):
        return cls(name, "constant", constant_ms=float(ms))

    @classmethod
    def from_distribution(cls, name, spec: DistributionSpec):
        return cls(name, "distribution", distribution=spec)

    @classmethod
    def from_queueing(cls, name, gen: QueueingGenerator):
        return cls(name, "queueing", queueing=gen)

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == "constant":
            out["constant_ms"] = self.constant_ms
        elif self.kind == "distribution":
            out["distribution"] = self.distribution.to_dict()
        elif self.kind == "queueing":
            out["queueing"] = self.queueing.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "LatencyProfile":
        kind = data.get("kind", "zero")
        name = data.get("name", kind)
        if kind == "zero":
            return cls.zero(name)
        if kind == "constant":
            return cls.constant(name, data["constant_ms"])
        if kind == "distribution":
            return cls.from_distribution(name, DistributionSpec.from_dict(data["distribution"]))
        if kind == "queueing":
            return cls.from_queueing(name, QueueingGenerator.from_dict(data["queueing"]))
        raise ConfigurationError(f"unknown latency source {kind!r}", "kind")


def sample(profile: LatencyProfile, rng: np.random.Generator, size=None):
    """Draw one latency (or ``size`` latencies) in ms from ``profile``."""
    if profile.kind == "zero":
        return 0.0 if size is None else np.zeros(size)
    if profile.kind == "constant":
        return profile.constant_ms if size is None else np.full(size, profile.constant_ms)
    if profile.kind == "distribution":
        return sample_distribution(profile.distribution, rng, size)
    return queueing_sample(profile.queueing, rng, size)


# Placeholder defaults: no fitted parameters are published for either
# measurement campaign. Override in the scenario config.
DEFAULT_PROFILES = {
    "NL": LatencyProfile.zero("NL"),
    "CL": LatencyProfile.from_distribution("CL", DistributionSpec.gamma(4.0, 5.0)),
    "HL": LatencyProfile.from_distribution("HL", DistributionSpec.gamma(4.0, 10.0)),
}

ProfileLike = Union[str, LatencyProfile]
