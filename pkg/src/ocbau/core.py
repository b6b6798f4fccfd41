"""Domain types, built-in problem instances and the random-number contract."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, EstimationError

SYNTHETIC_IDS = (1, 2, 3, 4)
DOSE_IDS = (5, 6)

# Brain-Cousens parameters (c1, c2, c3, c4, c5) for the two dose-finding instances.
DOSE_PARAMETERS = {
    5: (2.0, 80.0, 0.3, 600.0, 4.0),
    6: (2.0, 100.0, 0.2, 400.0, 5.0),
}


@dataclass(frozen=True)
class ProblemInstance:
    """True means and variances of ``k`` normally distributed designs.

    Designs are 0-indexed internally; ``best`` is the index of the unique
    largest mean.
    """

    means: tuple[float, ...]
    variances: tuple[float, ...]
    name: str = ""

    def __post_init__(self):
        means = tuple(float(m) for m in self.means)
        variances = tuple(float(v) for v in self.variances)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        if len(means) < 2:
            raise ConfigurationError("an instance needs at least two designs")
        if len(means) != len(variances):
            raise ConfigurationError(
                f"means has {len(means)} entries but variances has {len(variances)}"
            )
        if not all(math.isfinite(m) for m in means):
            raise ConfigurationError("means must be finite")
        if not all(math.isfinite(v) and v > 0.0 for v in variances):
            raise ConfigurationError("variances must be finite and strictly positive")
        top = max(means)
        if sum(1 for m in means if m == top) > 1:
            raise ConfigurationError("the best design (argmax of means) must be unique")

    @property
    def k(self) -> int:
        return len(self.means)

    @property
    def best(self) -> int:
        return max(range(self.k), key=self.means.__getitem__)

    @property
    def std(self) -> tuple[float, ...]:
        return tuple(math.sqrt(v) for v in self.variances)

    def truncate(self, k: int) -> "ProblemInstance":
        """First ``k`` designs of this instance."""
        return ProblemInstance(self.means[:k], self.variances[:k], name=self.name)

    def to_dict(self) -> dict:
        return {"means": list(self.means), "variances": list(self.variances)}

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "ProblemInstance":
        try:
            return cls(tuple(data["means"]), tuple(data["variances"]), name=name)
        except KeyError as exc:
            raise ConfigurationError(f"instance JSON is missing field {exc}") from None
        except TypeError as exc:
            raise ConfigurationError(f"malformed instance JSON: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str, name: str = "") -> "ProblemInstance":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"instance file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("instance JSON must be an object")
        return cls.from_dict(data, name=name)


def make_synthetic_instance(instance_id: int, k: int = 10) -> ProblemInstance:
    """Evenly spaced means with a common variance (instances 1-4).

    Instances 1/2 space the means by 1.5, instances 3/4 by 0.5; instances
    1/3 use variance 4 and instances 2/4 variance 25. Design 0 is best.
    """
    if instance_id not in SYNTHETIC_IDS:
        raise ConfigurationError(f"synthetic instance id must be one of {SYNTHETIC_IDS}, got {instance_id!r}")
    if k < 2:
        raise ConfigurationError(f"k must be at least 2, got {k}")
    spacing = 1.5 if instance_id in (1, 2) else 0.5
    variance = 4.0 if instance_id in (1, 3) else 25.0
    # 0.0 rather than -0.0 for the best design
    means = tuple(-spacing * i + 0.0 for i in range(k))
    return ProblemInstance(means, (variance,) * k, name=f"instance-{instance_id}")


def brain_cousens(dose: int, c: Sequence[float]) -> float:
    c1, c2, c3, c4, c5 = c
    return c1 + (c2 - c1 + 100.0 * c3 * dose) / (1.0 + math.exp(c5 * (math.log(100.0 * dose) - math.log(c4))))


def make_dose_instance(instance_id: int) -> ProblemInstance:
    """Ten dose levels whose efficacy follows the Brain-Cousens hormesis curve.

    The standard deviation of dose ``i`` is ten percent of its mean.
    """
    if instance_id not in DOSE_IDS:
        raise ConfigurationError(f"dose instance id must be one of {DOSE_IDS}, got {instance_id!r}")
    c = DOSE_PARAMETERS[instance_id]
    means = tuple(brain_cousens(i, c) for i in range(1, 11))
    variances = tuple((0.1 * m) ** 2 for m in means)
    return ProblemInstance(means, variances, name=f"instance-{instance_id}")


def make_instance(instance_id: int, k: int = 10) -> ProblemInstance:
    """Any of the six built-in instances; ``k`` is ignored for dose instances."""
    if instance_id in SYNTHETIC_IDS:
        return make_synthetic_instance(instance_id, k)
    if instance_id in DOSE_IDS:
        return make_dose_instance(instance_id)
    raise ConfigurationError(f"built-in instance id must be in 1..6, got {instance_id!r}")


@dataclass(frozen=True)
class Allocation:
    """Sampling proportions on the probability simplex."""

    alphas: tuple[float, ...]

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, "alphas", alphas)
        if any(not (a >= 0.0) for a in alphas):
            raise ConfigurationError("allocation entries must be nonnegative")
        if abs(math.fsum(alphas) - 1.0) > 1e-12:
            raise ConfigurationError(f"allocation must sum to 1, got {math.fsum(alphas)!r}")

    def __len__(self):
        return len(self.alphas)

    def __getitem__(self, i):
        return self.alphas[i]

    def __iter__(self):
        return iter(self.alphas)

    @classmethod
    def equal(cls, k: int) -> "Allocation":
        return cls((1.0 / k,) * k)

    @classmethod
    def normalized(cls, weights: Sequence[float]) -> "Allocation":
        """Scale nonnegative weights onto the simplex."""
        total = math.fsum(weights)
        if not total > 0.0:
            raise ConfigurationError("cannot normalize weights with nonpositive total")
        alphas = [w / total for w in weights]
        # push the last-bit rounding into the largest entry
        j = max(range(len(alphas)), key=alphas.__getitem__)
        alphas[j] += 1.0 - math.fsum(alphas)
        return cls(tuple(alphas))

    def sup_distance(self, other: Sequence[float]) -> float:
        return max(abs(a - b) for a, b in zip(self.alphas, other))


@dataclass
class SufficientStats:
    """Running per-design sample counts, means and sums of squared deviations.

    Updated in place with Welford's recurrence applied to ``x - shift``,
    where ``shift`` is the design's first observation (or its mean when the
    stats are built from summaries). Shifting keeps the running mean from
    accumulating rounding error at the scale of the data when the spread is
    tiny relative to the level. Single writer only.
    """

    counts: list[int]
    means: list[float]
    ssd: list[float]
    shift: list[float] | None = field(default=None, repr=False)
    _dev: list[float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.shift is None:
            self.shift = list(self.means)
        if self._dev is None:
            self._dev = [m - s for m, s in zip(self.means, self.shift)]

    @classmethod
    def empty(cls, k: int) -> "SufficientStats":
        return cls([0] * k, [0.0] * k, [0.0] * k)

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def copy(self) -> "SufficientStats":
        return SufficientStats(list(self.counts), list(self.means), list(self.ssd),
                               list(self.shift), list(self._dev))

    def update(self, design: int, observation: float) -> "SufficientStats":
        n = self.counts[design] + 1
        if n == 1:
            self.shift[design] = observation
            self._dev[design] = 0.0
        y = observation - self.shift[design]
        dev = self._dev[design]
        delta = y - dev
        dev += delta / n
        self.ssd[design] += delta * (y - dev)
        self._dev[design] = dev
        self.means[design] = self.shift[design] + dev
        self.counts[design] = n
        return self


def update_stats(stats: SufficientStats, design: int, observation: float) -> SufficientStats:
    """Fold one observation of ``design`` into ``stats`` (mutates and returns it)."""
    if not 0 <= design < stats.k:
        raise ConfigurationError(f"design index {design} out of range for k={stats.k}")
    return stats.update(design, float(observation))


@dataclass(frozen=True)
class PosteriorState:
    """Snapshot of the independent normal-inverse-gamma posteriors.

    Uses the improper prior a0 = 1/2, b0 = 0, lambda0 = 0. After N
    observations with sample mean xbar and squared-deviation sum ssd the
    posterior is NIG(xbar, N, (N + 1)/2, ssd/2), so

    * posterior mean of mu is xbar,
    * posterior mean of sigma^2 is b/(a - 1) = ssd/(N - 1),
    * the marginal of mu is Student-t with N + 1 degrees of freedom,
      location xbar and squared scale b/(a*lambda) = ssd/(N(N + 1)).
    """

    counts: tuple[int, ...]
    sample_means: tuple[float, ...]
    ssd: tuple[float, ...]

    @classmethod
    def from_stats(cls, stats: SufficientStats) -> "PosteriorState":
        return cls(tuple(stats.counts), tuple(stats.means), tuple(stats.ssd))

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def stats(self) -> SufficientStats:
        return SufficientStats(list(self.counts), list(self.sample_means), list(self.ssd))

    @property
    def means(self) -> tuple[float, ...]:
        return self.sample_means

    @property
    def variances(self) -> tuple[float, ...]:
        out = []
        for n, s in zip(self.counts, self.ssd):
            if n < 2:
                raise EstimationError("posterior variance needs at least two observations")
            out.append(s / (n - 1))
        return tuple(out)

    @property
    def dof(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) + 1.0

    @property
    def t_scale(self) -> np.ndarray:
        """Scale of the Student-t marginal of each mean."""
        n = np.asarray(self.counts, dtype=float)
        if np.any(n < 2):
            raise EstimationError("Student-t marginal needs at least two observations per design")
        return np.sqrt(np.asarray(self.ssd) / (n * (n + 1.0)))

    def selected(self) -> int:
        return select_best(self.sample_means, self.counts)

    def to_dict(self) -> dict:
        return {
            "counts": list(self.counts),
            "means": list(self.sample_means),
            "ssd": list(self.ssd),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorState":
        return cls(tuple(data["counts"]), tuple(data["means"]), tuple(data["ssd"]))


def select_best(means: Sequence[float], counts: Sequence[int]) -> int:
    """Argmax of ``means``; ties go to the fewest samples, then the lowest index."""
    top = max(means)
    best = -1
    for i, m in enumerate(means):
        if m == top and (best < 0 or counts[i] < counts[best]):
            best = i
    return best


@dataclass(frozen=True)
class RngConfig:
    """Seed plus stream id; each (seed, stream, *substream) is an independent generator."""

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.stream < 0:
            raise ConfigurationError("stream id must be nonnegative")

    def generator(self, *substream: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, *substream))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class NormalSource:
    """Buffered standard-normal stream; draws in blocks for speed.

    The sequence of values depends only on the generator, not on the block
    size boundaries seen by callers.
    """

    rng: np.random.Generator
    block: int = 4096
    _buf: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    _pos: int = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.rng.standard_normal(self.block)
            self._pos = 0
        z = self._buf[self._pos]
        self._pos += 1
        return float(z)
