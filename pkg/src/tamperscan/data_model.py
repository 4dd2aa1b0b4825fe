"""Core domain types: counties, tallies, datasets, standardization, synthesis.

Vote shares are Republican two-party shares, R / (R + D); third-party votes
are treated the same as non-voters. All types are immutable after
construction and all operations are pure, so everything here is safe to use
from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericalError, SchemaError
from .fips import FIPS_PREFIX_BY_STATE, state_for_fips

# Relative floor below which a feature column counts as zero-variance.
ZERO_VARIANCE_RTOL = 1e-12

# Latent intercept used by the synthetic generator (logistic scale).
SYNTHETIC_INTERCEPT = 0.1

# Synthetic shares are clamped into this interval after noise.
SYNTHETIC_SHARE_CLAMP = (0.02, 0.98)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CountyKey:
    """Identity of one county: 5-digit FIPS, state abbreviation, display name."""

    fips: str
    state: str
    name: str

    def __post_init__(self):
        if len(self.fips) != 5 or not self.fips.isdigit():
            raise DataError(f"county FIPS must be 5 digits, got {self.fips!r}")
        expected = state_for_fips(self.fips)
        if expected is not None and expected != self.state:
            raise DataError(
                f"FIPS {self.fips} encodes state {expected}, not {self.state}"
            )


@dataclass(frozen=True)
class VoteTally:
    """Two-party vote counts for one county in one election year."""

    year: int
    rep_votes: int
    dem_votes: int

    def __post_init__(self):
        if self.rep_votes < 0 or self.dem_votes < 0:
            raise DataError(
                f"negative vote count in year {self.year}: "
                f"rep={self.rep_votes} dem={self.dem_votes}"
            )

    @property
    def total(self) -> int:
        return self.rep_votes + self.dem_votes


def compute_vote_share(tally: VoteTally, county: str = "") -> float:
    """Republican two-party share R / (R + D) for one tally.

    Third-party votes never enter the denominator. A zero two-party total is
    a domain error naming the county.
    """
    total = tally.total
    if total <= 0:
        where = f" in county {county}" if county else ""
        raise DataError(f"zero two-party total{where} (year {tally.year})")
    return tally.rep_votes / total


@dataclass(frozen=True)
class CountyRecord:
    """One county's key, feature values, and per-year tallies."""

    key: CountyKey
    feature_names: tuple[str, ...]
    features: np.ndarray
    tallies: dict[int, VoteTally]


@dataclass(frozen=True)
class Dataset:
    """Aligned feature matrix plus per-year vote tallies for n counties.

    Column order of `X` matches `feature_names` and is identical for every
    county. Alaska counties are rejected (the state does not report results
    at the county level).
    """

    keys: tuple[CountyKey, ...]
    feature_names: tuple[str, ...]
    X: np.ndarray                      # (n, p) float64, read-only
    rep: dict[int, np.ndarray]         # year -> (n,) int64, read-only
    dem: dict[int, np.ndarray]         # year -> (n,) int64, read-only
    target_year: int

    def __post_init__(self):
        n = len(self.keys)
        if self.X.shape != (n, len(self.feature_names)):
            raise DataError(
                f"feature matrix shape {self.X.shape} inconsistent with "
                f"{n} counties x {len(self.feature_names)} features"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("feature names are not unique")
        seen = set()
        for key in self.keys:
            if key.fips in seen:
                raise DataError(f"duplicate county FIPS {key.fips}")
            seen.add(key.fips)
            if key.state == "AK":
                raise DataError(f"Alaska county {key.fips} not allowed in a Dataset")
        if not np.all(np.isfinite(self.X)):
            raise DataError("feature matrix contains non-finite entries")
        if self.target_year not in self.rep or self.target_year not in self.dem:
            raise DataError(f"no tallies stored for target year {self.target_year}")

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def p(self) -> int:
        return len(self.feature_names)

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(sorted(self.rep))

    @classmethod
    def build(cls, keys, feature_names, X, rep, dem, target_year) -> "Dataset":
        """Construct with defensive copies and read-only arrays."""
        return cls(
            keys=tuple(keys),
            feature_names=tuple(feature_names),
            X=_readonly(np.asarray(X, dtype=np.float64)),
            rep={y: _readonly(np.asarray(v, dtype=np.int64)) for y, v in rep.items()},
            dem={y: _readonly(np.asarray(v, dtype=np.int64)) for y, v in dem.items()},
            target_year=int(target_year),
        )

    def tally(self, i: int, year: int | None = None) -> VoteTally:
        year = self.target_year if year is None else year
        return VoteTally(year, int(self.rep[year][i]), int(self.dem[year][i]))

    def county(self, i: int) -> CountyRecord:
        return CountyRecord(
            key=self.keys[i],
            feature_names=self.feature_names,
            features=self.X[i],
            tallies={y: self.tally(i, y) for y in self.years},
        )

    @property
    def counties(self) -> list[CountyRecord]:
        return [self.county(i) for i in range(self.n)]

    def shares(self, year: int | None = None) -> np.ndarray:
        """Vote shares for every county in `year` (default: target year)."""
        year = self.target_year if year is None else year
        totals = self.rep[year] + self.dem[year]
        bad = np.flatnonzero(totals <= 0)
        if bad.size:
            raise DataError(
                f"zero two-party total in county {self.keys[bad[0]].fips} "
                f"(year {year})"
            )
        return self.rep[year] / totals

    def index_of(self, fips: str) -> int:
        for i, key in enumerate(self.keys):
            if key.fips == fips:
                return i
        raise DataError(f"county {fips} not in dataset")

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset.build(
            keys=[self.keys[i] for i in idx],
            feature_names=self.feature_names,
            X=self.X[idx],
            rep={y: v[idx] for y, v in self.rep.items()},
            dem={y: v[idx] for y, v in self.dem.items()},
            target_year=self.target_year,
        )

    def subset_states(self, states: Iterable[str]) -> "Dataset":
        wanted = set(states)
        idx = [i for i, k in enumerate(self.keys) if k.state in wanted]
        if not idx:
            raise ConfigError(f"no counties in states {sorted(wanted)}")
        return self.subset(idx)

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(sorted({k.state for k in self.keys}))


@dataclass(frozen=True)
class StandardizationParams:
    """Per-feature centering/scaling learned from training rows.

    Scales are population (divide-by-n) standard deviations; zero-variance
    columns are dropped before fitting and listed in `dropped`.
    """

    names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray
    dropped: tuple[str, ...] = ()

    def __post_init__(self):
        if not (len(self.names) == self.mean.shape[0] == self.scale.shape[0]):
            raise DataError("standardization arrays inconsistent with names")
        if np.any(self.scale <= 0):
            raise NumericalError("non-positive scale in standardization params")


def standardize(
    X: np.ndarray, names: Sequence[str]
) -> tuple[np.ndarray, StandardizationParams]:
    """Z-score columns of X with population SD; drop zero-variance columns.

    Returns the standardized design matrix over retained columns and the
    parameters needed to apply the identical transform out of sample.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("standardize requires a non-empty 2-D matrix")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    constant = np.all(X == X[0], axis=0)
    degenerate = constant | (scale <= ZERO_VARIANCE_RTOL * np.maximum(1.0, np.abs(mean)))
    keep = ~degenerate
    if not np.any(keep):
        raise NumericalError("every feature column has zero variance")
    names = tuple(names)
    kept_names = tuple(n for n, k in zip(names, keep) if k)
    dropped = tuple(n for n, k in zip(names, keep) if not k)
    params = StandardizationParams(
        names=kept_names,
        mean=_readonly(mean[keep]),
        scale=_readonly(scale[keep]),
        dropped=dropped,
    )
    Xs = (X[:, keep] - params.mean) / params.scale
    return Xs, params


def apply_standardization(
    params: StandardizationParams, names: Sequence[str], X: np.ndarray
) -> np.ndarray:
    """Apply training-set standardization to new rows, selecting by name.

    `X` may be one feature vector or a (n, len(names)) matrix whose columns
    are ordered by `names`. Retained features are located by name so column
    permutations are harmless; a missing name is a schema error.
    """
    X = np.asarray(X, dtype=np.float64)
    vector = X.ndim == 1
    if vector:
        X = X[np.newaxis, :]
    if X.shape[1] != len(names):
        raise SchemaError(
            f"got {X.shape[1]} columns for {len(names)} feature names"
        )
    pos = {n: j for j, n in enumerate(names)}
    missing = [n for n in params.names if n not in pos]
    if missing:
        raise SchemaError(f"features missing from input: {missing[:5]}")
    cols = np.array([pos[n] for n in params.names], dtype=np.intp)
    out = (X[:, cols] - params.mean) / params.scale
    return out[0] if vector else out


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters for the deterministic synthetic-election generator."""

    n_counties: int = 500
    n_features: int = 50
    n_active: int = 5
    noise_sd: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_active > self.n_features:
            raise ConfigError("n_active exceeds n_features")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")
        if self.n_counties < 1 or self.n_features < 1:
            raise ConfigError("n_counties and n_features must be positive")


# States used to label synthetic counties, cycled in this order. Alaska is
# deliberately absent.
_SYNTHETIC_STATES = ("AL", "AZ", "CA", "CO", "GA", "MI", "MT", "PA", "TX", "WI", "WY")


def substream(seed: int, stream: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, stream index).

    Counter-based keying makes every stream a pure function of the seed, so
    generated data is identical regardless of evaluation order or thread
    count. Reused across the package wherever reproducible randomness is
    needed.
    """
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(stream)])
    return np.random.Generator(np.random.Philox(key=key))


def logistic(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


def generate_synthetic(
    spec: SyntheticSpec, target_year: int = 2020
) -> tuple[Dataset, np.ndarray]:
    """Generate a synthetic county-level election and its true coefficients.

    Features are i.i.d. standard normal. The latent share is
    logistic(intercept + x . beta) plus Gaussian noise, clamped to keep
    shares strictly inside (0, 1); two-party totals are log-uniform in
    [1e3, 1e6] and tallies are the rounded split of the share. Coefficient
    magnitudes are kept small (0.15 / sqrt(n_active)) so the logistic link
    stays in its near-linear regime and residual width tracks `noise_sd`.

    Returns (dataset, beta) where beta is the latent-scale coefficient
    vector over the generated feature names.
    """
    n, p = spec.n_counties, spec.n_features
    g_features = substream(spec.seed, 0)
    g_support = substream(spec.seed, 1)
    g_noise = substream(spec.seed, 2)
    g_sizes = substream(spec.seed, 3)

    X = g_features.standard_normal((n, p))
    beta = np.zeros(p)
    if spec.n_active > 0:
        support = np.sort(g_support.choice(p, size=spec.n_active, replace=False))
        signs = g_support.choice([-1.0, 1.0], size=spec.n_active)
        beta[support] = signs * (0.15 / np.sqrt(spec.n_active))

    latent = logistic(SYNTHETIC_INTERCEPT + X @ beta)
    if spec.noise_sd > 0:
        latent = latent + spec.noise_sd * g_noise.standard_normal(n)
    lo, hi = SYNTHETIC_SHARE_CLAMP
    share = np.clip(latent, lo, hi)

    totals = np.round(10.0 ** g_sizes.uniform(3.0, 6.0, size=n)).astype(np.int64)
    rep = np.round(share * totals).astype(np.int64)
    dem = totals - rep

    keys = []
    for i in range(n):
        state = _SYNTHETIC_STATES[i % len(_SYNTHETIC_STATES)]
        county_code = i // len(_SYNTHETIC_STATES) + 1
        fips = FIPS_PREFIX_BY_STATE[state] + f"{county_code:03d}"
        keys.append(CountyKey(fips=fips, state=state, name=f"Synth County {i}"))

    names = tuple(f"f{j:03d}" for j in range(p))
    dataset = Dataset.build(
        keys=keys,
        feature_names=names,
        X=X,
        rep={target_year: rep},
        dem={target_year: dem},
        target_year=target_year,
    )
    return dataset, _readonly(beta)
