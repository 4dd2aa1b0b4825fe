"""Residual anomaly scoring with look-elsewhere-corrected significance.

Each county's residual (actual minus predicted share) is converted to a local
sigma against a robust Gaussian width, then to a global sigma that answers
the question actually at stake: how often would the most extreme of N clean
counties look this extreme? Both an analytic order-statistics conversion and
a Monte Carlo extreme-value simulation are provided; they must agree.

All p-value conventions are two-sided in both directions of conversion.
"""

from __future__ import annotations

import csv
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, ndtri

from .data_model import CountyKey, Dataset, substream
from .elastic_net import FitModel, predict
from .errors import ConfigError, DataError, NumericalError

# Residuals farther than this many widths out are clipped when fitting.
CLIP_SIGMA = 3.0
MAX_CLIP_ITERATIONS = 10

DEFAULT_MC_TRIALS = 100_000

# Trials per Philox substream; the tally over chunks is order-independent,
# so any scheduling of chunks yields the identical extreme table.
_MC_CHUNK = 512

# MC streams live at indices >= 2**32 so they can never collide with the
# low-numbered streams used for synthesis and fold shuffling on the same seed.
_MC_STREAM_BASE = 1 << 32


@dataclass(frozen=True)
class ResidualSet:
    """Residuals for one evaluation set of counties."""

    keys: tuple[CountyKey, ...]
    actual: np.ndarray
    predicted: np.ndarray
    residual: np.ndarray

    def __post_init__(self):
        n = len(self.keys)
        for arr in (self.actual, self.predicted, self.residual):
            if arr.shape != (n,):
                raise DataError("residual arrays inconsistent with county keys")
            if not np.all(np.isfinite(arr)):
                raise NumericalError("non-finite residual data")

    @classmethod
    def build(cls, keys, actual, predicted) -> "ResidualSet":
        actual = np.asarray(actual, dtype=np.float64)
        predicted = np.asarray(predicted, dtype=np.float64)
        r = actual - predicted
        for arr in (actual, predicted, r):
            arr.flags.writeable = False
        return cls(keys=tuple(keys), actual=actual, predicted=predicted, residual=r)

    @property
    def n(self) -> int:
        return len(self.keys)

    @property
    def rms(self) -> float:
        """Raw RMS of the residuals, outliers included."""
        return float(np.sqrt(np.mean(self.residual**2)))


@dataclass(frozen=True)
class WidthFit:
    """Robust residual width about a fixed center of zero."""

    width: float
    clip_iterations: int
    n_used: int

    def __post_init__(self):
        if not self.width > 0:
            raise NumericalError(f"degenerate residual width {self.width}")


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo extreme-value simulation parameters."""

    n_counties: int
    trials: int = DEFAULT_MC_TRIALS
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1_000:
            raise ConfigError(f"need at least 1000 trials for a p-value, got {self.trials}")
        if self.n_counties < 1:
            raise ConfigError(f"n_counties must be positive, got {self.n_counties}")


@dataclass(frozen=True)
class McGlobalSignificance:
    """MC estimate of global significance for one local z."""

    p_global: float      # observed fraction of trials at least as extreme
    sigma: float         # two-sided sigma; analytic fallback when bounded
    stderr: float        # binomial standard error of p_global
    sigma_stderr: float  # stderr propagated through the sigma conversion
    bounded: bool        # no trial reached |z|; true p < 1/trials
    trials: int


@dataclass(frozen=True)
class AnomalyScore:
    """One county's scored residual.

    `beyond_mc_table` marks counties so extreme that no MC trial reached
    them; `global_sigma` then carries the analytic value instead.
    """

    key: CountyKey
    actual: float
    predicted: float
    residual: float
    local_sigma: float
    global_sigma: float
    beyond_mc_table: bool = False


def residuals(model: FitModel, dataset: Dataset, year: int | None = None) -> ResidualSet:
    """Actual minus predicted share for every county in the dataset."""
    pred = predict(model, dataset.X, dataset.feature_names)
    return ResidualSet.build(dataset.keys, dataset.shares(year), pred)


def fit_width(resid: ResidualSet | np.ndarray) -> WidthFit:
    """Gaussian width about 0 with iterative 3-sigma clipping.

    The width is recomputed from surviving residuals and membership is
    re-evaluated against the full set until it stabilizes (or 10 rounds),
    which keeps a handful of gross outliers from inflating the scale the
    way a plain RMS would.
    """
    r = resid.residual if isinstance(resid, ResidualSet) else np.asarray(resid, dtype=np.float64)
    if r.shape[0] < 10:
        raise DataError(f"need at least 10 residuals to fit a width, got {r.shape[0]}")
    if not np.any(r):
        raise NumericalError("all residuals are zero; width undefined")
    mask = np.ones(r.shape[0], dtype=bool)
    iterations = 0
    for _ in range(MAX_CLIP_ITERATIONS):
        iterations += 1
        kept = r[mask]
        if kept.size == 0:
            raise NumericalError("clipping removed every residual")
        width = float(np.sqrt(np.mean(kept**2)))
        if width == 0.0:
            raise NumericalError("surviving residuals are all zero; width undefined")
        new_mask = np.abs(r) <= CLIP_SIGMA * width
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    return WidthFit(width=width, clip_iterations=iterations, n_used=int(mask.sum()))


def local_significance(r: float, width: WidthFit | float) -> float:
    """Signed number of widths the residual sits from zero."""
    w = width.width if isinstance(width, WidthFit) else float(width)
    if not w > 0:
        raise NumericalError(f"width must be positive, got {w}")
    return float(r) / w


def two_sided_p(sigma: float) -> float:
    """Two-sided normal tail probability at the given sigma level."""
    if not np.isfinite(sigma):
        raise NumericalError(f"sigma must be finite, got {sigma}")
    return float(erfc(abs(float(sigma)) / np.sqrt(2.0)))


def global_significance_analytic(local_z: float, n_counties: int) -> float:
    """Look-elsewhere-corrected sigma for the most-extreme-of-N question.

    p_local = 2(1 - Phi(|z|)) is the two-sided tail of one county;
    p_global = 1 - (1 - p_local)^N is the chance any of N clean counties
    fluctuates that far; the result is the two-sided sigma with that global
    tail. Computed with expm1/log1p so tiny tails survive, and capped at
    |z| (the N = 1 value) against rounding.
    """
    if not np.isfinite(local_z):
        raise NumericalError(f"local z must be finite, got {local_z}")
    if n_counties < 1:
        raise ConfigError(f"n_counties must be at least 1, got {n_counties}")
    z = abs(float(local_z))
    if n_counties == 1:
        return z
    p_local = float(erfc(z / np.sqrt(2.0)))
    if p_local == 0.0:
        # tail underflowed float64 (|z| > ~38); correction is negligible
        return z
    with np.errstate(divide="ignore"):  # log1p(-1) = -inf at z = 0 is fine
        p_global = -np.expm1(n_counties * np.log1p(-p_local))
    sigma = float(-ndtri(0.5 * p_global)) + 0.0
    return min(z, sigma)


def analytic_sigma_curve(z_values: np.ndarray, n_counties: int) -> np.ndarray:
    """Vectorized global_significance_analytic over an array of local z.

    Same conventions and cap as the scalar form; used where many z values
    share one look-elsewhere N (detection sweeps, calibration tables).
    """
    if n_counties < 1:
        raise ConfigError(f"n_counties must be at least 1, got {n_counties}")
    z = np.abs(np.asarray(z_values, dtype=np.float64))
    if not np.all(np.isfinite(z)):
        raise NumericalError("non-finite local z in curve")
    if n_counties == 1:
        return z.copy()
    p_local = erfc(z / np.sqrt(2.0))
    with np.errstate(divide="ignore"):
        p_global = -np.expm1(n_counties * np.log1p(-p_local))
    sigma = -ndtri(0.5 * p_global) + 0.0
    out = np.minimum(z, sigma)
    out[p_local == 0.0] = z[p_local == 0.0]
    return out


_extreme_cache: dict[tuple[int, int, int], np.ndarray] = {}
_extreme_lock = threading.Lock()


def _chunk_max_abs(trials: int, n_counties: int, seed: int, chunk: int) -> np.ndarray:
    start = chunk * _MC_CHUNK
    m = min(_MC_CHUNK, trials - start)
    g = substream(seed, _MC_STREAM_BASE + chunk)
    u = g.standard_normal((m, n_counties))
    return np.max(np.abs(u), axis=1)


def mc_extremes(config: McConfig, threads: int = 1) -> np.ndarray:
    """Sorted per-trial max|u| table for the null of N clean counties.

    Each chunk of trials has its own counter-keyed substream, so the table
    is a pure function of (trials, n_counties, seed) no matter how chunks
    are scheduled. Tables are cached per config; repeated scoring against
    the same null is a binary search, not a re-simulation.
    """
    cache_key = (config.trials, config.n_counties, config.seed)
    with _extreme_lock:
        hit = _extreme_cache.get(cache_key)
    if hit is not None:
        return hit
    n_chunks = -(-config.trials // _MC_CHUNK)
    parts: list[np.ndarray | None] = [None] * n_chunks
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(_chunk_max_abs, config.trials, config.n_counties, config.seed, c): c
                for c in range(n_chunks)
            }
            for fut, c in futures.items():
                parts[c] = fut.result()
    else:
        for c in range(n_chunks):
            parts[c] = _chunk_max_abs(config.trials, config.n_counties, config.seed, c)
    table = np.sort(np.concatenate(parts))
    table.flags.writeable = False
    with _extreme_lock:
        _extreme_cache[cache_key] = table
        # keep the cache from growing without bound in long sweeps
        while len(_extreme_cache) > 8:
            _extreme_cache.pop(next(iter(_extreme_cache)))
    return table


def _sigma_from_p(p: float, cap: float) -> float:
    if p <= 0.0:
        return cap
    sigma = float(-ndtri(0.5 * p)) + 0.0
    return min(cap, sigma)


def global_significance_mc(
    local_z: float, config: McConfig, threads: int = 1
) -> McGlobalSignificance:
    """MC global significance: fraction of null trials at least as extreme.

    When zero trials reach |z| the true p is below 1/trials; the result is
    flagged `bounded` and the sigma falls back to the analytic conversion
    rather than pretending p = 0.
    """
    if not np.isfinite(local_z):
        raise NumericalError(f"local z must be finite, got {local_z}")
    z = abs(float(local_z))
    table = mc_extremes(config, threads=threads)
    count = int(table.shape[0] - np.searchsorted(table, z, side="left"))
    p = count / config.trials
    if count == 0:
        return McGlobalSignificance(
            p_global=0.0,
            sigma=global_significance_analytic(z, config.n_counties),
            stderr=0.0,
            sigma_stderr=float("inf"),
            bounded=True,
            trials=config.trials,
        )
    sigma = _sigma_from_p(p, cap=z)
    stderr = float(np.sqrt(p * (1.0 - p) / config.trials))
    density = float(np.exp(-0.5 * sigma * sigma) / np.sqrt(2.0 * np.pi))
    sigma_stderr = stderr / (2.0 * density) if density > 0 else float("inf")
    return McGlobalSignificance(
        p_global=p,
        sigma=sigma,
        stderr=stderr,
        sigma_stderr=sigma_stderr,
        bounded=False,
        trials=config.trials,
    )


def score_counties(
    resid: ResidualSet,
    width: WidthFit,
    mc: McConfig | None = None,
    threads: int = 1,
) -> list[AnomalyScore]:
    """Local and global sigma for every county in the evaluation set.

    The look-elsewhere N is the evaluation-set size. With an McConfig the
    global sigma comes from simulation (analytic fallback where the table
    runs out); otherwise it is analytic throughout.
    """
    if mc is not None and mc.n_counties != resid.n:
        raise ConfigError(
            f"MC null has {mc.n_counties} counties but evaluation set has {resid.n}"
        )
    scores = []
    for i, key in enumerate(resid.keys):
        z = local_significance(float(resid.residual[i]), width)
        if mc is None:
            g = global_significance_analytic(z, resid.n)
            beyond = False
        else:
            est = global_significance_mc(z, mc, threads=threads)
            g = est.sigma
            beyond = est.bounded
        scores.append(
            AnomalyScore(
                key=key,
                actual=float(resid.actual[i]),
                predicted=float(resid.predicted[i]),
                residual=float(resid.residual[i]),
                local_sigma=z,
                global_sigma=g,
                beyond_mc_table=beyond,
            )
        )
    return scores


def sorted_scores(scores) -> list[AnomalyScore]:
    """Most anomalous first: |local sigma| descending, ties by fips."""
    return sorted(scores, key=lambda s: (-abs(s.local_sigma), s.key.fips))


def _fmt1(value: float) -> str:
    """One-decimal table formatting; -0.0 is normalized to 0.0."""
    return f"{round(value, 1) + 0.0:.1f}"


RANKING_COLUMNS = (
    "fips",
    "county",
    "state",
    "actual_share",
    "predicted_share",
    "residual",
    "local_sigma",
    "global_sigma",
)


def rank_anomalies(scores, top_n: int | None = None) -> list[dict]:
    """Report rows, most anomalous first, formatted the way a results table
    prints them: shares and residuals in percent to one decimal, sigmas to
    one decimal."""
    ordered = sorted_scores(scores)
    if top_n is not None:
        ordered = ordered[:top_n]
    rows = []
    for s in ordered:
        rows.append(
            {
                "fips": s.key.fips,
                "county": s.key.name,
                "state": s.key.state,
                "actual_share": _fmt1(100.0 * s.actual),
                "predicted_share": _fmt1(100.0 * s.predicted),
                "residual": _fmt1(100.0 * s.residual),
                "local_sigma": _fmt1(s.local_sigma),
                "global_sigma": _fmt1(s.global_sigma),
            }
        )
    return rows


def write_ranking_csv(scores, path, top_n: int | None = None, comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.DictWriter(fh, fieldnames=RANKING_COLUMNS)
        writer.writeheader()
        writer.writerows(rank_anomalies(scores, top_n))


def read_ranking_csv(path) -> list[dict]:
    """Parse a ranking export back into its formatted rows."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return [dict(row) for row in csv.DictReader(lines)]


def write_scores_json(scores, path, meta: dict | None = None) -> None:
    """Full-precision JSON companion to the formatted CSV."""
    doc = {
        "format": "tamperscan-scores",
        "version": 1,
        "meta": meta or {},
        "counties": [
            {
                "fips": s.key.fips,
                "county": s.key.name,
                "state": s.key.state,
                "actual_share": s.actual,
                "predicted_share": s.predicted,
                "residual": s.residual,
                "local_sigma": s.local_sigma,
                "global_sigma": s.global_sigma,
                "beyond_mc_table": s.beyond_mc_table,
            }
            for s in sorted_scores(scores)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def counting_noise_floor(total_two_party_votes: int) -> float:
    """Relative share uncertainty from vote-count quantization, 1/sqrt(T).

    Diagnostic only; it never enters the significance math.
    """
    if total_two_party_votes <= 0:
        raise DataError(f"vote total must be positive, got {total_two_party_votes}")
    return 1.0 / float(np.sqrt(total_two_party_votes))


def size_correlation(resid: ResidualSet, dataset: Dataset, year: int | None = None) -> float:
    """Pearson r between log county size and |residual|.

    A clean fit shows no relationship; a strong one would mean the model is
    systematically worse for small (or large) counties.
    """
    if resid.n < 3:
        raise DataError(f"need at least 3 counties for a correlation, got {resid.n}")
    year = dataset.target_year if year is None else year
    by_fips = {k.fips: i for i, k in enumerate(dataset.keys)}
    idx = np.array([by_fips[k.fips] for k in resid.keys], dtype=np.intp)
    totals = (dataset.rep[year] + dataset.dem[year])[idx]
    if np.any(totals <= 0):
        raise DataError("zero two-party total in correlation input")
    x = np.log(totals.astype(np.float64))
    y = np.abs(resid.residual)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(np.mean(xc**2)))
    sy = float(np.sqrt(np.mean(yc**2)))
    if sx == 0.0 or sy == 0.0:
        raise NumericalError("zero variance; size correlation undefined")
    return float(np.mean(xc * yc) / (sx * sy))
