"""Blinded fits, vote-flip injection, and detection-sensitivity sweeps.

The blinded protocol trains only on trusted states and scores held-out
states, so tampering in the scored states cannot steer the model. Injection
moves k ballots between parties in one county (two-party total conserved)
and asks whether the blinded analysis notices. A sweep runs the injection
over a k grid for every county big enough to flip its state, producing the
detectability curve and the constrained/unconstrained classification.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .anomaly import (
    AnomalyScore,
    McConfig,
    ResidualSet,
    WidthFit,
    analytic_sigma_curve,
    fit_width,
    residuals,
    score_counties,
    sorted_scores,
)
from .data_model import Dataset, standardize
from .elastic_net import CvResult, CvSettings, FitModel, cross_validate, fit, predict
from .errors import ConfigError, DataError

DETECTION_SIGMA = 4.0

# Default held-out states: the four whose results the complaint contested.
DEFAULT_EVAL_STATES = frozenset({"PA", "WI", "MI", "GA"})


class Direction(str, Enum):
    R_TO_D = "R_to_D"
    D_TO_R = "D_to_R"

    @classmethod
    def parse(cls, text: str) -> "Direction":
        for d in cls:
            if text.strip().lower() == d.value.lower():
                return d
        raise ConfigError(f"direction must be R_to_D or D_to_R, got {text!r}")


@dataclass(frozen=True)
class BlindSpec:
    """Disjoint training and evaluation state sets plus CV settings."""

    train_states: frozenset[str]
    eval_states: frozenset[str] = DEFAULT_EVAL_STATES
    cv: CvSettings = CvSettings()

    def __post_init__(self):
        train = frozenset(self.train_states)
        ev = frozenset(self.eval_states)
        object.__setattr__(self, "train_states", train)
        object.__setattr__(self, "eval_states", ev)
        if not train or not ev:
            raise ConfigError("train and eval state sets must both be non-empty")
        overlap = train & ev
        if overlap:
            raise ConfigError(f"states in both train and eval sets: {sorted(overlap)}")


@dataclass(frozen=True)
class InjectionSpec:
    """Flip k ballots in one county from the source party to the other."""

    fips: str
    k: int
    direction: Direction

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError(f"flip count must be non-negative, got {self.k}")

    @property
    def reversed(self) -> "InjectionSpec":
        other = Direction.D_TO_R if self.direction is Direction.R_TO_D else Direction.R_TO_D
        return replace(self, direction=other)


@dataclass(frozen=True)
class StateSummary:
    """Two-party totals for one state. Totals are reals so counterfactual
    (predicted-share) summaries can reuse the type."""

    state: str
    rep_total: float
    dem_total: float

    @property
    def margin(self) -> float:
        return abs(self.rep_total - self.dem_total)

    @property
    def winner(self) -> str:
        diff = self.rep_total - self.dem_total
        if diff > 0:
            return "R"
        if diff < 0:
            return "D"
        return "tie"


@dataclass(frozen=True)
class SweepCurve:
    """Detection curve for one (county, direction): global sigma vs k."""

    fips: str
    county: str
    state: str
    direction: Direction
    samples: tuple[tuple[int, float], ...]
    margin: int              # state two-party margin M
    flip_threshold: int      # smallest k that flips the state, M//2 + 1
    k_detect: int | None     # first sampled k at or above 4 sigma

    def __post_init__(self):
        ks = [k for k, _ in self.samples]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise DataError("sweep samples must be strictly increasing in k")
        sigmas = [s for _, s in self.samples]
        for a, b in zip(sigmas, sigmas[1:]):
            if b < a - 1e-12:
                raise DataError("sweep sigma must be non-decreasing in k")

    @property
    def unconstrained(self) -> bool:
        """Figure convention: undetected at k up to the full margin M."""
        return self.k_detect is None or self.k_detect > self.margin

    @property
    def unconstrained_literal(self) -> bool:
        """Literal convention: undetected at the smallest outcome-flipping k."""
        return self.k_detect is None or self.k_detect > self.flip_threshold


@dataclass(frozen=True)
class BlindContext:
    """One blinded training, reusable across many eval-set scorings."""

    spec: BlindSpec
    model: FitModel
    cv: CvResult


@dataclass(frozen=True)
class BlindResult:
    model: FitModel
    cv: CvResult
    residuals: ResidualSet
    width: WidthFit
    scores: tuple[AnomalyScore, ...]  # ranked, most anomalous first


def prepare_blind_context(dataset: Dataset, spec: BlindSpec, threads: int = 1) -> BlindContext:
    """Cross-validate and fit on training states only.

    Because evaluation states never enter this function's data, the returned
    model is provably independent of anything done to their rows.
    """
    train = dataset.subset_states(spec.train_states)
    dataset.subset_states(spec.eval_states)  # fail fast if eval is empty
    y = train.shares()
    cv = cross_validate(
        train.X,
        y,
        l1_grid=spec.cv.l1_grid,
        k=spec.cv.folds,
        seed=spec.cv.seed,
        n_alphas=spec.cv.n_alphas,
        eps=spec.cv.eps,
        tol=spec.cv.tol,
        max_iter=spec.cv.max_iter,
        threads=threads,
    )
    Xs, params = standardize(train.X, train.feature_names)
    model = fit(Xs, y, cv.selected, params, tol=spec.cv.tol, max_iter=spec.cv.max_iter)
    model = replace(
        model,
        training_meta={
            **model.training_meta,
            "cv_seed": spec.cv.seed,
            "train_states": sorted(spec.train_states),
            "eval_states": sorted(spec.eval_states),
            "n_train": train.n,
        },
    )
    return BlindContext(spec=spec, model=model, cv=cv)


def score_eval_set(
    ctx: BlindContext,
    dataset: Dataset,
    mc_trials: int | None = None,
    mc_seed: int = 0,
    threads: int = 1,
) -> BlindResult:
    """Score the evaluation states of `dataset` under a prepared context.

    The look-elsewhere N is the evaluation-county count and the width is fit
    on the evaluation residuals themselves.
    """
    eval_ds = dataset.subset_states(ctx.spec.eval_states)
    resid = residuals(ctx.model, eval_ds)
    width = fit_width(resid)
    mc = McConfig(n_counties=resid.n, trials=mc_trials, seed=mc_seed) if mc_trials else None
    scores = score_counties(resid, width, mc=mc, threads=threads)
    return BlindResult(
        model=ctx.model,
        cv=ctx.cv,
        residuals=resid,
        width=width,
        scores=tuple(sorted_scores(scores)),
    )


def blind_fit(
    dataset: Dataset,
    spec: BlindSpec,
    mc_trials: int | None = None,
    mc_seed: int = 0,
    threads: int = 1,
) -> BlindResult:
    """Train on the trusted states, score the held-out states."""
    ctx = prepare_blind_context(dataset, spec, threads=threads)
    return score_eval_set(ctx, dataset, mc_trials=mc_trials, mc_seed=mc_seed, threads=threads)


def inject_flips(dataset: Dataset, spec: InjectionSpec) -> Dataset:
    """Return a copy of the dataset with k target-year ballots flipped.

    R_to_D removes k from the Republican tally and adds k to the Democratic
    tally (so the two-party total is conserved and the share moves by
    exactly -k/T); D_to_R is the mirror image. No other county and no other
    year changes.
    """
    i = dataset.index_of(spec.fips)
    year = dataset.target_year
    rep = dataset.rep[year].copy()
    dem = dataset.dem[year].copy()
    source = rep[i] if spec.direction is Direction.R_TO_D else dem[i]
    if spec.k > source:
        party = "Republican" if spec.direction is Direction.R_TO_D else "Democratic"
        raise DataError(
            f"cannot flip {spec.k} {party} votes in county {spec.fips}: "
            f"only {int(source)} available (short {spec.k - int(source)})"
        )
    if spec.direction is Direction.R_TO_D:
        rep[i] -= spec.k
        dem[i] += spec.k
    else:
        dem[i] -= spec.k
        rep[i] += spec.k
    new_rep = dict(dataset.rep)
    new_dem = dict(dataset.dem)
    new_rep[year] = rep
    new_dem[year] = dem
    return Dataset.build(
        keys=dataset.keys,
        feature_names=dataset.feature_names,
        X=dataset.X,
        rep=new_rep,
        dem=new_dem,
        target_year=year,
    )


@dataclass(frozen=True)
class InjectionResult:
    injected: AnomalyScore
    rank: int                # 1-based rank of the injected county
    blind: BlindResult


def run_injection_experiment(
    dataset: Dataset,
    blind: BlindSpec,
    inj: InjectionSpec,
    mc_trials: int | None = None,
    mc_seed: int = 0,
    threads: int = 1,
    context: BlindContext | None = None,
) -> InjectionResult:
    """Inject, run the blinded analysis on the tampered data, locate the
    injected county in the ranking.

    A precomputed `context` (from the untampered data) may be supplied:
    training sees only train states, which injection never touches, so the
    model is identical either way and only the scoring needs redoing.
    """
    i = dataset.index_of(inj.fips)
    state = dataset.keys[i].state
    if state in blind.train_states:
        raise ConfigError(f"county {inj.fips} is in a training state ({state})")
    if state not in blind.eval_states:
        raise ConfigError(f"county {inj.fips} is not in an evaluation state")
    if context is not None and context.spec != blind:
        raise ConfigError("supplied context was prepared for a different blind spec")
    tampered = inject_flips(dataset, inj)
    if context is None:
        context = prepare_blind_context(tampered, blind, threads=threads)
    result = score_eval_set(
        context, tampered, mc_trials=mc_trials, mc_seed=mc_seed, threads=threads
    )
    for rank, score in enumerate(result.scores, start=1):
        if score.key.fips == inj.fips:
            return InjectionResult(injected=score, rank=rank, blind=result)
    raise DataError(f"county {inj.fips} missing from evaluation scores")


def state_summary(dataset: Dataset, state: str, year: int | None = None) -> StateSummary:
    """Actual two-party totals and margin for one state."""
    sub = dataset.subset_states([state])
    year = dataset.target_year if year is None else year
    return StateSummary(
        state=state,
        rep_total=float(sub.rep[year].sum()),
        dem_total=float(sub.dem[year].sum()),
    )


def counterfactual_winner(dataset: Dataset, model: FitModel, state: str) -> StateSummary:
    """State summary if every county had voted exactly as predicted.

    Each county's two-party total T is kept; its votes are re-split as
    predicted_share * T vs the remainder. Predictions are clamped to [0, 1]
    here, where they must act as vote fractions.
    """
    sub = dataset.subset_states([state])
    pred = np.clip(predict(model, sub.X, sub.feature_names), 0.0, 1.0)
    totals = (sub.rep[sub.target_year] + sub.dem[sub.target_year]).astype(np.float64)
    rep = pred * totals
    return StateSummary(
        state=state,
        rep_total=float(rep.sum()),
        dem_total=float((totals - rep).sum()),
    )


def _curve_sigmas(
    rep: int, dem: int, pred: float, width: float,
    ks: np.ndarray, direction: Direction, n_eval: int,
) -> np.ndarray:
    """Global sigma at each k, by exact tally arithmetic.

    The tampered share is rebuilt from integer tallies against the model's
    prediction, bit-identical to what a full re-run would produce.
    Significance is one-sided in the tampering direction against the
    baseline width: the deviation a flip of that direction creates is a
    share deficit (R_to_D) or excess (D_to_R), and measuring only that tail
    is what makes the curve monotone even for counties whose untampered
    residual leans the other way.
    """
    total = rep + dem
    if direction is Direction.R_TO_D:
        shares = (rep - ks) / total
        deviation = np.maximum(0.0, -(shares - pred))
    else:
        shares = (rep + ks) / total
        deviation = np.maximum(0.0, shares - pred)
    return analytic_sigma_curve(deviation / width, n_eval)


def sweep(
    dataset: Dataset,
    blind: BlindSpec,
    state: str,
    k_step: int | None = None,
    threads: int = 1,
    context: BlindContext | None = None,
) -> list[SweepCurve]:
    """Detection curves for every county able to flip its state.

    For each direction, a county is eligible when its source-party votes
    exceed the state margin M. k runs from 0 to min(source votes, 2M) in
    steps of max(1, M // 50) (finer if k_step is given), endpoint included.
    One blinded model (training never sees eval states) and the baseline
    evaluation width serve every curve.
    """
    if state not in blind.eval_states:
        raise ConfigError(f"sweep state {state} is not in the evaluation set")
    summary = state_summary(dataset, state)
    margin = int(round(summary.margin))
    if margin == 0:
        raise ConfigError(f"state {state} is exactly tied; sweep undefined")
    if context is None:
        context = prepare_blind_context(dataset, blind, threads=threads)
    elif context.spec != blind:
        raise ConfigError("supplied context was prepared for a different blind spec")
    base = score_eval_set(context, dataset)
    pred_by_fips = {k.fips: float(p) for k, p in zip(base.residuals.keys, base.residuals.predicted)}
    n_eval = base.residuals.n
    width = base.width.width

    sub = dataset.subset_states([state])
    year = dataset.target_year
    step = k_step if k_step is not None else max(1, margin // 50)
    if step < 1:
        raise ConfigError(f"k_step must be at least 1, got {step}")

    jobs = []
    for i, key in enumerate(sub.keys):
        rep = int(sub.rep[year][i])
        dem = int(sub.dem[year][i])
        for direction, source in ((Direction.R_TO_D, rep), (Direction.D_TO_R, dem)):
            if source > margin:
                jobs.append((key, rep, dem, direction, source))

    def build(job) -> SweepCurve:
        key, rep, dem, direction, source = job
        k_max = min(source, 2 * margin)
        ks = list(range(0, k_max + 1, step))
        if ks[-1] != k_max:
            ks.append(k_max)
        ks = np.asarray(ks, dtype=np.int64)
        sigmas = _curve_sigmas(
            rep, dem, pred_by_fips[key.fips], width, ks, direction, n_eval
        )
        hits = np.flatnonzero(sigmas >= DETECTION_SIGMA)
        k_detect = int(ks[hits[0]]) if hits.size else None
        return SweepCurve(
            fips=key.fips,
            county=key.name,
            state=key.state,
            direction=direction,
            samples=tuple((int(k), float(s)) for k, s in zip(ks, sigmas)),
            margin=margin,
            flip_threshold=margin // 2 + 1,
            k_detect=k_detect,
        )

    if threads > 1 and len(jobs) > 1:
        curves: list[SweepCurve | None] = [None] * len(jobs)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(build, job): j for j, job in enumerate(jobs)}
            for fut, j in futures.items():
                curves[j] = fut.result()
    else:
        curves = [build(job) for job in jobs]
    curves.sort(key=lambda c: (c.fips, c.direction.value))
    return curves


def unconstrained_counties(curves) -> list[str]:
    """Counties undetectable at outcome-determinative k (figure convention):
    a county qualifies when ANY direction's curve is unconstrained."""
    out = {}
    for c in curves:
        if c.unconstrained:
            out[c.fips] = c.county
    return [out[f] for f in sorted(out)]


def write_sweep_csv(curves, path, comment: str = "") -> None:
    """Long-format curve export: one row per sampled k, full precision."""
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["fips", "county", "state", "direction", "k", "global_sigma"])
        for c in curves:
            for k, sigma in c.samples:
                writer.writerow(
                    [c.fips, c.county, c.state, c.direction.value, str(k), repr(sigma)]
                )


def sweep_summary(curves) -> dict:
    """Per-state classification counts and per-curve detection thresholds."""
    by_state: dict[str, list[SweepCurve]] = {}
    for c in curves:
        by_state.setdefault(c.state, []).append(c)
    out = {}
    for state, group in sorted(by_state.items()):
        unc = unconstrained_counties(group)
        out[state] = {
            "margin": group[0].margin,
            "flip_threshold": group[0].flip_threshold,
            "curves": [
                {
                    "fips": c.fips,
                    "county": c.county,
                    "direction": c.direction.value,
                    "k_detect": c.k_detect,
                    "unconstrained": c.unconstrained,
                    "unconstrained_literal": c.unconstrained_literal,
                }
                for c in group
            ],
            "unconstrained_counties": unc,
            "unconstrained_count": len(unc),
        }
    return out
