"""Blinded training: fit on trusted states only, score the questioned ones.

Synthetic stand-in for the dispute scenario. Seven states play the trusted
side, four play the questioned side. The model never sees the questioned
states during training, so nothing done to their returns can bias it. The
script scores the questioned states, reports modeled counterfactual winners,
and then injects vote flips into a questioned-state county to show the
injection surfacing in the blind ranking.

Run:  python3 demos/blind_protocol.py
"""

import numpy as np

from tamperscan import (
    BlindSpec,
    CvSettings,
    Direction,
    InjectionSpec,
    SyntheticSpec,
    counterfactual_winner,
    generate_synthetic,
    prepare_blind_context,
    run_injection_experiment,
    state_summary,
)
from tamperscan.scenarios import score_eval_set

SPEC = BlindSpec(
    train_states=frozenset({"AL", "AZ", "CA", "CO", "MT", "TX", "WY"}),
    eval_states=frozenset({"GA", "MI", "PA", "WI"}),
    cv=CvSettings(l1_grid=(0.5, 1.0), n_alphas=25),
)


def main():
    dataset, _ = generate_synthetic(
        SyntheticSpec(n_counties=500, n_features=50, n_active=5, noise_sd=0.01, seed=7)
    )
    ctx = prepare_blind_context(dataset, SPEC, threads=4)
    result = score_eval_set(ctx, dataset, threads=4)

    print(f"trained on {sorted(SPEC.train_states)}")
    print(f"scoring {result.residuals.n} counties in {sorted(SPEC.eval_states)}, "
          f"eval rms {100 * result.residuals.rms:.2f}%\n")

    for state in sorted(SPEC.eval_states):
        actual = state_summary(dataset, state)
        modeled = counterfactual_winner(dataset, result.model, state)
        flag = "" if actual.winner == modeled.winner else "  <- disagreement"
        print(f"  {state}: actual {actual.winner} by {actual.margin:,.0f}, "
              f"modeled {modeled.winner} by {modeled.margin:,.0f}{flag}")

    # tamper with the biggest questioned-state county and rescore. the
    # context is reusable: training never saw these states.
    ev = dataset.subset_states(SPEC.eval_states)
    i = int(np.argmax(ev.rep[ev.target_year] + ev.dem[ev.target_year]))
    victim = ev.keys[i]
    k = int(0.04 * (ev.rep[ev.target_year][i] + ev.dem[ev.target_year][i]))
    print(f"\ninjecting {k:,} flips R to D into {victim.name} ({victim.fips}, {victim.state})")

    inj = run_injection_experiment(
        dataset, SPEC,
        InjectionSpec(fips=victim.fips, k=k, direction=Direction.R_TO_D),
        threads=4, context=ctx,
    )
    s = inj.injected
    print(f"after injection: rank {inj.rank} of {result.residuals.n}, "
          f"local {s.local_sigma:+.1f} sigma, global {s.global_sigma:.1f} sigma")


if __name__ == "__main__":
    main()
