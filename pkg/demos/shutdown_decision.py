"""Decide whether a gas unit should run tomorrow, given a price forecast.

The forecast here is a fixed daily shape so the demo isolates the risk step.
It shows how the loss probability reacts to fuel price and start-up cost.

    python demos/shutdown_decision.py
"""
import numpy as np

from dalmp import risk

# A plausible day: cheap nights, an afternoon peak around 45 $/MWh.
HOURLY_PRICE = 22 + 23 * np.clip(np.sin(np.pi * (np.arange(24) - 6) / 16), 0, None)
MU = np.log(HOURLY_PRICE)
PEAK_HOURS = list(range(13, 21))


def show(spec):
    report = risk.assess(MU, spec, hours=PEAK_HOURS, n_samples=50_000, seed=0)
    print(report.summary())


def main():
    base = risk.RiskSpec(capacity_mw=200, heat_rate=7.5, gas_price=4.0, startup_cost=5_000, sigma=0.2)
    print(f"breakeven {base.breakeven:.1f} $/MWh, considering hours {PEAK_HOURS[0]}..{PEAK_HOURS[-1]}\n")
    show(base)

    print("\nfuel price sweep (start-up 5000 $):")
    for gas in (3.0, 4.0, 5.0, 6.0):
        spec = risk.RiskSpec(200, 7.5, gas, 5_000, 0.2)
        p = risk.block_profit_distribution(MU, PEAK_HOURS, spec, n_samples=50_000).p_loss
        print(f"  gas {gas:.1f} $/MMBtu -> p(loss) {p:.3f} -> {risk.recommend_shutdown(p, spec).value}")

    print("\nper-hour analytic loss probability at gas 5.0:")
    spec = risk.RiskSpec(200, 7.5, 5.0, 0, 0.2)
    print("  " + " ".join(f"{risk.hourly_loss_probability(m, spec):.2f}" for m in MU[PEAK_HOURS]))


if __name__ == "__main__":
    main()
