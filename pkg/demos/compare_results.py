"""
Reading the sweep results
=========================

``results/run_particle.sh`` and ``results/run_nav2d.sh`` train three seeds of
AAP and the GRU + linear actor-critic baseline and evaluate them.  This script
charts success rate against drift and prints the disabled-action numbers.
"""
from pathlib import Path

from aap.evalharness import MetricsSummary
from aap.plotting import plot_summaries

results = Path("results")
out = Path("demo_output")

particle = {v: results / f"particle_pointnav/{v}/eval/summary.csv" for v in ("aap", "gru_lac")}
if all(p.exists() for p in particle.values()):
    summaries = [MetricsSummary.from_csv(p.read_text()) for p in particle.values()]
    svg, table = plot_summaries(summaries, list(particle), out / "particle_sr.svg")
    print("wrote", svg, "and", table)
    for label, s in zip(particle, summaries):
        row = "  ".join(f"{c['drift_dr']:g}:{c['sr_mean']:.2f}" for c in s.cells)
        print(f"{label:8s} SR by rotation drift  {row}")
else:
    print("particle summaries not found; run results/run_particle.sh first")

nav = {v: results / f"nav2d_pointnav/{v}/eval_right/summary.csv" for v in ("aap", "gru_lac")}
if all(p.exists() for p in nav.values()):
    for label, p in nav.items():
        c = MetricsSummary.from_csv(p.read_text()).cells[0]
        print(f"{label:8s} right rotations disabled: SR {c['sr_mean']:.2f}  "
              f"ADR {c['adr_mean']:.2f}  DAU {c['dau_mean']:.1f}")
else:
    print("nav2d summaries not found; run results/run_nav2d.sh first")
