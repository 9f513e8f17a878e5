"""The vulnerability index: scores, weights, bands, and bulletins.

Shows how aggregate and event indicators turn into [0, 1] scores, how the
weighted sum lands in a severity band, and what the rendered plain-text
bulletin looks like.

Run:  python3 demos/04_vulnerability_index.py
"""

from semdews import default_ontology
from semdews.cep import DAY, EventRecord, WindowState
from semdews.dvi import compute_dvi, default_indicator_specs, score_indicators
from semdews.model import Severity, parse_term
from semdews.service import Bulletin

onto = default_ontology()
specs = default_indicator_specs(onto)

print("== indicator portfolio ==\n")
for spec in specs:
    kind = type(spec.source).__name__
    print(f"  {str(spec.indicator):<26} weight {spec.weight:.2f}  ({kind})")

# a parched fortnight: dry soil, hot air, no rain, low river
state = WindowState(21 * DAY)
series = {
    "env:soilMoisture": 0.11,
    "env:airTemperature": 296.5,
    "env:precipitation": 0.4,
    "env:waterLevel": 2.1,
}
for name, level in series.items():
    term = parse_term(name)
    for day in range(14):
        state.push(term, "n1", day * DAY, level)

events = [
    EventRecord(
        "soil-drying-severe", parse_term("env:droughtWarning"), Severity(4), 0.8,
        fired_at=12 * DAY, evidence=(),
    ),
    EventRecord(
        "ik-worm-sign", parse_term("ik:droughtSign"), Severity(3), 0.6,
        fired_at=13 * DAY, evidence=(),
    ),
]

now = 14 * DAY
scores = score_indicators(specs, state, events, now)
print("\n== scores as of day 14 ==\n")
for score in sorted(scores, key=lambda s: str(s.indicator)):
    flag = " (insufficient data)" if score.insufficient_data else ""
    print(f"  {str(score.indicator):<26} {score.score:.3f}{flag}")

dvi = compute_dvi(scores, specs, computed_at=now)
print(f"\nindex value {dvi.value:.4f} -> band {dvi.band}")

print("\n== the disseminated bulletin ==\n")
print(Bulletin.from_state(dvi, events).render())
