"""How the confidence threshold moves with the accuracy target and with loss.

    python demos/calibration_walkthrough.py

Uses the bundled synthetic trace.
"""

from lossyserve.confidence import accuracy_curve, arbitrate, calibrate, requirement_grid
from lossyserve.traces import load_fixture_trace, separation

trace = load_fixture_trace()
print(f"trace: {len(trace)} rows, loss levels {trace.levels()}")
print("mean frontend confidence on right vs wrong answers:")
for lv, d in separation(trace).items():
    print(f"  loss {lv}: {d['mean_conf_correct']:.3f} vs {d['mean_conf_incorrect']:.3f}")

# the raw curve behind every table entry
cands, acc, frac = accuracy_curve(trace.at_level(0.0))
print("\nthreshold  accuracy  handled-at-edge   (lossless)")
for k in range(0, len(cands), max(1, len(cands) // 12)):
    print(f"{cands[k]:9.4f}  {acc[k]:8.4f}  {frac[k]:15.4f}")

table = calibrate(trace, requirement_grid())
print("\nrequirement -> threshold per loss level (edge share in brackets)")
print("  A     " + "".join(f"{lv:>20}" for lv in table.levels()))
for a in requirement_grid()[::3]:
    cells = []
    for lv in table.levels():
        e = next(x for x in table.entries if x.loss_level == lv and x.requirement == a)
        cells.append(f"{e.threshold:.3f} [{e.predicted_frontend_fraction:.2f}]"
                     + ("" if e.satisfiable else "!"))
    print(f"  {a:.2f}  " + "".join(f"{c:>20}" for c in cells))

print("\nthree requests at A=0.80:")
for conf in (0.95, 0.5, 0.1):
    d = arbitrate(conf, 0.80, table)
    print(f"  confidence {conf:.2f} -> {d.kind.value} (threshold {d.threshold_used:.3f})")
