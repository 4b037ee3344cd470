"""Generate the console clutch replay fixture.

The browser console keeps a local mirror of the master-side clutch so it
can display the outgoing setpoint without a round trip.  Its test suite
replays the scripted input sequence below through the TypeScript mirror
and requires bit-identical commands, both as raw floats and after wire
quantization.  This script produces the reference answers with the
follower package's own clutch and codec.

Regenerate with:  python scripts/gen_console_fixture.py
"""

import json
import random
from pathlib import Path

from cathsim.link import MASTER_TRAVEL_MM, ClutchState, master_apply, set_pedal
from cathsim.protocol import FLAG_PEDAL, quantize

OUT = (
    Path(__file__).resolve().parents[1]
    / "frontend" / "test" / "fixtures" / "clutch_replay.json"
)


def build_ops() -> list:
    rng = random.Random(42)
    # Hand-picked edges first: truncation at both track ends, pedal-open
    # absorption with the knob still passing through, rounding baits on
    # the .0005 boundary, and values with repeating binary expansions.
    ops = [
        {"op": "delta", "d": [50.0, 0.0, 0.0]},
        {"op": "delta", "d": [-100.0, -370.0, 3.0]},
        {"op": "pedal", "engaged": False},
        {"op": "delta", "d": [10.0, 45.0, -5.0]},
        {"op": "delta", "d": [0.0005, -0.0005, 0.0015]},
        {"op": "pedal", "engaged": True},
        {"op": "delta", "d": [-0.0015, 0.1, 1.0 / 3.0]},
        {"op": "delta", "d": [38.3333333, 720.25, 40.0]},
        {"op": "delta", "d": [-0.75, -0.125, -80.0]},
    ]
    for _ in range(200):
        if rng.random() < 0.15:
            ops.append({"op": "pedal", "engaged": rng.random() < 0.5})
        else:
            ops.append({
                "op": "delta",
                "d": [
                    rng.uniform(-15.0, 15.0),
                    rng.uniform(-60.0, 60.0),
                    rng.uniform(-4.0, 4.0),
                ],
            })
    return ops


def main() -> None:
    ops = build_ops()
    clutch = ClutchState()
    expected = []
    for op in ops:
        if op["op"] == "pedal":
            set_pedal(clutch, op["engaged"])
            continue
        t_mm, r_deg, b_deg = master_apply(tuple(op["d"]), clutch)
        expected.append({
            "t_mm": t_mm,
            "r_deg": r_deg,
            "b_deg": b_deg,
            "t_um": quantize(t_mm, 1000.0),
            "r_mdeg": quantize(r_deg, 1000.0),
            "b_mdeg": quantize(b_deg, 1000.0),
            "flags": FLAG_PEDAL if clutch.engaged else 0,
        })
    fixture = {
        "travel_limit_mm": MASTER_TRAVEL_MM,
        "ops": ops,
        "expected": expected,
        "final": {
            "engaged": clutch.engaged,
            "master_offset_mm": clutch.master_offset_mm,
            "master_offset_deg": clutch.master_offset_deg,
            "master_travel_mm": clutch.master_travel_mm,
            "rotation_input_deg": clutch.rotation_input_deg,
            "knob_deg": clutch.knob_deg,
        },
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixture, indent=1) + "\n")
    print(f"wrote {OUT} ({len(ops)} ops, {len(expected)} commands)")


if __name__ == "__main__":
    main()
