"""Quick end-to-end check of the Python bindings."""

import math

import hypersde as h


def close(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b))


def main():
    bb = h.Model.bang_bang(2, 1.0)
    threshold = h.lambda_threshold(bb)["Lambda"]
    assert close(threshold, 166.52400427565473, 1e-8), threshold

    fast = bb.with_lambda(2.0 * threshold)
    c = h.decay_constants(fast)
    assert c["C2"] > 0 and c["C1"] >= math.sqrt(2), c
    print(f"Lambda={threshold!r} C1={c['C1']!r} C2={c['C2']!r}")

    try:
        h.decay_constants(bb)
    except ValueError as e:
        print("below threshold:", e)
    else:
        raise AssertionError("expected a threshold error below Lambda")

    assert bb.drift([0.0, 0.0]) == [0.0, 0.5]
    assert bb.jump_matrix([0.0, 0.0])[3] != 0.0

    path = h.simulate(bb, [0.0, 0.0], 0.1, 1e-3, seed=7, flow=True)
    assert len(path["states"]) == len(path["t"]) == 101
    assert path["local_time"][-1] >= 0.0
    again = h.simulate(bb, [0.0, 0.0], 0.1, 1e-3, seed=7, flow=True)
    assert again == path, "simulation is not reproducible"

    ou = h.Model.ou(2, 1.0)
    curve = h.decay_curve(ou, [0.0, 0.0], [0.6, -0.8], [1.0], 1e-3, 16, seed=1)
    assert close(curve[0]["estimate"]["mean"], (1 - 1e-3) ** 1000, 1e-12), curve

    check = h.verify_decay(fast, [0.0, 0.0], [0.0, 1.0], [0.5, 1.0], 1e-4, 200, seed=3)
    assert all(row["pass"] for row in check["checks"]), check["checks"]

    slope = h.pullback_slope(fast, 0.0, [-0.1, -0.2, -0.3], 1e-3, 32, seed=5)
    print(f"pullback slope={slope['slope']!r} (rate {c['C2']!r})")

    report = bb.validate(n_samples=500, seed=1)
    print("validation pass:", report["pass"])
    print("smoke test ok")


if __name__ == "__main__":
    main()
