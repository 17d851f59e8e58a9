"""Smoke test for the exitbandit_py extension module.

Build and run from the repository root:

    cargo build -p exitbandit-py --release --features extension-module
    cp target/release/libexitbandit_py.so target/release/exitbandit_py.so
    PYTHONPATH=target/release python3 crates/python/python/smoke_test.py
"""

import json
import math

import exitbandit_py as eb


def main():
    arms = eb.build_action_set(2, 10)
    assert len(arms) == 10 and arms[-1] == 1.0
    assert abs(arms[0] - 0.55) < 1e-12

    cost = eb.CostModel(12)
    assert cost.latency_cost(12) == 1.0
    assert cost.reward_bounds(2)[0] == -1.0

    confs = [0.6, 0.7, 0.85] + [0.9] * 9
    trace = eb.ConfidenceTrace("x", 2, confs)
    out = eb.evaluate_exit(trace, 0.8, cost)
    assert out["exit_layer"] == 3
    assert abs(out["reward"] - 0.125) < 1e-12

    try:
        eb.ConfidenceTrace("bad", 2, [0.3, 0.9])
    except ValueError:
        pass
    else:
        raise AssertionError("confidence below 1/C accepted")

    config = {"base_curve": [0.554] + [0.646] * 8 + [0.66, 0.68, 0.72],
              "noise_scale": 0.001, "seed": 3}
    stream = eb.generate_stream(json.dumps(config), 5000)
    assert len(stream) == 5000 and stream.num_layers == 12

    again = eb.TraceStream.parse(stream.to_jsonl())
    assert again.to_jsonl() == stream.to_jsonl()

    report = eb.run_stream(stream, arms, cost, gamma=1.0, seed=3)
    oracle = report.oracle
    assert report.rounds == 5000
    assert sum(report.per_arm_pulls) == 5000
    assert oracle.best_threshold == 0.6
    pulls = report.per_arm_pulls
    assert pulls.index(max(pulls)) == oracle.best_arm_index
    assert report.pull_fraction(oracle.best_arm_index, 1000) > 0.5
    regret = report.cumulative_regret
    assert all(b >= a for a, b in zip(regret, regret[1:]))

    table = eb.oracle_mean_rewards(stream, arms, cost)
    assert table.per_arm_mean_reward == oracle.per_arm_mean_reward

    assert eb.speedup_ratio([0] * 5 + [7] + [0] * 6) == 2.0
    bound = eb.regret_bound(1.0, [0.0, 0.1], 3)
    assert math.isclose(bound, 40 * math.log(3) + (math.pi ** 2 / 3 + 1) * 0.1)
    assert report.to_csv().startswith("round,arm_index,threshold")

    print(f"ok: best threshold {oracle.best_threshold}, "
          f"final regret {regret[-1]:.2f}, speedup {report.speedup:.3f}")


if __name__ == "__main__":
    main()
