"""Smoke test for the ota_consensus_py extension module."""

import json
import math

import ota_consensus_py as oc


def main():
    ring = oc.Topology.ring(10)
    assert ring.n_agents == 10 and ring.is_connected()
    assert abs(ring.fiedler() - (2 - 2 * math.cos(2 * math.pi / 10))) < 1e-10

    model = oc.ChannelModel(10, lam=1.0, sigma2=0.01, p=0.5)
    l_bar = model.expected_laplacian(ring)
    assert all(abs(sum(row)) < 1e-12 for row in l_bar)
    assert abs(model.fiedler(ring) - 0.5 * ring.fiedler()) < 1e-10

    x = [float(i) for i in range(1, 11)]
    assert oc.lyapunov(x) == 82.5
    stepped = model.step(ring, x, alpha=0.1, k=0, seed=1)
    assert stepped == model.step(ring, x, alpha=0.1, k=0, seed=1)
    assert len(stepped) == 10

    scenario = {
        "topology": {"kind": "complete", "n_agents": 4},
        "channel": {"p": 0.5, "sigma2": 0.01, "lambda": 1.0},
        "schedule": {"kind": "power_law", "p": 0.75, "scale": "auto_dmax"},
        "initial": {"kind": "ramp", "start": 1.0, "step": 1.0},
        "horizon": 2000,
        "trials": 8,
        "seed": 5,
    }
    verdicts = oc.validate_scenario(json.dumps(scenario))
    assert verdicts["passed"], verdicts
    agg = oc.run_scenario(json.dumps(scenario))
    assert agg["final_mean_v"] < agg["initial_v"]

    try:
        oc.Topology(3, [(1, 1)])
    except oc.ConsensusError:
        pass
    else:
        raise AssertionError("self-loop accepted")

    print("smoke test passed:", agg["trials"], "trials, final V", agg["final_mean_v"])


if __name__ == "__main__":
    main()
