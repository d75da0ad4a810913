"""Quick end-to-end check of the Python bindings on a tiny configuration.

Build and install first:
    pip install --no-build-isolation -e crates/py
"""

import math
import os
import tempfile

import diffbid_py as db

SMALL = """
[env]
periods = 12
n_advertisers = 4
n_min = 20
n_max = 40
[collect]
n_trajectories = 16
[diffusion]
steps = 5
[denoiser]
channels = [8, 16]
embed_dim = 16
hidden_dim = 32
groups = 4
[train]
epochs = 3
lr = 1e-3
ema_warmup = 4
[invdyn_train]
epochs = 3
[eval]
n_runs = 3
top_k = 2
budgets = [1500.0, 2500.0]
replan_every = 3
"""


def main():
    ab = db.cosine_alpha_bar(10)
    assert ab[0] == 1.0 and all(b < a for a, b in zip(ab, ab[1:]))

    value, cost, _ = db.hindsight_oracle([(6.0, 5.0), (5.0, 4.0), (4.0, 3.0)], 7.0)
    assert value == 9.0 and cost == 7.0

    cfg = db.ExperimentConfig(SMALL)
    ds = db.collect(cfg)
    assert len(ds) == 16
    assert ds.states(0)[0][:2] == [1.0, 1.0]

    bundle = db.train(cfg, ds)
    hist = ds.states(0)[:3]
    plan = bundle.generate(hist, {"return": 1.0}, seed=7)
    assert len(plan) == bundle.horizon
    assert all(math.isfinite(v) for row in plan for v in row)
    assert plan == bundle.generate(hist, {"return": 1.0}, seed=7)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "bundle.ckpt")
        bundle.save(path)
        again = db.PolicyBundle.load(path)
        assert again.generate(hist, None, seed=1) == bundle.generate(hist, None, seed=1)

    rows = db.evaluate_policy(cfg, bundle)
    base = db.evaluate_baseline(cfg)
    for r, b in zip(rows, base):
        assert r["budget"] == b["budget"]
        assert r["oracle_ratio"] <= 1.0 + 1e-9
        print(f"budget {r['budget']:.0f}: diffbid {r['top_k_score']:.1f}, pacing {b['top_k_score']:.1f}, oracle {r['oracle']:.1f}")

    try:
        db.ExperimentConfig("[env]\nperiodz = 3\n")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config field accepted")
    print("python smoke test ok")


if __name__ == "__main__":
    main()
