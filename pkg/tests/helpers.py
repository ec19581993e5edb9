import numpy as np

from synthipd import IpdDataset

# one PASS/FAIL line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def random_dataset(rng, n, k_max=1, ties=False, censor_p=0.3):
    if ties:
        time = rng.integers(1, 6, size=n).astype(float)
    else:
        time = rng.exponential(10.0, size=n).round(6) + 1e-3
    event = rng.random(n) > censor_p
    arm = rng.integers(0, 2, size=n)
    cov = rng.integers(0, k_max + 1, size=n)
    return IpdDataset(time, event, arm, cov, k_max=k_max)


def write_pipeline_fixture(root, data, anneal, seed=1, grid_step=1.0, method="sequential"):
    """Render ``data``, and write the digitize job, targets, anneal config and
    pipeline job under ``root``. Returns the pipeline job path."""
    import json
    from pathlib import Path

    from synthipd import summarize
    from synthipd.digitize import RiskTable
    from synthipd.render import arm_selectors, render_km_svg

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "fig.svg").write_bytes(render_km_svg(data))
    summarize(data).save(root / "targets.json")
    curves, ticks = arm_selectors()
    grid = np.arange(0.0, data.time.max(), grid_step)
    job = {
        "schema": 1,
        "svg": "fig.svg",
        "calibration": "embedded",
        "arms": {str(a): {"selector": curves[a], "ticks": ticks[a]} for a in (0, 1)},
        "risk_table": RiskTable.from_data(data, grid).to_json(),
        "seed": 3,
        "method": method,
    }
    (root / "digitize.json").write_text(json.dumps(job))
    (root / "anneal.json").write_text(json.dumps(anneal))
    pipe = {"schema": 1, "digitize": "digitize.json", "targets": "targets.json",
            "anneal": "anneal.json", "out_dir": "out", "seed": seed}
    (root / "pipeline.json").write_text(json.dumps(pipe))
    return root / "pipeline.json"
