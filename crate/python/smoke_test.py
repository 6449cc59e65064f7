"""Smoke test for the rampc_py extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/rampc-*.whl
"""

import json
import math
from pathlib import Path

import rampc_py as rp

ROOT = Path(__file__).resolve().parent.parent


def main():
    cfg = rp.Config.load(str(ROOT / "configs" / "default.toml"))
    assert cfg == rp.Config()
    assert rp.Config.from_toml(cfg.to_toml()) == cfg

    model = rp.Model(cfg)
    x = [0.0] * rp.NX
    x[2] = 1.0
    u = model.hover_input(0.0)
    x1 = model.rk4(x, u, 0.0, cfg.dt)
    assert max(abs(a - b) for a, b in zip(x, x1)) < 1e-9, "hover should stay put"

    assert abs(rp.chi2_inv(2, 0.95) - 5.991464547107979) < 1e-9

    scn = rp.Scenario.load(str(ROOT / "scenarios" / "table2_2.toml"))
    res = rp.run(scn, "ramp", cfg)
    g_open, g_close, p_open, p_close = scn.windows
    print(f"table2-2 ramp: {res.status} T_g {res.t_grasp:.2f} T_p {res.t_place:.2f} cost {res.cost:.1f}")
    assert res.success
    assert g_open <= res.t_grasp <= g_close and p_open <= res.t_place <= p_close
    assert len(res.states()) == len(res) == len(res.times())
    summary = json.loads(res.summary_json())
    assert summary["status"] == "SUCCESS"
    assert res.steps_csv().startswith("t,x,y,z")

    m, v = res.mass_estimates()[-1], res.mass_variances()[-1]
    assert abs(m - scn.true_mass) <= 3 * math.sqrt(v) + 0.01 * scn.true_mass

    again = rp.batch([scn], "ramp", cfg, 1)[0]
    assert again.steps_csv() == res.steps_csv()

    try:
        rp.run(scn, "pid")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown controller accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
