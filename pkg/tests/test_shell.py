import csv
import json
import math

import numpy as np
import pytest
from sklearn.base import clone

from arnoldkam.constants import build_constants, epsilon_star
from arnoldkam.diophantine import best_alpha
from arnoldkam.kam_iterate import measured_bounds
from arnoldkam.shell import (GOLDEN, ArnoldKAM, ConfigError, RunConfig, RunReport, build_problem,
                             catalog, load_config, main, run_pipeline, save_config, sweep,
                             write_torus_csv)


def small(name, eps, **kw):
    sizes = {"pendulum": dict(D=3, N=8), "rotors2d": dict(D=3, N=8)}[name]
    return catalog(name, eps=eps, **dict(sizes, **kw))


def compliant_config():
    return catalog("rotors2d", eps=1e-36, D=3, N=12, max_steps=3, stop_tol=0)


def drop_timing(obj):
    if isinstance(obj, dict):
        return {k: drop_timing(v) for k, v in obj.items() if k not in ("timings", "seconds")}
    if isinstance(obj, list):
        return [drop_timing(v) for v in obj]
    return obj


@pytest.fixture(scope="module")
def compliant_result():
    return run_pipeline(compliant_config(), keep_objects=True)


# ---------------------------------------------------------------- catalog and configs


def test_catalog_pendulum():
    cfg = catalog("pendulum", omega=0.3, eps=1e-3)
    assert cfg.d == 1 and cfg.alpha == 0.3 and cfg.force
    prob, alpha = build_problem(cfg)
    assert prob.omega[0] == pytest.approx(0.3)
    # P = cos x - 1
    assert prob.P.terms == {((1,), (0,)): 0.5, ((-1,), (0,)): 0.5, ((0,), (0,)): -1.0}


def test_catalog_rotors2d_auto_alpha():
    cfg = catalog("rotors2d", omega=(1.0, GOLDEN), eps=1e-5)
    assert cfg.alpha == best_alpha((1.0, GOLDEN), 1.0, cfg.N)
    prob, alpha = build_problem(cfg)
    assert np.allclose(prob.omega, [1.0, GOLDEN])


def test_catalog_rotors3d():
    cfg = catalog("rotors3d")
    assert cfg.d == 3 and cfg.tau == 2.0 and cfg.alpha > 0


def test_catalog_unknown():
    with pytest.raises(ValueError, match="unknown catalog entry"):
        catalog("double_pendulum")


def test_config_round_trip(tmp_path):
    cfg = catalog("rotors2d", eps=1e-7)
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    back = load_config(path)
    assert back == cfg
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_load_config_resolves_auto_alpha(tmp_path):
    data = catalog("rotors2d").to_dict()
    data["alpha"] = "auto"
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    assert load_config(path).alpha == best_alpha((1.0, GOLDEN), 1.0, data["N"])


def write(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return path


@pytest.mark.parametrize("change,field", [
    ({"s_star": 1.0}, "s_star"),
    ({"s_star": 1.5}, "s_star"),
    ({"epsilon": -1.0}, "epsilon"),
    ({"tau": 0.5}, "tau"),
    ({"y0": [1.0]}, "y0"),
    ({"P": [{"k": [1, 0], "m": [0, 0], "re": 1.0, "im": 0.0}]}, "P"),  # no conjugate partner
    ({"K": [{"k": [0, 0], "m": [2, 0], "im": 0.0}]}, "K[0].re"),
    ({"colour": "red"}, "colour"),
])
def test_load_config_errors(tmp_path, change, field):
    data = catalog("rotors2d").to_dict()
    data.update(change)
    with pytest.raises(ConfigError) as exc:
        load_config(write(tmp_path, data))
    assert exc.value.path == field


def test_load_config_missing_field_and_bad_json(tmp_path):
    data = catalog("rotors2d").to_dict()
    del data["P"]
    with pytest.raises(ConfigError, match="missing required field"):
        load_config(write(tmp_path, data))
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(write(tmp_path, "{d: 2"))


def test_angle_dependent_K_rejected():
    cfg = catalog("rotors2d")
    cfg.K = cfg.K + [{"k": [1, 0], "m": [0, 0], "re": 0.5, "im": 0.0},
                     {"k": [-1, 0], "m": [0, 0], "re": 0.5, "im": 0.0}]
    with pytest.raises(ConfigError, match="must not depend on the angles"):
        build_problem(cfg)


# ---------------------------------------------------------------- pipeline


def test_zero_perturbation_pipeline():
    rep = run_pipeline(small("rotors2d", 0.0))
    assert rep.status == "pass" and rep.exit_code == 0
    ver = rep.verification
    assert ver["invariance_error"] < 1e-12 and ver["torus_residual"] == 0.0
    assert ver["symplecticity_defect"] == 0.0 and ver["oscillation"] == 0.0
    assert ver["invariance_ok"] and ver["symplecticity_ok"]


def test_twice_threshold_stops_early():
    cfg = small("rotors2d", 1.0)
    prob, alpha = build_problem(cfg)
    Kbar, Tbar, Pbar = measured_bounds(prob.K, prob.P, cfg.r, cfg.s)
    e_star = epsilon_star(build_constants(2, 1.0), cfg.s, cfg.s_star, max(Kbar * Tbar, 1.0))
    cfg.epsilon = 2 * e_star * alpha ** 2 / (Kbar * Pbar)
    rep = run_pipeline(cfg)
    assert rep.status == "theoretical_failure" and rep.exit_code == 2
    assert any("smallness condition eps_tilde <= eps_star" in m for m in rep.messages)
    assert rep.run == {} and rep.torus == {}
    assert rep.smallness["eps_margin"] == pytest.approx(0.5, rel=1e-12)


def test_compliant_report_all_pass(compliant_result):
    rep = compliant_result.report
    assert rep.status == "pass" and rep.exit_code == 0
    assert rep.smallness["ok"]
    ver = rep.verification
    for flag in ("invariance_ok", "symplecticity_ok", "torus_bound_ok", "compliant_checks_ok"):
        assert ver[flag], flag
    assert ver["step_checks"] and all(c["ok"] and c["compliant"] for c in ver["step_checks"])
    assert ver["theta_recursion_defect"] < 1e-12
    assert ver["kolmogorov"]["invertible"]
    assert all(step["conditions"][k]["ok"] for step in rep.run["steps"] for k in step["conditions"])


def test_report_round_trip(compliant_result, tmp_path):
    rep = compliant_result.report
    assert RunReport.from_json(rep.to_json()) == rep
    rep.save(tmp_path / "r.json")
    assert RunReport.load(tmp_path / "r.json") == rep


def test_pipeline_deterministic(compliant_result):
    again = run_pipeline(compliant_config())
    a = drop_timing(json.loads(compliant_result.report.to_json()))
    b = drop_timing(json.loads(again.to_json()))
    assert a == b


def test_torus_csv_d2(compliant_result, tmp_path):
    path = tmp_path / "t.csv"
    tor = compliant_result.torus
    write_torus_csv(tor, path)
    rows = list(csv.reader(open(path, newline="")))
    assert rows[0] == ["k1", "k2", "re_u1", "im_u1", "re_u2", "im_u2", "re_v1", "im_v1", "re_v2", "im_v2"]
    table = tor.coefficient_table()
    assert len(rows) - 1 == len(table) > 0
    for row, (k, u, v) in zip(rows[1:], table):
        assert tuple(int(x) for x in row[:2]) == k
        vals = [float(x) for x in row[2:]]
        assert vals == [p for z in u + v for p in (z.real, z.imag)]


def test_torus_csv_d1(tmp_path):
    res = run_pipeline(small("pendulum", 1e-5, max_steps=2), verify=False, keep_objects=True)
    path = tmp_path / "p.csv"
    write_torus_csv(res.torus, path)
    header = next(csv.reader(open(path, newline="")))
    assert header == ["k1", "re_u", "im_u", "re_v", "im_v"]


# ---------------------------------------------------------------- CLI


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["constants", "--d", "2", "--tau", "1", "--s", "1", "--s-star", "0.5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["a"] == 20 and out["eps_star"] < out["eps_sharp"]
    assert main(["check", "--preset", "rotors2d", "--eps", "1e-6"]) == 2
    capsys.readouterr()
    assert main(["check", "--preset", "rotors2d", "--eps", "1e-40"]) == 0
    capsys.readouterr()
    rep_path, csv_path = tmp_path / "rep.json", tmp_path / "t.csv"
    code = main(["verify", "--preset", "pendulum", "--eps", "1e-6", "--D", "3", "--N", "8",
                 "--out", str(rep_path), "--csv", str(csv_path)])
    summary = json.loads(capsys.readouterr().out)
    assert code == 0 and summary["status"] == "pass"
    assert RunReport.load(rep_path).config["N"] == 8
    assert csv_path.read_text().startswith("k1,re_u")
    bad = tmp_path / "bad.json"
    bad.write_text("[")
    assert main(["run", str(bad)]) == 3
    assert "configuration error" in capsys.readouterr().err


def test_cli_config_file(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    save_config(small("rotors2d", 1e-6), path)
    assert main(["run", str(path), "--max-steps", "1"]) == 2  # unforced and far above threshold
    assert main(["run", str(path), "--max-steps", "1", "--force"]) in (0, 3)


# ---------------------------------------------------------------- sweep and estimator


@pytest.mark.parametrize("jobs", [1, 2])
def test_sweep(tmp_path, jobs):
    cfg = small("pendulum", 1e-6, max_steps=2)
    rows = sweep(cfg, 1e-6, 1e-5, 3, tmp_path / "out", jobs=jobs)
    assert [r["epsilon"] for r in rows] == pytest.approx([1e-6, math.sqrt(1e-11), 1e-5])
    for r in rows:
        rep = RunReport.load(r["path"])
        assert rep.config["epsilon"] == r["epsilon"] and rep.exit_code == r["exit_code"]


def test_sweep_jobs_agree(tmp_path):
    cfg = small("pendulum", 1e-6, max_steps=2)
    a = sweep(cfg, 1e-6, 1e-5, 2, tmp_path / "a", jobs=1)
    b = sweep(cfg, 1e-6, 1e-5, 2, tmp_path / "b", jobs=2)
    for ra, rb in zip(a, b):
        ja = drop_timing(json.loads(open(ra["path"]).read()))
        jb = drop_timing(json.loads(open(rb["path"]).read()))
        assert ja == jb


def test_estimator():
    est = ArnoldKAM(preset="pendulum", omega=0.3, epsilon=1e-5, D=3, N=8, max_steps=3)
    assert clone(est).get_params() == est.get_params()
    est.fit()
    th = np.linspace(0, 2 * np.pi, 7)[:, None]
    pts = est.transform(th)
    assert pts.shape == (7, 2) and est.n_features_in_ == 1
    assert np.allclose(est.predict(th)[:, 0], pts[:, 0])
    assert np.allclose(pts[:, 0], 0.3, atol=1e-4)
    assert est.report_.status == "pass"


def test_estimator_custom_terms():
    cfg = small("rotors2d", 1e-6)
    est = ArnoldKAM(preset=None, y0=cfg.y0, K=cfg.K, P=cfg.P, epsilon=1e-6, D=3, N=8, max_steps=2,
                    stop_tol=0)
    est.fit()
    assert est.transform(np.zeros((3, 2))).shape == (3, 4)
    assert est.report_.config["alpha"] == pytest.approx(best_alpha((1.0, GOLDEN), 1.0, 8))
