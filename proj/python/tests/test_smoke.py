import math

import pytest

import pdistill


def small_config(**extra):
    config = {
        "seed": 2,
        "world": {"count": 2, "width": 6, "height": 6},
        "teacher": {"q_learning": {"iterations": 3000}},
        "methods": ["teacher_distill", "on_policy_distill"],
        "run_seeds": [0, 1],
        "steps": 60,
        "eval_every": 30,
        "eval_episodes": 5,
        "teacher_eval_episodes": 10,
    }
    config.update(extra)
    return config


def test_presets_are_listed():
    names = pdistill.preset_names()
    assert "n_distill" in names
    assert "gated_distill_r" in names
    assert len(names) == len(set(names))


def test_world_generation_is_deterministic():
    a = pdistill.generate_world(7, 6, 5)
    b = pdistill.generate_world(7, 6, 5)
    assert a == b
    art = pdistill.world_ascii(a)
    assert len(art.strip().splitlines()) == 5
    assert "S" in art


def test_softmax_and_minimizers():
    p = pdistill.softmax([0.0, 0.0])
    assert p == pytest.approx([0.5, 0.5])
    target = [0.5, 0.3, 0.2]
    q = pdistill.cross_entropy_minimizer(target, teacher_given_student=True)
    assert q == pytest.approx(target, abs=1e-3)
    q = pdistill.cross_entropy_minimizer(target, teacher_given_student=False)
    assert q == pytest.approx([1.0, 0.0, 0.0], abs=1e-3)


def test_counterexample_first_integral():
    assert pdistill.first_integral(0.0, 0.0) == 4.0
    gx, gy = pdistill.counterexample_field(0.0, 1.0)
    e = math.e
    assert gx == pytest.approx((e - 1) / (4 * (1 + e)))
    assert gy == pytest.approx(0.0, abs=1e-15)


def test_config_validation():
    full = pdistill.normalize_config({"methods": ["n_distill"]})
    assert full["steps"] == 30000
    assert full["learning_rate"] == 0.1
    with pytest.raises(pdistill.ConfigError):
        pdistill.normalize_config({"methods": ["n_distill"], "stepz": 1})
    with pytest.raises(pdistill.ConfigError):
        pdistill.normalize_config({"methods": ["no_such_method"]})


def test_sweep_csv_round_trip_and_summary():
    text = pdistill.sweep(small_config())
    assert text == pdistill.sweep(small_config(), parallelism=2)
    rows = pdistill.parse_csv(text)
    assert len(rows) == 2 * 2 * 2 * 3
    assert {r.method for r in rows} == {"teacher_distill", "on_policy_distill"}
    assert sorted({r.step for r in rows}) == [0, 30, 60]
    summary = pdistill.summarize_csv(text)
    curve = summary["methods"]["on_policy_distill"]["curves"]["ret_student"]
    assert curve["steps"] == [0, 30, 60]
    assert len(curve["mean"]) == 3


def test_area_speedup():
    steps = [0, 10, 20]
    base = [0.0, 1.0, 1.0]
    assert pdistill.area_speedup(steps, [0.0, 2.0, 2.0], base) == pytest.approx(2.0)
    with pytest.raises(pdistill.DegenerateCurve):
        pdistill.area_speedup(steps, [0.0, 0.0, 0.0], base)


def test_verify_report_passes():
    report = pdistill.verify_report(random_thetas=3, ode_steps=2000)
    assert report["pass"] is True
    assert {row["method"] for row in report["classification"]} >= {"on_policy_distill", "n_distill"}
