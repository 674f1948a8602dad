import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advlab import analysis as An
from advlab import attacks as A
from advlab.data import DEFAULT_CORRUPTIONS, Corruption, Dataset, make_synthetic
from advlab.diffcore import mlp
from advlab.losses import CEL
from advlab.optim import OneCycle
from advlab.train import MetricsRecord, TrainConfig, train


def constant_logits_model(shape=(3, 4, 4), classes=3):
    m = mlp(shape, classes)
    for v in m.params.values():
        v[...] = 0
    return m


# evaluate

@pytest.mark.parametrize("classes", [2, 3, 5])
def test_constant_logits_accuracy_is_one_over_c(classes):
    ds = make_synthetic(classes, 8, (4, 4), 3, 0.1, seed=0)
    r = An.evaluate(constant_logits_model(classes=classes), ds, suite={})
    assert r.natural_acc == pytest.approx(1 / classes, abs=1e-15)


def test_ties_go_to_lowest_class():
    ds = Dataset(np.random.default_rng(0).random((5, 3, 4, 4)), [0, 0, 0, 1, 2], 3)
    assert An.evaluate(constant_logits_model(), ds, suite={}).natural_acc == 0.6


def test_zero_budget_suite_equals_natural(trained, toy_data):
    _, te = toy_data
    r = An.evaluate(trained.model, te, An.eval_suite(epsilon=0.0))
    assert all(v == r.natural_acc for v in r.adv_acc.values())
    assert set(r.adv_acc) == {"fgsm", "pgd", "cw", "strong"}


def test_evaluate_leaves_model_untouched(trained, toy_data):
    _, te = toy_data
    before = {k: v.tobytes() for k, v in trained.model.params.items()}
    r = An.evaluate(trained.model, te, corruptions=[Corruption("identity")], severities=(1,))
    assert {k: v.tobytes() for k, v in trained.model.params.items()} == before
    d = r.to_dict()
    assert all(0 <= v <= 1 for v in [d["natural_acc"], *d["adv_acc"].values(), *d["corruption_acc"].values()])


@pytest.fixture(scope="module")
def trio():
    """Three toy models trained under PGD-AT with different seeds."""
    out = []
    for seed in range(3):
        tr = make_synthetic(3, 60, (8, 8), 3, 0.2, seed=seed, sample_seed=1, template_scale=0.3)
        te = make_synthetic(3, 100, (8, 8), 3, 0.2, seed=seed, sample_seed=2, template_scale=0.3)
        cfg = TrainConfig(loss=CEL(), schedule=OneCycle(0.1, 10), epochs=10, batch_size=16, seed=seed,
                          eval_attacks=())
        out.append((train(cfg, tr, te).model, te))
    return out


def test_attack_strength_ordering(trio):
    for model, te in trio:
        r = An.evaluate(model, te)
        assert r.adv_acc["strong"] <= r.adv_acc["pgd"] <= r.adv_acc["fgsm"] + 0.02


# overfit gap

def records(seq):
    return [MetricsRecord(i + 1, 0.1, 0.0, 0.9, {"pgd": v}) for i, v in enumerate(seq)]


def test_gap_table_row():
    g = An.overfit_gap(records([0.40, 0.5206, 0.47, 0.4492]))["pgd"]
    assert (g["best"], g["final"]) == (0.5206, 0.4492)
    assert g["diff"] * 100 == pytest.approx(7.14, abs=1e-9)


def test_gap_monotone_sequence():
    assert An.overfit_gap(records([0.1, 0.2, 0.3]))["pgd"]["diff"] == 0


def test_gap_single_epoch():
    g = An.overfit_gap(records([0.33]))
    assert g["pgd"]["best"] == g["pgd"]["final"] and g["pgd"]["diff"] == 0
    assert g["nat"]["diff"] == 0


def test_gap_rejects_empty():
    with pytest.raises(ValueError):
        An.overfit_gap([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_gap_diff_nonnegative(seq):
    g = An.gap(seq)
    assert g["diff"] >= 0 and g["best"] == max(seq) and g["final"] == seq[-1]


# corruptions

def test_identity_corruption_equals_natural(trained, toy_data):
    _, te = toy_data
    c = An.corruption_eval(trained.model, te, [Corruption("identity")], (1, 3, 5))
    nat = An.accuracy(trained.model, te.images, te.labels)
    assert all(v == nat for v in c["cells"].values()) and c["mean"] == nat


def test_accuracy_nonincreasing_in_severity(trained):
    te = make_synthetic(3, 300, (8, 8), 3, 0.2, seed=7, sample_seed=3, template_scale=0.3)
    c = An.corruption_eval(trained.model, te, DEFAULT_CORRUPTIONS, seed=5)
    for kind in DEFAULT_CORRUPTIONS:
        accs = [c["cells"][f"{kind.label}@{s}"] for s in range(1, 6)]
        bumps = [b - a for a, b in zip(accs, accs[1:]) if b > a]
        assert len(bumps) <= 1 and all(b <= 0.005 for b in bumps), (kind.label, accs)


# bias-variance

def test_hand_worked_decomposition():
    t = An.decompose([[[1.0, 0.0]], [[0.0, 1.0]]], [[1.0, 0.0]])
    assert (t.risk, t.bias, t.variance) == (1.0, 0.5, 0.5)


def test_identical_predictions_have_no_variance():
    g = np.random.default_rng(0).random((1, 7, 3))
    t = An.decompose(np.concatenate([g, g]), np.eye(3)[[0, 1, 2, 0, 1, 2, 0]])
    assert t.variance == 0 and t.risk == pytest.approx(t.bias, abs=1e-15)


def test_unbiased_mean_gives_risk_equal_variance():
    y = np.array([[1.0, 0.0]])
    t = An.decompose([[[1.2, -0.1]], [[0.8, 0.1]]], y)
    assert t.bias == pytest.approx(0, abs=1e-15) and t.risk == pytest.approx(t.variance, abs=1e-15)


@given(st.integers(0, 2**31), st.integers(2, 5), st.integers(1, 20), st.integers(2, 6))
def test_decomposition_identity(seed, t, n, c):
    rng = np.random.default_rng(seed)
    preds = rng.normal(size=(t, n, c)) * rng.uniform(0.1, 10)
    y = np.eye(c)[rng.integers(0, c, n)]
    d = An.decompose(preds, y)
    assert abs(d.risk - d.bias - d.variance) <= 1e-6 * max(1, d.risk)
    assert d.bias >= 0 and d.variance >= 0


def test_attack_for_epsilon_keeps_step_ratio():
    base = A.pgd_config()
    a = An.attack_for_epsilon(base, 4 / 255)
    assert a.epsilon == 4 / 255 and a.alpha == pytest.approx(1 / 255)
    assert An.attack_for_epsilon(base, 0.0).alpha == 0.0


@pytest.fixture(scope="module")
def bv_setup():
    tr = make_synthetic(3, 20, (4, 4), 2, 0.2, seed=1, sample_seed=1, template_scale=0.3)
    te = make_synthetic(3, 10, (4, 4), 2, 0.2, seed=1, sample_seed=2, template_scale=0.3)
    cfg = TrainConfig(loss=CEL(), schedule=OneCycle(0.1, 3), epochs=3, batch_size=8, seed=2, eval_attacks=())
    return tr, te, cfg


@pytest.mark.parametrize("space", ["softmax", "logits"])
def test_bias_variance_report_identity(bv_setup, space):
    tr, te, cfg = bv_setup
    rep = An.bias_variance(tr, te, cfg, eps_list=(0.0, 4 / 255, 8 / 255), space=space)
    assert [r.sweep_eps for r in rep.rows] == [0.0, 4 / 255, 8 / 255]
    for r in rep.rows:
        for t in (r.natural, r.adversarial):
            assert abs(t.risk - t.bias - t.variance) <= 1e-6
            assert t.variance > 0
    rows = An.parse_bv_csv(rep.to_csv())
    assert len(rows) == 3 and rows[1]["sweep_eps"] == pytest.approx(4 / 255)


def test_bias_variance_degenerate_split(bv_setup):
    tr, te, cfg = bv_setup
    rep = An.bias_variance(tr, te, cfg, degenerate=True)
    r = rep.rows[0]
    assert r.natural.variance <= 1e-12 and r.adversarial.variance <= 1e-12
    assert r.natural.risk == pytest.approx(r.natural.bias, abs=1e-12)


def test_bias_variance_rejects_bad_space(bv_setup):
    tr, te, cfg = bv_setup
    with pytest.raises(ValueError):
        An.bias_variance(tr, te, cfg, space="probits")


def test_bias_variance_json(bv_setup):
    tr, te, cfg = bv_setup
    rep = An.bias_variance(tr, te, replace(cfg, epochs=1), eps_list=(2 / 255,))
    d = json.loads(rep.to_json())
    assert d["space"] == "softmax" and len(d["rows"]) == 1 and len(d["rows"][0]["natural_acc"]) == 2
