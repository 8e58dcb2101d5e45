import math

import numpy as np
import pytest

from kcascade import cascade, data, distill, kernel_net, svm
from kcascade.base_kernels import KernelBank
from kcascade.cascade import Stage, StageSpec
from kcascade.errors import InvalidInputError
from kcascade.metrics import conservation_metrics

N1 = 4


def small_specs(g_epochs=15):
    g_cfg = distill.DistillConfig(max_epochs=g_epochs, seed=2)
    f_cfg = distill.DistillConfig(max_epochs=20, seed=1)
    return cascade.default_stage_specs(N1, g_config=g_cfg, f_config=f_cfg)


def build_toy():
    ds = data.generate_synthetic(1500, 8, 0.08, 5.0, seed=7)
    tr, va, te = data.split(ds, data.SplitSpec(240, seed=3))
    X = ds.features[tr].astype(np.float64)
    bank = KernelBank.from_data(X, N1)
    specs = small_specs()
    f_state = distill.train(X, ds.labels[tr], specs[-1].arch, bank, specs[-1].config)
    casc = cascade.build(f_state, bank, specs)
    return ds, te, f_state, casc


@pytest.fixture(scope="module")
def toy():
    return build_toy()


def test_default_specs_shapes():
    specs = cascade.default_stage_specs()
    assert len(specs) == 6
    assert [s.arch for s in specs] == [
        (128, 2, 2, 2, 1),
        (128, 8, 8, 8, 1),
        (128,) + (8,) * 5 + (1,),
        (128,) + (32,) * 5 + (1,),
        (128,) + (64,) * 5 + (1,),
        (128,) + (128,) * 7 + (1,),
    ]
    assert [s.is_f for s in specs] == [False] * 5 + [True]
    assert specs[0].config.max_epochs == 5000 and specs[-1].config.max_epochs == 10000


@pytest.mark.parametrize("n1", [2, 4, 8, 16, 128])
def test_default_specs_structure(n1):
    specs = cascade.default_stage_specs(n1)
    a1, a2 = specs[0].arch, specs[1].arch
    assert len(a1) == len(a2) and a1[0] == a2[0] == n1
    assert a1[1:-1] != a2[1:-1] or n1 < 4
    assert len(set(a2[1:-1])) == 1
    assert specs[-1].arch == cascade.f_arch(n1)
    macs = [kernel_net.macs(s.arch) for s in specs]
    if n1 >= 8:
        assert all(b > a for a, b in zip(macs, macs[1:]))
    else:
        # rounded widths can coincide when the bank is tiny
        assert all(b >= a for a, b in zip(macs, macs[1:]))


def test_desk_scale_widths():
    assert [cascade.scaled_width(w, 128) for w in (2, 8, 32, 64)] == [2, 8, 32, 64]
    assert [s.arch for s in cascade.default_stage_specs(8)][:2] == [(8, 2, 2, 2, 1), (8, 3, 3, 3, 1)]


def make_stage(arch, alphas, is_f=False):
    alphas = np.asarray(alphas, dtype=float)
    model = svm.SvmModel(alphas, 0.0, np.ones(len(alphas)), 1.0)
    return Stage(kernel_net.init_flat(arch), model, np.arange(len(alphas)), is_f=is_f)


def test_stage_cost_examples():
    assert cascade.stage_cost(make_stage([2, 2, 2, 1], np.ones(5))) == 50
    assert cascade.stage_cost(make_stage([2, 2, 2, 1], np.zeros(5))) == 0


def test_final_stage_must_be_f():
    bank = KernelBank(2, 1, np.ones(2))
    with pytest.raises(InvalidInputError):
        cascade.Cascade(bank, np.zeros((3, 2)), [make_stage([2, 1], [1, 0, 0])])
    with pytest.raises(InvalidInputError):
        cascade.Cascade(bank, np.zeros((3, 2)), [])


def test_short_circuit_equals_stage_and(toy):
    ds, te, _, casc = toy
    X = ds.features[te[:1000]].astype(np.float64)
    short = cascade.evaluate_many(casc, X)
    full = cascade.evaluate_many(casc, X, exhaustive=True)
    dec = cascade.stage_decisions(casc, full)
    expected = np.where(np.all(dec > 0, axis=1), 1, -1)
    assert np.sum(short.labels != expected) == 0
    # scores computed in both modes agree bit for bit
    seen = ~np.isnan(short.scores)
    assert np.array_equal(short.scores[seen], full.scores[seen])
    assert np.array_equal(short.stages_consumed, full.stages_consumed)


def test_outcome_invariants(toy):
    ds, te, _, casc = toy
    X = ds.features[te[:300]].astype(np.float64)
    res = cascade.evaluate_many(casc, X)
    T = casc.num_stages
    sv = [s.num_support for s in casc.stages]
    for p in range(len(X)):
        o = res.outcome(p)
        assert (o.label == 1) == (o.stages_consumed == T and o.scores[-1] > 0)
        assert o.kernel_evals == sum(sv[:o.stages_consumed])
        assert o.cost == sum(casc.costs()[:o.stages_consumed])
        assert all(s > 0 for s in o.scores[:-1])
    single = cascade.evaluate(casc, X[5])
    assert single == res.outcome(5)
    rejected = res.kernel_evals[res.labels < 0]
    accepted = res.kernel_evals[res.labels > 0]
    if len(rejected) and len(accepted):
        assert rejected.max() <= accepted.min()


def test_forced_rejection_and_acceptance(toy):
    ds, te, _, casc = toy
    X = ds.features[te[:50]].astype(np.float64)
    reject_all = cascade.Cascade(
        casc.bank, casc.store, [cascade.with_threshold(casc.stages[0], math.inf)] + casc.stages[1:])
    res = cascade.evaluate_many(reject_all, X)
    assert np.all(res.stages_consumed == 1) and np.all(res.labels == -1)
    assert np.all(res.kernel_evals == casc.stages[0].num_support)
    accept_all = cascade.Cascade(
        casc.bank, casc.store, [cascade.with_threshold(s, -math.inf) for s in casc.stages])
    res = cascade.evaluate_many(accept_all, X)
    assert np.all(res.stages_consumed == casc.num_stages) and np.all(res.labels == 1)


def test_threads_do_not_change_results(toy):
    ds, te, _, casc = toy
    X = ds.features[te[:1000]].astype(np.float64)
    a = cascade.evaluate_many(casc, X, threads=1, exhaustive=True)
    b = cascade.evaluate_many(casc, X, threads=4, exhaustive=True)
    assert a.scores.tobytes() == b.scores.tobytes()
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.cost, b.cost)


def test_artifact_round_trip(toy, tmp_path):
    ds, te, _, casc = toy
    path = tmp_path / "c.kcas"
    casc.save(path)
    back = cascade.Cascade.load(path)
    assert back.digest() == casc.digest()
    back.save(tmp_path / "again.kcas")
    assert (tmp_path / "again.kcas").read_bytes() == path.read_bytes()
    X = ds.features[te[:400]].astype(np.float64)
    a = cascade.evaluate_many(casc, X, exhaustive=True)
    b = cascade.evaluate_many(back, X, exhaustive=True)
    assert a.scores.tobytes() == b.scores.tobytes()


def test_conservation_on_training_data(toy):
    _, _, f_state, casc = toy
    X = f_state.samples
    full = cascade.evaluate_many(casc, X, exhaustive=True)
    f_dec = distill.pseudo_labels(f_state.train_scores)
    dec = cascade.stage_decisions(casc, full)
    for t in range(casc.num_stages - 1):
        cons, _ = conservation_metrics(dec[:, t], f_dec)
        assert cons >= 95.0, f"stage {t + 1}"


def test_build_is_deterministic(toy):
    _, _, _, casc = toy
    assert build_toy()[3].digest() == casc.digest()


def test_f_only_cascade_is_f(toy):
    ds, te, f_state, casc = toy
    f_only = cascade.build(f_state, casc.bank, [StageSpec(f_state.network.layer_sizes, is_f=True)])
    assert f_only.num_stages == 1
    X = ds.features[te[:200]].astype(np.float64)
    res = cascade.evaluate_many(f_only, X)
    f_scores = casc.stages[-1].scores(casc.bank, casc.store, X)
    assert np.array_equal(res.scores[:, 0], f_scores)
    assert np.array_equal(res.labels, np.where(f_scores > 0, 1, -1))
    # f's scores at the training samples agree with the training-time scores
    tr = f_only.stages[0].scores(f_only.bank, f_only.store, f_state.samples)
    np.testing.assert_allclose(tr, f_state.train_scores, atol=1e-9)


def test_build_rejects_mismatched_f(toy):
    _, _, f_state, casc = toy
    with pytest.raises(InvalidInputError):
        cascade.build(f_state, casc.bank, [StageSpec((N1, 2, 1), is_f=True)])
    with pytest.raises(InvalidInputError):
        cascade.build(f_state, casc.bank, [StageSpec((N1, 2, 1))])


def test_evaluate_dimension_check(toy):
    casc = toy[3]
    with pytest.raises(InvalidInputError):
        cascade.evaluate(casc, np.zeros(3))
