import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tiny_config
from deceptlens import autodiff as ad
from deceptlens.data import StatementPair, build_vocab
from deceptlens.errors import ConfigError, ContractError, DomainError
from deceptlens.models import build
from deceptlens.text import tokenize
from deceptlens.training import (
    ClassWeights,
    EpochMonitor,
    TrainConfig,
    class_weights,
    cross_validate,
    dataset_loss,
    derive_seed,
    encode_pairs,
    fit,
    optimizer_step,
    run_fold,
    stratified_folds,
    stratified_split,
    train_two_phase,
    weighted_bce,
)

# three-epoch runs often predict one class only
pytestmark = pytest.mark.filterwarnings("ignore:undefined metrics:RuntimeWarning")

FAST = dict(max_epochs=3, batch_size=8, es_patience_phase1=2, es_patience_phase2=1)


# ----------------------------------------------------------- class weights

def test_class_weights_paper_counts():
    w = class_weights(783, 857)
    # hand arithmetic: 1640 / 1566 and 1640 / 1714
    assert w.weight_truthful == pytest.approx(1.0472541507024266, abs=1e-12)
    assert w.weight_deceptive == pytest.approx(0.9568261376896149, abs=1e-12)
    assert abs(w.weight_truthful * 783 - w.weight_deceptive * 857) < 1e-9


def test_class_weights_balanced_and_errors():
    assert class_weights(100, 100) == ClassWeights(1.0, 1.0)
    with pytest.raises(DomainError):
        class_weights(0, 5)
    with pytest.raises(DomainError):
        class_weights(5, 0)


@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_class_mass_balance(nt, nd):
    w = class_weights(nt, nd)
    assert w.weight_truthful > 0 and w.weight_deceptive > 0
    assert abs(w.weight_truthful * nt - w.weight_deceptive * nd) <= 1e-9 * max(nt, nd)


@given(st.integers(1, 50), st.integers(1, 50), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_weighted_batch_matches_balanced_unweighted(nt, nd, p_t, p_d):
    # every truthful example has loss a, every deceptive example loss b
    w = class_weights(nt, nd)
    a, b = weighted_bce(p_t, 0, ClassWeights(1, 1)), weighted_bce(p_d, 1, ClassWeights(1, 1))
    weighted = (nt * weighted_bce(p_t, 0, w) + nd * weighted_bce(p_d, 1, w)) / (nt + nd)
    assert abs(weighted - (a + b) / 2) < 1e-9


# -------------------------------------------------------------------- loss

def test_bce_examples():
    unit = ClassWeights(1.0, 1.0)
    assert weighted_bce(0.5, 0, unit) == pytest.approx(math.log(2), abs=1e-15)
    assert weighted_bce(0.5, 1, unit) == pytest.approx(math.log(2), abs=1e-15)
    assert weighted_bce(1.0 - 1e-12, 1, unit) < 1e-6
    assert weighted_bce(0.0, 1, unit) == pytest.approx(-math.log(1e-7))
    assert math.isfinite(weighted_bce(1.0, 0, unit))


@given(st.floats(0, 1), st.floats(0.01, 10))
def test_bce_linear_in_positive_weight(p, w):
    a = weighted_bce(p, 1, ClassWeights(1.0, w))
    b = weighted_bce(p, 1, ClassWeights(1.0, 2 * w))
    assert b == pytest.approx(2 * a, rel=1e-14, abs=0)
    assert weighted_bce(p, 0, ClassWeights(1.0, w)) == weighted_bce(p, 0, ClassWeights(1.0, 2 * w))


def test_batched_bce_agrees_with_scalar(rng):
    p = rng.uniform(0.01, 0.99, size=9)
    y = rng.integers(0, 2, size=9)
    w = class_weights(4, 5)
    batched = float(ad.binary_cross_entropy(ad.Tensor(p), y, w.for_labels(y)).data)
    assert batched == pytest.approx(np.mean([weighted_bce(pi, yi, w) for pi, yi in zip(p, y)]), rel=1e-12)


# --------------------------------------------------------------- optimizers

def test_sgd_step():
    theta = np.array([1.0])
    optimizer_step([theta], [np.array([0.5])], {}, "sgd", 0.1)
    assert theta[0] == pytest.approx(0.95, abs=1e-15)


@given(st.floats(1e-3, 1e3), st.sampled_from([-1.0, 1.0]))
def test_adam_first_step_is_lr_sized(scale, sign):
    g = np.full(3, sign * scale)
    theta = np.zeros(3)
    optimizer_step([theta], [g], {}, "adam", 0.001)
    # closed form: m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    expected = -0.001 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(theta, expected, rtol=1e-12)
    assert abs(abs(theta[0]) - 0.001) < 1e-8


def test_adam_matches_reference_over_steps(rng):
    theta = rng.normal(size=4)
    ref = theta.copy()
    m = v = np.zeros(4)
    state = {}
    for t in range(1, 6):
        g = rng.normal(size=4)
        optimizer_step([theta], [g], state, "adam", 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(theta, ref, rtol=1e-12)


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_zero_gradient_and_frozen_are_noops(opt):
    theta, frozen = np.array([1.5, -2.0]), np.array([3.0])
    optimizer_step([theta, frozen], [np.zeros(2), None], {}, opt, 0.1)
    assert np.array_equal(theta, [1.5, -2.0]) and frozen[0] == 3.0


def test_optimizer_errors():
    with pytest.raises(ContractError):
        optimizer_step([np.zeros(2)], [np.zeros(3)], {}, "sgd", 0.1)
    with pytest.raises(ContractError):
        optimizer_step([np.zeros(2)], [], {}, "sgd", 0.1)
    with pytest.raises(ConfigError):
        optimizer_step([np.zeros(2)], [np.zeros(2)], {}, "rmsprop", 0.1)


# ------------------------------------------------------------------ monitor

def test_monitor_patience_counting():
    mon = EpochMonitor(patience=10, plateau_patience=3, plateau_factor=0.1)
    losses = [1.0, 0.9] + [0.9, 0.95, 1.0, 0.91, 0.9, 2.0, 0.93, 0.9, 0.99, 0.92]
    lr, stopped_at = 0.001, None
    for epoch, v in enumerate(losses, start=1):
        _, stop, lr = mon.update(epoch, v, lr)
        if stop:
            stopped_at = epoch
            break
    assert stopped_at == 12 and mon.best_epoch == 2 and mon.best == 0.9


def test_plateau_decay_once():
    mon = EpochMonitor(patience=10, plateau_patience=3, plateau_factor=0.1)
    lr = 0.001
    for epoch, v in enumerate([1.0, 1.0, 1.0], start=1):
        _, _, lr = mon.update(epoch, v, lr)
    assert lr == 0.001
    _, _, lr = mon.update(4, 1.0, lr)
    assert lr == pytest.approx(0.0001, rel=1e-12)


@pytest.fixture(scope="module")
def small_sets():
    from deceptlens.data import make_synthetic_pairs

    pairs = make_synthetic_pairs(40, seed=11)
    cfg = tiny_config("coatt", max_len_q1=8, max_len_q2=8)
    vocab = build_vocab([p.q1 for p in pairs] + [p.q2 for p in pairs])
    cfg = dataclasses.replace(cfg, vocab_size=len(vocab))
    data = encode_pairs(pairs, vocab, cfg)
    return cfg, data.subset(np.arange(30)), data.subset(np.arange(30, 40))


def test_fit_scripted_losses_stop_and_restore(small_sets):
    cfg, tr, va = small_sets
    model = build(cfg, seed=0)
    script = iter([1.0, 0.9] + [0.9, 0.95, 1.0, 0.91, 0.9, 2.0, 0.93, 0.9, 0.99, 0.92] + [0.1] * 50)
    snapshots = {}

    def val_loss(m):
        snapshots[len(snapshots) + 1] = m.state()
        return next(script)

    hist = fit(model, tr, va, TrainConfig(max_epochs=50, batch_size=8), phase=1, val_loss_fn=val_loss)
    assert hist.epochs == 12 and hist.stopped_early and hist.best_epoch == 2
    final = model.state()
    assert all(np.array_equal(final[k], snapshots[2][k]) for k in final)
    assert any(not np.array_equal(final[k], snapshots[12][k]) for k in final)
    lrs = [r["lr"] for r in hist.records]
    # non-improving epochs 3,4,5 trigger one decay before epoch 6
    assert lrs[:5] == [0.001] * 5
    assert lrs[5] == pytest.approx(0.0001, rel=1e-12)


def test_fit_restores_best_real_loss(small_sets):
    cfg, tr, va = small_sets
    model = build(cfg, seed=1)
    hist = fit(model, tr, va, TrainConfig(max_epochs=8, batch_size=8, lr_initial=0.05), phase=2)
    assert hist.best_val_loss == min(r["val_loss"] for r in hist.records)
    assert dataset_loss(model, va) == pytest.approx(hist.best_val_loss, rel=1e-12)


def test_frozen_phase_keeps_encoder_bit_identical(small_sets):
    cfg, tr, va = small_sets
    model = build(cfg, seed=2)
    before = {f"{lp.name}.{k}": t.data.copy() for lp in model.encoder_layers for k, t in lp.weights.items()}
    head_before = model.head[0]["W"].data.copy()
    fit(model, tr, va, TrainConfig(max_epochs=3, batch_size=8, lr_initial=0.1), phase=1)
    after = {f"{lp.name}.{k}": t.data for lp in model.encoder_layers for k, t in lp.weights.items()}
    assert all(np.array_equal(before[k], after[k]) for k in before)
    assert not np.array_equal(head_before, model.head[0]["W"].data)


def test_two_phase_runs_both_phases(small_sets):
    cfg, tr, va = small_sets
    model = build(cfg, seed=3)
    phases = train_two_phase(model, tr, va, TrainConfig(**FAST))
    assert [h.records[0]["phase"] for h in phases] == [1, 2]
    # phase 2 starts again from the initial rate
    assert phases[1].records[0]["lr"] == 0.001
    assert model.trained and all(t.requires_grad for t in model.parameters())


def test_fit_rejects_empty_split(small_sets):
    cfg, tr, va = small_sets
    with pytest.raises(ConfigError):
        fit(build(cfg), tr, va.subset(np.arange(0)), TrainConfig())


# ----------------------------------------------------------------- folds

def _labels(n_pos, n_neg, seed=0):
    y = np.r_[np.ones(n_pos, int), np.zeros(n_neg, int)]
    return np.random.default_rng(seed).permutation(y)


def test_stratified_folds_paper_counts():
    y = _labels(857, 783)
    folds = stratified_folds(y, 5, np.random.default_rng(0))
    assert [f.size for f in folds] == [328] * 5
    for f in folds:
        assert abs(y[f].sum() - 857 / 5) < 1 and abs((1 - y[f]).sum() - 783 / 5) < 1
    allidx = np.concatenate(folds)
    assert np.array_equal(np.sort(allidx), np.arange(1640))


@given(st.integers(5, 80), st.integers(5, 80), st.integers(2, 5), st.integers(0, 10**6))
def test_stratified_folds_partition(n_pos, n_neg, k, seed):
    y = _labels(n_pos, n_neg, seed)
    folds = stratified_folds(y, k, np.random.default_rng(seed))
    assert np.array_equal(np.sort(np.concatenate(folds)), np.arange(y.size))
    for c, n_c in ((1, n_pos), (0, n_neg)):
        counts = [int(np.sum(y[f] == c)) for f in folds]
        assert max(counts) - min(counts) <= 1
        assert all(abs(cnt - n_c / k) < 1 for cnt in counts)


def test_stratified_folds_deterministic_and_errors():
    y = _labels(20, 15)
    a = stratified_folds(y, 5, np.random.default_rng(3))
    b = stratified_folds(y, 5, np.random.default_rng(3))
    assert all(np.array_equal(x, z) for x, z in zip(a, b))
    with pytest.raises(ConfigError):
        stratified_folds(_labels(20, 4), 5, np.random.default_rng(0))


@given(st.integers(2, 60), st.integers(2, 60), st.integers(0, 10**6))
def test_stratified_split_disjoint(n_pos, n_neg, seed):
    y = _labels(n_pos, n_neg, seed)
    tr, va = stratified_split(y, 0.2, np.random.default_rng(seed))
    assert np.intersect1d(tr, va).size == 0
    assert np.array_equal(np.sort(np.r_[tr, va]), np.arange(y.size))
    for c, n_c in ((1, n_pos), (0, n_neg)):
        assert abs(np.sum(y[va] == c) - 0.2 * n_c) <= 1


def test_derive_seed_stable():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)


# -------------------------------------------------------------------- CV

def _planted(pairs):
    """Give every example a unique marker token."""
    return [dataclasses.replace(p, q1=f"{p.q1} zqx{i}", q2=f"{p.q2} zqy{i}") for i, p in enumerate(pairs)]


def test_cross_validate_25_runs_without_leakage(tiny_pairs):
    pairs = _planted(tiny_pairs)
    cfg = tiny_config("coatt", vocab_size=0, max_len_q1=16, max_len_q2=16)
    seen = []

    def audit(run):
        seen.append(run)

    res = cross_validate(pairs, cfg, TrainConfig(**FAST), on_run=audit)
    assert len(res.runs) == 25 and len(seen) == 25
    assert {(r.repetition, r.fold) for r in res.runs} == {(a, b) for a in range(5) for b in range(5)}
    for run in seen:
        assert run.n_train + run.n_val + run.n_test == 60
        vocab = set(run.vocab.to_list())
        markers = {t for t in vocab if t.startswith(("zqx", "zqy"))}
        # every marker that made it into the vocabulary came from a training-pool example
        assert len(markers) == 2 * (run.n_train + run.n_val)
    s = res.summary()
    assert set(s.stds) == set(s.as_dict()) and 0 <= s.accuracy <= 1


def test_run_fold_vocab_excludes_test_tokens(tiny_pairs):
    pairs = _planted(tiny_pairs)
    labels = np.array([p.label for p in pairs])
    test_idx = np.arange(0, 60, 5)
    pool = np.setdiff1d(np.arange(60), test_idx)
    cfg = tiny_config("coatt", max_len_q1=16, max_len_q2=16)
    _, vocab, _, _, sizes, _ = run_fold(pairs, labels, pool, test_idx, cfg, TrainConfig(**FAST), seed=0)
    test_tokens = {t for i in test_idx for t in tokenize(pairs[i].q1) + tokenize(pairs[i].q2)}
    pool_tokens = {t for i in pool for t in tokenize(pairs[i].q1) + tokenize(pairs[i].q2)}
    vocab_tokens = set(vocab.to_list())
    assert not (test_tokens - pool_tokens) & vocab_tokens
    assert sizes[2] == test_idx.size


def test_cross_validate_deterministic(tiny_pairs):
    cfg = tiny_config("dense", vocab_size=0, max_len_q1=12)
    tc = TrainConfig(**FAST, repetitions=2)
    a = cross_validate(tiny_pairs, cfg, tc)
    b = cross_validate(tiny_pairs, cfg, tc)
    assert [r.ledger_entry() for r in a.runs] == [r.ledger_entry() for r in b.runs]


def test_cross_validate_resume_skips_completed(tiny_pairs):
    cfg = tiny_config("dense", vocab_size=0, max_len_q1=12)
    tc = TrainConfig(**FAST, repetitions=1)
    full = cross_validate(tiny_pairs, cfg, tc)
    done = {(0, 0): full.runs[0].ledger_entry(), (0, 3): full.runs[3].ledger_entry()}
    fitted = []
    resumed = cross_validate(tiny_pairs, cfg, tc, completed=done, on_run=lambda r: fitted.append(r.fold))
    assert fitted == [1, 2, 4]
    assert [r.ledger_entry() for r in resumed.runs] == [r.ledger_entry() for r in full.runs]


def test_cross_validate_coatt_liwc_fills_lexicon_dim(tiny_pairs):
    lex = np.random.default_rng(0).normal(size=(60, 4))
    cfg = tiny_config("coatt", architecture="coatt_liwc", lexicon_dim=0, vocab_size=0, max_len_q1=12, max_len_q2=12)
    res = cross_validate(tiny_pairs, cfg, TrainConfig(**FAST, repetitions=1, folds=2), lexicon=lex, keep_models=True)
    assert res.runs[0].model.config.lexicon_dim == 4
    assert len(res.runs[0].lexicon_stats["mean"]) == 4


def test_cross_validate_errors(tiny_pairs):
    cfg = tiny_config("dense", vocab_size=0)
    few = [p for p in tiny_pairs if p.label == 1] + [p for p in tiny_pairs if p.label == 0][:3]
    with pytest.raises(ConfigError):
        cross_validate(few, cfg, TrainConfig(**FAST))
    with pytest.raises(ConfigError):
        cross_validate([p for p in tiny_pairs if p.label == 1], cfg, TrainConfig(**FAST))
    with pytest.raises(ConfigError):
        cross_validate(tiny_pairs, cfg, TrainConfig(val_fraction=1.0))


@pytest.mark.parametrize(
    "kw",
    [dict(optimizer="rmsprop"), dict(val_fraction=0.0), dict(es_patience_phase1=0), dict(plateau_factor=1.0), dict(folds=1), dict(batch_size=0)],
)
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})


def test_train_config_defaults():
    c = TrainConfig()
    assert (c.lr_initial, c.es_patience_phase1, c.es_patience_phase2, c.plateau_patience, c.plateau_factor) == (0.001, 10, 2, 3, 0.1)
    assert (c.folds, c.repetitions, c.val_fraction, c.batch_size, c.max_epochs) == (5, 5, 0.2, 16, 200)


def test_statement_pair_label_check():
    with pytest.raises(ValueError):
        StatementPair("x", "a", "b", 2)
