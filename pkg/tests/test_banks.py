import numpy as np
import pytest

from tailshift import banks as B
from tailshift.mathcore import Rng, Tensor


def unit_rows(rng, n, d):
    raw = rng.normal(size=(n, d))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def make_table(rng, c=4, d_s=3):
    return B.SemanticTable(unit_rows(rng, c, d_s))


# ---------------------------------------------------------------------------
# SemanticTable
# ---------------------------------------------------------------------------

def test_semantic_table_validation():
    with pytest.raises(ValueError):
        B.SemanticTable(np.ones((3, 2)))  # non-unit rows
    with pytest.raises(ValueError):
        B.SemanticTable(np.ones((1, 4)))  # needs >= 2 classes
    table = make_table(Rng(0))
    assert table.n_classes == 4 and table.dim == 3


# ---------------------------------------------------------------------------
# prototype EMA
# ---------------------------------------------------------------------------

def test_update_prototypes_fixed_point():
    bank = B.PrototypeBank.zeros(np.ones((1, 2), dtype=bool), d_v=2)
    bank.v[0, 0] = [3.0, -1.0]
    feats = np.tile([3.0, -1.0], (4, 1))
    out = B.update_prototypes(bank, 0, feats, np.zeros(4, dtype=int))
    assert np.allclose(out.v[0, 0], [3.0, -1.0], atol=1e-15)


def test_update_prototypes_half_mixing():
    bank = B.PrototypeBank.zeros(np.ones((1, 1), dtype=bool), d_v=2)
    out = B.update_prototypes(bank, 0, np.array([[2.0, 2.0]]), np.array([0]))
    assert np.allclose(out.v[0, 0], [1.0, 1.0], atol=1e-15)


def test_update_prototypes_untouched_classes():
    rng = Rng(1)
    bank = B.PrototypeBank.zeros(np.ones((2, 3), dtype=bool), d_v=2)
    bank.v[:] = rng.normal(size=bank.v.shape)
    before = bank.v.copy()
    out = B.update_prototypes(bank, 0, np.array([[1.0, 0.0]]), np.array([0]))
    assert np.array_equal(out.v[0, 1:], before[0, 1:])
    assert np.array_equal(out.v[1], before[1])
    assert np.array_equal(bank.v, before)  # input bank untouched


def test_update_prototypes_masked_label_rejected():
    mask = np.array([[True, False]])
    bank = B.PrototypeBank.zeros(mask, d_v=2)
    with pytest.raises(ValueError):
        B.update_prototypes(bank, 0, np.ones((1, 2)), np.array([1]))


def test_masked_off_rows_stay_zero():
    rng = Rng(2)
    mask = np.array([[True, False, True], [False, True, True]])
    bank = B.PrototypeBank.zeros(mask, d_v=3)
    for _ in range(5):
        for dom in range(2):
            classes = np.nonzero(mask[dom])[0]
            labels = rng.choice(classes, size=6)
            bank = B.update_prototypes(bank, dom, rng.normal(size=(6, 3)), labels)
    assert np.array_equal(bank.v[0, 1], np.zeros(3))
    assert np.array_equal(bank.v[1, 0], np.zeros(3))


# ---------------------------------------------------------------------------
# complete_semantic / decode_prototypes
# ---------------------------------------------------------------------------

def _norm_encoder(c, d_s):
    def enc(v):
        data = np.asarray(v.data if isinstance(v, Tensor) else v, dtype=float)
        out = np.zeros((c, d_s))
        for i, row in enumerate(data):
            n = np.linalg.norm(row)
            out[i] = row[:d_s] / n if n > 0 else np.eye(d_s)[0]
        return Tensor(out)
    return enc


def test_complete_semantic_all_live():
    rng = Rng(3)
    table = make_table(rng, c=3, d_s=3)
    bank = B.PrototypeBank.zeros(np.ones((1, 3), dtype=bool), d_v=3)
    bank.v[0] = rng.normal(size=(3, 3))
    enc = _norm_encoder(3, 3)
    out = B.complete_semantic(bank, enc, table, 0)
    assert np.allclose(out.data, enc(bank.v[0]).data, atol=1e-12)


def test_complete_semantic_all_masked_off():
    rng = Rng(4)
    table = make_table(rng, c=3, d_s=3)
    bank = B.PrototypeBank.zeros(np.zeros((1, 3), dtype=bool), d_v=3)
    out = B.complete_semantic(bank, _norm_encoder(3, 3), table, 0)
    assert np.array_equal(out.data, table.s)


def test_complete_semantic_mixed_rows():
    rng = Rng(5)
    table = make_table(rng, c=2, d_s=3)
    bank = B.PrototypeBank.zeros(np.array([[True, False]]), d_v=3)
    bank.v[0, 0] = [2.0, 0.0, 0.0]
    out = B.complete_semantic(bank, _norm_encoder(2, 3), table, 0)
    assert np.allclose(out.data[0], [1.0, 0.0, 0.0], atol=1e-12)
    assert np.array_equal(out.data[1], table.s[1])


def test_complete_semantic_zero_init_rows_fall_back_to_table():
    # a masked row that was never EMA-updated holds no estimate yet
    rng = Rng(6)
    table = make_table(rng, c=2, d_s=3)
    bank = B.PrototypeBank.zeros(np.array([[True, True]]), d_v=3)
    bank.v[0, 0] = [0.0, 3.0, 0.0]
    out = B.complete_semantic(bank, _norm_encoder(2, 3), table, 0)
    assert np.allclose(out.data[0], [0.0, 1.0, 0.0], atol=1e-12)
    assert np.array_equal(out.data[1], table.s[1])


def test_complete_semantic_rows_unit():
    rng = Rng(7)
    table = make_table(rng, c=5, d_s=4)
    mask = rng.uniform(size=(1, 5)) > 0.4
    mask[0, 0] = True
    bank = B.PrototypeBank.zeros(mask, d_v=4)
    for c in np.nonzero(mask[0])[0]:
        bank.v[0, c] = rng.normal(size=4)
    out = B.complete_semantic(bank, _norm_encoder(5, 4), table, 0)
    assert np.abs(np.linalg.norm(out.data, axis=1) - 1.0).max() < 1e-10


def test_decode_prototypes_matches_rowwise():
    rng = Rng(8)
    w = rng.normal(size=(4, 3))
    bias = rng.normal(size=4)
    dec = lambda s: s @ Tensor(w).T + Tensor(bias)
    s_hat = rng.normal(size=(5, 3))
    out = B.decode_prototypes(s_hat, dec)
    expect = np.stack([w @ row + bias for row in s_hat])
    assert np.allclose(out.data, expect, atol=1e-12)
    zero_dec = lambda s: s @ Tensor(np.zeros((4, 3))).T + Tensor(bias)
    out0 = B.decode_prototypes(s_hat, zero_dec)
    assert np.allclose(out0.data, np.tile(bias, (5, 1)), atol=1e-15)


# ---------------------------------------------------------------------------
# streaming covariance
# ---------------------------------------------------------------------------

def test_covariance_first_sample():
    bank = B.CovarianceBank.zeros(2, 3)
    x = np.array([[1.0, 2.0, 3.0]])
    out = B.update_covariance(bank, x, np.array([0]))
    assert np.array_equal(out.mu[0], x[0])
    assert np.array_equal(out.sigma[0], np.zeros((3, 3)))
    assert out.n[0] == 1 and out.n[1] == 0


def test_covariance_streaming_equals_oneshot():
    rng = Rng(9)
    c, d = 3, 4
    for schedule_rng in rng.split(5):
        bank = B.CovarianceBank.zeros(c, d)
        all_x, all_y = [], []
        for _ in range(int(schedule_rng.integers(2, 6))):
            m = int(schedule_rng.integers(1, 8))
            x = schedule_rng.normal(size=(m, d))
            y = schedule_rng.integers(0, c, size=m)
            bank = B.update_covariance(bank, x, y)
            all_x.append(x)
            all_y.append(y)
        xs = np.concatenate(all_x)
        ys = np.concatenate(all_y)
        for cls in range(c):
            sel = xs[ys == cls]
            if len(sel) == 0:
                continue
            mu = sel.mean(axis=0)
            centered = sel - mu
            sig = centered.T @ centered / len(sel)
            assert np.abs(bank.mu[cls] - mu).max() < 1e-10
            assert np.abs(bank.sigma[cls] - sig).max() < 1e-10
            assert bank.n[cls] == len(sel)


def test_covariance_empty_class_unchanged():
    rng = Rng(10)
    bank = B.CovarianceBank.zeros(2, 2)
    bank = B.update_covariance(bank, rng.normal(size=(5, 2)), np.zeros(5, dtype=int))
    before = bank.copy()
    bank = B.update_covariance(bank, rng.normal(size=(3, 2)), np.zeros(3, dtype=int))
    assert np.array_equal(bank.mu[1], before.mu[1])
    assert np.array_equal(bank.sigma[1], before.sigma[1])
    assert bank.n[1] == 0


# ---------------------------------------------------------------------------
# covariance blending
# ---------------------------------------------------------------------------

def test_blend_k1_is_identity():
    rng = Rng(11)
    table = make_table(rng, c=4, d_s=3)
    bank = B.CovarianceBank.zeros(4, 2)
    bank = B.update_covariance(bank, rng.normal(size=(20, 2)),
                               rng.integers(0, 4, size=20))
    sig, empty = B.blend_covariance(bank, table, k=1)
    assert np.array_equal(sig, bank.sigma)
    assert not empty.any()


def test_blend_worked_example():
    # classes 0 and 1 nearly parallel, class 2 orthogonal; k = 2 picks {0, 1}
    s = np.array([[1.0, 0.0, 0.0],
                  [np.cos(0.1), np.sin(0.1), 0.0],
                  [0.0, 0.0, 1.0]])
    table = B.SemanticTable(s)
    bank = B.CovarianceBank(mu=np.zeros((3, 2)),
                            sigma=np.stack([2 * np.eye(2), np.eye(2), 5 * np.eye(2)]),
                            n=np.array([10, 2, 7]))
    sig, empty = B.blend_covariance(bank, table, k=2)
    assert np.allclose(sig[0], (10 * 2 + 2 * 1) / 12 * np.eye(2), atol=1e-12)
    assert not empty.any()


def test_blend_unweighted_mean():
    s = np.array([[1.0, 0.0], [np.cos(0.1), np.sin(0.1)]])
    table = B.SemanticTable(s)
    bank = B.CovarianceBank(mu=np.zeros((2, 2)),
                            sigma=np.stack([2 * np.eye(2), np.eye(2)]),
                            n=np.array([10, 2]))
    sig, _ = B.blend_covariance(bank, table, k=2, weighted=False)
    assert np.allclose(sig[0], 1.5 * np.eye(2), atol=1e-12)


def test_blend_weighted_equals_unweighted_for_equal_counts():
    rng = Rng(12)
    table = make_table(rng, c=5, d_s=3)
    factors = rng.normal(size=(5, 3, 3))
    bank = B.CovarianceBank(mu=np.zeros((5, 3)),
                            sigma=np.stack([f @ f.T for f in factors]),
                            n=np.full(5, 4))
    a, _ = B.blend_covariance(bank, table, k=3, weighted=True)
    b, _ = B.blend_covariance(bank, table, k=3, weighted=False)
    assert np.abs(a - b).max() < 1e-12


def test_blend_preserves_psd():
    rng = Rng(13)
    table = make_table(rng, c=6, d_s=4)
    factors = rng.normal(size=(6, 3, 3))
    bank = B.CovarianceBank(mu=np.zeros((6, 3)),
                            sigma=np.stack([f @ f.T for f in factors]),
                            n=rng.integers(1, 10, size=6))
    sig, _ = B.blend_covariance(bank, table, k=4)
    for m in sig:
        assert np.linalg.eigvalsh(m).min() >= -1e-10


def test_blend_all_zero_counts_flagged():
    rng = Rng(14)
    table = make_table(rng, c=3, d_s=3)
    bank = B.CovarianceBank.zeros(3, 2)
    sig, empty = B.blend_covariance(bank, table, k=2)
    assert empty.all()
    assert np.array_equal(sig, np.zeros_like(sig))


def test_blend_tie_break_and_self_inclusion():
    # duplicate rows: similarity ties; the class itself must stay selected
    row = np.array([1.0, 0.0])
    table = B.SemanticTable(np.stack([row, row, [0.0, 1.0]]))
    bank = B.CovarianceBank(mu=np.zeros((3, 2)),
                            sigma=np.stack([np.eye(2), 3 * np.eye(2), 9 * np.eye(2)]),
                            n=np.array([1, 1, 1]))
    sig, _ = B.blend_covariance(bank, table, k=1)
    assert np.array_equal(sig[1], 3 * np.eye(2))  # class 1 keeps its own sigma
    assert np.array_equal(B.topk_similar(table, 1, 2), np.array([1, 0]))


def test_blend_k_out_of_range():
    rng = Rng(15)
    table = make_table(rng, c=3, d_s=3)
    bank = B.CovarianceBank.zeros(3, 2)
    with pytest.raises(ValueError):
        B.blend_covariance(bank, table, k=0)
    with pytest.raises(ValueError):
        B.blend_covariance(bank, table, k=4)
