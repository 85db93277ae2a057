import numpy as np
import pytest

from fotoc_tempo.tensor_net import (
    PHYS_DIM,
    CompressionParams,
    Mpo,
    Mps,
    apply_mpo,
    attach_site,
    compose,
    contract_all,
    contract_open_tail,
    diagonal_mpo,
    product_mps,
    svd_compress,
    trace_out_site,
)

LOSSLESS = CompressionParams(epsilon=0.0)


def random_mps(rng, n, chi=3, real=False):
    dims = [1] + [chi] * (n - 1) + [1]
    sites = []
    for k in range(n):
        shape = (dims[k], PHYS_DIM, dims[k + 1])
        t = rng.normal(size=shape)
        if not real:
            t = t + 1j * rng.normal(size=shape)
        sites.append(t)
    return Mps(tuple(sites))


def random_mpo(rng, n, chi=2):
    dims = [1] + [chi] * (n - 1) + [1]
    return Mpo(tuple(rng.normal(size=(dims[k], PHYS_DIM, PHYS_DIM, dims[k + 1]))
                     + 1j * rng.normal(size=(dims[k], PHYS_DIM, PHYS_DIM, dims[k + 1]))
                     for k in range(n)))


def dense(mps):
    return mps.to_dense().reshape(-1)


def check_left_orthonormal(mps, upto):
    for a in mps.sites[:upto]:
        m = a.reshape(-1, a.shape[-1])
        np.testing.assert_allclose(m.conj().T @ m, np.eye(m.shape[1]), atol=1e-12)


def check_right_orthonormal(mps, start):
    for a in mps.sites[start:]:
        m = a.reshape(a.shape[0], -1)
        np.testing.assert_allclose(m @ m.conj().T, np.eye(m.shape[0]), atol=1e-12)


# ---------------------------------------------------------------- types

def test_chain_validation():
    with pytest.raises(ValueError, match="bond mismatch"):
        Mps((np.ones((1, 4, 2)), np.ones((3, 4, 1))))
    with pytest.raises(ValueError, match="open boundary"):
        Mps((np.ones((2, 4, 1)),))
    with pytest.raises(ValueError, match="rank-3"):
        Mps((np.ones((1, 4)),))
    with pytest.raises(ValueError, match="rank-4"):
        Mpo((np.ones((1, 4, 1)),))


def test_dtype_kept():
    assert product_mps([np.ones(4)]).sites[0].dtype == np.float64
    assert product_mps([np.ones(4, dtype=complex)]).sites[0].dtype == np.complex128
    assert Mps((np.ones((1, 4, 1), dtype=int),)).sites[0].dtype == np.float64


# ---------------------------------------------------------------- compression

def test_compress_product_state_unchanged():
    rng = np.random.default_rng(0)
    vecs = [rng.normal(size=4) for _ in range(4)]
    mps = product_mps(vecs)
    out, discarded = svd_compress(mps, CompressionParams())
    assert out.bond_dims == [1, 1, 1]
    assert discarded == 0.0
    np.testing.assert_allclose(dense(out), dense(mps), rtol=1e-14, atol=1e-15)


def test_compress_lossless():
    rng = np.random.default_rng(1)
    mps = random_mps(rng, 5, chi=4)
    out, discarded = svd_compress(mps, LOSSLESS)
    assert discarded == 0.0
    ref = dense(mps)
    assert np.abs(dense(out) - ref).max() < 1e-13 * np.abs(ref).max()
    w = [rng.normal(size=4) for _ in range(5)]
    assert contract_all(out, w) == pytest.approx(contract_all(mps, w), rel=1e-13)
    assert out.canonical_center == 0
    check_right_orthonormal(out, 1)


def test_compress_drops_tiny_term():
    a = [np.eye(4)[0]] * 3
    b = [np.eye(4)[1]] * 3
    # explicit bond-2 sum |aaa> + 1e-13 |bbb>
    sites = [np.stack([a[0], 1e-13 * b[0]], axis=-1)[None],
             np.stack([np.stack([a[1], 0 * a[1]], -1), np.stack([0 * b[1], b[1]], -1)]),
             np.stack([a[2], b[2]])[..., None]]
    mps = Mps(tuple(sites))
    assert mps.bond_dims == [2, 2]
    out, discarded = svd_compress(mps, CompressionParams(epsilon=1e-11))
    assert out.bond_dims == [1, 1]
    assert discarded > 0
    kept, _ = svd_compress(mps, CompressionParams(epsilon=1e-14))
    assert kept.bond_dims == [2, 2]


def test_compress_chi_max():
    rng = np.random.default_rng(2)
    mps = random_mps(rng, 6, chi=6)
    out, discarded = svd_compress(mps, CompressionParams(epsilon=0.0, chi_max=2))
    assert max(out.bond_dims) <= 2
    assert 0 < discarded < 1


def test_compress_error_bound():
    rng = np.random.default_rng(3)
    # a state with a decaying spectrum across the middle bond
    mps = random_mps(rng, 6, chi=8)
    ref, _ = svd_compress(mps, LOSSLESS)
    for eps in (1e-1, 1e-2, 1e-3):
        out, discarded = svd_compress(mps, CompressionParams(epsilon=eps))
        err = np.linalg.norm(dense(out) - dense(ref)) / np.linalg.norm(dense(ref))
        # per-bond discarded weight fractions add up over the bonds
        assert err <= np.sqrt(len(mps) * discarded) + 1e-12


def test_canonicalization_idempotent():
    rng = np.random.default_rng(4)
    mps = random_mps(rng, 6, chi=5)
    comp = CompressionParams(epsilon=1e-3)
    once, _ = svd_compress(mps, comp)
    twice, _ = svd_compress(once, comp)
    assert once.bond_dims == twice.bond_dims
    for a, b in zip(once.sites, twice.sites):
        sa = np.linalg.svd(a.reshape(a.shape[0], -1), compute_uv=False)
        sb = np.linalg.svd(b.reshape(b.shape[0], -1), compute_uv=False)
        np.testing.assert_allclose(sa, sb, atol=1e-13)


def test_compress_deterministic_and_sign_fixed():
    rng = np.random.default_rng(5)
    mps = random_mps(rng, 5, chi=4)
    a, _ = svd_compress(mps, CompressionParams(1e-6))
    b, _ = svd_compress(mps, CompressionParams(1e-6))
    for x, y in zip(a.sites, b.sites):
        np.testing.assert_array_equal(x, y)


def test_compress_rejects_non_finite():
    mps = product_mps([np.array([1.0, np.nan, 0, 0]), np.ones(4)])
    with pytest.raises(FloatingPointError):
        svd_compress(mps, CompressionParams())


# ---------------------------------------------------------------- apply_mpo

def test_apply_identity_and_ones():
    rng = np.random.default_rng(6)
    mps = random_mps(rng, 4)
    ident = Mpo(tuple(np.eye(4).reshape(1, 4, 4, 1) for _ in range(4)))
    ones = diagonal_mpo([np.ones(4)] * 4)
    for op in (ident, ones):
        out = apply_mpo(op, mps, LOSSLESS)
        np.testing.assert_allclose(dense(out), dense(mps), atol=1e-13 * np.abs(dense(mps)).max())


@pytest.mark.parametrize("real", [False, True])
def test_apply_matches_dense(real):
    rng = np.random.default_rng(7)
    mps = random_mps(rng, 3, real=real)
    op = random_mpo(rng, 3)
    if real:
        op = Mpo(tuple(s.real for s in op.sites))
    ref = op.to_dense() @ dense(mps)
    for comp in (None, LOSSLESS):
        got = dense(apply_mpo(op, mps, comp))
        assert np.abs(got - ref).max() < 1e-12 * np.abs(ref).max()


def test_apply_associative():
    rng = np.random.default_rng(8)
    mps = random_mps(rng, 4)
    m1, m2 = random_mpo(rng, 4), random_mpo(rng, 4)
    chained = apply_mpo(m2, apply_mpo(m1, mps, LOSSLESS), LOSSLESS)
    composed = apply_mpo(compose(m2, m1), mps, LOSSLESS)
    ref = dense(composed)
    assert np.abs(dense(chained) - ref).max() < 1e-11 * np.abs(ref).max()


def test_apply_truncates():
    rng = np.random.default_rng(9)
    mps = random_mps(rng, 6, chi=4)
    op = random_mpo(rng, 6, chi=3)
    full = apply_mpo(op, mps, LOSSLESS)
    cut = apply_mpo(op, mps, CompressionParams(epsilon=0.0, chi_max=3))
    assert max(cut.bond_dims) <= 3 < max(full.bond_dims)


def test_apply_site_mismatch():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError):
        apply_mpo(random_mpo(rng, 3), random_mps(rng, 4))


# ---------------------------------------------------------------- attach / trace

def test_attach_identity_wire():
    rng = np.random.default_rng(11)
    mps = random_mps(rng, 3)
    w = [rng.normal(size=4) for _ in range(3)]
    base = contract_all(mps, w)
    wire = np.full((1, 4, 1), 0.25)
    grown = attach_site(mps, wire, "tail")
    assert len(grown) == 4
    assert contract_all(grown, w + [np.ones(4)]) == pytest.approx(base, rel=1e-14)
    head = attach_site(mps, wire, "head")
    assert contract_all(head, [np.ones(4)] + w) == pytest.approx(base, rel=1e-14)


def test_attach_to_empty_and_errors():
    single = attach_site(Mps(()), np.ones((1, 4, 1)))
    assert len(single) == 1
    with pytest.raises(ValueError):
        attach_site(single, np.ones((4, 1)))
    with pytest.raises(ValueError):
        attach_site(single, np.ones((1, 4, 1)), "middle")
    with pytest.raises(ValueError):
        attach_site(single, np.ones((2, 4, 1)))


def test_attach_one_hot_partition():
    rng = np.random.default_rng(12)
    mps = random_mps(rng, 3)
    w = [rng.normal(size=4) for _ in range(3)]
    grown = attach_site(mps, np.eye(4)[0].reshape(1, 4, 1))
    reduced = trace_out_site(grown, 3, np.ones(4))
    assert contract_all(reduced, w) == pytest.approx(contract_all(mps, w), rel=1e-14)


def test_trace_out_one_hot_fixes_value():
    rng = np.random.default_rng(13)
    mps = random_mps(rng, 3)
    full = mps.to_dense()
    for m in range(4):
        out = trace_out_site(mps, 1, np.eye(4)[m])
        np.testing.assert_allclose(out.to_dense(), full[:, m, :], rtol=1e-13)


def test_trace_out_product_scalar():
    vecs = [np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.5, 0.0, 1.0, 2.0])]
    out = trace_out_site(product_mps(vecs), 0, np.ones(4))
    np.testing.assert_allclose(out.to_dense(), 10.0 * vecs[1])


@pytest.mark.parametrize("index", [0, 1, 2])
def test_trace_out_dense(index):
    rng = np.random.default_rng(14)
    mps = random_mps(rng, 3)
    w = rng.normal(size=4)
    ref = np.tensordot(mps.to_dense(), w, axes=(index, 0))
    out = trace_out_site(mps, index, w)
    np.testing.assert_allclose(out.to_dense(), ref, rtol=1e-12, atol=1e-13)


def test_trace_out_errors():
    rng = np.random.default_rng(15)
    with pytest.raises(IndexError):
        trace_out_site(random_mps(rng, 3), 3, np.ones(4))
    with pytest.raises(ValueError):
        trace_out_site(random_mps(rng, 1), 0, np.ones(4))


# ---------------------------------------------------------------- contraction

def test_contract_product_one_hot():
    vecs = [np.array([1.0, 2.0, 3.0, 4.0]), np.array([5.0, 6.0, 7.0, 8.0])]
    mps = product_mps(vecs)
    assert contract_all(mps, [np.eye(4)[2], np.eye(4)[1]]) == pytest.approx(3.0 * 6.0)


def test_contract_linear():
    rng = np.random.default_rng(16)
    mps = random_mps(rng, 4)
    w = [rng.normal(size=4) for _ in range(4)]
    w1, w2 = rng.normal(size=4), rng.normal(size=4)
    a = contract_all(mps, w[:2] + [w1] + w[3:])
    b = contract_all(mps, w[:2] + [w2] + w[3:])
    c = contract_all(mps, w[:2] + [w1 + w2] + w[3:])
    assert c == pytest.approx(a + b, rel=1e-13)


def test_contract_dense():
    rng = np.random.default_rng(17)
    mps = random_mps(rng, 4)
    w = [rng.normal(size=4) + 1j * rng.normal(size=4) for _ in range(4)]
    ref = np.einsum("abcd,a,b,c,d->", mps.to_dense(), *w)
    assert contract_all(mps, w) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        contract_all(mps, w[:3])


def test_contract_with_operator_and_open_tail():
    rng = np.random.default_rng(18)
    mps = random_mps(rng, 3)
    op = random_mpo(rng, 3)
    w = [rng.normal(size=4) for _ in range(3)]
    acted = apply_mpo(op, mps)
    assert contract_all(mps, w, op) == pytest.approx(contract_all(acted, w), rel=1e-12)
    tail = contract_open_tail(mps, w[:2], op)
    ref = np.einsum("abc,a,b->c", acted.to_dense(), w[0], w[1])
    np.testing.assert_allclose(tail, ref, rtol=1e-12)
    np.testing.assert_allclose(contract_open_tail(mps, w[:2]),
                               np.einsum("abc,a,b->c", mps.to_dense(), w[0], w[1]), rtol=1e-12)


def test_compose_dense():
    rng = np.random.default_rng(19)
    a, b = random_mpo(rng, 2), random_mpo(rng, 2)
    np.testing.assert_allclose(compose(b, a).to_dense(), b.to_dense() @ a.to_dense(),
                               rtol=1e-12, atol=1e-12)
