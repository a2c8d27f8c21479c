import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from linrot import posenc, recurrence as R
from linrot.numerics import ContractError, DimensionError, NonFiniteError, Rng

seeds = st.integers(0, 2**31 - 1)


def streams(seed, T=10, dk=6, dv=3):
    r = Rng(seed, "rec")
    q = r.child("q").normal((T, dk))
    k = r.child("k").normal((T, dk))
    v = r.child("v").normal((T, dv))
    track = np.cumsum(r.child("a").uniform((T, dk // 2), -np.pi, np.pi), axis=0)
    decay = np.repeat(r.child("d").uniform((T, dk // 2), 0.3, 0.99), 2, axis=1)
    beta = r.child("b").uniform((T,), 0.05, 1.0)
    return q, k, v, track, decay, beta


def spec_for(kind, T, dk, track, decay, beta):
    return {
        "identity": lambda: R.TransitionSpec("identity"),
        "decay": lambda: R.TransitionSpec("decay", decay=decay),
        "fixed-rotation": lambda: R.fixed_rotation(T, posenc.make_schedule("rope-exponential", dk, 1e-2)),
        "selective-rotation": lambda: R.TransitionSpec("selective-rotation", angles=track),
        "decay-and-rotation": lambda: R.compose_with_posenc(decay, track),
        "delta-rule": lambda: R.TransitionSpec("delta-rule", beta=beta),
    }[kind]()


def unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# ----------------------------------------------------------- spec examples


def test_identity_running_sum():
    one = np.ones((3, 1))
    out, _ = R.scan(one, one, one, R.TransitionSpec("identity"))
    assert out[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_half_decay_example():
    one = np.ones((3, 1))
    out, _ = R.scan(one, one, one, R.TransitionSpec("decay", decay=np.full((3, 1), 0.5)))
    assert out[:, 0].tolist() == [1.0, 1.5, 1.75]


def test_attention_identity_is_linear_attention():
    q, k, *_ = streams(0)
    att = R.attention_matrix(q, k, R.TransitionSpec("identity"))
    assert np.max(np.abs(att - np.tril(q @ k.T))) <= 1e-12


def test_attention_single_step():
    q, k, *_ = streams(1, T=1)
    assert R.attention_matrix(q, k, R.TransitionSpec("identity"))[0, 0] == pytest.approx(k[0] @ q[0], abs=1e-15)


def test_delta_overwrite():
    k = np.array([[1.0, 0.0], [1.0, 0.0]])
    v = np.array([[3.0], [7.0]])
    out = R.delta_scan(k, k, v, np.ones(2))
    assert out[1, 0] == 7.0


def test_delta_zero_beta():
    q, k, v, *_ = streams(2)
    assert not np.any(R.delta_scan(q, unit(k), v, np.zeros(10)))


def test_delta_matches_dense_unroll():
    q, k, v, _, _, beta = streams(3)
    k = unit(k)
    S = np.zeros((3, 6))
    ref = []
    for t in range(10):
        S = S @ (np.eye(6) - beta[t] * np.outer(k[t], k[t])) + beta[t] * np.outer(v[t], k[t])
        ref.append(S @ q[t])
    assert np.max(np.abs(R.delta_scan(q, k, v, beta) - np.array(ref))) <= 1e-10


def test_delta_rejects_non_unit_keys():
    q, k, v, _, _, beta = streams(4)
    with pytest.raises(ContractError):
        R.delta_scan(q, k, v, beta)


def test_compose_reductions():
    q, k, v, track, decay, _ = streams(5)
    ones = np.ones_like(decay)
    a = R.scan(q, k, v, R.compose_with_posenc(ones, track))[0]
    b = R.scan(q, k, v, R.TransitionSpec("selective-rotation", angles=track))[0]
    assert np.max(np.abs(a - b)) <= 1e-12
    c = R.scan(q, k, v, R.compose_with_posenc(decay, np.zeros_like(track)))[0]
    d = R.scan(q, k, v, R.TransitionSpec("decay", decay=decay))[0]
    assert np.max(np.abs(c - d)) <= 1e-12


def test_compose_requires_pair_constant_decay():
    _, _, _, track, decay, _ = streams(6)
    decay = decay.copy()
    decay[0, 0] *= 0.5
    with pytest.raises(ContractError):
        R.compose_with_posenc(decay, track)


def test_transition_validation():
    with pytest.raises(ValueError):
        R.TransitionSpec("spiral")
    with pytest.raises(ContractError):
        R.TransitionSpec("decay")
    with pytest.raises(ContractError):
        R.TransitionSpec("decay", decay=np.full((2, 2), 1.5))
    with pytest.raises(ContractError):
        R.TransitionSpec("delta-rule", beta=np.array([1.2]))


def test_shape_errors():
    q, k, v, track, *_ = streams(7)
    with pytest.raises(DimensionError):
        R.scan(q, k[:, :4], v, R.TransitionSpec("identity"))
    with pytest.raises(DimensionError):
        R.scan(q, k, v, R.TransitionSpec("selective-rotation", angles=track[:5]))


@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_non_finite_names_timestep():
    q, k, v, *_ = streams(8)
    v = v.copy()
    v[4, 0] = np.inf
    with pytest.raises(NonFiniteError, match="timestep 4"):
        R.scan(q, k, v, R.TransitionSpec("identity"))


# ------------------------------------------------------------- equivalences


@pytest.mark.parametrize("kind", R.KINDS)
@given(seed=seeds)
def test_scan_matches_attention_matrix(kind, seed):
    T = 1 + seed % 24
    q, k, v, track, decay, beta = streams(seed, T=T)
    if kind == "delta-rule":
        k = unit(k)
    spec = spec_for(kind, T, 6, track, decay, beta)
    a = R.scan(q, k, v, spec)[0]
    b = R.attention_outputs(q, k, v, spec)
    assert np.max(np.abs(a - b)) <= 1e-10


@pytest.mark.parametrize("kind", [k for k in R.KINDS if k != "delta-rule"])
@given(seed=seeds, chunk=st.sampled_from([1, 3, 8, 64]))
def test_chunked_matches_sequential(kind, seed, chunk):
    T = 1 + seed % 40
    q, k, v, track, decay, beta = streams(seed, T=T)
    spec = spec_for(kind, T, 6, track, decay, beta)
    a = R.scan(q, k, v, spec)[0]
    b = R.chunked_scan(q, k, v, spec, chunk=chunk)[0]
    assert np.max(np.abs(a - b)) <= 1e-12


def test_chunked_batched_and_normalized():
    r = Rng(9, "batch")
    q, k = r.child("q").uniform((2, 3, 20, 4), 0.1, 1), r.child("k").uniform((2, 3, 20, 4), 0.1, 1)
    v = r.child("v").normal((2, 3, 20, 5))
    decay = np.repeat(r.child("d").uniform((2, 3, 20, 2), 0.5, 1.0), 2, axis=-1)
    spec = R.TransitionSpec("decay", decay=decay)
    a = R.scan(q, k, v, spec, normalize=True)[0]
    b = R.chunked_scan(q, k, v, spec, normalize=True, chunk=7)[0]
    assert np.max(np.abs(a - b)) <= 1e-12
    single = R.scan(q[1, 2], k[1, 2], v[1, 2], R.TransitionSpec("decay", decay=decay[1, 2]), normalize=True)[0]
    assert np.max(np.abs(a[1, 2] - single)) <= 1e-14


def test_normalized_output_is_weighted_mean():
    q, k = np.abs(streams(10)[0]), np.abs(streams(10)[1])
    v = streams(10)[2]
    out = R.scan(q, k, v, R.TransitionSpec("identity"), normalize=True)[0]
    att = np.tril(q @ k.T)
    assert np.max(np.abs(out - (att @ v) / att.sum(1, keepdims=True))) <= 1e-12


@given(seeds)
def test_rope_trick(seed):
    T = 1 + seed % 64
    q, k, v, track, *_ = streams(seed, T=T, dk=8)
    a = R.scan(q, k, v, R.TransitionSpec("selective-rotation", angles=track))[0]
    b = R.scan(posenc.rotate_pairs(q, track), posenc.rotate_pairs(k, track), v, R.TransitionSpec("identity"))[0]
    assert np.max(np.abs(a - b)) <= 1e-10


def test_fixed_rotation_is_rope():
    q, k, v, *_ = streams(11, T=16, dk=8)
    temps = posenc.make_schedule("rope-exponential", 8, 1e-2)
    a = R.scan(q, k, v, R.fixed_rotation(16, temps))[0]
    qr, kr = posenc.rope_apply(q, k, np.arange(1, 17), temps)
    b = R.scan(qr, kr, v, R.TransitionSpec("identity"))[0]
    assert np.max(np.abs(a - b)) <= 1e-10


# ---------------------------------------------------------------- invariants


def test_transition_blocks_orthonormal():
    _, _, _, track, *_ = streams(12)
    A = R.transition_matrices(R.TransitionSpec("selective-rotation", angles=track), *streams(12)[:2])
    assert np.max(np.abs(A @ np.swapaxes(A, 1, 2) - np.eye(6))) <= 1e-12


@given(seeds)
def test_pure_rotation_preserves_state_norm(seed):
    q, k, v, track, *_ = streams(seed, T=15)
    v = v.copy()
    v[1:] = 0.0
    spec = R.TransitionSpec("selective-rotation", angles=track)
    norms = [np.linalg.norm(R.scan(q[:t], k[:t], v[:t], R.TransitionSpec("selective-rotation", angles=track[:t]))[1].S)
             for t in range(1, 16)]
    assert np.max(np.abs(np.array(norms) - norms[0])) <= 1e-12
    assert spec.rotates


@given(seeds)
def test_decay_contraction(seed):
    q, k, v, _, decay, _ = streams(seed, T=12)
    prev = 0.0
    for t in range(1, 13):
        S = R.scan(q[:t], k[:t], v[:t], R.TransitionSpec("decay", decay=decay[:t]))[1].S
        bound = decay[t - 1].max() * prev + np.linalg.norm(v[t - 1]) * np.linalg.norm(k[t - 1])
        assert np.linalg.norm(S) <= bound + 1e-12
        prev = np.linalg.norm(S)


def test_delta_idempotent_writes():
    k = unit(np.array([[1.0, 2.0, 2.0]] * 4))
    v = np.array([[1.0, -1.0]] * 4)
    q = np.eye(3)[[0, 1, 2, 0]]
    states = [R.scan(q[:t], k[:t], v[:t], R.TransitionSpec("delta-rule", beta=np.ones(t)))[1].S for t in range(1, 5)]
    for S in states[1:]:
        assert np.max(np.abs(S - states[0])) <= 1e-15


@pytest.mark.parametrize("kind", R.KINDS)
@given(seed=seeds, t0=st.integers(0, 9))
def test_causality(kind, seed, t0):
    q, k, v, track, decay, beta = streams(seed)
    if kind == "delta-rule":
        k = unit(k)
    spec = spec_for(kind, 10, 6, track, decay, beta)
    a = R.scan(q, k, v, spec)[0]
    v2 = v.copy()
    v2[t0] += 10.0
    q2 = q.copy()
    q2[t0] += 1.0
    b = R.scan(q2, k, v2, spec)[0]
    assert np.array_equal(a[:t0], b[:t0])


def test_structured_attention_matches_scan():
    q, k, v, track, *_ = streams(13, T=50)
    spec = R.TransitionSpec("selective-rotation", angles=track)
    a = R.structured_attention_outputs(q, k, v, spec, block=16)
    assert np.max(np.abs(a - R.scan(q, k, v, spec)[0])) <= 1e-10
    with pytest.raises(ContractError):
        R.structured_attention_outputs(q, k, v, R.TransitionSpec("decay", decay=np.full((50, 6), 0.5)))
