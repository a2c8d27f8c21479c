import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linrot import model as M
from linrot import tasks, verify
from linrot.numerics import ContractError, DimensionError, Rng
from linrot.numerics import autodiff as ad

SMALL = dict(vocab_size=5, model_dim=16, num_heads=2)


def toks(seed, B=2, T=10, V=5):
    return Rng(seed, "tok").integers(0, V, (B, T))


# ------------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(DimensionError):
        M.ModelConfig(model_dim=10, num_heads=4)
    with pytest.raises(DimensionError):
        M.ModelConfig(model_dim=6, num_heads=2, posenc="rope")
    M.ModelConfig(model_dim=6, num_heads=2, posenc="nope")
    with pytest.raises(ValueError):
        M.ModelConfig(mixer="mamba")
    with pytest.raises(ValueError):
        M.ModelConfig(precision="f16")


def test_frozen_temperatures_are_buffers():
    m = M.Model(M.ModelConfig(posenc="selective-rope", **SMALL))
    assert "L0.srope.temps" not in m.trainable_names()
    assert not isinstance(m.tape_params()["L0.srope.temps"], ad.Var)
    m2 = M.Model(M.ModelConfig(posenc="selective-rope", temperatures_learnable=True, **SMALL))
    assert "L0.srope.temps" in m2.trainable_names()


def test_init_is_seeded_and_typed():
    cfg = M.ModelConfig(precision="f32", **SMALL)
    a, b = M.init_params(cfg, 3), M.init_params(cfg, 3)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert all(v.dtype == np.float32 for v in a.values())
    assert not np.any(a["L0.bg"])


# ------------------------------------------------------------------ forward


def test_zero_readout_gives_uniform_logits():
    m = M.Model(M.ModelConfig(posenc="selective-rope", **SMALL))
    m.params["readout"][:] = 0.0
    logits = m.forward(toks(0))
    assert np.all(logits == 0.0)


@pytest.mark.parametrize("mixer", M.MIXERS)
@pytest.mark.parametrize("pe", M.POSENCS)
def test_causality(mixer, pe):
    m = M.Model(M.ModelConfig(mixer=mixer, posenc=pe, num_layers=2, short_conv_width=3, **SMALL), seed=1)
    t = toks(2)
    t2 = t.copy()
    t2[:, 5] = (t2[:, 5] + 1) % 5
    a, b = m.forward(t), m.forward(t2)
    assert np.array_equal(a[:, :5], b[:, :5])
    assert not np.array_equal(a[:, 5], b[:, 5])


def test_single_token_depends_only_on_itself():
    m = M.Model(M.ModelConfig(posenc="selective-rope", **SMALL), seed=4)
    one = m.forward(np.array([[3]]))
    # different T changes BLAS blocking, so compare to rounding rather than bitwise
    assert np.max(np.abs(one[0, 0] - m.forward(np.array([[3, 1, 2]]))[0, 0])) <= 1e-12


def test_token_range_checked():
    m = M.Model(M.ModelConfig(**SMALL))
    with pytest.raises(ContractError):
        m.forward(np.array([[0, 5]]))


@pytest.mark.parametrize("mixer", ["softmax", "delta"])
def test_nope_equals_selective_rope_with_zero_angles(mixer):
    # both variants L2-normalize q and k for these mixers, so only the rotation differs
    base = M.ModelConfig(mixer=mixer, **SMALL)
    sel = M.ModelConfig(mixer=mixer, posenc="selective-rope", **SMALL)
    p = M.init_params(sel, 5)
    p["L0.srope.w_omega_scale"][:] = 0.0
    p["L0.srope.bias"][:] = 0.0
    q = {k: v for k, v in p.items() if "srope" not in k}
    t = toks(6)
    assert np.max(np.abs(M.forward(base, q, t) - M.forward(sel, p, t))) <= 1e-10


def test_selective_rope_angles_matter():
    cfg = M.ModelConfig(posenc="selective-rope", **SMALL)
    p = M.init_params(cfg, 5)
    z = {k: v.copy() for k, v in p.items()}
    z["L0.srope.w_omega_scale"][:] = 0.0
    assert np.max(np.abs(M.forward(cfg, p, toks(7)) - M.forward(cfg, z, toks(7)))) > 1e-6


# ---------------------------------------------------------------- softmax mixer


def naive_softmax(q, k, v):
    T, d = q.shape
    out = np.empty_like(v)
    for t in range(T):
        s = np.array([q[t] @ k[j] / np.sqrt(d) for j in range(t + 1)])
        w = np.exp(s - s.max())
        out[t] = (w / w.sum()) @ v[: t + 1]
    return out


@given(st.integers(0, 10_000))
def test_softmax_mixer_matches_naive(seed):
    r = Rng(seed, "sm")
    q, k, v = r.child("q").normal((9, 4)), r.child("k").normal((9, 4)), r.child("v").normal((9, 3))
    assert np.max(np.abs(M.softmax_mixer(q, k, v) - naive_softmax(q, k, v))) <= 1e-10


def test_softmax_mixer_edge_cases():
    r = Rng(0, "sm")
    q, v = r.child("q").normal((6, 4)), r.child("v").normal((6, 3))
    assert np.array_equal(M.softmax_mixer(q[:1], q[:1], v[:1]), v[:1])
    out = M.softmax_mixer(q, np.zeros((6, 4)), v)
    assert np.max(np.abs(out - np.cumsum(v, 0) / np.arange(1, 7)[:, None])) <= 1e-14
    rows = M.softmax_mixer(q, r.child("k").normal((6, 4)), np.eye(6))
    assert np.max(np.abs(rows.sum(1) - 1.0)) <= 1e-12
    assert np.all(np.triu(rows, 1) == 0.0)


# --------------------------------------------------------------------- loss


def test_loss_examples():
    t = np.array([[0, 2, 1]])
    mask = np.ones((1, 3), bool)
    perfect = 50.0 * np.eye(4)[t]
    assert M.loss(perfect, t, mask) < 1e-20
    assert M.loss(np.zeros((1, 3, 4)), t, mask) == pytest.approx(np.log(4), abs=1e-15)
    with pytest.raises(ContractError):
        M.loss(perfect, t, np.zeros((1, 3), bool))


def test_loss_respects_mask():
    t = np.array([[0, 2, 1]])
    lg = np.zeros((1, 3, 4))
    lg[0, 0, 3] = 100.0  # wrong and unmasked: ignored
    mask = np.array([[False, True, True]])
    assert M.loss(lg, t, mask) == pytest.approx(np.log(4), abs=1e-12)


def test_loss_gradcheck():
    r = Rng(0, "loss")
    lg = ad.param(r.normal((2, 3, 4)), "logits")
    t = r.child("t").integers(0, 4, (2, 3))
    mask = np.array([[1, 0, 1], [1, 1, 0]], bool)
    assert ad.gradcheck(lambda: M.loss(lg, t, mask), [lg]) <= 1e-4


@pytest.mark.parametrize("mixer", ["linear-attn", "delta", "softmax"])
def test_full_model_gradients(mixer):
    cfg = M.ModelConfig(mixer=mixer, posenc="selective-rope", num_layers=1, **SMALL)
    report = verify.gradient_report(cfg, T=6)
    assert max(report.values()) <= 1e-4, report


def test_every_trainable_parameter_receives_gradient():
    cfg = M.ModelConfig(mixer="gla", posenc="selective-rope", num_layers=2, **SMALL)
    m = M.Model(cfg, seed=0)
    tape = m.tape_params()
    t = toks(3)
    ad.backward(M.loss(m.forward(t, tape), t, np.ones(t.shape, bool)))
    for name in m.trainable_names():
        g = tape[name].grad
        assert g is not None and g.shape == m.params[name].shape and np.any(g), name


# ------------------------------------------------------------ hand-built parity


def hand_parity(mixer):
    cfg = M.ModelConfig(vocab_size=2, model_dim=64, num_heads=4, mixer=mixer, posenc="selective-rope", gate_temperature=16)
    p = M.init_params(cfg, 0)
    for k in p:
        if k.split(".")[-1] in ("wq", "wk", "wv", "wo", "w2", "embed", "readout"):
            p[k][:] = 0.0
    p["embed"][0, 0] = p["embed"][1, 1] = 1.0
    # head 0: token 1 tilts q toward dim 2, which drives a half turn of pair 0
    p["L0.wq"][0, 0] = p["L0.wq"][1, 0] = p["L0.wq"][1, 2] = 1.0
    p["L0.wk"][0, 0] = p["L0.wk"][1, 0] = 1.0
    p["L0.wv"][1, 0] = 1.0
    s = "L0.srope."
    p[s + "w_omega_dir"][:] = 0.0
    p[s + "w_omega_dir"][:, 2, :] = 1.0
    p[s + "w_omega_scale"][:] = 0.0
    p[s + "w_omega_scale"][0, 0] = np.pi * np.sqrt(2)
    p[s + "conv"][:] = 0.0
    p[s + "conv"][0, 0] = 1.0
    p[s + "gate_w"][:] = 0.0
    p[s + "gate_b"][:] = 30.0
    if mixer == "gla":
        p["L0.wg"][:] = 0.0
        p["L0.bg"][:] = 60.0
    p["L0.wo"][0, 2] = 1.0
    p["readout"][2, 1] = 1.0
    p["readout"][0, 0] = p["readout"][1, 0] = 0.3
    return M.Model(cfg, p)


@pytest.mark.parametrize("mixer", ["linear-attn", "gla"])
def test_parity_is_representable(mixer):
    m = hand_parity(mixer)
    spec = tasks.TaskSpec("parity", 2, 64, 64, 1024)
    for L in (64, 256, 1024):
        b = tasks.generate(spec, 16, L, seed=L)
        assert np.mean(m.forward(b.inputs).argmax(-1) == b.targets) == 1.0, L


# ---------------------------------------------------------------- checkpoint


@settings(max_examples=10)
@given(st.sampled_from(["f32", "f64"]), st.sampled_from(M.POSENCS))
def test_checkpoint_round_trip(tmp_path_factory, precision, pe):
    cfg = M.ModelConfig(posenc=pe, precision=precision, **SMALL)
    p = M.init_params(cfg, 2)
    path = tmp_path_factory.mktemp("ck") / "m.ckpt"
    M.save_checkpoint(path, p, cfg)
    q, cfg2 = M.load_checkpoint(path)
    assert cfg2 == cfg
    assert set(q) == set(p)
    for k in p:
        assert q[k].dtype == p[k].dtype and np.array_equal(q[k], p[k])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ContractError):
        M.load_checkpoint(path)
