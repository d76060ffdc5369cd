import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from vgx import nn_core as nc
from vgx.nn_core import OptimConfig, ParamStore


@pytest.fixture(autouse=True)
def float64_default():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


def numeric_grad(f, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar function of x."""
    g = torch.zeros_like(x)
    flat = x.detach().reshape(-1)
    for i in range(flat.numel()):
        old = float(flat[i])
        flat[i] = old + h
        up = float(f(flat.reshape(x.shape)).detach())
        flat[i] = old - h
        down = float(f(flat.reshape(x.shape)).detach())
        flat[i] = old
        g.reshape(-1)[i] = (up - down) / (2 * h)
    return g


def check_grad(f, *shapes, seed=0, tol=1e-4, positive=False):
    gen = torch.Generator().manual_seed(seed)
    xs = [torch.randn(s, generator=gen, dtype=torch.float64) for s in shapes]
    if positive:
        xs = [x.abs() + 0.5 for x in xs]
    # random projection so vector-valued ops reduce to a scalar
    out = f(*xs)
    proj = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    for k in range(len(xs)):
        leaves = [x.clone().requires_grad_(True) for x in xs]
        (f(*leaves) * proj).sum().backward()
        analytic = leaves[k].grad

        def scalar(v, k=k):
            args = [v if i == k else x for i, x in enumerate(xs)]
            return (f(*args) * proj).sum()

        numeric = numeric_grad(scalar, xs[k].clone())
        err = (analytic - numeric).norm() / max(numeric.norm(), analytic.norm(), 1e-12)
        assert err < tol, f"input {k}: relative error {err:.2e}"


# --- forward semantics -------------------------------------------------------------

def test_softmax_uniform_and_rows_sum_to_one():
    assert torch.allclose(nc.softmax(torch.zeros(4)), torch.full((4,), 0.25))
    x = torch.randn(50, 7) * 30
    assert torch.allclose(nc.softmax(x).sum(-1), torch.ones(50), atol=1e-6)


def test_layer_norm_constant_vector_is_zero():
    assert torch.equal(nc.layer_norm(torch.full((5,), 3.0)), torch.zeros(5))


def test_mean_pool_length_one_is_identity():
    x = torch.randn(3, 1, 8)
    assert torch.equal(nc.mean_pool(x, 1), x[:, 0])


def test_masked_mean_pool():
    x = torch.tensor([[[1.0], [3.0], [100.0]]])
    mask = torch.tensor([[True, True, False]])
    assert nc.mean_pool(x, 1, mask).item() == 2.0


def test_shape_errors_name_both_shapes():
    with pytest.raises(nc.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nc.matmul(torch.zeros(2, 3), torch.zeros(4, 5))
    with pytest.raises(nc.ShapeError, match=r"\(2, 3\).*\(4,\)"):
        nc.add(torch.zeros(2, 3), torch.zeros(4))
    with pytest.raises(nc.ShapeError):
        nc.layer_norm(torch.zeros(2, 3), torch.ones(4))
    with pytest.raises(nc.ShapeError):
        nc.Linear(3, 2)(torch.zeros(5, 4))


def test_embedding_lookup_bounds():
    table = torch.randn(4, 2)
    assert torch.equal(nc.embedding_lookup(table, torch.tensor([3, 0])), table[[3, 0]])
    with pytest.raises(IndexError):
        nc.embedding_lookup(table, torch.tensor([4]))


def test_activation_choices():
    x = torch.linspace(-2, 2, 9)
    assert torch.equal(nc.activation(x, "relu"), x.clamp_min(0))
    with pytest.raises(ValueError):
        nc.activation(x, "swish9")


def test_dropout_train_only_and_seeded():
    x = torch.ones(1000)
    assert torch.equal(nc.dropout(x, 0.5, training=False), x)
    a = nc.dropout(x, 0.5, True, torch.Generator().manual_seed(3))
    b = nc.dropout(x, 0.5, True, torch.Generator().manual_seed(3))
    assert torch.equal(a, b)
    assert set(a.unique().tolist()) <= {0.0, 2.0}
    assert 400 < int((a == 0).sum()) < 600


# --- gradients ----------------------------------------------------------------------

def test_sum_gradient_is_ones():
    w = torch.randn(3, 4, requires_grad=True)
    nc.backward(w.sum())
    assert torch.equal(w.grad, torch.ones(3, 4))


def test_quadratic_form_matches_finite_differences():
    gen = torch.Generator().manual_seed(1)
    x = torch.randn(4, generator=gen)
    w = torch.randn(3, 4, generator=gen, requires_grad=True)
    nc.backward((nc.matmul(w, x) ** 2).sum())
    numeric = numeric_grad(lambda v: (v @ x).pow(2).sum(), w.detach().clone())
    assert ((w.grad - numeric).norm() / numeric.norm()) < 1e-4


def test_detached_subgraph_has_zero_grad():
    w = torch.randn(3, requires_grad=True)
    v = torch.randn(3, requires_grad=True)
    loss = (w * 2).sum() + (v.detach() ** 2).sum()
    nc.backward(loss)
    assert v.grad is None or torch.equal(v.grad, torch.zeros(3))


def test_backward_rejects_non_scalar():
    with pytest.raises(nc.ShapeError):
        nc.backward(torch.randn(3, requires_grad=True) * 2)


OPS = {
    "matmul": (lambda a, b: nc.matmul(a, b), [(3, 4), (4, 2)], False),
    "add": (lambda a, b: nc.add(a, b), [(3, 4), (4,)], False),
    "layer_norm": (lambda x, g, b: nc.layer_norm(x, g, b), [(3, 6), (6,), (6,)], False),
    "softmax": (lambda x: nc.softmax(x, -1), [(3, 5)], False),
    "gelu": (lambda x: nc.activation(x, "gelu"), [(10,)], False),
    "tanh": (lambda x: nc.activation(x, "tanh"), [(10,)], False),
    "relu": (lambda x: nc.activation(x, "relu"), [(10,)], True),
    "mean_pool": (lambda x: nc.mean_pool(x, 1), [(2, 5, 3)], False),
    "masked_mean_pool": (lambda x: nc.mean_pool(x, 1, torch.tensor([[1, 1, 0], [1, 0, 0]]).bool()),
                         [(2, 3, 4)], False),
    "embedding": (lambda t: nc.embedding_lookup(t, torch.tensor([[0, 2], [2, 1]])), [(3, 4)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    f, shapes, positive = OPS[name]
    for seed in range(3):
        check_grad(f, *shapes, seed=seed, positive=positive)


def test_dropout_gradient_uses_same_mask():
    def f(x):
        return nc.dropout(x, 0.3, True, torch.Generator().manual_seed(5))
    check_grad(f, (20,))


def test_attention_and_block_gradients():
    rng = nc.SharedRng(0)
    torch.manual_seed(0)
    blk = nc.Block(8, 2, 16, 0.0, rng, d_cond=4).double()
    cond = torch.randn(2, 4)
    mask = torch.tensor([[True, True, False], [True, True, True]])
    check_grad(lambda x: blk(x, cond, mask, causal=True), (2, 3, 8))
    check_grad(lambda c: blk(torch.ones(2, 3, 8), c), (2, 4))


# --- optimizer -------------------------------------------------------------------------

def test_learning_rate_schedule():
    cfg = OptimConfig()
    assert nc.learning_rate(cfg, 250, 0) == pytest.approx(0.5e-4)
    assert nc.learning_rate(cfg, 500, 5) == pytest.approx(0.9e-4)
    assert nc.learning_rate(cfg, 10_000, 12) == pytest.approx(1e-4 * 0.81)
    assert nc.learning_rate(cfg, 0, 0) == 0.0


def _store(*shapes, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return ParamStore((f"p{i}", torch.nn.Parameter(torch.randn(s, generator=gen)))
                      for i, s in enumerate(shapes))


def test_zero_gradients_without_decay_leave_params():
    store = _store((3, 3), (3,))
    before = {n: p.detach().clone() for n, p in store}
    for _, p in store:
        p.grad = torch.zeros_like(p)
    nc.adamw_step(store, OptimConfig(weight_decay=0.0), 600, 0)
    for n, p in store:
        assert torch.equal(p, before[n])


def test_missing_gradient_raises():
    with pytest.raises(RuntimeError, match="missing gradients"):
        nc.adamw_step(_store((2,)), OptimConfig(), 1, 0)


@given(st.floats(0.01, 1000))
@settings(max_examples=25)
def test_clipping_bounds_global_norm(scale):
    store = _store((4, 4), (7,), seed=3)
    for _, p in store:
        p.grad = torch.randn(p.shape) * scale
    nc.clip_grad_norm([p for _, p in store], 1.0)
    assert nc.global_grad_norm(p for _, p in store) <= 1.0 + 1e-6


def test_adamw_matches_reference_update():
    """Hand-computed first step: Adam's bias-corrected step is lr * sign(g)."""
    p = torch.nn.Parameter(torch.tensor([[1.0, -2.0]]))
    store = ParamStore([("w", p)])
    p.grad = torch.tensor([[0.3, -0.4]])  # norm 0.5, below the clip threshold
    cfg = OptimConfig(lr0=0.1, warmup_steps=0, weight_decay=0.5)
    nc.adamw_step(store, cfg, 1, 0)
    lr = 0.1
    expected = torch.tensor([[1.0, -2.0]]) * (1 - lr * 0.5) - lr * torch.tensor([[1.0, -1.0]])
    assert torch.allclose(p.detach(), expected, atol=1e-6)


def test_adamw_is_deterministic():
    def run():
        store = _store((5, 5), seed=1)
        for step in range(1, 20):
            for _, p in store:
                p.grad = torch.sin(p.detach() * step)
            nc.adamw_step(store, OptimConfig(warmup_steps=5), step, step // 10)
        return store.params["p0"].detach().clone()
    assert torch.equal(run(), run())


def test_optim_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(dropout=1.0)
    with pytest.raises(ValueError):
        OptimConfig(lr0=0)


# --- checkpoints --------------------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    torch.set_default_dtype(torch.float32)
    rng = nc.SharedRng(0)
    model = nc.Transformer(2, 8, 2, 16, 0.1, rng, d_cond=4)
    store = ParamStore(model.named_parameters())
    for _, p in store:
        p.grad = torch.randn(p.shape)
    nc.adamw_step(store, OptimConfig(), 3, 0)
    json_path, bin_path = nc.save_checkpoint(tmp_path / "ck", store, {"note": "x"})
    assert json_path.exists() and bin_path.exists()

    other = nc.Transformer(2, 8, 2, 16, 0.1, nc.SharedRng(5), d_cond=4)
    store2 = ParamStore(other.named_parameters())
    meta = nc.load_checkpoint(tmp_path / "ck", store2)
    assert meta == {"note": "x"} and store2.t == store.t
    for (n, p), (_, q) in zip(store, store2):
        assert torch.equal(p, q), n
        assert torch.equal(store.m[n], store2.m[n]) and torch.equal(store.v[n], store2.v[n])
    manifest = nc.read_manifest(tmp_path / "ck")
    total = sum(4 * math.prod(e["shape"]) for e in manifest["tensors"])
    assert bin_path.stat().st_size == total


def test_checkpoint_shape_mismatch(tmp_path):
    store = _store((2, 2))
    nc.save_checkpoint(tmp_path / "a", store, {})
    with pytest.raises(nc.ShapeError):
        nc.load_checkpoint(tmp_path / "a", _store((3, 2)))
