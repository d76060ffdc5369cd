import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vgx.model import (
    SIGMA_MAX, Batch, ModelConfig, Prediction, build_model, decode_documents, encode_mean,
    greedy_readout, reparametrize, sequence_mask,
)
from vgx.nn_core import ShapeError
from vgx.svg_io import CommandKind
from vgx.tensor_repr import N_BINS, SLOT_TABLE, UNUSED_BIN, CapacityError, SvgTensor

K = CommandKind
SMALL = dict(d_e=16, layers=2, ff_dim=32, heads=2, d_z=8, arg_dim=4, n_paths=3, n_commands=6)


def small(mode="hierarchical", dropout=0.0, **kw):
    return build_model(ModelConfig(**{**SMALL, **kw}, mode=mode, dropout=dropout), seed=0,
                       dtype=torch.float64).eval()


def random_tensor(rng: np.random.Generator, cfg: ModelConfig, n_visible: int) -> SvgTensor:
    t = SvgTensor.empty(cfg.repr_config)
    for p in range(n_visible):
        n = rng.integers(2, cfg.n_commands)
        kinds = [K.M] + list(rng.choice([K.L, K.C], n - 2)) + [K.Z]
        t.cmd[p, :n] = kinds
        t.args[p, :n] = np.where(SLOT_TABLE[t.cmd[p, :n]], rng.integers(0, 256, (n, 6)), UNUSED_BIN)
        t.visible[p] = True
        t.fill[p] = rng.integers(0, 3)
    return t


def batch(seed=0, n=2, n_visible=2, cfg=None):
    cfg = cfg or ModelConfig(**SMALL)
    rng = np.random.default_rng(seed)
    return Batch.of([random_tensor(rng, cfg, n_visible) for _ in range(n)])


# --- embedding ------------------------------------------------------------------------

def test_embedding_is_sum_of_its_parts():
    m = small()
    b = batch()
    cmd, args = b.cmd[0], b.args[0]
    e = m.embed(cmd, args)
    emb = m.embed
    expected = (emb.cmd.weight[cmd] + emb.coord(emb.arg.weight[args].flatten(-2))
                + emb.index.weight[: cmd.shape[-1]])
    assert torch.allclose(e, expected, atol=1e-12)


def test_embedding_without_weights_is_zero():
    m = small()
    with torch.no_grad():
        for p in m.embed.parameters():
            p.zero_()
    b = batch()
    assert torch.equal(m.embed(b.cmd[0], b.args[0]), torch.zeros(3, 6, 16, dtype=torch.float64))


def test_same_command_at_two_positions_differs_by_index_rows():
    m = small()
    cmd = torch.tensor([[K.L, K.L]])
    args = torch.full((1, 2, 6), 7)
    e = m.embed(cmd, args)[0]
    idx = m.embed.index.weight
    assert torch.allclose(e[1] - e[0], idx[1] - idx[0], atol=1e-12)
    assert not torch.allclose(e[0], e[1])


def test_index_table_covers_sequence_length():
    assert small().embed.index.weight.shape[0] == 6
    assert small("one_stage_feedforward").embed.index.weight.shape[0] == 18


# --- encoder ---------------------------------------------------------------------------

def test_sequence_mask_includes_first_eos():
    cmd = torch.tensor([[1, 2, 5, 5, 2], [5, 5, 5, 5, 5]])
    assert sequence_mask(cmd).tolist() == [[True, True, True, False, False],
                                           [True, False, False, False, False]]


@settings(max_examples=20, deadline=None)
@given(st.permutations(range(3)), st.integers(0, 100))
def test_encoder_is_invariant_to_path_order(perm, seed):
    m = small()
    b = batch(seed, n_visible=3)
    permuted = Batch(b.cmd[:, perm], b.args[:, perm], b.visible[:, perm], b.fill[:, perm])
    with torch.no_grad():
        mu1, s1, _ = m.encode(b)
        mu2, s2, _ = m.encode(permuted)
    assert (mu1 - mu2).abs().max() < 1e-5 and (s1 - s2).abs().max() < 1e-5


def test_encoder_is_sensitive_to_command_order():
    m = small()
    b = batch(3, n=1, n_visible=1)
    cmd, args = b.cmd.clone(), b.args.clone()
    # swap the first two drawing commands after the move
    cmd[0, 0, [1, 2]] = torch.tensor([K.L, K.C])
    args[0, 0, 1] = torch.tensor([256, 256, 256, 256, 10, 20])
    args[0, 0, 2] = torch.tensor([1, 2, 3, 4, 5, 6])
    cmd[0, 0, 3] = K.Z
    cmd[0, 0, 4:] = K.EOS
    args[0, 0, 3:] = UNUSED_BIN
    swapped_cmd = cmd.clone()
    swapped_cmd[0, 0, [1, 2]] = swapped_cmd[0, 0, [2, 1]]
    swapped_args = args.clone()
    swapped_args[0, 0, [1, 2]] = swapped_args[0, 0, [2, 1]]
    with torch.no_grad():
        a = m.encode(Batch(cmd, args, b.visible, b.fill))[0]
        c = m.encode(Batch(swapped_cmd, swapped_args, b.visible, b.fill))[0]
    assert (a - c).abs().max() > 1e-4


def test_padding_after_eos_and_invisible_paths_are_ignored():
    m = small()
    b = batch(5, n_visible=2)
    noisy_cmd, noisy_args = b.cmd.clone(), b.args.clone()
    noisy_cmd[:, 2] = K.L                     # invisible third path
    noisy_args[:, 2] = 42
    with torch.no_grad():
        mu1 = m.encode(b)[0]
        mu2 = m.encode(Batch(noisy_cmd, noisy_args, b.visible, b.fill))[0]
    assert torch.allclose(mu1, mu2, atol=1e-12)

    cmd = b.cmd.clone()
    args = b.args.clone()
    last = int((cmd[0, 0] != K.EOS).sum())
    assert last < 5
    args[0, 0, last + 1:] = 99                # after the first EOS
    with torch.no_grad():
        u1 = m.encode_paths(b.cmd, b.args)
        u2 = m.encode_paths(cmd, args)
    assert torch.allclose(u1, u2, atol=1e-12)


def test_empty_document_encodes_finitely():
    m = small()
    t = SvgTensor.empty(m.cfg.repr_config)
    with torch.no_grad():
        mu, sigma, _ = m.encode(Batch.of([t]))
    assert torch.isfinite(mu).all() and torch.isfinite(sigma).all()


def test_sigma_is_clamped():
    m = small()
    with torch.no_grad():
        m.latent.bias[8:] = 1e3
        _, sigma, _ = m.encode(batch())
    assert torch.all(sigma == SIGMA_MAX)


# --- reparametrization -----------------------------------------------------------------

def test_reparametrize_zero_noise_is_mean():
    mu, sigma = torch.randn(4, 8), torch.rand(4, 8)
    assert torch.equal(reparametrize(mu, sigma, torch.zeros(4, 8)), mu)
    with pytest.raises(ShapeError):
        reparametrize(mu, sigma, torch.zeros(4, 7))


def test_reparametrize_sample_variance():
    gen = torch.Generator().manual_seed(0)
    mu = torch.full((100_000, 1), 3.0)
    sigma = torch.full((100_000, 1), 0.5)
    z = reparametrize(mu, sigma, torch.randn(mu.shape, generator=gen))
    assert abs(z.mean() - 3.0) < 0.01
    assert abs(z.var() - 0.25) < 0.01


def test_eval_forward_uses_the_mean():
    m = small()
    b = batch()
    pred = m(b)
    assert torch.equal(pred.z, pred.mu)
    m.train()
    pred = m(b, generator=torch.Generator().manual_seed(1))
    assert not torch.equal(pred.z, pred.mu)


# --- decoder ---------------------------------------------------------------------------

def test_decode_is_deterministic_in_eval_mode():
    m = small(dropout=0.3)
    z = torch.randn(2, 8, dtype=torch.float64)
    a, b = m.decode(z), m.decode(z)
    assert torch.equal(a.cmd_logits, b.cmd_logits) and torch.equal(a.arg_logits, b.arg_logits)


def test_path_decoder_outputs_distinct_path_codes():
    m = small()
    pred = m.decode(torch.randn(1, 8, dtype=torch.float64))
    u = pred.path_encodings[0]
    assert min((u[i] - u[j]).norm() for i in range(3) for j in range(i)) > 1e-3


def test_prediction_shapes():
    m = small()
    pred = m(batch())
    assert pred.visible_logits.shape == (2, 3, 2)
    assert pred.fill_logits.shape == (2, 3, 3)
    assert pred.cmd_logits.shape == (2, 3, 6, 6)
    assert pred.arg_logits.shape == (2, 3, 6, 6, N_BINS)
    ff = small("one_stage_feedforward")(batch())
    assert ff.visible_logits is None and ff.cmd_logits.shape == (2, 1, 18, 6)


def test_path_decoder_is_shared_across_modes():
    """With matched weights, the hierarchical path decoder and the one-stage
    decoder map the same conditioning to the same logits."""
    hier = small(n_paths=1)
    ff = small("one_stage_feedforward", n_paths=1, d_z=16)
    ff.dec1.load_state_dict(hier.dec1.state_dict())
    ff.head_cmd.load_state_dict(hier.head_cmd.state_dict())
    ff.head_args.load_state_dict(hier.head_args.state_dict())
    with torch.no_grad():
        ff.dec1_const.weight.copy_(hier.dec1_const.weight)
    u = torch.randn(1, 1, 16, dtype=torch.float64)
    c1, a1 = hier.decode_paths(u)
    pred = ff.decode(u[:, 0])
    assert torch.allclose(c1, pred.cmd_logits, atol=1e-12)
    assert torch.allclose(a1, pred.arg_logits, atol=1e-12)


def test_flattened_layout_and_capacity():
    cfg = ModelConfig(**SMALL)
    t = SvgTensor.empty(cfg.repr_config)
    t.cmd[0, :3] = [K.M, K.L, K.EOS]
    t.cmd[1, :2] = [K.M, K.Z]
    t.cmd[2, :2] = [K.M, K.L]        # invisible
    t.visible[:2] = True
    flat = Batch.of([t]).flattened(18)
    assert flat.cmd[0, 0, :5].tolist() == [K.M, K.L, K.M, K.Z, K.EOS]
    with pytest.raises(CapacityError):
        Batch.of([t]).flattened(4)


def test_autoregressive_decoder_is_causal():
    m = small("one_stage_autoregressive")
    b = batch(2, n=1, n_visible=1)
    flat = b.flattened(18)
    z = torch.randn(1, 8, dtype=torch.float64)
    base = m.decode(z, teacher=flat).cmd_logits[0, 0]
    j = 3
    cmd = flat.cmd.clone()
    cmd[0, 0, j] = K.C if cmd[0, 0, j] != K.C else K.L
    args = flat.args.clone()
    args[0, 0, j] = 17
    pert = m.decode(z, teacher=Batch(cmd, args, flat.visible, flat.fill)).cmd_logits[0, 0]
    # the input at position i is the target at i - 1
    assert torch.equal(base[: j + 1], pert[: j + 1])
    assert not torch.allclose(base[j + 1:], pert[j + 1:])


def test_autoregressive_generation_matches_teacher_forcing():
    m = small("one_stage_autoregressive")
    z = torch.randn(2, 8, dtype=torch.float64)
    gen = m.generate(z)
    seq = greedy_readout(gen, 0)
    n = min(int((seq.cmd[0] != K.EOS).sum()) + 1, 18)
    teacher = Batch.of([seq])
    forced = m.decode(z[:1], teacher=teacher)
    assert torch.allclose(forced.cmd_logits[0, 0, :n], gen.cmd_logits[0, 0, :n], atol=1e-9)


def test_generation_terminates_at_cap():
    m = small("one_stage_autoregressive")
    with torch.no_grad():
        m.head_cmd.l2.bias.fill_(0)
        m.head_cmd.l2.bias[K.L] = 1e3   # never emits EOS
    gen = m.generate(torch.zeros(1, 8, dtype=torch.float64))
    assert gen.cmd_logits.shape == (1, 1, 18, 6)
    assert (gen.cmd_logits[0, 0].argmax(-1) == K.L).all()


# --- readout ---------------------------------------------------------------------------

def one_hot_prediction(t: SvgTensor, margin=10.0) -> Prediction:
    def hot(x, n):
        return torch.nn.functional.one_hot(torch.as_tensor(x), n).double()[None] * margin
    z = torch.zeros(1, 2, dtype=torch.float64)
    return Prediction(hot(t.visible.astype(int), 2), hot(t.fill, 3), hot(t.cmd, 6),
                      hot(t.args, N_BINS), z, torch.ones_like(z), z)


def test_greedy_readout_recovers_one_hot_targets():
    cfg = ModelConfig(**SMALL)
    t = random_tensor(np.random.default_rng(1), cfg, 2)
    assert greedy_readout(one_hot_prediction(t)) == t


def test_greedy_readout_ties_and_masking():
    cfg = ModelConfig(**SMALL)
    t = random_tensor(np.random.default_rng(2), cfg, 1)
    pred = one_hot_prediction(t)
    pred.cmd_logits[0, 0, 1] = 0.0           # six-way tie -> lowest class (SOS)
    pred.arg_logits[0, 0, 1] = 0.0
    out = greedy_readout(pred)
    assert out.cmd[0, 1] == K.SOS and (out.args[0, 1] == UNUSED_BIN).all()


def test_all_invisible_readout_decodes_empty():
    m = small()
    with torch.no_grad():
        m.head_vis.l2.bias[:] = torch.tensor([1e3, -1e3])
    (doc,) = decode_documents(m, torch.zeros(1, 8, dtype=torch.float64))
    assert doc.paths == []


def test_encode_mean_and_decode_documents_round_shapes():
    m = small()
    cfg = m.cfg
    ts = [random_tensor(np.random.default_rng(i), cfg, 2) for i in range(3)]
    mu = encode_mean(m, ts)
    assert mu.shape == (3, 8)
    docs = decode_documents(m, mu)
    assert len(docs) == 3 and all(d.viewbox == (256, 256) for d in docs)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_e=10, heads=3)
    with pytest.raises(ValueError):
        ModelConfig(mode="two_stage")
