import numpy as np
import pytest

from ide_net.diffcore import ShapeMismatch, Tensor, check_gradients, ops
from ide_net.losses import LossWeights, prior_loss, rotation_invariant_loss, total_loss, tp_loss
from ide_net.losses import uncertainty_loss, when_loss, whether_loss
from ide_net.model import IDENet, ModelConfig, STBlock, probability_fusion

from invariants import (
    LOSS_TERMS,
    causality_error,
    permutation_error,
    random_fusion,
    stb_gradient_error,
    stb_loss_gradient_error,
    tiny_model,
)


@pytest.fixture(scope="module")
def model():
    return tiny_model(3)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_hidden=30, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(C=1)
    with pytest.raises(ValueError):
        ModelConfig(k=0)
    paper = ModelConfig.paper()
    assert (paper.d_hidden, paper.n_heads, paper.n_stb_per_module, paper.C, paper.k) == (384, 16, 2, 3, 5)


@pytest.mark.parametrize("steps", [1, 7, 20])
def test_st_block_keeps_shape(steps, rng):
    block = STBlock(8, 2, rng)
    x = Tensor(rng.normal(size=(3, 2, steps, 8)))
    assert block(x).shape == x.shape
    with pytest.raises(ShapeMismatch):
        block(Tensor(rng.normal(size=(3, 3, steps, 8))))


@pytest.mark.parametrize("variant", ["mixed", "lstm_only", "transformer_only"])
def test_st_block_agent_swap(variant, rng):
    block = STBlock(8, 2, rng, variant=variant)
    x = rng.normal(size=(2, 2, 6, 8))
    a = block(Tensor(x)).data
    b = block(Tensor(x[:, ::-1].copy())).data
    assert np.allclose(a[:, ::-1], b, atol=1e-12)


def test_st_block_gradients():
    assert stb_gradient_error() < 1e-4


@pytest.mark.parametrize("term", LOSS_TERMS)
def test_st_block_loss_graph_gradients(term):
    assert stb_loss_gradient_error(term) < 1e-4


def test_output_shapes_and_ranges(model, rng):
    out = model(Tensor(rng.normal(size=(3, 2, 30, 2))))
    assert out.p_whether.shape == (3,)
    assert out.p_when.shape == (3, 30)
    assert out.p_what.shape == (3, 30, 3)
    assert out.traj_pred.shape == (3, 25, 2, 5, 2)
    assert out.fusion.shape == (3, 30, 4)
    assert np.allclose(out.p_what.data.sum(-1), 1.0, atol=1e-9)
    for p in (out.p_whether, out.p_when, out.p_what):
        assert np.all((p.data >= 0) & (p.data <= 1))


def test_eval_mode_is_deterministic(model, rng):
    x = rng.normal(size=(2, 2, 12, 2))
    a, b = model(Tensor(x)), model(Tensor(x))
    assert np.array_equal(a.features.data, b.features.data)
    assert np.array_equal(a.traj_pred.data, b.traj_pred.data)


def test_training_mode_dropout_changes_output(rng):
    m = IDENet(ModelConfig.desk(16, n_heads=2, dropout=0.3), seed=0)
    x = Tensor(rng.normal(size=(2, 2, 12, 2)))
    assert not np.array_equal(m(x).features.data, m(x).features.data)
    m.eval()
    assert np.array_equal(m(x).features.data, m(x).features.data)


def test_input_shape_checked(model, rng):
    with pytest.raises(ShapeMismatch):
        model(Tensor(rng.normal(size=(2, 2, 12, 3))))
    with pytest.raises(ShapeMismatch):
        model(Tensor(rng.normal(size=(2, 2, 5, 2))))  # T must exceed k


def test_agent_permutation_contract(model, rng):
    for _ in range(10):
        steps = int(rng.integers(6, 20))
        assert permutation_error(model, rng.normal(size=(2, 2, steps, 2)) * 3) < 1e-9


def test_trajectory_predictor_is_causal(model, rng):
    for _ in range(10):
        steps = int(rng.integers(7, 20))
        x = rng.normal(size=(2, 2, steps, 2))
        t = int(rng.integers(0, steps - 1))
        assert causality_error(model, x, random_fusion(rng, 2, steps, 4), t, rng) < 1e-9


def test_trajectory_output_is_offset_from_current_position(rng):
    m = tiny_model(4)
    m.tp_out.fc2.weight.data[:] = 0.0
    m.tp_out.fc2.bias.data[:] = 0.0
    x = rng.normal(size=(1, 2, 12, 2))
    w = random_fusion(rng, 1, 12, 4)
    pred = m.trajectory_predictor(Tensor(x), Tensor(w)).data
    assert pred.shape == (1, 7, 2, 5, 2)
    # zero offsets: every future step repeats the step-t position
    expected = np.broadcast_to(x[0].transpose(1, 0, 2)[:7, :, None, :], (7, 2, 5, 2))
    assert np.array_equal(pred[0], expected)
    with pytest.raises(ShapeMismatch):
        m.trajectory_predictor(Tensor(x), Tensor(w[:, :, :3]))


def test_fusion_examples(rng):
    pw, pn, pt = rng.uniform(size=4), rng.uniform(size=(4, 6)), rng.dirichlet(np.ones(3), size=(4, 6))
    w = probability_fusion(Tensor(np.zeros(4)), Tensor(pn), Tensor(pt)).data
    assert np.array_equal(w[..., 0], np.ones((4, 6)))
    one = probability_fusion(Tensor(np.ones(1)), Tensor(np.ones((1, 1))), Tensor(np.array([[[1.0, 0, 0]]]))).data
    assert np.array_equal(one[0, 0], [0, 1, 0, 0])
    w = probability_fusion(Tensor(pw), Tensor(pn), Tensor(pt)).data
    assert np.allclose(w.sum(-1), 1.0, atol=1e-12)
    assert np.allclose(w[..., 1:], pw[:, None, None] * pn[..., None] * pt)


def test_fusion_gradients(rng):
    pw = Tensor(rng.uniform(0.1, 0.9, size=3))
    pn = Tensor(rng.uniform(0.1, 0.9, size=(3, 4)))
    pt = Tensor(rng.dirichlet(np.ones(3), size=(3, 4)))
    weights = rng.normal(size=(3, 4, 4))
    f = lambda a, b, c: ops.sum(ops.mul(probability_fusion(a, b, c), weights))
    assert check_gradients(f, [pw, pn, pt]) < 1e-6


def test_only_extractor_zero_learns_when_idle(model, rng):
    x = Tensor(rng.normal(size=(2, 2, 10, 2)))
    w = np.zeros((2, 10, 4))
    w[..., 0] = 1.0
    model.zero_grad()
    target = rng.normal(size=(2, 5, 2, 5, 2))
    ops.mse(model.trajectory_predictor(x, Tensor(w)), target).backward()
    grads = {name: p.grad for name, p in model.named_parameters() if name.startswith("tp_extractors")}
    assert grads
    for g in grads.values():
        assert np.any(g[0] != 0)
        assert not np.any(g[1:])
    model.zero_grad()


def test_no_nan_for_large_inputs(model, rng):
    x = Tensor(rng.uniform(-100, 100, size=(2, 2, 12, 2)))
    out = model(x)
    loss = ops.add(ops.mse(out.traj_pred, np.zeros(out.traj_pred.shape)), ops.mean(out.p_what))
    model.zero_grad()
    loss.backward()
    for t in (out.p_whether, out.p_when, out.p_what, out.traj_pred):
        assert np.all(np.isfinite(t.data))
    assert all(np.all(np.isfinite(p.grad)) for p in model.parameters())
    model.zero_grad()


def test_detach_blocks_fusion_gradient(model, rng):
    x = Tensor(rng.normal(size=(2, 2, 10, 2)))
    target = rng.normal(size=(2, 5, 2, 5, 2))
    model.zero_grad()
    out = model(x, tasks={"whether", "when", "what", "tp"}, detach=frozenset({"what"}))
    ops.mse(out.traj_pred, target).backward()
    assert not model.what_mlp.fc2.weight.grad.any()
    assert model.when_mlp.fc2.weight.grad.any()
    model.zero_grad()


def _full_loss(seed=0, steps=12):
    rng = np.random.default_rng(seed)
    m = tiny_model(seed)
    x1 = rng.normal(size=(2, 2, steps, 2))
    x2 = x1[..., ::-1].copy()
    whether = np.array([1, 0])
    per_step = np.zeros((2, steps))
    per_step[0, 3:8] = 1

    def f(*_):
        out = m(Tensor(x1))
        parts = {
            "whether": whether_loss(out.p_whether, whether),
            "when": when_loss(out.p_when, per_step, whether),
            "traj": tp_loss(out.traj_pred, x1, m.cfg.k),
            "prior": prior_loss(out.p_what),
            "uncertainty": uncertainty_loss(out.p_what),
            "rotation": rotation_invariant_loss(out.p_what, m(Tensor(x2), tasks={"what"}).p_what),
        }
        return total_loss(parts, LossWeights()).total_tensor

    return f, m.parameters()


def test_end_to_end_gradient_tiny_config():
    # eps 1e-4: at 1e-5 some attention-key coordinates with gradients near
    # 1e-9 fall below float64 resolution of the loss (see the next test)
    f, params = _full_loss()
    assert check_gradients(f, params, eps=1e-4, max_coords=2) < 1e-4


def test_end_to_end_residual_at_small_eps_is_roundoff():
    f, params = _full_loss(1)
    for p in params:
        p.zero_grad()
    value = f()
    value.backward()
    ulp = np.spacing(abs(value.item()))
    eps = 1e-5
    rng = np.random.default_rng(1)
    for p in params[::7]:
        flat, g = p.data.reshape(-1), p.grad.reshape(-1)
        for i in rng.choice(flat.size, size=min(2, flat.size), replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            # roundoff of a few hundred ulps in each evaluation, or 1e-4 relative
            assert abs(g[i] - fd) <= 1e-4 * (abs(g[i]) + abs(fd)) + 500 * ulp / eps
