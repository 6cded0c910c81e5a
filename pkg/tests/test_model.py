import math

import numpy as np
import pytest
import torch

from conftest import random_conversation, toy_net
from oracles import attention, conversation_vectors, fused_tokens, resper_probs, state_dict_np
from resper.errors import PreconditionError, ShapeError
from resper.model import (
    ConversationEncoder,
    ResPerNet,
    UtteranceEncoder,
    encode_conversation,
    encode_utterance,
    strategy_loss,
)


def test_full_forward_matches_oracle(rng):
    net = toy_net(d_emb=5, d_h1=3, d_h2=4, seed=1)
    convo = random_conversation(rng, 4, 5)
    got = net.predict_proba(convo).detach().numpy()
    want = resper_probs([x.numpy() for x in convo], state_dict_np(net))
    np.testing.assert_allclose(got, want, atol=1e-10)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-6)


def test_hand_set_conversation_encoder_matches_oracle():
    # 3-utterance toy with hand-set parameters; check e_c(u_2)
    enc = ConversationEncoder(2, 2).double()
    with torch.no_grad():
        for name, p in enc.named_parameters():
            n = p.numel()
            p.copy_(torch.linspace(-0.5, 0.5, n, dtype=torch.float64).reshape(p.shape) * (1 + 0.1 * len(name)))
    u = np.array([[0.2, -0.1], [0.4, 0.3], [-0.6, 0.9]])
    got = encode_conversation(list(u), enc).detach().numpy()
    want = conversation_vectors(u, state_dict_np(enc), prefix="")
    assert np.max(np.abs(got[1] - want[1])) <= 1e-6
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_single_utterance_conversation():
    enc = ConversationEncoder(3, 2).double()
    u = torch.randn(1, 3, dtype=torch.float64)
    H, _ = enc.gru(u[None])
    # one visible position: attention returns that position's value vector
    expected = enc.attn.value(H[0])
    torch.testing.assert_close(enc.attn(H[0], torch.ones(1, 1, dtype=torch.bool)), expected)
    assert enc(u).shape == (1, 3)


def test_single_token_utterance_equals_fused_vector(rng):
    enc = UtteranceEncoder(4, 3).double()
    x = rng.normal(size=(1, 4))
    fused = fused_tokens(x, state_dict_np(enc), prefix="")
    out = encode_utterance(x, enc).detach().numpy()
    np.testing.assert_array_equal(out, encode_utterance(torch.as_tensor(x), enc).detach().numpy())
    np.testing.assert_allclose(out, fused[0], atol=1e-12)


def test_dominating_token_wins():
    enc = UtteranceEncoder(2, 2).double()
    with torch.no_grad():
        for p in enc.parameters():
            p.zero_()
        # fused output = tanh(W e + b) with W reading e only: token with larger e dominates
        w = enc.fusion.weight
        w[:, 2 * 2:2 * 2 + 2] = torch.eye(2, dtype=torch.float64)
    x = np.array([[0.9, 0.8], [0.1, -0.3]])
    fused = fused_tokens(x, state_dict_np(enc), prefix="")
    assert np.all(fused[0] >= fused[1])
    np.testing.assert_allclose(encode_utterance(x, enc).detach().numpy(), fused[0], atol=1e-12)


def test_tanh_range(rng):
    enc = UtteranceEncoder(6, 5).double()
    xs = [torch.as_tensor(rng.normal(scale=5, size=(k, 6))) for k in (1, 3, 8)]
    out = enc(xs)
    assert out.shape == (3, 6)
    assert torch.all(out.abs() < 1)


def test_padding_does_not_leak(rng):
    enc = UtteranceEncoder(4, 3).double()
    short = torch.as_tensor(rng.normal(size=(2, 4)))
    long = torch.as_tensor(rng.normal(size=(7, 4)))
    batched = enc([short, long])
    torch.testing.assert_close(batched[0], enc([short])[0], rtol=0, atol=1e-12)


def test_shape_errors():
    enc = UtteranceEncoder(4, 3)
    with pytest.raises(ShapeError):
        enc([torch.zeros(3, 5)])
    with pytest.raises(PreconditionError):
        encode_conversation([], ConversationEncoder(4, 3))


def test_causality_exact(rng):
    net = toy_net(d_emb=6, d_h1=8, d_h2=8, seed=2)
    convo = random_conversation(rng, 8, 6)
    base = net.predict_proba(convo).detach()
    for j in range(7):
        noisy = convo[: j + 1] + random_conversation(rng, 7 - j, 6)
        out = net.predict_proba(noisy).detach()
        assert torch.equal(out[: j + 1], base[: j + 1])


def test_truncation_agrees_to_rounding(rng):
    # a shorter conversation changes GEMM shapes, so equality holds only to rounding
    net = toy_net(d_emb=6, d_h1=8, d_h2=8, seed=4)
    convo = random_conversation(rng, 9, 6)
    base = net.predict_proba(convo).detach()
    for j in range(9):
        torch.testing.assert_close(net.predict_proba(convo[: j + 1]).detach(), base[: j + 1], rtol=0, atol=1e-12)


def test_bidirectional_context_sees_future(rng):
    net = toy_net(d_emb=6, d_h1=4, d_h2=4, context="bidirectional")
    convo = random_conversation(rng, 5, 6)
    base = net.predict_proba(convo).detach()
    changed = net.predict_proba(convo[:2] + random_conversation(rng, 3, 6)).detach()
    assert not torch.equal(base[0], changed[0])


def test_order_sensitivity(rng):
    net = toy_net(d_emb=6, d_h1=4, d_h2=4, seed=3)
    convo = random_conversation(rng, 5, 6)
    base = net.predict_proba(convo).detach()
    perm = [4, 2, 0, 3, 1]
    permuted = net.predict_proba([convo[i] for i in perm]).detach()
    # the utterance at position 0 now has different context
    assert not torch.allclose(base[perm[1]], permuted[1])


def test_zero_classifier_uniform(rng):
    net = toy_net()
    with torch.no_grad():
        net.classifier.weight.zero_()
        net.classifier.bias.zero_()
    probs = net.predict_proba(random_conversation(rng, 3, 6))
    assert torch.all(probs == 0.125)


def test_loss_values():
    uniform = torch.full((4, 8), 1 / 8, dtype=torch.float64)
    assert abs(strategy_loss(uniform, [0, 3, 5, 7]).item() - math.log(8)) <= 1e-9
    probs = torch.zeros(2, 8, dtype=torch.float64)
    probs[0, 1], probs[0, 0] = 0.5, 0.5
    probs[1, 2], probs[1, 0] = 0.25, 0.75
    assert strategy_loss(probs, [1, 2]).item() == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    assert strategy_loss(probs, [1, 2]).item() == pytest.approx(1.0397, abs=1e-4)
    one_hot = torch.eye(8, dtype=torch.float64)
    assert strategy_loss(one_hot, list(range(8))).item() == pytest.approx(0.0, abs=1e-12)
    # clamp keeps the loss finite when gold has zero mass
    assert strategy_loss(one_hot, [1] + list(range(1, 8))).item() == pytest.approx(-math.log(1e-8) / 8)
    with pytest.raises(PreconditionError):
        strategy_loss(uniform, [0])


def numeric_grad_check(net, loss_fn, eps=1e-4, n_coords=6, seed=0):
    """Worst relative error between autograd and central differences over sampled coordinates."""
    gen = np.random.default_rng(seed)
    net.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for name, p in net.named_parameters():
        if not p.requires_grad:
            continue
        flat = p.data.view(-1)
        grad = p.grad.view(-1)
        for idx in gen.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False):
            orig = flat[idx].item()
            with torch.no_grad():
                flat[idx] = orig + eps
                up = loss_fn().item()
                flat[idx] = orig - eps
                down = loss_fn().item()
                flat[idx] = orig
            num = (up - down) / (2 * eps)
            ana = grad[idx].item()
            denom = max(abs(num), abs(ana), 1e-7)
            worst = max(worst, abs(num - ana) / denom)
    return worst


def resper_gradient_error(seed=0):
    gen = np.random.default_rng(seed)
    net = toy_net(d_emb=5, d_h1=4, d_h2=4, seed=seed)
    # non-zero biases so that their gradients are exercised away from the init point
    with torch.no_grad():
        for name, p in net.named_parameters():
            if "bias" in name:
                p.normal_(0, 0.1)
    convo = random_conversation(gen, 4, 5)
    gold = [int(g) for g in gen.integers(0, 8, size=4)]
    return numeric_grad_check(net, lambda: strategy_loss(net.predict_proba(convo), gold))


def test_gradient_check():
    assert resper_gradient_error() <= 1e-3


def test_attention_oracle_matches_module(rng):
    from resper.model import SelfAttention, causal_mask

    att = SelfAttention(3).double()
    h = torch.as_tensor(rng.normal(size=(4, 3)))
    sd = state_dict_np(att)
    np.testing.assert_allclose(att(h).detach().numpy(), attention(h.numpy(), sd, ""), atol=1e-12)
    np.testing.assert_allclose(att(h, causal_mask(4)).detach().numpy(),
                               attention(h.numpy(), sd, "", causal=True), atol=1e-12)


def test_resper_default_widths():
    net = ResPerNet(10, 6, 5)
    assert net.utterance_encoder.fusion.in_features == 4 * 6 + 10
    assert net.conversation_encoder.fusion.in_features == 2 * 5 + 10
    assert net.classifier.out_features == 8
