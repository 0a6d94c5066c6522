import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from platerec import ctc
from platerec.charset import DEFAULT_CHARSET


def test_uniform_two_frames_analytic():
    # symbols {a, blank}, target "a", T=2: paths aa, a-, -a each with prob 1/4
    logits = torch.zeros(2, 2, dtype=torch.float64)
    assert abs(float(ctc.ctc_loss(logits, [0])) - (-math.log(3 / 4))) < 1e-12
    # three classes uniform: 3 paths of 1/9 each
    logits = torch.zeros(3, 2, dtype=torch.float64)
    assert abs(float(ctc.ctc_loss(logits, [0])) + math.log(1 / 3)) < 1e-12


def test_matches_bruteforce(rng):
    for _ in range(50):
        c, t = int(rng.integers(2, 5)), int(rng.integers(1, 7))
        length = int(rng.integers(1, t + 1))
        tgt = rng.integers(0, c - 1, size=length).tolist()
        logits = torch.tensor(rng.normal(size=(c, t)) * 2)
        ref = ctc.ctc_bruteforce(logits, tgt)
        if ctc.min_frames(tgt) > t:
            assert math.isinf(ref)
            with pytest.raises(ctc.InfeasibleTarget):
                ctc.ctc_loss(logits, tgt)
            continue
        assert abs(float(ctc.ctc_loss(logits, tgt)) - ref) <= 1e-9 * max(1, abs(ref))


def test_matches_torch_reference(rng):
    logits = torch.tensor(rng.normal(size=(3, 73, 18)))
    targets = [[1, 40, 40, 50], [5, 6, 7, 8, 9, 10, 11], [72 - 1]]
    ours = ctc.ctc_loss(logits, targets)
    logp = torch.log_softmax(logits, 1).permute(2, 0, 1)
    ref = F.ctc_loss(logp, torch.tensor(sum(targets, [])), torch.full((3,), 18),
                     torch.tensor([len(t) for t in targets]), blank=72, reduction="none")
    assert torch.allclose(ours, ref, rtol=1e-10)


def test_min_frames():
    assert ctc.min_frames([1, 1, 2]) == 4
    assert ctc.min_frames([1, 2, 3]) == 3


def test_empty_target_rejected():
    with pytest.raises(ValueError):
        ctc.ctc_loss(torch.zeros(3, 4), [])


def test_bruteforce_too_large():
    with pytest.raises(ctc.TooLarge):
        ctc.ctc_bruteforce(np.zeros((73, 18)), [1])


def test_collapse_and_greedy():
    assert ctc.collapse([0, 0, 2, 0, 2, 2, 1], blank=2) == [0, 0, 1]
    logits = torch.full((73, 5), -5.0)
    for t, k in enumerate([12, 12, 72, 48, 48]):
        logits[k, t] = 5.0
    assert ctc.greedy_decode(logits, DEFAULT_CHARSET) == "皖A"
    assert ctc.greedy_decode(logits[None].repeat(2, 1, 1), DEFAULT_CHARSET) == ["皖A", "皖A"]


def test_focal_reduces_to_ctc(rng):
    cfg = ctc.FocalConfig(alpha=1.0, gamma=0.0)
    logits = torch.tensor(rng.normal(size=(4, 6, 8)))
    tg = [[0, 1], [2], [3, 3], [4, 0, 1]]
    assert torch.allclose(ctc.focal_ctc_loss(logits, tg, cfg), ctc.ctc_loss(logits, tg), rtol=0, atol=1e-12)


def test_focal_weight_value():
    assert ctc.focal_weight(0.5, ctc.FocalConfig(0.5, 2.0)) == 0.125


def test_focal_config_validation():
    for kw in ({"alpha": 0}, {"alpha": 1.5}, {"gamma": -1}, {"p_mode": "x"}):
        with pytest.raises(ValueError):
            ctc.FocalConfig(**kw)


def test_plate_probability_modes(rng):
    logits = torch.tensor(rng.normal(size=(5, 6)))
    p = ctc.plate_probability(logits)
    assert torch.isclose(p, torch.softmax(logits, 0).max(0).values.prod())
    confident = torch.full((5, 4), -50.0, dtype=torch.float64)
    confident[0, :] = 50
    assert float(ctc.plate_probability(confident, ctc.FocalConfig(p_mode="exp-neg-ctc"))) == pytest.approx(1.0)
    hopeless = torch.zeros(5, 200, dtype=torch.float64)
    assert float(ctc.plate_probability(hopeless)) == ctc.P_MIN


def test_focal_weight_is_detached(rng):
    logits = torch.tensor(rng.normal(size=(5, 6)), requires_grad=True)
    cfg = ctc.FocalConfig()
    ctc.focal_ctc_loss(logits, [0, 1], cfg).backward()
    w = ctc.focal_weight(ctc.plate_probability(logits.detach(), cfg), cfg)
    ref = logits.detach().clone().requires_grad_(True)
    ctc.ctc_loss(ref, [0, 1]).backward()
    assert torch.allclose(logits.grad, w * ref.grad)


def test_ctc_gradient_matches_fd(rng):
    x = torch.tensor(rng.normal(size=(4, 5)), requires_grad=True)
    ctc.ctc_loss(x, [0, 2, 2]).backward()
    num = torch.zeros_like(x)
    eps = 1e-6
    for i in range(4):
        for j in range(5):
            xp, xm = x.detach().clone(), x.detach().clone()
            xp[i, j] += eps
            xm[i, j] -= eps
            num[i, j] = (ctc.ctc_loss(xp, [0, 2, 2]) - ctc.ctc_loss(xm, [0, 2, 2])) / (2 * eps)
    assert torch.allclose(x.grad, num, rtol=1e-3, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_property_loss_nonnegative_and_batch_consistent(seed):
    r = np.random.default_rng(seed)
    logits = torch.tensor(r.normal(size=(2, 4, 6)))
    tg = [r.integers(0, 3, size=int(r.integers(1, 4))).tolist() for _ in range(2)]
    batch = ctc.ctc_loss(logits, tg)
    assert (batch >= 0).all()
    for i in range(2):
        assert torch.isclose(batch[i], ctc.ctc_loss(logits[i], tg[i]))
