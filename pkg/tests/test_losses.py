import math

import pytest
import torch

from conftest import toy_batch
from drsc.config import LossWeights
from drsc.losses import (TERMS, adversarial_loss, classification_loss, cycle_consist_loss, distance,
                         distribution_loss, kl_loss, latent_regression_loss, total_objective)

f64 = dict(dtype=torch.float64)


# distances ------------------------------------------------------------------------

def test_cycle_loss_zero_on_identity():
    T, M = torch.randn(2, 4, 3), torch.randn(2, 5, 6)
    assert cycle_consist_loss(T, M, T.clone(), M.clone()) == 0


def test_cycle_loss_l1_hand_value():
    T, T_hat = torch.tensor([1.0, 2.0], **f64), torch.tensor([1.0, 1.0], **f64)
    M = torch.ones(3, **f64)
    assert cycle_consist_loss(T, M, T_hat, M.clone(), "L1").item() == 0.5


@pytest.mark.parametrize("criterion", ["L1", "L2"])
def test_cycle_loss_symmetric(criterion):
    g = torch.Generator().manual_seed(0)
    T, Th = torch.randn(3, 4, 2, generator=g), torch.randn(3, 4, 2, generator=g)
    M, Mh = torch.randn(3, 5, 2, generator=g), torch.randn(3, 5, 2, generator=g)
    assert torch.isclose(cycle_consist_loss(T, M, Th, Mh, criterion),
                         cycle_consist_loss(Th, Mh, T, M, criterion))


def test_cycle_loss_shape_mismatch():
    with pytest.raises(ValueError, match="do not match"):
        cycle_consist_loss(torch.zeros(2, 3), torch.zeros(2), torch.zeros(2, 4), torch.zeros(2))


def test_distribution_loss_cases():
    v = torch.randn(4, 7)
    for c in ("L1", "L2", "cosine"):
        assert distribution_loss(v, v.clone(), c).item() == pytest.approx(0.0, abs=1e-7)
    e1, e2 = torch.tensor([1.0, 0.0], **f64), torch.tensor([0.0, 1.0], **f64)
    assert distribution_loss(e1, e2, "cosine").item() == 1.0
    assert distribution_loss(torch.tensor([1.0], **f64), torch.tensor([-1.0], **f64), "L2").item() == 2.0


def test_distribution_loss_length_mismatch():
    with pytest.raises(ValueError):
        distribution_loss(torch.zeros(4), torch.zeros(5))


def test_cosine_zero_norm_defined():
    assert distance(torch.zeros(3), torch.ones(3), "cosine").item() == 0.0


def test_l2_gradient_finite_at_zero():
    a = torch.ones(2, 3, requires_grad=True)
    distance(a, torch.ones(2, 3), "L2").backward()
    assert torch.isfinite(a.grad).all()


def test_unknown_criterion():
    with pytest.raises(ValueError):
        distance(torch.zeros(2), torch.zeros(2), "KL")


# classification / KL / adversarial closed forms ------------------------------------------

def test_uniform_logits_give_log_25():
    loss = classification_loss(torch.zeros(4, 25, **f64), torch.tensor([0, 5, 13, 24]))
    assert abs(loss.item() - math.log(25)) < 1e-9


def test_confident_logits_near_zero():
    logits = torch.zeros(1, 25, **f64)
    logits[0, 3] = 100.0
    assert classification_loss(logits, torch.tensor([3])).item() < 1e-12


def test_cross_entropy_shift_invariant():
    logits = torch.randn(5, 25, **f64)
    y = torch.arange(5)
    assert classification_loss(logits + 7.3, y).item() == pytest.approx(classification_loss(logits, y).item(), abs=1e-12)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        classification_loss(torch.zeros(2, 25), torch.tensor([0, 25]))


def test_kl_closed_forms():
    assert kl_loss(torch.zeros(3, **f64), torch.zeros(3, **f64)).item() == 0.0
    assert kl_loss(torch.tensor([1.0], **f64), torch.tensor([0.0], **f64)).item() == 0.5


def test_kl_nonnegative():
    g = torch.Generator().manual_seed(0)
    for _ in range(20):
        mu, lv = torch.randn(4, 3, 5, generator=g) * 3, torch.randn(4, 3, 5, generator=g) * 3
        assert kl_loss(mu, lv).item() >= 0


def zero_disc(x):
    return torch.zeros(x.shape[0], dtype=x.dtype) + 0 * x.sum()


def test_adversarial_closed_forms():
    real, fake = torch.randn(4, 3, **f64), torch.randn(4, 3, **f64)
    d = adversarial_loss(real, fake, zero_disc, "discriminator_step").item()
    g = adversarial_loss(real, fake, zero_disc, "generator_step").item()
    assert abs(d - 2 * math.log(2)) < 1e-9
    assert abs(g - math.log(2)) < 1e-9


def test_discriminator_step_detaches_fake():
    gen_param = torch.tensor(2.0, requires_grad=True)
    disc = torch.nn.Linear(3, 1).double()
    fake = gen_param * torch.randn(4, 3, **f64)
    loss = adversarial_loss(torch.randn(4, 3, **f64), fake, lambda x: disc(x).squeeze(1), "discriminator_step")
    loss.backward()
    assert gen_param.grad is None
    assert disc.weight.grad is not None


def test_latent_regression_deterministic_and_nonnegative(toy_model):
    b = toy_batch()
    vals = []
    for _ in range(2):
        g = torch.Generator().manual_seed(3)
        vals.append(latent_regression_loss(toy_model, b["text"], b["mel"], b["lengths"], "L1", g).item())
    assert vals[0] == vals[1] and vals[0] >= 0


class _IdentityContent(torch.nn.Module):
    """Model stub whose content encoder exactly inverts its generator."""

    class cfg:
        content_dim = 3
        mask_padding = False

    def encode_intent(self, domain, feat, lens=None):
        return torch.zeros(feat.shape[0], 2, dtype=feat.dtype)

    def generate(self, domain, z, intent, lens=None):
        return z.transpose(1, 2) if domain == "text" else z

    def encode_content(self, domain, feat, lens=None):
        mu = feat.transpose(1, 2) if domain == "text" else feat
        return mu, torch.zeros_like(mu)


def test_latent_regression_exact_inverse_is_zero():
    T, M = torch.randn(2, 5, 3, **f64), torch.randn(2, 3, 4, **f64)
    assert latent_regression_loss(_IdentityContent(), T, M, criterion="L2").item() == 0.0


# total objective ------------------------------------------------------------------------------

def test_ablation_leaves_three_terms(toy_model):
    _, max_loss, br = total_objective(toy_model, toy_batch(), LossWeights.ablated(), "L1",
                                      torch.Generator().manual_seed(0))
    nonzero = [k for k in TERMS if br[k] != 0]
    assert nonzero == ["L_cc", "L_distri", "L_CE"]
    assert max_loss == 0


def test_group_toggle_equals_zero_weights(toy_model):
    g = lambda: torch.Generator().manual_seed(0)
    a = total_objective(toy_model, toy_batch(), LossWeights(use_optional=False), "L1", g())[2]
    b = total_objective(toy_model, toy_batch(), LossWeights.ablated(), "L1", g())[2]
    assert a == b


def test_all_zero_weights(toy_model):
    w = LossWeights(0, 0, 0, 0, 0, 0)
    mn, mx, _ = total_objective(toy_model, toy_batch(), w)
    assert float(mn) == 0 and float(mx) == 0


def test_breakdown_sums_to_total(toy_model):
    w = LossWeights(cycle=0.7, distribution=1.3, classification=2.0, kl=0.4, latent_regression=1.1, adversarial=0.9)
    mn, _, br = total_objective(toy_model, toy_batch(), w, "L1", torch.Generator().manual_seed(1))
    weights = dict(L_cc=0.7, L_distri=1.3, L_CE=2.0, L_KL=0.4, L_lr=1.1, L_adv_g=0.9)
    recomposed = sum(weights[k] * br[k] for k in TERMS)
    assert abs(recomposed - mn.item()) <= 1e-9 * abs(mn.item())
    assert br["total"] == mn.item()


def test_doubling_classification_weight(toy_model):
    run = lambda w: total_objective(toy_model, toy_batch(), w, "L1", torch.Generator().manual_seed(2))
    a_min, _, a = run(LossWeights())
    b_min, _, b = run(LossWeights(classification=2.0))
    assert a == {**b, "total": a["total"]}
    assert b_min.item() - a_min.item() == pytest.approx(a["L_CE"], rel=1e-9)


def test_all_terms_nonnegative(toy_model):
    for seed in range(3):
        _, mx, br = total_objective(toy_model, toy_batch(seed=seed), LossWeights(), "cosine",
                                    torch.Generator().manual_seed(seed))
        assert all(v >= 0 for v in br.values())


@pytest.mark.parametrize("criterion", ["L1", "L2", "cosine"])
def test_criterion_shared_by_distance_terms(toy_model, criterion, monkeypatch):
    import drsc.losses as L
    seen = []
    real = L.distance
    monkeypatch.setattr(L, "distance", lambda a, b, c="L1": seen.append(c) or real(a, b, c))
    total_objective(toy_model, toy_batch(), LossWeights(), criterion, torch.Generator().manual_seed(0))
    assert seen and set(seen) == {criterion}
    assert len(seen) == 5  # two cycle, one distribution, two latent-regression
