"""Objective terms of the DRSC min-max game.

All terms use mean reduction. Distances are computed per sample over the
flattened feature and then averaged over the batch.
"""

from __future__ import annotations

from typing import Callable

import torch
import torch.nn.functional as F

from drsc.config import CRITERIA, LossWeights

TERMS = ("L_cc", "L_distri", "L_CE", "L_KL", "L_lr", "L_adv_g")
_WEIGHT_OF = {"L_cc": "cycle", "L_distri": "distribution", "L_CE": "classification",
              "L_KL": "kl", "L_lr": "latent_regression", "L_adv_g": "adversarial"}


def _safe_sqrt(x):
    # sqrt with a zero (not NaN) gradient at exactly 0
    pos = x > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, x, torch.ones_like(x))), torch.zeros_like(x))


def distance(a: torch.Tensor, b: torch.Tensor, criterion: str = "L1") -> torch.Tensor:
    """Batch-mean distance between ``a`` and ``b`` under ``criterion``.

    L1 is mean |a - b|, L2 is sqrt(mean (a - b)^2), cosine is
    1 - <a, b> / (|a| |b|) and is taken as 0 when either norm is below 1e-12.
    A 1-D input counts as a single sample.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() <= 1:
        a, b = a.reshape(1, -1), b.reshape(1, -1)
    a, b = a.reshape(a.shape[0], -1), b.reshape(b.shape[0], -1)
    if criterion == "L1":
        per = (a - b).abs().mean(dim=1)
    elif criterion == "L2":
        per = _safe_sqrt(((a - b) ** 2).mean(dim=1))
    elif criterion == "cosine":
        na, nb = a.norm(dim=1), b.norm(dim=1)
        ok = (na >= 1e-12) & (nb >= 1e-12)
        denom = torch.where(ok, na * nb, torch.ones_like(na))
        per = torch.where(ok, 1.0 - (a * b).sum(dim=1) / denom, torch.zeros_like(na))
    else:
        raise ValueError(f"criterion must be one of {CRITERIA}, got {criterion!r}")
    return per.mean()


def cycle_consist_loss(T, M, T_hat, M_hat, criterion="L1"):
    if T.shape != T_hat.shape or M.shape != M_hat.shape:
        raise ValueError(
            f"reconstruction shapes {tuple(T_hat.shape)}, {tuple(M_hat.shape)} do not match "
            f"inputs {tuple(T.shape)}, {tuple(M.shape)}")
    return distance(T_hat, T, criterion) + distance(M_hat, M, criterion)


def distribution_loss(zi_text_hat, zi_mel_hat, criterion="L1"):
    if zi_text_hat.shape[-1] != zi_mel_hat.shape[-1]:
        raise ValueError(
            f"intent lengths differ: {zi_text_hat.shape[-1]} vs {zi_mel_hat.shape[-1]}")
    return distance(zi_text_hat, zi_mel_hat, criterion)


def classification_loss(logits, labels):
    labels = torch.as_tensor(labels, device=logits.device)
    if logits.dim() == 1:
        logits, labels = logits[None], labels.reshape(1)
    n = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"labels must lie in [0, {n}), got {labels.tolist()}")
    return F.cross_entropy(logits, labels.long())


def kl_loss(mu, logvar):
    """KL(N(mu, sigma^2) || N(0, 1)), averaged over latent elements and batch."""
    mu, logvar = torch.as_tensor(mu), torch.as_tensor(logvar)
    return 0.5 * (mu ** 2 + torch.exp(logvar) - logvar - 1.0).mean()


def latent_regression_loss(model, T, M, lengths=None, criterion="L1",
                           rng: torch.Generator | None = None):
    """Sample content maps, generate, and ask the content encoders to recover them."""
    total = 0.0
    for domain, feat, lens in (("text", T, lengths), ("mel", M, None)):
        time_len = feat.shape[1] if domain == "text" else feat.shape[2]
        z = torch.randn((feat.shape[0], model.cfg.content_dim, time_len), generator=rng,
                        dtype=feat.dtype, device=feat.device)
        if domain == "text" and lens is not None and model.cfg.mask_padding:
            steps = torch.arange(time_len, device=feat.device)
            z = z * (steps[None, :] < lens[:, None]).to(z.dtype)[:, None, :]
        intent = model.encode_intent(domain, feat, lens)
        fake = model.generate(domain, z, intent, lens)
        mu, _ = model.encode_content(domain, fake, lens)
        total = total + distance(mu, z, criterion)
    return total


def adversarial_loss(real, fake, discriminator: Callable, side: str):
    """Non-saturating logistic GAN loss for one discriminator.

    ``discriminator_step``: -[log s(D(real)) + log(1 - s(D(fake)))], with the
    fake detached. ``generator_step``: -log s(D(fake)).
    """
    if side == "discriminator_step":
        d_real = discriminator(real.detach())
        d_fake = discriminator(fake.detach())
        return F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
    if side == "generator_step":
        return F.softplus(-discriminator(fake)).mean()
    raise ValueError(f"side must be generator_step or discriminator_step, got {side!r}")


def total_objective(model, batch: dict, weights: LossWeights, criterion: str = "L1",
                    rng: torch.Generator | None = None, compute_max: bool = True):
    """Evaluate the full objective on one batch.

    Returns ``(min_player_loss, max_player_loss, breakdown)``. Terms whose
    effective weight is zero are skipped and reported as 0; with
    ``compute_max=False`` the discriminator-side term is skipped as well.
    """
    w = weights.effective()
    lengths = batch.get("lengths")
    T = model.text_features(batch["text"], lengths)
    M = batch["mel"]
    zero = T.new_zeros(())
    terms = {k: zero for k in TERMS}
    terms["L_adv_d"] = zero

    need_recon = any(w[k] > 0 for k in ("cycle", "distribution", "classification", "kl", "adversarial"))
    if need_recon:
        u, v, (zt, zm) = model.cross(T, M, lengths, rng)
        T_hat, M_hat = model.restore(u, v, lengths, rng)
        if w["cycle"] > 0:
            terms["L_cc"] = cycle_consist_loss(T, M, T_hat, M_hat, criterion)
        if w["distribution"] > 0 or w["classification"] > 0:
            zi_t = model.encode_intent("text", T_hat, lengths)
            zi_m = model.encode_intent("mel", M_hat)
            if w["distribution"] > 0:
                terms["L_distri"] = distribution_loss(zi_t, zi_m, criterion)
            if w["classification"] > 0:
                ce = classification_loss(model.fuse_and_classify(zi_t, zi_m), batch["labels"])
                if weights.classify_on == "both":
                    direct = model.fuse_and_classify(zt.intent, zm.intent)
                    ce = 0.5 * (ce + classification_loss(direct, batch["labels"]))
                terms["L_CE"] = ce
        if w["kl"] > 0:
            terms["L_KL"] = kl_loss(zt.mu, zt.logvar) + kl_loss(zm.mu, zm.logvar)
        if w["adversarial"] > 0:
            real = {"text": T, "mel": M}
            fake = {"text": T_hat, "mel": M_hat}
            disc = {d: (lambda x, d=d: model.discriminate(d, x)) for d in ("text", "mel")}
            terms["L_adv_g"] = sum(adversarial_loss(real[d], fake[d], disc[d], "generator_step")
                                   for d in ("text", "mel"))
            if compute_max:
                terms["L_adv_d"] = sum(adversarial_loss(real[d], fake[d], disc[d], "discriminator_step")
                                       for d in ("text", "mel"))
    if w["latent_regression"] > 0:
        terms["L_lr"] = latent_regression_loss(model, T, M, lengths, criterion, rng)

    min_loss = sum(w[_WEIGHT_OF[k]] * terms[k] for k in TERMS)
    max_loss = w["adversarial"] * terms["L_adv_d"]
    breakdown = {k: float(v.detach()) for k, v in terms.items()}
    breakdown["total"] = float(min_loss.detach()) if torch.is_tensor(min_loss) else float(min_loss)
    return min_loss, max_loss, breakdown
