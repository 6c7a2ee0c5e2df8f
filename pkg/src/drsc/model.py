"""DRSC networks and the SpeechIC baseline.

Layouts: text features are ``(batch, length, text_dim)``, Mel features are
``(batch, mel_bins, frames)``. Internally both run through 1-D convolutions
over time with channels first.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from drsc.config import ModelConfig

DOMAINS = ("text", "mel")
LOGVAR_BOUND = 6.0  # content log-variance is soft-clipped to (-6, 6)


class LatentPair(NamedTuple):
    content: torch.Tensor      # (B, content_dim, T), sampled in train mode
    intent: torch.Tensor       # (B, intent_dim)
    mu: torch.Tensor
    logvar: torch.Tensor


def length_mask(lengths: torch.Tensor | None, size: int, dtype=torch.float32) -> torch.Tensor | None:
    """``(B, 1, size)`` mask with ones before each length."""
    if lengths is None:
        return None
    steps = torch.arange(size, device=lengths.device)
    return (steps[None, :] < lengths[:, None]).to(dtype).unsqueeze(1)


def _masked(x, mask):
    return x if mask is None else x * mask


class SameConv1d(nn.Conv1d):
    """Conv1d padded so that output length equals input length for any width."""

    def forward(self, x):
        k = self.kernel_size[0]
        return super().forward(F.pad(x, ((k - 1) // 2, k // 2)))


class ConvBank(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernels):
        super().__init__()
        self.convs = nn.ModuleList(SameConv1d(in_ch, out_ch, k) for k in kernels)

    def forward(self, x, mask=None):
        return torch.cat([_masked(F.leaky_relu(c(x), 0.2), mask) for c in self.convs], dim=1)


class ResBlock(nn.Module):
    def __init__(self, ch: int, kernel: int = 3):
        super().__init__()
        self.conv1 = SameConv1d(ch, ch, kernel)
        self.conv2 = SameConv1d(ch, ch, kernel)

    def forward(self, x, mask=None):
        h = _masked(self.conv1(F.leaky_relu(x, 0.2)), mask)
        h = _masked(self.conv2(F.leaky_relu(h, 0.2)), mask)
        return x + h


class ConvTrunk(nn.Module):
    """Convolution bank, 1x1 projection, residual blocks."""

    def __init__(self, in_ch: int, cfg: ModelConfig):
        super().__init__()
        self.bank = ConvBank(in_ch, cfg.channels, cfg.conv_bank_kernels)
        self.proj = nn.Conv1d(cfg.channels * len(cfg.conv_bank_kernels), cfg.channels, 1)
        self.blocks = nn.ModuleList(ResBlock(cfg.channels) for _ in range(cfg.n_res_blocks))

    def forward(self, x, mask=None):
        x = _masked(x, mask)
        h = _masked(self.proj(self.bank(x, mask)), mask)
        for block in self.blocks:
            h = block(h, mask)
        return h


class ContentEncoder(nn.Module):
    def __init__(self, in_ch: int, cfg: ModelConfig):
        super().__init__()
        self.trunk = ConvTrunk(in_ch, cfg)
        self.mu = nn.Conv1d(cfg.channels, cfg.content_dim, 1)
        self.logvar = nn.Conv1d(cfg.channels, cfg.content_dim, 1)

    def _linear_outputs(self):
        return [self.mu, self.logvar]

    def forward(self, x, mask=None):
        h = F.leaky_relu(self.trunk(x, mask), 0.2)
        logvar = LOGVAR_BOUND * torch.tanh(self.logvar(h) / LOGVAR_BOUND)
        return _masked(self.mu(h), mask), _masked(logvar, mask)


class IntentEncoder(nn.Module):
    def __init__(self, in_ch: int, cfg: ModelConfig, dropout: float):
        super().__init__()
        self.trunk = ConvTrunk(in_ch, cfg)
        self.dense = nn.Sequential(
            nn.Linear(cfg.channels, cfg.channels), nn.LeakyReLU(0.2), nn.Dropout(dropout),
            nn.Linear(cfg.channels, cfg.intent_dim),
        )

    def _linear_outputs(self):
        return [self.dense[-1]]

    def forward(self, x, mask=None):
        h = F.leaky_relu(self.trunk(x, mask), 0.2)
        if mask is None:
            pooled = h.mean(dim=2)
        else:
            pooled = (h * mask).sum(2) / mask.sum(2).clamp_min(1.0)
        return self.dense(pooled)


class Generator(nn.Module):
    """Content map plus time-broadcast intent vector to a domain feature."""

    def __init__(self, out_ch: int, cfg: ModelConfig):
        super().__init__()
        self.inp = SameConv1d(cfg.content_dim + cfg.intent_dim, cfg.channels, 3)
        self.blocks = nn.ModuleList(ResBlock(cfg.channels) for _ in range(cfg.n_res_blocks))
        self.out = nn.Conv1d(cfg.channels, out_ch, 1)

    def _linear_outputs(self):
        return [self.out]

    def forward(self, content, intent, mask=None):
        cond = intent[:, :, None].expand(-1, -1, content.shape[2])
        h = _masked(self.inp(torch.cat([content, cond], dim=1)), mask)
        for block in self.blocks:
            h = block(h, mask)
        return _masked(self.out(F.leaky_relu(h, 0.2)), mask)


class Discriminator(nn.Module):
    """Four strided convolutions, time-averaged, to one realness logit."""

    def __init__(self, in_ch: int, ch: int):
        super().__init__()
        chans = [in_ch, ch, ch * 2, ch * 4, ch * 4]
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], 3, stride=2, padding=1) for i in range(4))
        self.head = nn.Linear(chans[-1], 1)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.head(x.mean(dim=2)).squeeze(1)


class FusionClassifier(nn.Module):
    def __init__(self, cfg: ModelConfig, dropout: float):
        super().__init__()
        self.fusion = nn.Sequential(
            nn.Linear(2 * cfg.intent_dim, cfg.fusion_dim), nn.LeakyReLU(0.2), nn.Dropout(dropout),
            nn.Linear(cfg.fusion_dim, cfg.fusion_dim), nn.LeakyReLU(0.2), nn.Dropout(dropout),
        )
        self.head = nn.Linear(cfg.fusion_dim, cfg.n_classes)

    def _linear_outputs(self):
        return [self.head]

    def forward(self, zi_text, zi_mel):
        return self.head(self.fusion(torch.cat([zi_text, zi_mel], dim=1)))


def init_weights(module: nn.Module) -> None:
    """Kaiming-normal init for hidden layers, zero biases.

    Residual branches end in a down-scaled conv so a deep trunk starts close
    to identity; layers listed in ``_linear_outputs`` get unit-gain Xavier.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    for m in module.modules():
        if isinstance(m, ResBlock):
            m.conv2.weight.data.mul_(0.1)
        for layer in getattr(m, "_linear_outputs", lambda: [])():
            nn.init.xavier_normal_(layer.weight)


def argmax_lowest(logits: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax; ties go to the lowest class id."""
    best = logits.max(dim=-1, keepdim=True).values
    idx = torch.arange(logits.shape[-1], device=logits.device).expand_as(logits)
    return torch.where(logits == best, idx, logits.shape[-1]).min(dim=-1).values


class DRSC(nn.Module):
    MIN_GROUPS = ("embedding", "content_encoders", "intent_encoders", "generators", "classifier")
    MAX_GROUPS = ("discriminators",)

    def __init__(self, cfg: ModelConfig, dropout: float = 0.1):
        super().__init__()
        self.cfg = cfg
        dims = {"text": cfg.text_dim, "mel": cfg.mel_bins}
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.text_dim, padding_idx=0) if cfg.vocab_size else None
        self.content_encoders = nn.ModuleDict({d: ContentEncoder(dims[d], cfg) for d in DOMAINS})
        self.intent_encoders = nn.ModuleDict({d: IntentEncoder(dims[d], cfg, dropout) for d in DOMAINS})
        self.generators = nn.ModuleDict({d: Generator(dims[d], cfg) for d in DOMAINS})
        self.discriminators = nn.ModuleDict({d: Discriminator(dims[d], cfg.disc_channels) for d in DOMAINS})
        self.classifier = FusionClassifier(cfg, dropout)
        init_weights(self)

    # parameter roles -----------------------------------------------------
    def param_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {}
        for name in self.MIN_GROUPS + self.MAX_GROUPS:
            module = getattr(self, name)
            groups[name] = list(module.parameters()) if module is not None else []
        return groups

    def min_parameters(self) -> list[nn.Parameter]:
        return [p for g in self.MIN_GROUPS for p in self.param_groups()[g]]

    def max_parameters(self) -> list[nn.Parameter]:
        return [p for g in self.MAX_GROUPS for p in self.param_groups()[g]]

    # feature plumbing ----------------------------------------------------
    def text_features(self, text: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """Token ids ``(B, L)`` to embeddings ``(B, L, text_dim)``; floats pass through."""
        if text.dtype in (torch.int32, torch.int64):
            if self.embedding is None:
                raise ValueError("model has no embedding table (vocab_size=0) but got token ids")
            text = self.embedding(text)
        if lengths is not None and self.cfg.mask_padding:
            text = text * length_mask(lengths, text.shape[1], text.dtype).transpose(1, 2)
        return text

    def _mask(self, domain, x, lengths):
        if domain != "text" or not self.cfg.mask_padding:
            return None
        return length_mask(lengths, x.shape[2], x.dtype)

    def _to_channels(self, domain, feature):
        expected = self.cfg.text_dim if domain == "text" else self.cfg.mel_bins
        axis = 2 if domain == "text" else 1
        if feature.dim() != 3 or feature.shape[axis] != expected:
            raise ValueError(
                f"{domain} feature must have {expected} channels on axis {axis}, "
                f"got shape {tuple(feature.shape)}")
        return feature.transpose(1, 2) if domain == "text" else feature

    def _from_channels(self, domain, x):
        return x.transpose(1, 2) if domain == "text" else x

    # DRSC operations -----------------------------------------------------
    def encode(self, domain: str, feature: torch.Tensor, lengths=None,
               rng: torch.Generator | None = None) -> LatentPair:
        x = self._to_channels(domain, feature)
        mask = self._mask(domain, x, lengths)
        mu, logvar = self.content_encoders[domain](x, mask)
        content = mu
        if self.training:
            eps = torch.randn(mu.shape, generator=rng, dtype=mu.dtype, device=mu.device)
            content = _masked(mu + torch.exp(0.5 * logvar) * eps, mask)
        intent = self.intent_encoders[domain](x, mask)
        return LatentPair(content, intent, mu, logvar)

    def encode_intent(self, domain, feature, lengths=None):
        x = self._to_channels(domain, feature)
        return self.intent_encoders[domain](x, self._mask(domain, x, lengths))

    def encode_content(self, domain, feature, lengths=None):
        """Content posterior ``(mu, logvar)``."""
        x = self._to_channels(domain, feature)
        return self.content_encoders[domain](x, self._mask(domain, x, lengths))

    def generate(self, domain, content, intent, lengths=None):
        mask = length_mask(lengths, content.shape[2], content.dtype) if (
            domain == "text" and self.cfg.mask_padding) else None
        return self._from_channels(domain, self.generators[domain](content, intent, mask))

    def cross(self, T, M, lengths=None, rng=None):
        """Swap intents between domains: ``u = G_text(c_T, i_M)``, ``v = G_mel(c_M, i_T)``."""
        zt = self.encode("text", T, lengths, rng)
        zm = self.encode("mel", M, rng=rng)
        u = self.generate("text", zt.content, zm.intent, lengths)
        v = self.generate("mel", zm.content, zt.intent)
        return u, v, (zt, zm)

    def restore(self, u, v, lengths=None, rng=None, return_latents=False):
        """Second swap: ``T_hat = G_text(E^c_text(u), E^i_mel(v))``, ``M_hat = G_mel(E^c_mel(v), E^i_text(u))``."""
        zu = self.encode("text", u, lengths, rng)
        zv = self.encode("mel", v, rng=rng)
        T_hat = self.generate("text", zu.content, zv.intent, lengths)
        M_hat = self.generate("mel", zv.content, zu.intent)
        if return_latents:
            return T_hat, M_hat, (zu, zv)
        return T_hat, M_hat

    def swap_intents(self, T_a, M_a, T_b, M_b, lengths_a=None, lengths_b=None):
        """Cross sample ``a``'s content with sample ``b``'s intents (eval-time probe)."""
        za_t = self.encode("text", T_a, lengths_a)
        za_m = self.encode("mel", M_a)
        zi_t = self.encode_intent("text", T_b, lengths_b)
        zi_m = self.encode_intent("mel", M_b)
        u = self.generate("text", za_t.content, zi_m, lengths_a)
        v = self.generate("mel", za_m.content, zi_t)
        return u, v

    def fuse_and_classify(self, zi_text, zi_mel):
        d = self.cfg.intent_dim
        if zi_text.shape[-1] != d or zi_mel.shape[-1] != d:
            raise ValueError(
                f"intent vectors must have length {d}, got {zi_text.shape[-1]} and {zi_mel.shape[-1]}")
        return self.classifier(zi_text, zi_mel)

    def logits(self, T, M, lengths=None):
        return self.fuse_and_classify(self.encode_intent("text", T, lengths),
                                      self.encode_intent("mel", M))

    def forward(self, text, mel, lengths=None):
        """Inference path: intents from both domains, fused, classified."""
        return self.logits(self.text_features(text, lengths), mel, lengths)

    @torch.no_grad()
    def predict(self, text, mel, lengths=None) -> torch.Tensor:
        return argmax_lowest(self.forward(text, mel, lengths))

    def discriminate(self, domain, feature):
        return self.discriminators[domain](self._to_channels(domain, feature))


class SpeechIC(nn.Module):
    """CNN baseline: per-modality conv encoder, max-pool, concatenation, dense head."""

    MODES = ("txt_only", "mel_only", "combined")

    def __init__(self, cfg: ModelConfig, mode: str = "combined", dropout: float = 0.1):
        super().__init__()
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.cfg, self.mode = cfg, mode
        ch, k = cfg.baseline_channels, cfg.baseline_kernel
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.text_dim, padding_idx=0) if cfg.vocab_size else None
        self.uses = {"text": mode in ("txt_only", "combined"), "mel": mode in ("mel_only", "combined")}
        dims = {"text": cfg.text_dim, "mel": cfg.mel_bins}
        self.encoders = nn.ModuleDict({
            d: nn.ModuleList([SameConv1d(dims[d], ch, k), SameConv1d(ch, ch, k), SameConv1d(ch, ch, k)])
            for d in DOMAINS if self.uses[d]
        })
        width = ch * sum(self.uses.values())
        self.head = nn.Sequential(nn.Linear(width, cfg.baseline_hidden), nn.ReLU(), nn.Dropout(dropout),
                                  nn.Linear(cfg.baseline_hidden, cfg.n_classes))

    def min_parameters(self):
        return list(self.parameters())

    def text_features(self, text, lengths=None):
        if text.dtype in (torch.int32, torch.int64):
            if self.embedding is None:
                raise ValueError("model has no embedding table (vocab_size=0) but got token ids")
            text = self.embedding(text)
        return text

    def _encode(self, domain, x, mask=None):
        for conv in self.encoders[domain]:
            x = F.relu(conv(_masked(x, mask)))
        if mask is not None:
            x = x.masked_fill(mask == 0, float("-inf"))
        return x.max(dim=2).values

    def forward(self, text=None, mel=None, lengths=None):
        pooled = []
        if self.uses["text"]:
            if text is None:
                raise ValueError(f"mode {self.mode} requires text input")
            x = self.text_features(text).transpose(1, 2)
            mask = length_mask(lengths, x.shape[2], x.dtype) if self.cfg.mask_padding else None
            pooled.append(self._encode("text", x, mask))
        if self.uses["mel"]:
            if mel is None:
                raise ValueError(f"mode {self.mode} requires Mel input")
            pooled.append(self._encode("mel", mel))
        return self.head(torch.cat(pooled, dim=1))

    @torch.no_grad()
    def predict(self, text=None, mel=None, lengths=None):
        return argmax_lowest(self.forward(text, mel, lengths))


def speechic_forward(mode, T=None, M=None, params: SpeechIC | None = None, lengths=None):
    """Functional entry point matching the baseline's three input modes."""
    if params is None or params.mode != mode:
        raise ValueError("pass a SpeechIC model built for the requested mode")
    return params(T, M, lengths)


def build_model(method: str, cfg: ModelConfig, dropout: float = 0.1) -> nn.Module:
    if method == "drsc":
        return DRSC(cfg, dropout)
    modes = {"speechic_txt": "txt_only", "speechic_mel": "mel_only", "speechic_combined": "combined"}
    if method not in modes:
        raise ValueError(f"unknown method {method!r}")
    return SpeechIC(cfg, modes[method], dropout)
