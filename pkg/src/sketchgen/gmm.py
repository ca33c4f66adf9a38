"""Bivariate Gaussian mixture heads and diagonal-Gaussian latent utilities.

The layout decoder predicts box centers and sizes as 2-D mixture densities.
Raw head outputs are packed as (..., 6*M): mixture logits, means, log-scales
and correlation per component.  All math runs in the tensor's own dtype;
tests pin the numerics at float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_2PI = math.log(2.0 * math.pi)

# Correlation is squashed strictly inside (-1, 1); at |rho| = 1 the density
# degenerates and the NLL diverges.
RHO_LIMIT = 0.999


@dataclass
class GmmParams:
    """Normalized mixture parameters with trailing component axis M."""

    log_pi: torch.Tensor   # (..., M) log mixture weights, logsumexp == 0
    mu: torch.Tensor       # (..., M, 2)
    sigma: torch.Tensor    # (..., M, 2) strictly positive
    rho: torch.Tensor      # (..., M) in (-1, 1)

    @property
    def n_components(self) -> int:
        return self.log_pi.shape[-1]

    def detach(self) -> "GmmParams":
        return GmmParams(self.log_pi.detach(), self.mu.detach(),
                         self.sigma.detach(), self.rho.detach())


def split_gmm(raw: torch.Tensor, n_components: int) -> GmmParams:
    """Unpack a raw (..., 6*M) head output into normalized parameters.

    Weights go through log-softmax, scales through exp, correlation through
    a tanh scaled to RHO_LIMIT.
    """
    m = n_components
    if raw.shape[-1] != 6 * m:
        raise ValueError(f"raw trailing dim {raw.shape[-1]} != 6*{m}")
    pi_logits, mu, log_sigma, rho_raw = torch.split(raw, [m, 2 * m, 2 * m, m], dim=-1)
    return GmmParams(
        log_pi=torch.log_softmax(pi_logits, dim=-1),
        mu=mu.reshape(*mu.shape[:-1], m, 2),
        sigma=torch.exp(log_sigma).reshape(*log_sigma.shape[:-1], m, 2),
        rho=RHO_LIMIT * torch.tanh(rho_raw),
    )


def gmm_log_prob(params: GmmParams, xy: torch.Tensor) -> torch.Tensor:
    """Log density of points xy (..., 2) under the mixture, shape (...)."""
    dx = (xy[..., None, 0] - params.mu[..., 0]) / params.sigma[..., 0]
    dy = (xy[..., None, 1] - params.mu[..., 1]) / params.sigma[..., 1]
    rho = params.rho
    one_m_r2 = torch.clamp(1.0 - rho * rho, min=1e-12)
    z = dx * dx - 2.0 * rho * dx * dy + dy * dy
    comp = (-z / (2.0 * one_m_r2)
            - torch.log(params.sigma[..., 0]) - torch.log(params.sigma[..., 1])
            - 0.5 * torch.log(one_m_r2) - LOG_2PI)
    return torch.logsumexp(params.log_pi + comp, dim=-1)


def gmm_nll(params: GmmParams, xy: torch.Tensor,
            mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean negative log likelihood over (optionally masked) positions.

    With a mask, absent positions contribute nothing; an all-absent mask
    yields zero rather than NaN.
    """
    nll = -gmm_log_prob(params, xy)
    if mask is None:
        return nll.mean()
    mask = mask.to(nll.dtype)
    denom = mask.sum()
    if denom.item() == 0:
        return torch.zeros((), dtype=nll.dtype, device=nll.device)
    return (nll * mask).sum() / denom


def gmm_sample(params: GmmParams, temperature: float = 1.0,
               generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw one point per leading position; returns (..., 2).

    Temperature sharpens the component choice (logits / tau) and scales the
    component scales by sqrt(tau).  tau = 0 collapses to the argmax
    component's mean.
    """
    if temperature < 0:
        raise ValueError(f"temperature {temperature} < 0")
    lead = params.log_pi.shape[:-1]
    m = params.n_components

    if temperature == 0.0:
        comp = params.log_pi.argmax(dim=-1)
    else:
        logits = params.log_pi / temperature
        probs = torch.softmax(logits.reshape(-1, m), dim=-1)
        comp = torch.multinomial(probs, 1, generator=generator).reshape(lead)

    idx = comp[..., None, None].expand(*lead, 1, 2)
    mu = torch.gather(params.mu, -2, idx).squeeze(-2)
    if temperature == 0.0:
        return mu
    sigma = torch.gather(params.sigma, -2, idx).squeeze(-2)
    rho = torch.gather(params.rho, -1, comp[..., None]).squeeze(-1)

    eps = torch.empty(*lead, 2, dtype=mu.dtype, device=mu.device)
    eps.normal_(generator=generator)
    scale = math.sqrt(temperature)
    x = mu[..., 0] + sigma[..., 0] * scale * eps[..., 0]
    y = mu[..., 1] + sigma[..., 1] * scale * (
        rho * eps[..., 0] + torch.sqrt(torch.clamp(1.0 - rho * rho, min=0.0)) * eps[..., 1])
    return torch.stack([x, y], dim=-1)


def diag_gaussian_kl(mu_q: torch.Tensor, logvar_q: torch.Tensor,
                     mu_p: torch.Tensor, logvar_p: torch.Tensor) -> torch.Tensor:
    """KL(q || p) between diagonal Gaussians, summed over the last axis."""
    var_q = torch.exp(logvar_q)
    var_p = torch.exp(logvar_p)
    kl = 0.5 * (logvar_p - logvar_q + (var_q + (mu_q - mu_p) ** 2) / var_p - 1.0)
    return kl.sum(dim=-1)


def reparam_sample(mu: torch.Tensor, logvar: torch.Tensor,
                   generator: torch.Generator | None = None,
                   temperature: float = 1.0) -> torch.Tensor:
    """mu + sqrt(tau) * sigma * eps; tau = 0 returns the mean."""
    if temperature == 0.0:
        return mu
    eps = torch.empty_like(mu).normal_(generator=generator)
    return mu + math.sqrt(temperature) * torch.exp(0.5 * logvar) * eps
