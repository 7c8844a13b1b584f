"""Gaussian likelihood objective and posterior-mean fusion.

The network predicts, per pixel, a mean vector mu and 6 raw numbers that
parameterize a PSD covariance Sigma = A^T A (A upper triangular). Training
minimizes the negative log likelihood of the observed noisy pixel under
N(mu, Sigma + sigma^2 I); at test time the noisy pixel is fused back in via
the posterior mean. All functions are batched over leading dimensions and
differentiable.
"""

from __future__ import annotations

import torch

# (row, col) positions of the 6 raw entries in the upper-triangular factor
_TRIU_ROWS = (0, 0, 0, 1, 1, 2)
_TRIU_COLS = (0, 1, 2, 1, 2, 2)


def build_covariance(raw_cov: torch.Tensor) -> torch.Tensor:
    """Map raw entries (..., 6) to a symmetric PSD matrix (..., 3, 3).

    The raw entries fill an upper-triangular A; the result is A^T A, PSD by
    construction for any real input.
    """
    raw_cov = torch.as_tensor(raw_cov)
    if raw_cov.shape[-1] != 6:
        raise ValueError(f"raw_cov must have 6 trailing entries, got {raw_cov.shape[-1]}")
    A = raw_cov.new_zeros(raw_cov.shape[:-1] + (3, 3))
    A[..., _TRIU_ROWS, _TRIU_COLS] = raw_cov
    return A.transpose(-1, -2) @ A


def _as_matrix(sigma_x: torch.Tensor, C: int) -> torch.Tensor:
    sigma_x = torch.as_tensor(sigma_x)
    if sigma_x.shape[-2:] != (C, C):
        raise ValueError(f"covariance must be (..., {C}, {C}), got {tuple(sigma_x.shape)}")
    return sigma_x


def gaussian_nll(
    y: torch.Tensor, mu: torch.Tensor, sigma_x: torch.Tensor, sigma_n: float | torch.Tensor
) -> torch.Tensor:
    """Per-pixel negative log likelihood of y under N(mu, Sigma_x + sigma_n^2 I).

    y, mu: (..., C); sigma_x: (..., C, C); returns (...).
    """
    y = torch.as_tensor(y)
    mu = torch.as_tensor(mu)
    C = y.shape[-1]
    sigma_x = _as_matrix(sigma_x, C)
    sigma_n = torch.as_tensor(sigma_n, dtype=y.dtype)
    if (sigma_n <= 0).any():
        raise ValueError("sigma_n must be positive")
    eye = torch.eye(C, dtype=y.dtype, device=y.device)
    sigma_y = sigma_x + sigma_n[..., None, None] ** 2 * eye
    L = torch.linalg.cholesky(sigma_y)
    r = (y - mu)[..., None]
    z = torch.linalg.solve_triangular(L, r, upper=False)
    quad = (z.squeeze(-1) ** 2).sum(-1)
    logdet = 2.0 * torch.log(torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)
    return 0.5 * quad + 0.5 * logdet


def posterior_mean(
    y: torch.Tensor, mu: torch.Tensor, sigma_x: torch.Tensor, sigma_n: float | torch.Tensor
) -> torch.Tensor:
    """Fused estimate mu + Sigma_x (Sigma_x + sigma_n^2 I)^{-1} (y - mu).

    Algebraically equal to the precision-weighted average
    (Sigma_x^{-1} + sigma_n^{-2} I)^{-1} (Sigma_x^{-1} mu + sigma_n^{-2} y)
    but well defined for singular Sigma_x. Tends to mu as Sigma_x -> 0 and
    to y as sigma_n -> 0.
    """
    y = torch.as_tensor(y)
    mu = torch.as_tensor(mu)
    C = y.shape[-1]
    sigma_x = _as_matrix(sigma_x, C)
    sigma_n = torch.as_tensor(sigma_n, dtype=y.dtype)
    if (sigma_n <= 0).any():
        raise ValueError("sigma_n must be positive")
    eye = torch.eye(C, dtype=y.dtype, device=y.device)
    sigma_y = sigma_x + sigma_n[..., None, None] ** 2 * eye
    L = torch.linalg.cholesky(sigma_y)
    r = (y - mu)[..., None]
    gain = torch.cholesky_solve(r, L)
    return mu + (sigma_x @ gain).squeeze(-1)


def sigma_regularizer(sigma_estimate: torch.Tensor) -> torch.Tensor:
    """Penalty -0.1 * sigma, added when sigma is itself being estimated."""
    return -0.1 * torch.as_tensor(sigma_estimate)


def nll_loss_map(
    y: torch.Tensor, mu: torch.Tensor, raw_cov: torch.Tensor, sigma_n: float | torch.Tensor
) -> torch.Tensor:
    """NLL over image-shaped predictions: y, mu (..., C, H, W), raw_cov
    (..., 6, H, W). Returns (..., H, W)."""
    yv = y.movedim(-3, -1)
    muv = mu.movedim(-3, -1)
    sig = build_covariance(raw_cov.movedim(-3, -1))
    return gaussian_nll(yv, muv, sig, sigma_n)


def fuse_map(
    y: torch.Tensor, mu: torch.Tensor, raw_cov: torch.Tensor, sigma_n: float | torch.Tensor
) -> torch.Tensor:
    """Posterior-mean fusion over image-shaped predictions; returns the
    fused frame with the same layout as mu."""
    yv = y.movedim(-3, -1)
    muv = mu.movedim(-3, -1)
    sig = build_covariance(raw_cov.movedim(-3, -1))
    return posterior_mean(yv, muv, sig, sigma_n).movedim(-1, -3)
