"""Shared fixtures and the central-difference gradient checker."""

import numpy as np
import pytest
import torch

from hapnet.config import ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        height=64,
        width=64,
        embed_dim=32,
        trunk_depth=(1, 1, 1, 1),
        trunk_heads=4,
        cspd_channels=(8, 16, 32),
        num_queries=8,
        decoder_dim=32,
        num_classes=5,
        seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def cfg_tiny() -> ModelConfig:
    return tiny_config()


def finite_diff_max_rel_error(
    fn,
    params: list[torch.nn.Parameter],
    num_entries: int = 24,
    h: float = 1e-6,
    seed: int = 0,
) -> float:
    """Compare analytic gradients of scalar ``fn()`` to central differences.

    ``params`` must be float64 leaves of the graph built inside ``fn``.
    Samples ``num_entries`` parameter entries across all params and
    returns the worst relative error.
    """
    for p in params:
        assert p.dtype == torch.float64, "finite differences need 64-bit parameters"
        p.grad = None
    loss = fn()
    loss.backward()
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(num_entries, total), replace=False)
    assert len(chosen) >= 20
    bounds = np.cumsum([0] + sizes)
    worst = 0.0
    for flat_index in chosen:
        pi = int(np.searchsorted(bounds, flat_index, side="right") - 1)
        local = int(flat_index - bounds[pi])
        p = params[pi]
        flat = p.data.reshape(-1)
        orig = flat[local].item()
        with torch.no_grad():
            flat[local] = orig + h
            f_plus = float(fn())
            flat[local] = orig - h
            f_minus = float(fn())
            flat[local] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(p.grad.reshape(-1)[local])
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def weighted_sum_loss(output: torch.Tensor, seed: int = 0) -> torch.Tensor:
    """Fixed random projection of a tensor output to a scalar."""
    g = torch.Generator().manual_seed(seed)
    w = torch.randn(output.shape, generator=g, dtype=torch.float64)
    return (output * w).sum()
