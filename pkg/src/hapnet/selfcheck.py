"""Fast correctness checks behind the ``check`` CLI verb.

Each check recomputes a result through an independent route (hand
arithmetic, brute force, or a per-element loop) and compares. One line is
printed per check; the runner exits nonzero if any fails.
"""

import math

import numpy as np
import torch

from .attention import CrossAttention, grid_reference_points
from .config import AttentionKind, ModelConfig, seed_all, token_layout, validate_config
from .checkpoint import load_archive, save_archive
from .losses import (
    LossWeights,
    dice_loss,
    exhaustive_assignment,
    hungarian,
    total_loss,
)
from .metrics import ConfusionMatrix
from .model import HapNet
from .phfi import HybridEncoder

TINY = dict(
    height=64,
    width=64,
    embed_dim=32,
    trunk_depth=(1, 1, 1, 1),
    trunk_heads=4,
    cspd_channels=(8, 16, 32),
    num_queries=8,
    decoder_dim=32,
    num_classes=5,
)


def check_config_layout() -> str:
    cfg = ModelConfig(**TINY, seed=3)
    rebuilt = ModelConfig.from_dict(cfg.to_dict())
    assert rebuilt == cfg
    layout = token_layout(ModelConfig(height=64, width=96))
    assert layout.vit_grid == (4, 6) and layout.vit_tokens == 24
    assert layout.prior_tokens_per_scale == (96, 24, 6)
    assert layout.scale_offsets == (0, 96, 120) and layout.prior_total == 126
    return "round trip and 64x96 token counts"


def check_forward_shapes() -> str:
    cfg = validate_config(ModelConfig(**TINY))
    seed_all(0)
    model = HapNet(cfg).eval()
    rgb = torch.randn(2, 3, 64, 64)
    thermal = torch.randn(2, 3, 64, 64)
    with torch.no_grad():
        out = model(rgb, thermal, with_aux=True)
        sem = model.semantic_map(out, (64, 64))
    assert out.class_logits.shape == (2, cfg.num_queries, cfg.num_classes)
    assert out.mask_logits.shape == (2, cfg.num_queries, 16, 16)
    assert out.aux_logits.shape == (2, cfg.num_real_classes, 16, 16)
    assert sem.shape == (2, 64, 64) and sem.dtype == torch.int64
    return "outputs at 64x64"


def check_init_identity() -> str:
    cfg = ModelConfig(**TINY, kappa_init=0.0, ccg_enabled=True)
    seed_all(1)
    enc = HybridEncoder(replace_ccg(cfg, False)).eval()
    rgb = torch.randn(1, 3, 64, 64)
    thermal = torch.randn(1, 3, 64, 64)
    with torch.no_grad():
        _, trunk_states, prior_states = enc.forward_with_states(rgb, thermal)
        tokens = enc.trunk.route_input(rgb, thermal, cfg.input_routing.vfm)
        plain = [tokens]
        for i in range(4):
            tokens = enc.trunk.run_stage(i, tokens)
            plain.append(tokens)
    for got, want in zip(trunk_states, plain):
        assert torch.equal(got, want)
    assert torch.equal(prior_states[0], prior_states[-1])
    return "zero-gated trunk matches a plain run bitwise"


def replace_ccg(cfg: ModelConfig, enabled: bool) -> ModelConfig:
    return cfg.replace(ccg_enabled=enabled)


def check_attention_oracles() -> str:
    seed_all(2)
    attn = CrossAttention(16, 4, AttentionKind.STANDARD)
    for _ in range(5):
        q = torch.randn(2, 5, 16)
        kv = torch.randn(2, 7, 16)
        with torch.no_grad():
            got = attn(q, kv)
            want = _loop_attention(attn, q, kv)
        assert (got - want).abs().max().item() <= 1e-6
    # Deformable with zero offsets, one point, identity projections must
    # read the kv map back exactly at the query reference points.
    d = CrossAttention(16, 4, AttentionKind.DEFORMABLE, num_levels=1, num_points=1)
    with torch.no_grad():
        d.sampling_offsets.bias.zero_()
        d.v_proj.weight.copy_(torch.eye(16))
        d.v_proj.bias.zero_()
        d.out_proj.weight.copy_(torch.eye(16))
        d.out_proj.bias.zero_()
        kv = torch.randn(1, 12, 16)
        refs = grid_reference_points((3, 4))
        got = d(kv, kv, kv_shapes=[(3, 4)], ref_points=refs)
    assert (got - kv).abs().max().item() <= 1e-6
    return "standard vs loop, deformable bilinear read"


def _loop_attention(attn: CrossAttention, q: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
    b, nq, d = q.shape
    hd = attn.head_dim
    qp = attn.q_proj(q).reshape(b, nq, attn.num_heads, hd)
    kp = attn.k_proj(kv).reshape(b, kv.shape[1], attn.num_heads, hd)
    vp = attn.v_proj(kv).reshape(b, kv.shape[1], attn.num_heads, hd)
    out = torch.zeros_like(qp)
    for bi in range(b):
        for h in range(attn.num_heads):
            for i in range(nq):
                scores = torch.tensor(
                    [float(qp[bi, i, h] @ kp[bi, j, h]) / math.sqrt(hd) for j in range(kv.shape[1])]
                )
                w = scores.softmax(0)
                for j in range(kv.shape[1]):
                    out[bi, i, h] += w[j] * vp[bi, j, h]
    return attn.out_proj(out.reshape(b, nq, d))


def check_matching() -> str:
    rng = np.random.default_rng(11)
    for _ in range(30):
        nq = int(rng.integers(1, 7))
        ng = int(rng.integers(1, nq + 1))
        cost = rng.normal(size=(nq, ng))
        got = hungarian(cost)
        want, best = exhaustive_assignment(cost)
        assert cost[got, range(ng)].sum() == best
        assert np.array_equal(got, want)
    tie = np.zeros((4, 3))
    assert np.array_equal(hungarian(tie), [0, 1, 2])
    return "30 random cost tables vs brute force"


def check_metrics() -> str:
    rng = np.random.default_rng(5)
    gt = rng.integers(0, 4, size=(2, 9, 9))
    gt[0, 0, :3] = 255
    pred = rng.integers(0, 4, size=(2, 9, 9))
    cm = ConfusionMatrix(4)
    cm.accumulate(gt, pred)
    manual = np.zeros((4, 4), dtype=np.int64)
    for g, p in zip(gt.reshape(-1), pred.reshape(-1)):
        if g != 255:
            manual[g, p] += 1
    assert np.array_equal(cm.counts, manual)
    worked = ConfusionMatrix(2)
    worked.counts = np.array([[1, 1], [0, 2]], dtype=np.int64)
    macc, miou = worked.reduce()
    assert abs(macc - 0.75) <= 1e-9
    assert abs(miou - (0.5 + 2.0 / 3.0) / 2.0) <= 1e-9
    return "counts vs per-pixel loop, worked example"


def check_loss_values() -> str:
    w = LossWeights()
    t = total_loss(
        torch.tensor(0.1, dtype=torch.float64),
        torch.tensor(0.1, dtype=torch.float64),
        torch.tensor(0.1, dtype=torch.float64),
        torch.tensor(0.1, dtype=torch.float64),
        w,
    )
    assert t.item() == 1.24
    ones = torch.ones(4, 4, dtype=torch.float64)
    zeros = torch.zeros(4, 4, dtype=torch.float64)
    assert dice_loss(ones, ones).item() == 0.0
    # disjoint prediction and target, 16 pixels each
    assert abs(dice_loss(ones, zeros).item() - (1.0 - 1.0 / 17.0)) <= 1e-9
    return "weighted sum and dice cases"


def check_checkpoint(tmpdir="/tmp") -> str:
    import tempfile
    from pathlib import Path

    arrays = {
        "b": np.arange(6, dtype=np.float32).reshape(2, 3),
        "a": np.array([1, 2, 3], dtype=np.int64),
    }
    with tempfile.TemporaryDirectory() as td:
        p1 = Path(td) / "one.ckpt"
        p2 = Path(td) / "two.ckpt"
        save_archive(p1, arrays, {"k": 1})
        loaded, meta = load_archive(p1)
        save_archive(p2, loaded, meta)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(loaded["a"], arrays["a"])
        assert np.array_equal(loaded["b"], arrays["b"])
    return "byte-identical archive round trip"


CHECKS = [
    ("config-layout", check_config_layout),
    ("forward-shapes", check_forward_shapes),
    ("init-identity", check_init_identity),
    ("attention-oracles", check_attention_oracles),
    ("matching", check_matching),
    ("metrics", check_metrics),
    ("loss-values", check_loss_values),
    ("checkpoint", check_checkpoint),
]


def run() -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            detail = fn()
            print(f"PASS {name}: {detail}")
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures += 1
            print(f"FAIL {name}: {exc!r}")
    return 1 if failures else 0
