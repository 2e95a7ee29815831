import math

import pytest
import torch

from hapnet.config import Modality
from hapnet.vit import Mlp, PatchEmbed, SelfAttention, TrunkBlock, ViTTrunk

from conftest import tiny_config


@pytest.fixture()
def trunk(cfg_tiny):
    torch.manual_seed(0)
    return ViTTrunk(cfg_tiny)


def test_patch_embed_grid(cfg_tiny):
    pe = PatchEmbed(cfg_tiny)
    assert pe.grid == (4, 4)
    assert pe.num_tokens == 16
    out = pe(torch.randn(2, 3, 64, 64))
    assert out.shape == (2, 16, cfg_tiny.embed_dim)


def test_patch_embed_rejects_wrong_size(cfg_tiny):
    pe = PatchEmbed(cfg_tiny)
    with pytest.raises(ValueError, match="does not match patch grid"):
        pe.project(torch.randn(1, 3, 32, 32))


def test_patch_tokens_are_row_major(cfg_tiny):
    torch.manual_seed(3)
    pe = PatchEmbed(cfg_tiny)
    img = torch.randn(1, 3, 64, 64)
    tokens = pe.project(img)
    gh, gw = pe.grid
    # token t sees exactly patch (t // gw, t % gw)
    for t in (0, gw - 1, gh * gw - 1, 5):
        r, c = divmod(t, gw)
        patch = img[:, :, 16 * r : 16 * (r + 1), 16 * c : 16 * (c + 1)]
        by_hand = (pe.proj.weight.flatten(1) @ patch.flatten(1).T).T + pe.proj.bias
        assert torch.allclose(tokens[0, t], by_hand[0], atol=1e-5)


def test_forward_adds_positions_once(cfg_tiny):
    torch.manual_seed(4)
    pe = PatchEmbed(cfg_tiny)
    img = torch.randn(1, 3, 64, 64)
    assert torch.equal(pe(img), pe.project(img) + pe.pos_embed)


def test_rgbt_routing_sums_projections_single_pos(trunk):
    rgb = torch.randn(1, 3, 64, 64)
    th = torch.randn(1, 3, 64, 64)
    fused = trunk.route_input(rgb, th, Modality.RGBT)
    pe = trunk.patch_embed
    expected = pe.project(rgb) + pe.project(th) + pe.pos_embed
    assert torch.equal(fused, expected)
    # NOT pe(rgb) + pe(th), which would count the positional table twice
    assert not torch.allclose(fused, pe(rgb) + pe(th))


def test_single_modality_routing(trunk):
    rgb = torch.randn(1, 3, 64, 64)
    th = torch.randn(1, 3, 64, 64)
    assert torch.equal(trunk.route_input(rgb, th, Modality.RGB), trunk.patch_embed(rgb))
    assert torch.equal(trunk.route_input(rgb, th, Modality.THERMAL), trunk.patch_embed(th))


def test_self_attention_matches_naive_loop():
    torch.manual_seed(5)
    dim, heads, n = 8, 2, 6
    attn = SelfAttention(dim, heads)
    for p in attn.parameters():
        p.requires_grad_(False)
    x = torch.randn(1, n, dim)
    got = attn(x)
    # naive per-head double loop
    qkv = attn.qkv(x)  # (1, n, 3*dim)
    q, k, v = qkv.chunk(3, dim=-1)
    hd = dim // heads
    out = torch.zeros(1, n, dim)
    for h in range(heads):
        qh = q[0, :, h * hd : (h + 1) * hd]
        kh = k[0, :, h * hd : (h + 1) * hd]
        vh = v[0, :, h * hd : (h + 1) * hd]
        for i in range(n):
            logits = torch.tensor([float(qh[i] @ kh[j]) / math.sqrt(hd) for j in range(n)])
            w = torch.softmax(logits, dim=0)
            out[0, i, h * hd : (h + 1) * hd] = sum(w[j] * vh[j] for j in range(n))
    ref = attn.proj(out)
    assert torch.allclose(got, ref, atol=1e-5)


def test_trunk_block_pre_norm_residual():
    torch.manual_seed(6)
    block = TrunkBlock(8, 2)
    x = torch.randn(1, 5, 8)
    mid = x + block.attn(block.norm1(x))
    expected = mid + block.mlp(block.norm2(mid))
    assert torch.equal(block(x), expected)


def test_depth_zero_stage_is_identity():
    cfg = tiny_config(trunk_depth=(0, 2, 0, 1))
    torch.manual_seed(7)
    t = ViTTrunk(cfg)
    x = torch.randn(1, 16, cfg.embed_dim)
    assert torch.equal(t.run_stage(0, x), x)
    assert torch.equal(t.run_stage(2, x), x)
    assert not torch.equal(t.run_stage(1, x), x)


def test_forward_equals_stage_composition(trunk):
    x = torch.randn(2, 16, 32)
    y = x
    for i in range(4):
        y = trunk.run_stage(i, y)
    assert torch.equal(trunk(x), y)


def test_run_stage_token_count_check(trunk):
    with pytest.raises(ValueError, match="token count"):
        trunk.run_stage(0, torch.randn(1, 9, 32))


def test_load_named_arrays(trunk):
    pe = trunk.patch_embed
    new_pos = torch.randn(1, 16, 32)
    trunk.load_named_arrays({"patch_embed.pos_embed": new_pos})
    assert torch.equal(pe.pos_embed.detach(), new_pos)

    with pytest.raises(KeyError, match="unknown trunk parameter"):
        trunk.load_named_arrays({"nope": torch.zeros(1)})
    with pytest.raises(ValueError, match="shape mismatch"):
        trunk.load_named_arrays({"patch_embed.pos_embed": torch.zeros(1, 4, 32)})
