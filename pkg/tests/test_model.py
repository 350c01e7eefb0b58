import math

import pytest
import torch
import torch.nn as nn

from conftest import random_batch
from momenta.model import (
    INIT_STD,
    VARIANTS,
    ModelConfig,
    MomentaNet,
    VariantMismatchError,
    cmaf,
    collate,
    fuse_intra,
    init_params,
    load_checkpoint,
    predict_trace,
    save_checkpoint,
    self_attend,
)

D = torch.float64


def t(x):
    return torch.tensor(x, dtype=D)


def test_self_attend_examples():
    row = t([[0.3, -1.0, 2.0]])
    pooled, w = self_attend(row, t([1.0, 2.0, 3.0]))
    assert w.tolist() == [1.0] and torch.equal(pooled, row[0])
    pooled, w = self_attend(t([[1.0, 2.0], [1.0, 2.0]]), t([0.4, -0.2]))
    assert w.tolist() == [0.5, 0.5] and torch.allclose(pooled, t([1.0, 2.0]))
    pooled, w = self_attend(t([[1.0, 0.0], [0.0, 1.0]]), t([1.0, 0.0]))
    e = math.e
    assert torch.allclose(w, t([e / (e + 1), 1 / (e + 1)]), atol=1e-12)
    assert w[0].item() == pytest.approx(0.7311, abs=1e-4) and w[1].item() == pytest.approx(0.2689, abs=1e-4)
    assert torch.allclose(pooled, t([e / (e + 1), 1 / (e + 1)]))


def test_self_attend_masked_and_empty():
    rows = t([[[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]]])
    mask = torch.tensor([[True, True, False]])
    pooled, w = self_attend(rows, t([1.0, 0.0]), mask)
    assert w[0, 2].item() == 0.0
    ref, _ = self_attend(rows[:, :2], t([1.0, 0.0]))
    assert torch.allclose(pooled, ref)
    pooled, w = self_attend(rows, t([1.0, 0.0]), torch.zeros(1, 3, dtype=torch.bool))
    assert torch.all(pooled == 0) and torch.all(w == 0)
    pooled, w = self_attend(torch.zeros(2, 0, 4, dtype=D), torch.zeros(4, dtype=D))
    assert pooled.shape == (2, 4) and w.shape == (2, 0)


def test_self_attend_shift_invariance():
    rows = torch.randn(5, 8, dtype=D)
    scorer = torch.randn(8, dtype=D)
    s = rows @ scorer  # a constant added to every score leaves the weights unchanged
    assert torch.allclose(torch.softmax(s + 3.0, -1), self_attend(rows, scorer)[1])


def _linear(n_in, n_out, fill_w=0.0, fill_b=0.0):
    lin = nn.Linear(n_in, n_out).to(D)
    with torch.no_grad():
        lin.weight.fill_(fill_w)
        lin.bias.fill_(fill_b)
    return lin


def test_fuse_intra_examples():
    g = torch.randn(512, dtype=D)
    local = torch.randn(512, dtype=D)
    proj = _linear(512, 512)
    with torch.no_grad():
        proj.weight.copy_(torch.eye(512, dtype=D))
    assert torch.equal(fuse_intra(g, local, proj, t([1.0, 0.0])), g)
    assert torch.allclose(fuse_intra(g, local, proj, t([0.0, 1.0])), local)
    out = fuse_intra(torch.ones(512, dtype=D), local, _linear(512, 512), t([0.5, 0.5]))
    assert torch.equal(out, torch.full((512,), 0.5, dtype=D))
    with pytest.raises(ValueError):
        fuse_intra(g, torch.randn(10, dtype=D), _linear(10, 7), t([1.0, 1.0]))


def test_cmaf_examples():
    fi, ft = torch.randn(3, 512, dtype=D), torch.randn(3, 512, dtype=D)
    hidden = _linear(1024, 128, 0.01)
    out = _linear(128, 2)
    f, a_v, a_t = cmaf(fi, ft, hidden, out, t([1.0, 1.0]))
    assert torch.allclose(a_v, torch.full((3,), 0.5, dtype=D)) and torch.allclose(a_t, a_v)
    assert torch.allclose(f, 1.5 * fi + 1.5 * ft)
    out = nn.Linear(128, 2).to(D)
    f, a_v, _ = cmaf(fi, torch.zeros_like(ft), hidden, out, t([1.0, 0.0]))
    assert torch.allclose(f, (1 + a_v).unsqueeze(-1) * fi)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("c_harm", [2, 3])
def test_shapes_all_variants(variant, c_harm):
    model = init_params(0, ModelConfig(c_harm=c_harm, variant=variant), D)
    _, batch = random_batch(1, b=5, dtype=D)
    tr = model(batch)
    assert tr.logits_harm.shape == (5, c_harm) and tr.logits_target.shape == (5, 4)
    assert torch.isfinite(tr.logits_harm).all() and torch.isfinite(tr.logits_target).all()
    assert (tr.a_v is None) == (variant == "no_cmaf")
    assert hasattr(model, "concat_proj") == (variant == "no_cmaf")


def test_empty_sets_run_in_full_variant():
    _, batch = random_batch(0, b=2, n_max=0, m_max=0, dtype=D)
    tr = init_params(0, dtype=D)(batch)
    assert torch.all(tr.h_att == 0) and torch.all(tr.g_att == 0)
    assert torch.isfinite(tr.logits_harm).all()


def test_variant_mismatch():
    _, batch = random_batch(0, dtype=D)
    with pytest.raises(VariantMismatchError):
        init_params(0, dtype=D)(batch, variant="no_cmaf")
    with pytest.raises(VariantMismatchError):
        init_params(0, ModelConfig(variant="no_cmaf"), D)(batch, variant="full")
    with pytest.raises(VariantMismatchError):
        init_params(0, dtype=D)(batch, variant="bogus")
    with pytest.raises(ValueError):
        ModelConfig(c_harm=4)


def test_clip_proposals_and_attributes_are_one_sided():
    _, batch = random_batch(2, dtype=D)
    model = init_params(3, dtype=D)
    tp = model(batch, "clip_proposals")
    ta = model(batch, "clip_attributes")
    assert torch.equal(tp.f_t_res, batch.f_text) and not torch.equal(tp.f_i_res, batch.f_image)
    assert torch.equal(ta.f_i_res, batch.f_image) and not torch.equal(ta.f_t_res, batch.f_text)


def test_init_params():
    a, b = init_params(5), init_params(5)
    for (na, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), na
    assert abs(float(a.scorer_H.detach().std()) - INIT_STD) < 0.003
    assert torch.all(a.proj_H.bias == 0) and torch.all(a.head_harm.bias == 0)
    assert a.head_harm.out_features == 3
    assert not torch.equal(init_params(6).scorer_H, a.scorer_H)
    weights = torch.cat([p.detach().reshape(-1) for n, p in a.named_parameters() if not n.endswith("bias")])
    assert abs(float(weights.std()) - INIT_STD) < 0.001 and abs(float(weights.mean())) < 1e-3


def test_parameter_count_of_full_variant():
    n = sum(p.numel() for p in MomentaNet().parameters())
    expected = 4096 + 768 + (4096 * 512 + 512) + (768 * 512 + 512) + 2 + 2 + (1024 * 128 + 128) + (128 * 2 + 2) + 2 + (512 * 3 + 3) + (512 * 4 + 4)
    assert n == expected


def test_forward_pure():
    _, batch = random_batch(4, dtype=D)
    model = init_params(1, dtype=D)
    a, b = model(batch), model(batch)
    assert torch.equal(a.logits_harm, b.logits_harm) and torch.equal(a.f_meme, b.f_meme)


def test_padding_does_not_change_results():
    bundles, batch = random_batch(9, b=4, dtype=D, empty_ok=True)
    model = init_params(2, dtype=D)
    together = model(batch).logits_harm
    alone = torch.cat([model(collate([b], D)).logits_harm for b in bundles])
    assert torch.allclose(together, alone, atol=1e-12)


def test_predict_trace_surface():
    bundles, _ = random_batch(3, b=1, empty_ok=False)
    out = predict_trace(init_params(0), bundles[0])
    assert out["a_v"] + out["a_t"] == pytest.approx(1.0, abs=1e-6)
    assert out["proposal_weights"].shape == (bundles[0].n_proposals,)
    assert out["attribute_weights"].sum() == pytest.approx(1.0, abs=1e-6)


def test_checkpoint_roundtrip(tmp_path):
    model = init_params(11, ModelConfig(c_harm=2, variant="no_cmaf"))
    meta = save_checkpoint(model, tmp_path / "m.ckpt", seed=11)
    assert meta.name == "m.ckpt.meta.json"
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.config == model.config
    for (n, p), (_, q) in zip(model.state_dict().items(), back.state_dict().items()):
        assert torch.equal(p, q), n
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
