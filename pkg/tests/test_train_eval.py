import math

import numpy as np
import pytest

from biirra.config import TrainConfig
from biirra.data import SyntheticSpec, generate_synthetic_dataset
from biirra.encoders import Model
from biirra.train_eval import (
    LOSS_COLUMNS, AdamW, TrainingDiverged, evaluate, lr_schedule, model_config_for, rank_gallery,
    read_loss_log, rerank, run_ablation, stage_one, train, variants_for,
)
from biirra.train_eval.retrieval import gallery_from_triplets
from biirra.tensor_core import Parameter

TINY = dict(dim=16, heads=2, uni_layers=1, fusion_layers=1, proj_dim=8, mlp_ratio=2, batch_size=4)


def _setup(ds, **kw):
    cfg = TrainConfig(log_every=0, **{**TINY, **kw})
    return cfg, Model(model_config_for(cfg, ds.train, len(ds.vocab)))


# -- lr schedule ----------------------------------------------------------------------

def test_lr_schedule_published_values():
    cfg = TrainConfig.published()
    total = 1000
    warm = int(cfg.warmup_fraction * total)
    assert lr_schedule(0, total, cfg) == pytest.approx(1e-6, rel=1e-12)
    assert lr_schedule(warm, total, cfg) == pytest.approx(5e-5, rel=1e-12)
    assert lr_schedule(total, total, cfg) == pytest.approx(5e-6, rel=1e-12)


def test_lr_schedule_shape():
    cfg = TrainConfig()
    lrs = [lr_schedule(s, 200, cfg) for s in range(201)]
    peak = int(cfg.warmup_fraction * 200)
    assert all(a <= b for a, b in zip(lrs[:peak], lrs[1:peak + 1]))
    assert all(a >= b for a, b in zip(lrs[peak:], lrs[peak + 1:]))
    with pytest.raises(ValueError):
        lr_schedule(201, 200, cfg)
    with pytest.raises(ValueError):
        lr_schedule(-1, 200, cfg)


def test_adamw_decays_matrices_only():
    w, b = Parameter(np.ones((2, 2)), "w"), Parameter(np.ones(2), "b")
    w.grad, b.grad = np.zeros((2, 2)), np.zeros(2)
    AdamW([w, b], weight_decay=0.5).step(0.1)
    assert np.allclose(w.data, 0.95) and np.all(b.data == 1.0)


# -- training -------------------------------------------------------------------------

def test_zero_lr_keeps_parameters(small_dataset):
    cfg, model = _setup(small_dataset, steps=5, lr_init=0.0, lr_peak=0.0, lr_final=0.0)
    before = {n: p.data.copy() for n, p in model.params.items()}
    train(model, small_dataset.train, cfg)
    for n, p in model.params.items():
        assert np.array_equal(p.data, before[n]), n


def test_same_seed_same_log(small_dataset, tmp_path):
    logs = []
    for k in range(2):
        cfg, model = _setup(small_dataset, steps=6)
        train(model, small_dataset.train, cfg, log_path=tmp_path / f"l{k}.csv")
        logs.append((tmp_path / f"l{k}.csv").read_bytes())
    assert logs[0] == logs[1]
    rows = read_loss_log(tmp_path / "l0.csv")
    assert len(rows) == 6 and tuple(rows[0]) == LOSS_COLUMNS
    assert logs[0].splitlines()[0] == b"step,itc,a_itm,mlm,d_mim,total"


@pytest.mark.slow
def test_overfit_micro_run():
    # no filler words: masked fillers are unpredictable and would put a floor under MLM
    ds = generate_synthetic_dataset(SyntheticSpec(n_identities=10, test_identities=2, images_per_identity=2,
                                                  filler_prob=0.0, seed=2))
    assert len({t.identity for t in ds.train}) == 8
    cfg = TrainConfig(log_every=0, dim=32, proj_dim=16, steps=300)
    model = Model(model_config_for(cfg, ds.train, len(ds.vocab)))
    log = train(model, ds.train, cfg).log
    first = np.mean([r["total"] for r in log[:10]])
    last = np.mean([r["total"] for r in log[-10:]])
    assert last <= 0.5 * first


def test_nan_loss_aborts(small_dataset):
    cfg, model = _setup(small_dataset, steps=3)
    model.params["text.embed"].data[:] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(model, small_dataset.train, cfg)
    assert info.value.step == 0 and set(info.value.breakdown) == set(LOSS_COLUMNS[1:])
    assert not math.isfinite(info.value.breakdown["total"])


# -- ranking --------------------------------------------------------------------------

def test_stage_one_matches_sort_oracle():
    sim = np.array([[0.2, 0.9, 0.2, -0.1, 0.5]])
    oracle = sorted(range(5), key=lambda g: (-sim[0, g], g))
    assert stage_one(sim)[0].tolist() == oracle


def test_rerank_matches_sort_oracle():
    order = np.array([[3, 1, 4, 0, 2]])
    itm = np.array([[0.1, 0.7, 0.7, 0.2, 0.9]])
    out = rerank(order, itm, 4)[0].tolist()
    top = sorted(range(4), key=lambda j: (-itm[0, j], order[0, j]))
    assert out == [int(order[0, j]) for j in top] + [2]


def test_rerank_with_consistent_scores_is_identity():
    rng = np.random.default_rng(0)
    sim = rng.normal(size=(4, 6))
    order = stage_one(sim)
    assert np.array_equal(rerank(order, np.take_along_axis(sim, order, 1), 6), order)


@pytest.fixture(scope="module")
def ranked(small_dataset):
    cfg, model = _setup(small_dataset, steps=1)
    images, _ = gallery_from_triplets(small_dataset.test)
    queries = np.stack([t.source_tokens for t in small_dataset.test])
    return model, images, queries


def test_rank_gallery_k0_is_permutation_equivariant(ranked):
    model, images, queries = ranked
    order, sim = rank_gallery(model, queries, images, 0)
    assert np.array_equal(order, stage_one(sim))
    perm = np.random.default_rng(1).permutation(len(images))
    order_p, sim_p = rank_gallery(model, queries, images[perm], 0)
    assert np.allclose(sim_p, sim[:, perm])
    assert np.array_equal(perm[order_p], order)


def test_rank_gallery_rerank_keeps_tail(ranked):
    model, images, queries = ranked
    order0, _ = rank_gallery(model, queries, images, 0)
    order2, _ = rank_gallery(model, queries, images, 2)
    assert np.array_equal(order0[:, 2:], order2[:, 2:])
    assert np.array_equal(np.sort(order0[:, :2]), np.sort(order2[:, :2]))


def test_rank_gallery_errors(ranked):
    model, images, queries = ranked
    with pytest.raises(ValueError):
        rank_gallery(model, queries, images[:0], 0)
    with pytest.raises(ValueError):
        rank_gallery(model, queries, images, len(images) + 1)


def test_report_invariants_and_determinism(small_dataset, ranked):
    model = ranked[0]
    a, b = evaluate(model, small_dataset.test, 4), evaluate(model, small_dataset.test, 4)
    assert a.to_json() == b.to_json()
    for s in a.languages.values():
        assert 0 <= s.r1 <= s.r5 <= s.r10 <= 1 and 0 <= s.map <= 1
    assert a.stage == "reranked" and evaluate(model, small_dataset.test, 0).stage == "itc_only"


# -- ablation -------------------------------------------------------------------------

def test_ablation_axes_shape():
    comp = variants_for("components")
    assert [v.label for v in comp] == ["1", "2", "3", "4", "5", "6"]
    assert [(v.flags["MLM"], v.flags["D-MIM"]) for v in comp if v.implemented] == [
        (False, False), (False, True), (True, False), (True, True)]
    assert [v.label for v in variants_for("masking")] == ["Random", "Gridwise", "Blockwise"]
    assert len(variants_for("itm_inputs")) == 7
    assert len(variants_for("hyper", {"p_txt": (0.2, 0.4)})) == 2
    with pytest.raises(ValueError):
        variants_for("nope")


def test_single_variant_equals_direct_run(small_dataset):
    cfg = TrainConfig(log_every=0, steps=3, **TINY)
    table = run_ablation(cfg, "masking", small_dataset.train, small_dataset.test, len(small_dataset.vocab),
                         only={"Random"})
    assert len(table.rows) == 1
    direct_cfg = cfg.replace(image_mask_strategy="random")
    model = Model(model_config_for(direct_cfg, small_dataset.train, len(small_dataset.vocab)))
    train(model, small_dataset.train, direct_cfg)
    assert table.rows[0].report.to_json() == evaluate(model, small_dataset.test, cfg.rerank_k, cfg.rerank_blend).to_json()
    md = table.to_markdown().splitlines()
    assert md[0].startswith("| Variant |") and "source:R@1" in md[0] and len(md) == 3


def test_not_implemented_rows_render(small_dataset):
    cfg = TrainConfig(log_every=0, steps=1, **TINY)
    table = run_ablation(cfg, "components", small_dataset.train, small_dataset.test,
                         len(small_dataset.vocab), only={"4", "5"})
    csv_rows = table.to_csv().splitlines()
    assert csv_rows[0].split(",")[:6] == ["No.", "MLM", "D-MIM", "Md-GA", "SDM", "ID"]
    assert all("not implemented" in r for r in csv_rows[1:]) and len(csv_rows) == 3
