import math
from dataclasses import replace

import numpy as np
import pytest

from hopelab import numerics as nx
from hopelab.encodings import EncodingConfig
from hopelab.numerics import GradTape, Tensor, backward
from hopelab.toylm import (
    BOS, SEP, AdamW, Dataset, EvalReport, ModelConfig, ModelFileError, TaskSpec, TrainRecipe,
    TrainingDiverged, build_model, eval_perplexity, expected_param_count, extrapolation_report,
    forward, load_dataset, load_model, loss_fn, param_count, run_single, save_dataset, save_model,
    synth_task, train,
)


def tiny(variant="hope", **kw):
    enc = EncodingConfig(head_dim=4, variant=variant)
    base = dict(layers=1, n_heads=2, head_dim=4, ffn_dim=16, vocab_size=16, train_len=16, encoder=enc)
    base.update(kw)
    return ModelConfig(**base)


TINY_TASK = TaskSpec(n_train=32, n_eval=4)


# ---------------------------------------------------------------- model

def test_same_seed_same_parameters():
    a, b = build_model(tiny(), 3), build_model(tiny(), 3)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    c = build_model(tiny(), 4)
    assert not np.array_equal(a.params["embed"].data, c.params["embed"].data)


def test_parameter_count_formula():
    cfg = ModelConfig()            # D=32, F=128, V=32, 2 layers, untied
    per_block = 4 * 32 * 32 + 2 * 32 * 128 + 128 + 3 * 32
    assert expected_param_count(cfg) == 32 * 32 + 2 * per_block + 32 + 32 * 32 == 27104
    assert param_count(build_model(cfg, 0)) == 27104
    tied = replace(cfg, tied_embeddings=True)
    assert param_count(build_model(tied, 0)) == expected_param_count(tied) == 27104 - 1024


def test_desk_scale_defaults():
    c = ModelConfig()
    assert (c.layers, c.n_heads, c.head_dim, c.ffn_dim, c.train_len) == (2, 2, 16, 128, 64)


def test_forward_on_zeros_is_finite():
    m = build_model(ModelConfig(), 0)
    logits = forward(m, np.zeros((2, 64), dtype=int))
    assert logits.shape == (2, 64, 32) and np.all(np.isfinite(logits.data))


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(head_dim=8)            # encoder default head_dim is 16
    with pytest.raises(ValueError):
        tiny(layers=0)


@pytest.mark.parametrize("variant", ["hope", "rope", "alibi", "sinusoidal", "nope"])
def test_causal_lm_contract(variant):
    m = build_model(tiny(variant), 0)
    rng = np.random.default_rng(0)
    toks = rng.integers(0, 16, size=(1, 16))
    base = forward(m, toks).data
    for t in (0, 7, 14):
        alt = toks.copy()
        alt[0, t + 1:] = rng.integers(0, 16, size=15 - t)
        np.testing.assert_allclose(forward(m, alt).data[0, :t + 1], base[0, :t + 1], atol=1e-12)


def test_full_model_gradients_match_finite_differences():
    m = build_model(tiny(), 1)
    rng = np.random.default_rng(1)
    toks = rng.integers(0, 16, size=(2, 9))
    mask = np.ones(toks.shape)
    with GradTape() as tape:
        loss = loss_fn(m, toks, mask)
    grads = backward(tape, loss, wrt=list(m.params.values()))
    for name in ("embed", "blocks.0.wq", "blocks.0.norm1", "blocks.0.b1", "head"):
        p = m.params[name]
        coords = rng.choice(p.data.size, size=min(6, p.data.size), replace=False)

        def f(t, name=name):
            arrays = m.numpy_params()
            arrays[name] = t.data
            return loss_fn(m.with_params(arrays), toks, mask)
        num = nx.numeric_grad(f, p.data, 1e-5, coords).reshape(-1)[coords]
        ana = grads[p].reshape(-1)[coords]
        assert nx.relative_error(ana, num) <= 1e-5, name


# ----------------------------------------------------------------- data

def test_copy_task_halves():
    ds = synth_task("copy", 1, 5, 8, 16)
    assert ds.tokens.shape == (5, 8)
    for row in ds.tokens:
        assert row[0] == BOS and row[4] == SEP
        np.testing.assert_array_equal(row[1:4], row[5:8])
    np.testing.assert_array_equal(ds.mask[0], [0, 0, 0, 0, 0, 1, 1, 1])


def test_recall_answer_appears_earlier():
    ds = synth_task("recall", 2, 50, 20, 32)
    for row, mask in zip(ds.tokens, ds.mask):
        assert mask[-1] == 1 and mask[:-1].sum() == 0
        assert row[-1] in row[:-3]
        key = row[-2]
        pos = list(row[1:-3:2]).index(key)
        assert row[2 + 2 * pos] == row[-1]


def test_two_seeds_rarely_share_payloads():
    n, vocab, length = 300, 64, 8
    a = synth_task("copy", 1, n, length, vocab).tokens[:, 1:4]
    b = synth_task("copy", 2, n, length, vocab).tokens[:, 1:4]
    seen = {tuple(r) for r in a}
    rate = sum(tuple(r) in seen for r in b) / n
    birthday = n / (vocab - 2) ** 3          # expected hit rate under independence
    assert rate <= 0.01 and rate <= 10 * birthday + 1 / n


def test_synth_is_deterministic_and_stitches_episodes():
    a = synth_task("copy", 5, 3, 64, 32, episode_len=16)
    b = synth_task("copy", 5, 3, 64, 32, episode_len=16)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    assert np.all(a.tokens[:, ::16] == BOS)


def test_synth_rejects_bad_arguments():
    with pytest.raises(ValueError):
        synth_task("copy", 0, 2, 6, 16)
    with pytest.raises(ValueError):
        synth_task("sort", 0, 2, 16, 16)
    with pytest.raises(ValueError):
        synth_task("copy", 0, 2, 30, 16, episode_len=16)


def test_dataset_file_round_trip(tmp_path):
    ds = synth_task("recall", 3, 4, 12, 16)
    p = save_dataset(ds, tmp_path / "d.txt")
    first = p.read_text().splitlines()[0].split()
    assert len(first) == 12 and all(t.isdigit() for t in first)
    back = load_dataset(p)
    np.testing.assert_array_equal(back.tokens, ds.tokens)
    np.testing.assert_array_equal(back.mask, ds.mask)


# ---------------------------------------------------------------- train

def test_zero_learning_rate_keeps_parameters():
    m = build_model(tiny(), 0)
    ds = synth_task("copy", 0, 8, 16, 16)
    res = train(m, ds, TrainRecipe(batch_size=2, total_steps=3, learning_rate=0.0, precision="float64"))
    for k in m.params:
        np.testing.assert_array_equal(res.model.params[k].data, m.params[k].data)
    assert len(res.losses) == 3


def test_single_step_reduces_batch_loss():
    m = build_model(tiny(), 0)
    ds = synth_task("copy", 0, 1, 16, 16)
    recipe = TrainRecipe(batch_size=1, total_steps=1, learning_rate=1e-3, precision="float64")
    before = loss_fn(m, ds.tokens, ds.mask).item()
    after = loss_fn(train(m, ds, recipe).model, ds.tokens, ds.mask).item()
    assert after < before


def test_loss_trace_bit_identical_in_float64():
    ds = synth_task("copy", 0, 16, 16, 16)
    r = TrainRecipe(batch_size=4, total_steps=5, precision="float64", seed=7)
    a = train(build_model(tiny(), 7), ds, r).losses
    b = train(build_model(tiny(), 7), ds, r).losses
    assert np.array(a).tobytes() == np.array(b).tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_trace():
    ds = synth_task("copy", 0, 8, 16, 16)
    with pytest.raises(TrainingDiverged) as info:
        train(build_model(tiny(), 0), ds, TrainRecipe(batch_size=2, total_steps=50,
                                                      learning_rate=1e38, grad_clip=None))
    assert info.value.trace and not np.isfinite(info.value.trace[-1])
    assert info.value.step == len(info.value.trace) - 1


def test_train_requires_matching_length():
    with pytest.raises(ValueError, match="train_len"):
        train(build_model(tiny(), 0), synth_task("copy", 0, 4, 32, 16), TrainRecipe(total_steps=1))


def test_adamw_decays_matrices_only():
    params = {"w": Tensor(np.ones((2, 2))), "b": Tensor(np.ones(2))}
    opt = AdamW(params, lr=0.1, weight_decay=0.5)
    out = opt.step(params, {"w": np.zeros((2, 2)), "b": np.zeros(2)})
    np.testing.assert_allclose(out["w"], 0.95)
    np.testing.assert_array_equal(out["b"], 1.0)


def test_recipe_round_trip_and_validation():
    r = TrainRecipe(learning_rate=1e-4, betas=(0.8, 0.9))
    assert TrainRecipe.from_dict(r.to_dict()) == r
    assert r.optimizer == "adamw" and r.weight_decay == 0.01
    with pytest.raises(ValueError):
        TrainRecipe(precision="float16")


# ----------------------------------------------------------------- eval

def test_zero_head_gives_vocab_perplexity():
    m = build_model(tiny(), 0)
    arrays = m.numpy_params()
    arrays["head"] = np.zeros_like(arrays["head"])
    m = m.with_params(arrays)
    ds = TINY_TASK.eval_data(m.config, 0, 96)
    rep = eval_perplexity(m, ds, [16, 32, 48, 64, 80, 96])
    np.testing.assert_allclose(rep.ppl, 16.0, rtol=1e-12)
    assert rep.lengths == [16, 32, 48, 64, 80, 96]


def test_in_distribution_perplexity_matches_training_loss():
    mc = tiny()
    recipe = TrainRecipe(batch_size=8, total_steps=40, precision="float64")
    task = TaskSpec(n_train=256, n_eval=256)
    res = train(build_model(mc, 0), task.train_data(mc, 0), recipe)
    ds = task.train_data(mc, 0)
    train_nll = loss_fn(res.model, ds.tokens, ds.mask).item()
    rep = eval_perplexity(res.model, task.eval_data(mc, 0, 16), [16])
    assert rep.nll[0] == pytest.approx(train_nll, rel=0.05)


def test_eval_errors():
    m = build_model(tiny(encoder=EncodingConfig(head_dim=4, max_position=40)), 0)
    ds = TINY_TASK.eval_data(m.config, 0, 48)
    with pytest.raises(ValueError, match="max_position"):
        eval_perplexity(m, ds, [16, 48])
    with pytest.raises(ValueError, match="need 64"):
        eval_perplexity(m, ds, [64])
    with pytest.raises(ValueError):
        EvalReport([32, 16], [1.0, 1.0], [1.0, 1.0])


def test_eval_report_serialization():
    rep = EvalReport([16, 32], [0.5, 0.7], [math.exp(0.5), math.exp(0.7)], [10, 12])
    assert rep.to_csv().splitlines()[0] == "length,nll,ppl,tokens"
    assert len(rep.to_csv().splitlines()) == 3


# ------------------------------------------------------------ checkpoint

def test_checkpoint_round_trip_exact(tmp_path):
    mc = tiny()
    res, rep = run_single(mc, TrainRecipe(batch_size=4, total_steps=3), TINY_TASK, (1, 2))
    p = save_model(res.model, tmp_path / "m.bin", extra={"seed": 0})
    back, extra = load_model(p)
    assert extra == {"seed": 0} and back.config == mc
    for k in res.model.params:
        assert back.params[k].data.tobytes() == res.model.params[k].data.tobytes()
    again = eval_perplexity(back, TINY_TASK.eval_data(mc, 0, 32), [16, 32])
    assert again.ppl == rep.ppl


def test_checkpoint_layout_and_corruption(tmp_path):
    m = build_model(tiny(), 0).astype(np.float32)
    p = save_model(m, tmp_path / "m.bin")
    raw = p.read_bytes()
    assert raw[:8] == b"HOPELAB1"
    hlen = int.from_bytes(raw[8:12], "little")
    assert len(raw) - 12 - hlen == 4 * param_count(m)
    (tmp_path / "t.bin").write_bytes(raw[:-10])
    with pytest.raises(ModelFileError, match="bytes"):
        load_model(tmp_path / "t.bin")
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    (tmp_path / "f.bin").write_bytes(bytes(flipped))
    with pytest.raises(ModelFileError, match="checksum"):
        load_model(tmp_path / "f.bin")
    (tmp_path / "g.bin").write_bytes(b"NOTAMODEL" + raw[9:])
    with pytest.raises(ModelFileError, match="magic"):
        load_model(tmp_path / "g.bin")


# --------------------------------------------------------------- report

def _configs(*variants):
    return [EncodingConfig(head_dim=4, variant=v) for v in variants]


def test_single_variant_single_seed_report():
    rep = extrapolation_report(_configs("hope"), TrainRecipe(batch_size=2, total_steps=2), TINY_TASK,
                               [0], tiny(), (1, 2))
    assert rep.labels == ["hope"] and rep.mean.shape == (1, 2) and rep.std is None
    assert rep.to_csv().splitlines()[0] == "variant,16,32"


def test_report_rows_follow_input_order_and_seed_bound():
    recipe = TrainRecipe(batch_size=2, total_steps=2)
    order = ("rope", "nope", "hope")
    two = extrapolation_report(_configs(*order), recipe, TINY_TASK, [0, 1], tiny(), (1, 2))
    assert two.labels == list(order)
    assert [r["variant"] for r in two.to_dict()["rows"]] == list(order)
    three = extrapolation_report(_configs(*order), recipe, TINY_TASK, [0, 1, 2], tiny(), (1, 2))
    np.testing.assert_array_equal(three.ppl[:, :2], two.ppl)
    spread = three.ppl.max(axis=1) - three.ppl.min(axis=1)
    assert np.all(np.abs(three.mean - two.mean) <= spread + 1e-12)
    assert two.std.shape == (3, 2)


def test_report_written_as_csv_and_json(tmp_path):
    rep = extrapolation_report(_configs("hope", "rope"), TrainRecipe(batch_size=2, total_steps=1),
                               TINY_TASK, [0, 1], tiny(), (1, 2))
    c, j = rep.write(tmp_path)
    assert c.read_text().splitlines()[0] == "variant,16,32,16_std,32_std"
    assert '"per_seed_ppl"' in j.read_text()
    np.testing.assert_allclose(rep.growth(32, 16), rep.ppl[:, :, 1] / rep.ppl[:, :, 0])


def test_parallel_report_matches_serial():
    args = (_configs("hope", "rope"), TrainRecipe(batch_size=2, total_steps=2), TINY_TASK, [0],
            tiny(), (1, 2))
    serial = extrapolation_report(*args)
    parallel = extrapolation_report(*args, jobs=2)
    assert serial.to_csv() == parallel.to_csv()


@pytest.mark.slow
def test_copy_task_is_learned_with_hope_defaults():
    mc = ModelConfig()
    res = train(build_model(mc, 0), TaskSpec().train_data(mc, 0), TrainRecipe())
    assert res.final_loss < 0.2 * math.log(mc.vocab_size)
