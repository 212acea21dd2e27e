import math

import numpy as np
import pytest

from numtag.dataset import DatasetSplit
from numtag.tagger import (
    AdamState,
    ConfigMismatch,
    CorruptCheckpoint,
    IndexOutOfVocab,
    ModelConfig,
    ShapeMismatch,
    StaleCache,
    TaggerModel,
    adam_step,
    backward,
    bigru_layer,
    forward,
    gru_direction,
    init_model,
    load_checkpoint,
    loss,
    param_count,
    param_shapes,
    predict_proba,
    save_checkpoint,
    train,
)

TINY = ModelConfig(vocab_size=30, seq_len=12, embed_dim=8, hidden_dim=6)


def zero_model(config):
    return TaggerModel(config, {k: np.zeros(s) for k, s in param_shapes(config).items()})


def test_gru_step_by_hand():
    params = {f"g.{m}_{gate}": np.zeros(s) for gate in "zrh" for m, s in (("W", (1, 2)), ("U", (2, 2)), ("b", (2,)))}
    out, _ = gru_direction(np.zeros((1, 1, 1)), params, "g", h0=np.array([[0.4, -0.2]]))
    np.testing.assert_allclose(out[0, 0], [0.2, -0.1], rtol=0, atol=1e-15)


def test_zero_weights_give_uniform_rows():
    p, _ = forward(zero_model(TINY), np.zeros(12, dtype=int))
    np.testing.assert_allclose(p, np.full((12, 3), 1 / 3), atol=1e-15)


def test_rows_sum_to_one():
    rng = np.random.default_rng(0)
    model = init_model(TINY, seed=0)
    for k in range(10):
        # scale weights up so the softmax sees large logits too
        scaled = TaggerModel(TINY, {n: v * (1 + 3 * k) for n, v in model.params.items()})
        p = predict_proba(scaled, rng.integers(0, 30, (100, 12)))
        assert np.all(np.abs(p.sum(axis=-1) - 1) < 1e-6)
        assert np.all(np.isfinite(p))


def test_loss_values():
    labels = np.array([0, 1, 2, 1])
    assert loss(np.eye(3)[labels], labels) == pytest.approx(0.0, abs=1e-12)
    assert loss(np.full((4, 3), 1 / 3), labels) == pytest.approx(1.0986122886681098, abs=1e-15)
    assert loss(np.array([[0.5, 0.25, 0.25]]), np.array([0])) == pytest.approx(0.6931471805599453, abs=1e-15)
    assert math.isfinite(loss(np.array([[0.0, 1.0, 0.0]]), np.array([0])))


def test_dense_bias_gradient_identity():
    model = init_model(TINY, seed=1)
    rng = np.random.default_rng(1)
    idx, labels = rng.integers(0, 30, (3, 12)), rng.integers(0, 3, (3, 12))
    p, cache = forward(model, idx)
    grads = backward(model, cache, labels)
    expected = (p - np.eye(3)[labels]).reshape(-1, 3).mean(axis=0)
    np.testing.assert_allclose(grads["dense.b"], expected, atol=1e-15)


def test_unused_embedding_rows_get_zero_gradient():
    model = init_model(TINY, seed=2)
    idx = np.array([[3, 4, 5, 3, 0, 0, 0, 0, 0, 0, 0, 0]])
    _, cache = forward(model, idx, train_mode=True, rng=np.random.default_rng(0))
    g = backward(model, cache, np.zeros_like(idx))["embedding"]
    unused = np.setdiff1d(np.arange(30), idx)
    assert np.all(g[unused] == 0.0)
    assert np.any(g[3] != 0.0)


def test_gradient_shapes_match_params():
    model = init_model(TINY, seed=3)
    _, cache = forward(model, np.ones((2, 12), dtype=int))
    grads = backward(model, cache, np.ones((2, 12), dtype=int))
    assert {k: v.shape for k, v in grads.items()} == {k: v.shape for k, v in model.params.items()}


def test_stale_cache_rejected():
    model = init_model(TINY, seed=3)
    _, cache = forward(model, np.ones(12, dtype=int))
    model.version += 1
    with pytest.raises(StaleCache):
        backward(model, cache, np.zeros(12, dtype=int))
    with pytest.raises(StaleCache):
        backward(init_model(TINY, seed=3), cache, np.zeros(12, dtype=int))


def test_index_out_of_vocab():
    with pytest.raises(IndexOutOfVocab):
        forward(init_model(TINY), np.array([0, 30]))


def test_adam_first_step():
    params = {"w": np.array([1.0]), "u": np.array([1.0, 1.0])}
    state = AdamState(lr=0.003)
    adam_step(params, {"w": np.array([2.0]), "u": np.array([0.5, 0.5])}, state)
    assert params["w"][0] - 1.0 == pytest.approx(-0.003 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert params["u"][0] == params["u"][1]
    assert state.t == 1


def test_adam_zero_gradient():
    params = {"w": np.array([1.5, -2.0])}
    state = AdamState()
    adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.5, -2.0])
    assert state.t == 1


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ShapeMismatch):
        adam_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, AdamState())


def test_bidirectional_symmetry():
    model = init_model(TINY, seed=4)
    params = model.params
    swapped = dict(params)
    for g in "zrh":
        for m in "WUb":
            swapped[f"gru1.fw.{m}_{g}"] = params[f"gru1.bw.{m}_{g}"]
            swapped[f"gru1.bw.{m}_{g}"] = params[f"gru1.fw.{m}_{g}"]
    x = np.random.default_rng(4).normal(size=(2, 12, 8))
    out, _ = bigru_layer(x, params, "gru1")
    out_rev, _ = bigru_layer(x[:, ::-1], swapped, "gru1")
    H = TINY.hidden_dim
    np.testing.assert_allclose(out_rev[:, ::-1, :H], out[:, :, H:], atol=1e-14)
    np.testing.assert_allclose(out_rev[:, ::-1, H:], out[:, :, :H], atol=1e-14)


def test_param_count_closed_form():
    for cfg in (TINY, ModelConfig(vocab_size=1000)):
        V, E, H, C = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.num_classes
        closed = V * E + 6 * (E * H + H * H + H) + 6 * (2 * H * H + H * H + H) + 2 * H * C + C
        assert param_count(cfg) == closed == init_model(cfg).n_params


def test_config_rejects_bad_dims():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=0)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, num_classes=4)


def test_model_rejects_wrong_shapes():
    params = init_model(TINY).params
    params["dense.b"] = np.zeros(4)
    with pytest.raises(ConfigMismatch):
        TaggerModel(TINY, params)


def test_inference_is_pure_and_dropout_train_only():
    model = init_model(TINY, seed=5)
    idx = np.random.default_rng(5).integers(0, 30, (4, 12))
    a, b = predict_proba(model, idx), predict_proba(model, idx)
    assert np.array_equal(a, b)
    t1, _ = forward(model, idx, train_mode=True, rng=np.random.default_rng(0))
    t2, _ = forward(model, idx, train_mode=True, rng=np.random.default_rng(1))
    assert not np.array_equal(t1, t2)


def _toy_split(n=24, seed=0):
    from numtag.dataset import TrainingInstance

    rng = np.random.default_rng(seed)
    insts = []
    for _ in range(n):
        idx = rng.integers(1, 30, 12)
        labels = np.where(idx < 6, 1, np.where(idx > 25, 2, 0))
        insts.append(TrainingInstance(["w"] * 12, labels.tolist(), {}, idx.tolist()))
    return DatasetSplit(insts[: n - 4], insts[n - 4:], seed)


def test_training_reduces_loss_and_is_deterministic():
    split = _toy_split()
    runs = []
    for _ in range(2):
        model = init_model(TINY, seed=6)
        history = train(model, split, epochs=5, batch_size=8, seed=6, validate_on_test=True)
        runs.append((history, model))
    (h1, m1), (h2, m2) = runs
    assert h1 == h2
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)
    assert len(h1) == 5 and "val_dice" in h1[0]
    initial = init_model(TINY, seed=6)
    from numtag.dataset import as_arrays
    from numtag.tagger import batch_loss

    x, y = as_arrays(split.train)
    assert h1[-1]["train_loss"] < batch_loss(initial, predict_proba(initial, x), x, y)


def test_validation_holdout():
    history = train(init_model(TINY, seed=7), _toy_split(), epochs=1, batch_size=8, val_fraction=0.25)
    assert "val_loss" in history[0]


def test_float32_trains():
    cfg = ModelConfig(vocab_size=30, seq_len=12, embed_dim=8, hidden_dim=6, dtype="float32")
    model = init_model(cfg, seed=8)
    train(model, _toy_split(), epochs=1, batch_size=8)
    assert all(v.dtype == np.float32 for v in model.params.values())


def test_empty_split():
    from numtag.tagger import EmptySplit

    with pytest.raises(EmptySplit):
        train(init_model(TINY), DatasetSplit([], [], 0))


def test_checkpoint_round_trip(tmp_path):
    model = init_model(TINY, seed=9, vocab_hash="abc")
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt", vocab_hash="abc")
    assert back.config == model.config and back.vocab_hash == "abc"
    assert all(back.params[k].tobytes() == v.tobytes() for k, v in model.params.items())
    with pytest.raises(ConfigMismatch):
        load_checkpoint(tmp_path / "m.ckpt", vocab_hash="xyz")


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(TINY), path)
    data = path.read_bytes()
    for bad in (data[:-10], data[:20], b"NOTACKPT" + data[8:], data[:-1] + bytes([data[-1] ^ 1])):
        path.write_bytes(bad)
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)
