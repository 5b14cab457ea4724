# SPDX-License-Identifier: Apache-2.0
import math

import pytest

import rebalance as rb


def small_config(coupled=False):
    c = rb.ModelConfig()
    c.vocab_size = 13
    c.input_dim = 6
    c.output_dim = 6 if coupled else 8
    c.hidden = 8
    c.layers = 2
    c.heads = 2
    c.max_positions = 16
    c.coupled = coupled
    return c


def test_count_params_matches_live_model():
    c = small_config()
    budget = rb.count_params(c)
    m = rb.Model.build(c, 1)
    assert m.param_count() == budget["pretrain"]
    assert m.to_finetune().param_count() == budget["finetune"]
    assert budget["embedding"] == 13 * 6
    assert 0 < budget["embedding_fraction"] < 1


def test_per_layer_params_reference_value():
    c = rb.ModelConfig()
    c.vocab_size = 100
    c.input_dim = 768
    c.output_dim = 768
    c.hidden = 768
    c.layers = 12
    c.heads = 12
    assert rb.per_layer_params(c) == 7087872


def test_coupled_config_rejects_mismatched_dims():
    c = small_config()
    c.coupled = True  # output_dim stays 8 != input_dim 6
    with pytest.raises(rb.ConfigError):
        c.validate()


def test_vocab_and_segmentation():
    v = rb.Vocab.from_pieces([("aa", -1.0), ("bb", -1.5), ("ab", -1.2)])
    assert len(v) == 8  # 5 specials + 3 pieces
    assert v.piece(v.piece_id("aa")) == "aa"
    assert [v.piece(i) for i in rb.segment("aa bb", v)] == ["aa", "bb"]


def test_encode_pair_layout():
    v = rb.Vocab.from_pieces([("aa", -1.0), ("bb", -1.5)])
    ids, type_ids, special = rb.encode_pair("aa", "bb", v, 16)
    assert len(ids) == len(type_ids) == len(special)
    assert special[0] and type_ids[0] == 0
    assert type_ids[-1] == 1


def test_model_truncate_and_checkpoint_roundtrip(tmp_path):
    m = rb.Model.build(small_config(), 7)
    cut = m.truncate_layers(1)
    assert cut.config.layers == 1
    assert cut.param_count() < m.param_count()

    path = str(tmp_path / "model.ckpt")
    m.save(path)
    m2 = rb.Model.load(path)
    assert m2.param_count() == m.param_count()
    name = m.param_names()[0]
    assert name == "input_embedding"
    assert m2.param(name) == m.param(name)


def test_finetune_model_has_no_output_side():
    ft = rb.Model.build(small_config(), 7).to_finetune()
    assert not ft.has_output_side
    assert "output_embedding" not in ft.param_names()


def test_smooth_distribution():
    q = rb.smooth_distribution({"a": 90, "b": 10}, 0.5)
    assert q["a"] == pytest.approx(0.75)
    assert q["b"] == pytest.approx(0.25)
    ident = rb.smooth_distribution({"a": 90, "b": 10}, 1.0)
    assert ident["a"] == pytest.approx(0.9)


def test_spearman():
    assert rb.spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert rb.spearman([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0)
    with pytest.raises(rb.ConfigError):
        rb.spearman([1.0], [1.0])


def test_nn_translation_offset_construction():
    src = [[float(i), float(i * i % 7)] for i in range(10)]
    tgt = [[a + 3.0, b - 2.0] for a, b in src]
    assert rb.nn_translation(src, tgt) == pytest.approx(1.0)


def test_export_embeddings(tmp_path):
    m = rb.Model.build(small_config(), 3)
    path = str(tmp_path / "emb.bin")
    rb.export_embeddings(m, "input", path)
    header, payload = open(path, "rb").read().split(b"%%payload%%\n", 1)
    assert b"input_vectors" in header or b"tensor" in header
    assert len(payload) == 13 * 6 * 4

    with pytest.raises(rb.StateError):
        rb.export_embeddings(m.to_finetune(), "output", path)
