import json
import math
from pathlib import Path

import numpy as np
import pytest

import bcrec

DATA = Path(__file__).resolve().parents[2] / "data" / "synth50" / "interactions.tsv"


@pytest.fixture(scope="module")
def split():
    ds = bcrec.load_interactions(str(DATA))
    return bcrec.split_random(ds, (0.0, 0.7, 0.1, 0.2), seed=3)


def test_dataset_basics():
    ds = bcrec.Dataset(2, 3, [(0, 0), (0, 2), (1, 2)])
    assert len(ds) == 3
    assert ds.user_pop == [2, 1]
    assert ds.item_pop == [1, 0, 2]
    assert ds.user_positives(0) == [0, 2]
    assert ds.contains(1, 2) and not ds.contains(1, 0)
    with pytest.raises(bcrec.DataError):
        bcrec.Dataset(1, 1, [(0, 5)])


def test_kl_and_partition():
    assert bcrec.kl_divergence_uniform([3, 3, 3]) == pytest.approx(0.0, abs=1e-15)
    assert bcrec.kl_divergence_uniform([1, 0]) == pytest.approx(math.log(2))
    labels = bcrec.subgroup_partition([100, 1, 50, 2, 10])
    assert set(labels) <= {"head", "mid", "tail"}
    assert labels[0] == "head"


def test_margin():
    assert bcrec.margin(1.0, 0.5) == pytest.approx(1.0)
    assert bcrec.margin(3.0, 1.0) == pytest.approx(math.pi - 1.0)
    assert bcrec.margin(1.0, 0.5, 0.5) == pytest.approx(0.5)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    users, items = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    pairs, negs = [(0, 1), (2, 3)], [[0, 4], [2, 1]]
    value, gu, gi = bcrec.bc_loss(users, items, pairs, negs, [0.2, 0.1], 0.5)
    eps = 1e-6
    for arr, grad in ((users, gu), (items, gi)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            up = bcrec.bc_loss(users, items, pairs, negs, [0.2, 0.1], 0.5)[0]
            arr[idx] = old - eps
            down = bcrec.bc_loss(users, items, pairs, negs, [0.2, 0.1], 0.5)[0]
            arr[idx] = old
            assert grad[idx] == pytest.approx((up - down) / (2 * eps), abs=1e-6)
    softmax = bcrec.softmax_loss(users, items, pairs, negs, 0.5)[0]
    zero_margin = bcrec.bc_loss(users, items, pairs, negs, [0.0, 0.0], 0.5)[0]
    assert softmax == pytest.approx(zero_margin, rel=1e-12)


def test_lightgcn_zero_layers_is_identity():
    ds = bcrec.Dataset(2, 2, [(0, 0), (1, 1), (0, 1)])
    u, i = np.eye(2), np.ones((2, 2))
    pu, pi = bcrec.lightgcn_propagate(u, i, ds, 0)
    np.testing.assert_array_equal(pu, u)
    np.testing.assert_array_equal(pi, i)


def test_train_evaluate_diagnose(split):
    cfg = {"dim": 8, "lr": 0.01, "batch_size": 128, "num_negatives": 16, "max_epochs": 3}
    res = bcrec.train(split, "mf", config=cfg)
    assert res["users"].shape == (split.train.num_users, 8)
    assert res["items"].shape == (split.train.num_items, 8)
    assert isinstance(res["extractor"], bcrec.PopularityEmbeddings)
    assert len(res["report"]["epochs"]) <= 3
    rep = bcrec.evaluate(res["users"], res["items"], split.test_imbalanced, split.train, k=10)
    assert 0.0 <= rep["overall"]["recall"] <= 1.0
    geo = bcrec.geometry_report(res["users"], res["items"], split.train)
    assert geo["compactness_sum"] > 0
    corr = bcrec.bias_correlation(res["extractor"], split.train)
    assert "pearson_item" in corr
    mat = bcrec.subgroup_angle_matrix(res["extractor"], split.train)
    json.dumps(mat)


def test_bad_config_raises(split):
    with pytest.raises(bcrec.ConfigError):
        bcrec.train(split, config={"learning_rate": 1})
    with pytest.raises(bcrec.ConfigError):
        bcrec.train(split, encoder="gat")


def test_synthesize_is_deterministic():
    a = bcrec.synthesize({"num_users": 30, "num_items": 40, "seed": 2})
    b = bcrec.synthesize({"num_users": 30, "num_items": 40, "seed": 2})
    assert a["observed"] == b["observed"]
    assert a["observed"].num_users == 30


def test_split_roundtrip(tmp_path, split):
    bcrec.write_split(str(tmp_path / "s"), split)
    back = bcrec.read_split(str(tmp_path / "s"))
    assert back.train == split.train
    assert back.test_balanced is None


def test_cli_wrapper(tmp_path):
    code, out, err = bcrec.cli(["split", "--input", str(DATA), "--out", str(tmp_path / "s")])
    assert code == 0, err
    assert (tmp_path / "s" / "run.json").exists()
    code, _, err = bcrec.cli(["train", "--loss", "focal"])
    assert code == 2 and "Usage" in err
