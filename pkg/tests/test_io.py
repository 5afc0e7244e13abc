import json

import numpy as np
import pytest

from conerisk.io import (BundleError, bundle_from_dict, claim_from_dict, claim_to_dict, dumps,
                         flatten, model_to_dict)
from conerisk.market import RegionMarket
from conerisk.models import model_c, random_region_market


def test_cone_round_trip():
    m = model_c()
    X = np.arange(8.0).reshape(4, 2)
    data = json.loads(dumps(model_to_dict(m, {"x": X}, np.full((2, 2), 0.5))))
    b = bundle_from_dict(data)
    assert b.model.tree.ids == m.tree.ids
    for n in range(m.tree.n_nodes):
        assert np.allclose(b.model.cone_generators(n), m.cone_generators(n))
    assert np.array_equal(b.claims["x"], X)
    assert b.levels.shape == (2, 2)


def test_region_round_trip():
    m = random_region_market(np.random.default_rng(1))
    b = bundle_from_dict(model_to_dict(m))
    assert isinstance(b.model, RegionMarket)
    assert all(np.allclose(a, c) for a, c in zip(b.model.G, m.G))


def test_bundle_errors():
    data = model_to_dict(model_c())
    del data["market"]["uu"]
    with pytest.raises(BundleError, match="uu"):
        bundle_from_dict(data)
    data = model_to_dict(model_c())
    data["market"]["0"] = {"G": [[1, 1]], "h": [0], "recession": [[1, 0]]}
    with pytest.raises(BundleError, match="mixes"):
        bundle_from_dict(data)
    data = model_to_dict(model_c())
    data["market"]["0"] = {"spread": 1}
    with pytest.raises(BundleError):
        bundle_from_dict(data)


def test_claim_schema():
    tree = model_c().tree
    X = claim_from_dict({"uu": [1, 2]}, tree)
    assert X[0].tolist() == [1, 2] and not X[1:].any()
    assert claim_to_dict(X, tree)["uu"] == [1.0, 2.0]
    with pytest.raises(BundleError):
        claim_from_dict({"zz": [1, 2]}, tree)
    with pytest.raises(BundleError):
        claim_from_dict({"uu": [1]}, tree)


def test_dumps_is_deterministic_and_safe():
    obj = {"b": np.float64(np.inf), "a": [np.int64(1), -np.inf]}
    text = dumps(obj)
    assert text == dumps(dict(reversed(list(obj.items()))))
    assert json.loads(text) == {"a": [1, "-inf"], "b": "+inf"}
    assert flatten({"x": {"y": [1, 2]}}) == [("x.y[0]", 1), ("x.y[1]", 2)]
