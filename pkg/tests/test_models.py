import numpy as np
import pytest

from mulfusion.errors import ConfigError
from mulfusion.models import (PROB_EPS, ModelSpec, encode, init_bundle, load_checkpoint,
                              predict_head, save_checkpoint)
from mulfusion.tensor import ShapeError

from oracles import dense_forward, softmax_row


def _layers(mlp):
    return [(l.W.data, l.b.data) for l in mlp.layers]


@pytest.mark.parametrize("kind,expected", [("early", 1), ("add", 1), ("late", 3), ("mul", 3),
                                           ("mulmix", 7)])
def test_head_count_per_kind(kind, expected):
    b = init_bundle(ModelSpec(modality_dims=(2, 3, 4)), kind, 0)
    assert len(b.heads) == expected


def test_every_parameter_registered_once():
    b = init_bundle(ModelSpec(modality_dims=(2, 3, 4), encoder_hidden=(5,)), "mulmix", 0)
    ids = [id(p) for p in b.parameters()]
    assert len(ids) == len(set(ids))
    used = [id(l.W) for mlp in list(b.encoders.values()) + b.heads for l in mlp.layers]
    used += [id(l.b) for mlp in list(b.encoders.values()) + b.heads for l in mlp.layers]
    assert sorted(used) == sorted(ids)


def test_same_seed_bit_identical():
    spec = ModelSpec(modality_dims=(3, 5), encoder_hidden=(4,))
    a, b = init_bundle(spec, "mul", 7), init_bundle(spec, "mul", 7)
    for (ka, pa), (kb, pb) in zip(a.params.items(), b.params.items()):
        assert ka == kb and np.array_equal(pa.data, pb.data)
    c = init_bundle(spec, "mul", 8)
    assert not np.array_equal(c.params["enc0.l0.W"].data, a.params["enc0.l0.W"].data)


def test_init_biases_zero_and_weights_bounded():
    b = init_bundle(ModelSpec(modality_dims=(10,), embed_dim=6, head_hidden=(8,)), "mul", 0)
    for name, p in b.params.items():
        if name.endswith(".b"):
            assert np.all(p.data == 0)
        else:
            bound = np.sqrt(6.0 / p.shape[0])
            assert np.all(np.abs(p.data) <= bound)


def test_weight_mean_zero_within_three_standard_errors():
    b = init_bundle(ModelSpec(modality_dims=(250,), embed_dim=400, head_hidden=(4,)), "mul", 3)
    w = b.params["enc0.l0.W"].data.ravel()
    assert w.size == 10**5
    bound = np.sqrt(6.0 / 250)
    se = bound / np.sqrt(3) / np.sqrt(w.size)
    assert abs(w.mean()) < 3 * se


def test_zero_dimension_layer_rejected():
    with pytest.raises(ConfigError):
        init_bundle(ModelSpec(modality_dims=(3, 0)), "mul", 0)
    with pytest.raises(ConfigError):
        init_bundle(ModelSpec(modality_dims=(3,), head_hidden=(0,)), "mul", 0)


def test_mulmix_cap():
    with pytest.raises(ConfigError, match="2\\^"):
        init_bundle(ModelSpec(modality_dims=(1,) * 9), "mulmix", 0)


# ---------------------------------------------------------------- encode

def test_encode_zero_weights_gives_zero(make_bundle):
    b = make_bundle("mul")
    for l in b.encoders[0].layers:
        l.W.data[...] = 0
        l.b.data[...] = 0
    np.testing.assert_array_equal(encode(b, 0, np.array([1.0, -2.0, 3.0])).data, np.zeros(5))


def test_encode_identity_layer_returns_input():
    b = init_bundle(ModelSpec(modality_dims=(4,), embed_dim=4, activation="linear"), "mul", 0)
    b.encoders[0].layers[0].W.data[...] = np.eye(4)
    x = np.array([0.5, -1.0, 2.0, -3.0])
    np.testing.assert_array_equal(encode(b, 0, x).data, x)


def test_encode_matches_hand_arithmetic(make_bundle):
    b = make_bundle("mul", dims=(3, 4), encoder_hidden=(6,))
    x = np.random.default_rng(0).normal(size=(5, 4))
    expected = dense_forward(x, _layers(b.encoders[1]), last_linear=False)
    np.testing.assert_allclose(encode(b, 1, x).data, expected, rtol=1e-12, atol=1e-13)


def test_encode_errors(make_bundle):
    b = make_bundle("mul")
    with pytest.raises(IndexError):
        encode(b, 2, np.zeros(3))
    with pytest.raises(ShapeError):
        encode(b, 0, np.zeros(4))


# ---------------------------------------------------------------- predict_head

def test_zero_head_is_uniform(make_bundle):
    b = make_bundle("mul")
    for l in b.heads[0].layers:
        l.W.data[...] = 0
        l.b.data[...] = 0
    np.testing.assert_array_equal(predict_head(b, 0, np.ones(5)).data, [0.5, 0.5])


def test_head_matches_softmax_of_matmul_chain(make_bundle):
    b = make_bundle("mul", K=4, head_hidden=(7, 3))
    u = np.random.default_rng(1).normal(size=(6, 5))
    logits = dense_forward(u, _layers(b.heads[1]))
    expected = [np.clip(softmax_row(z), PROB_EPS, 1 - PROB_EPS) for z in logits]
    np.testing.assert_allclose(predict_head(b, 1, u).data, expected, rtol=1e-12)


def test_head_clamp_and_sum(make_bundle):
    b = make_bundle("mul", K=3)
    b.heads[0].layers[-1].W.data *= 1e4
    p = predict_head(b, 0, np.random.default_rng(2).normal(size=(50, 5)) * 10).data
    assert p.min() >= PROB_EPS and p.max() <= 1 - PROB_EPS
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 2 * 3 * PROB_EPS)


def test_head_errors(make_bundle):
    b = make_bundle("mul")
    with pytest.raises(IndexError):
        predict_head(b, 5, np.zeros(5))
    with pytest.raises(ShapeError):
        predict_head(b, 0, np.zeros(3))


# ---------------------------------------------------------------- mulmix sharing

def test_shared_encoder_mutation_reaches_only_containing_candidates(make_bundle):
    from mulfusion.fusion import candidate_probabilities
    b = make_bundle("mulmix", dims=(3, 4, 2), K=3)
    xs = [np.random.default_rng(s).normal(size=(4, d)) for s, d in enumerate((3, 4, 2))]
    before = [p.data.copy() for p in candidate_probabilities(b, xs)]
    b.encoders[1].layers[0].W.data += 0.5
    after = [p.data for p in candidate_probabilities(b, xs)]
    for c, p0, p1 in zip(b.candidates, before, after):
        if 1 in c.members:
            assert not np.allclose(p0, p1)
        else:
            np.testing.assert_array_equal(p0, p1)


def test_unshared_encoders_per_candidate(make_bundle):
    b = make_bundle("mulmix", dims=(3, 4), shared_encoders=False)
    # candidates {0}, {1}, {0,1} -> 4 encoder instances
    assert len(b.encoders) == 4
    assert b.encoder(0, 0) is not b.encoder(0, 2)


# ---------------------------------------------------------------- checkpoints

@pytest.mark.parametrize("kind", ["early", "add", "mul", "mulmix"])
def test_checkpoint_round_trip_bit_exact(tmp_path, make_bundle, kind):
    b = make_bundle(kind, dims=(3, 4), encoder_hidden=(2,))
    for p in b.parameters():
        p.data[...] = np.random.default_rng(0).normal(size=p.shape) * np.pi * 1e-3
    path = tmp_path / "ckpt.npz"
    save_checkpoint(b, path, extra={"note": "x"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "x"} and loaded.kind == kind and loaded.spec == b.spec
    for (k, p), (k2, q) in zip(b.params.items(), loaded.params.items()):
        assert k == k2
        assert p.data.tobytes() == q.data.tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, __meta__=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ConfigError):
        load_checkpoint(path)


def test_spec_dict_round_trip():
    spec = ModelSpec(modality_dims=(3, 4), encoder_hidden=(5, 6), head_hidden=(2,), add_mode="concat")
    assert ModelSpec.from_dict(spec.to_dict()) == spec
