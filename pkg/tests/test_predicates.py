import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from logltn import graph as G
from logltn.errors import GroundingError, ShapeError
from logltn.predicates import (
    Dense, PredicateModel, ProjectedPredicate, Sigmoid, Softmax, TablePredicate, cosine_predicate,
    init_model, load_model, log_forward, log_not_forward, predict_proba, save_model,
)

finite = st.floats(-60, 60)


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=finite))
def test_sigmoid_truth_and_negation_sum_to_one(z):
    t = G.Tape()
    model = PredicateModel("p", [Dense(np.eye(1), np.zeros(1), "identity")], Sigmoid())
    x = z.reshape(-1, 1)
    total = np.exp(log_forward(t, model, x).value) + np.exp(log_not_forward(t, model, x).value)
    np.testing.assert_allclose(total, 1.0, atol=1e-9)


@given(st.sampled_from([2, 5, 10]), st.data())
def test_softmax_truth_and_negation_sum_to_one(k, data):
    z = data.draw(hnp.arrays(np.float64, (3, k), elements=finite))
    cls = data.draw(hnp.arrays(np.int64, 3, elements=st.integers(0, k - 1)))
    model = PredicateModel("c", [Dense(np.eye(k), np.zeros(k), "identity")], Softmax(k))
    t = G.Tape()
    total = np.exp(log_forward(t, model, z, cls).value) + np.exp(log_not_forward(t, model, z, cls).value)
    np.testing.assert_allclose(total, 1.0, atol=1e-9)


def test_log_negation_stays_finite_for_confident_outputs():
    model = PredicateModel("c", [Dense(np.eye(3), np.zeros(3), "identity")], Softmax(3))
    t = G.Tape()
    z = np.array([[800.0, 0.0, 0.0]])
    v = log_not_forward(t, model, z, np.array([0])).value
    np.testing.assert_allclose(v, [np.log(2.0) - 800.0])


def test_init_model_shapes_and_activations():
    m = init_model([2, 16, 16, 5], Softmax(5), seed=3, name="C")
    assert m.sizes == [2, 16, 16, 5]
    assert [l.activation for l in m.layers] == ["elu", "elu", "identity"]
    assert all(np.all(l.bias == 0) for l in m.layers)
    limit = np.sqrt(6 / (2 + 16))
    assert np.abs(m.layers[0].weight).max() <= limit
    p = predict_proba(m, np.zeros((4, 2)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_model_validation():
    with pytest.raises(ShapeError):
        init_model([2, 3, 4], Softmax(5))
    with pytest.raises(ShapeError):
        init_model([2, 3, 2], Sigmoid())
    m = init_model([2, 3, 1])
    with pytest.raises(ShapeError):
        log_forward(G.Tape(), m, np.zeros((1, 3)))
    with pytest.raises(GroundingError):
        log_forward(G.Tape(), m, np.zeros((1, 2)), np.array([0]))
    s = init_model([2, 4], Softmax(4))
    with pytest.raises(GroundingError):
        log_forward(G.Tape(), s, np.zeros((1, 2)))
    with pytest.raises(GroundingError):
        log_forward(G.Tape(), s, np.zeros((1, 2)), np.array([4]))


def test_single_class_softmax_negation_is_rejected():
    m = init_model([2, 1], Softmax(1))
    with pytest.raises(GroundingError):
        log_not_forward(G.Tape(), m, np.zeros((1, 2)), np.array([0]))


def test_checkpoint_round_trip(tmp_path):
    m = init_model([3, 5, 4], Softmax(4), seed=7, name="is_digit")
    path = tmp_path / "model.npz"
    save_model(m, path)
    again = load_model(path)
    assert again.name == m.name and again.head == m.head and again.sizes == m.sizes
    x = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_array_equal(predict_proba(again, x), predict_proba(m, x))
    with np.load(path) as data:
        assert {"header", "model.layer0.weight", "model.layer1.bias"} <= set(data.files)


def test_projected_predicate_reads_its_columns():
    m = init_model([2, 1], Sigmoid(), seed=1)
    view = ProjectedPredicate(m, [2, 3])
    x = np.random.default_rng(0).standard_normal((5, 4))
    t = G.Tape()
    np.testing.assert_array_equal(view.log_truth(t, x).value, log_forward(t, m, x[:, 2:]).value)
    assert view.parameters().keys() == m.parameters().keys()


def test_table_predicate_lookup_and_gradient():
    p = TablePredicate({(0, 1): 0.3, (1, 0): 0.8}, trainable=True, name="f")
    t = G.Tape()
    v = p.truth(t, np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(v.value, [0.8, 0.3, 0.8])
    grads = G.backward(t, G.sum_reduce(v))
    np.testing.assert_allclose(grads[t.param_node(("f", "truths")).id], [1.0, 2.0])
    with pytest.raises(GroundingError):
        p.truth(G.Tape(), np.array([[2.0, 2.0]]))
    with pytest.raises(ValueError):
        TablePredicate({(0,): 1.5})


def test_cosine_predicate():
    assert cosine_predicate([1, 0], [0, 1]) == pytest.approx(0.0)
    assert cosine_predicate([1, 1], [2, 2]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cosine_predicate([0, 0], [1, 0])
