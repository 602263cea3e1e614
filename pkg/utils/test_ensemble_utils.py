import numpy as np
import pytest

from utils.checkpoint_utils import write_dgck
from utils.ensemble_utils import (
    BaseOutputs,
    MetaConfig,
    concat_samples,
    ensemble_average,
    ensemble_traditional,
    load_meta,
    meta_predict,
    replicate_model_meta,
    save_meta,
    stack_outputs,
    train_meta_linear,
    train_meta_mlp,
)
from utils.errors import FormatError, ShapeError, TrainingError


def random_probs(n_models, n_samples, k, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.random((n_models, n_samples, k)) + 0.01
    return (raw / raw.sum(axis=2, keepdims=True)).astype(np.float32)


def informative_outputs(n=300, k=3, seed=0):
    """模型 0 输出正确的 one-hot，模型 1 输出噪声"""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, k, size=n)
    good = np.eye(k, dtype=np.float32)[labels]
    noise = random_probs(1, n, k, seed + 1)[0]
    return BaseOutputs.from_list([good, noise]), labels


# =============================================================================
# BaseOutputs / 平均 / 堆叠
# =============================================================================


class TestBaseOutputs:
    def test_row_sums_must_be_one(self):
        with pytest.raises(ShapeError):
            BaseOutputs(np.full((1, 2, 2), 0.6))

    def test_shape_mismatch_in_from_list(self):
        with pytest.raises(ShapeError):
            BaseOutputs.from_list([np.full((2, 2), 0.5), np.full((3, 2), 0.5)])

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ShapeError):
            BaseOutputs(random_probs(2, 3, 2), [1, 1])

    def test_default_ids_and_sizes(self):
        outputs = BaseOutputs(random_probs(3, 4, 5))
        assert outputs.model_ids == [0, 1, 2]
        assert (outputs.n_models, outputs.n_samples, outputs.num_classes) == (3, 4, 5)

    def test_concat_samples(self):
        probs = random_probs(2, 5, 3)
        joined = concat_samples([BaseOutputs(probs[:, :2]), BaseOutputs(probs[:, 2:])])
        np.testing.assert_array_equal(joined.probs, probs)

    def test_concat_requires_same_ids(self):
        probs = random_probs(2, 4, 3)
        with pytest.raises(ShapeError):
            concat_samples([BaseOutputs(probs, [0, 1]), BaseOutputs(probs, [0, 2])])


class TestAverage:
    def test_two_opposite_models_average_to_half(self):
        outputs = BaseOutputs.from_list([np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])])
        np.testing.assert_allclose(ensemble_average(outputs), [[0.5, 0.5]])

    def test_single_model_is_identity(self):
        probs = random_probs(1, 6, 4)
        np.testing.assert_allclose(ensemble_average(BaseOutputs(probs)), probs[0], atol=1e-7)

    def test_rows_sum_to_one(self):
        np.testing.assert_allclose(ensemble_average(BaseOutputs(random_probs(5, 10, 3))).sum(axis=1), 1.0, atol=1e-6)

    def test_traditional_ensemble_is_equal_weight(self):
        a, b, c = np.eye(3, dtype=np.float32)[[0]], np.eye(3, dtype=np.float32)[[1]], np.eye(3, dtype=np.float32)[[1]]
        np.testing.assert_allclose(ensemble_traditional(a, b, c), [[1 / 3, 2 / 3, 0.0]], atol=1e-6)


class TestAverageProperties:
    """1000 组随机输出上的平均融合性质"""

    @pytest.fixture(scope="class")
    def fixtures(self):
        cases = []
        for i in range(1000):
            rng = np.random.default_rng(i)
            n_models, n_samples, k = rng.integers(1, 8), rng.integers(1, 6), rng.integers(2, 11)
            cases.append((random_probs(n_models, n_samples, k, seed=i), i))
        return cases

    def test_copies_of_one_model_average_to_itself(self, fixtures):
        for probs, seed in fixtures:
            rng = np.random.default_rng(seed + 1000)
            copies = np.repeat(probs[:1], rng.integers(1, 8), axis=0)
            np.testing.assert_array_equal(ensemble_average(BaseOutputs(copies)), probs[0])

    def test_model_order_does_not_matter(self, fixtures):
        for probs, seed in fixtures:
            rng = np.random.default_rng(seed + 1000)
            order = rng.permutation(probs.shape[0])
            np.testing.assert_allclose(
                ensemble_average(BaseOutputs(probs[order])), ensemble_average(BaseOutputs(probs)), atol=1e-6
            )

    def test_rows_sum_to_one(self, fixtures):
        for probs, _ in fixtures:
            np.testing.assert_allclose(ensemble_average(BaseOutputs(probs)).sum(axis=1), 1.0, atol=1e-5)

    def test_argmax_follows_class_permutation(self, fixtures):
        for probs, seed in fixtures:
            rng = np.random.default_rng(seed + 1000)
            perm = rng.permutation(probs.shape[2])
            plain = np.argmax(ensemble_average(BaseOutputs(probs)), axis=1)
            permuted = np.argmax(ensemble_average(BaseOutputs(probs[:, :, perm])), axis=1)
            np.testing.assert_array_equal(perm[permuted], plain)

    def test_traditional_is_average_of_three(self, fixtures):
        for probs, seed in fixtures:
            rng = np.random.default_rng(seed + 1000)
            rf, svm, lr = (random_probs(1, probs.shape[1], probs.shape[2], seed=int(s))[0]
                           for s in rng.integers(0, 2 ** 31, size=3))
            np.testing.assert_array_equal(
                ensemble_traditional(rf, svm, lr), ensemble_average(BaseOutputs.from_list([rf, svm, lr]))
            )


def test_stack_orders_models_by_id():
    probs = random_probs(3, 2, 2)
    stacked = stack_outputs(BaseOutputs(probs, [2, 0, 1]))
    assert stacked.shape == (2, 6)
    np.testing.assert_array_equal(stacked[0], np.concatenate([probs[1, 0], probs[2, 0], probs[0, 0]]))


# =============================================================================
# 元学习器
# =============================================================================


class TestMetaLearners:
    @pytest.mark.parametrize("trainer", [train_meta_linear, train_meta_mlp])
    def test_learns_to_trust_informative_model(self, trainer):
        outputs, labels = informative_outputs()
        config = MetaConfig(epochs=30, batch_size=64, lr=0.1, momentum=0.9, hidden_units=16, seed=0)
        meta = trainer(outputs, labels, config)
        probs = meta_predict(meta, outputs)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)
        assert np.mean(probs.argmax(axis=1) == labels) >= 0.95

    def test_parameter_shapes(self):
        outputs, labels = informative_outputs(n=20)
        linear = train_meta_linear(outputs, labels, MetaConfig(epochs=1))
        mlp = train_meta_mlp(outputs, labels, MetaConfig(epochs=1, hidden_units=8))
        assert linear.params["w1"].shape == (6, 3)
        assert mlp.params["w1"].shape == (6, 8) and mlp.params["w2"].shape == (8, 3)

    def test_same_seed_same_weights(self):
        outputs, labels = informative_outputs(n=50)
        a = train_meta_mlp(outputs, labels, MetaConfig(epochs=2, seed=4))
        b = train_meta_mlp(outputs, labels, MetaConfig(epochs=2, seed=4))
        for name in a.params:
            assert a.params[name].tobytes() == b.params[name].tobytes()

    def test_zero_epochs_keeps_initialization(self):
        outputs, labels = informative_outputs(n=10)
        meta = train_meta_linear(outputs, labels, MetaConfig(epochs=0))
        assert not meta.params["b1"].any()

    def test_label_count_mismatch_raises(self):
        outputs, labels = informative_outputs(n=10)
        with pytest.raises(ShapeError):
            train_meta_linear(outputs, labels[:5], MetaConfig(epochs=1))

    def test_negative_epochs_rejected(self):
        with pytest.raises(TrainingError):
            MetaConfig(epochs=-1)

    def test_predict_width_mismatch_raises(self):
        meta = replicate_model_meta(2, 3, 0)
        with pytest.raises(ShapeError):
            meta_predict(meta, BaseOutputs(random_probs(3, 4, 3)))


class TestReplicateModel:
    @pytest.mark.parametrize("index", [0, 2])
    def test_reproduces_chosen_model_on_one_hot_outputs(self, index):
        rng = np.random.default_rng(index)
        one_hot = np.eye(4, dtype=np.float32)[rng.integers(0, 4, size=(3, 25))]
        outputs = BaseOutputs(one_hot)
        probs = meta_predict(replicate_model_meta(3, 4, index), outputs)
        np.testing.assert_allclose(probs, one_hot[index], atol=1e-6)

    def test_index_out_of_range(self):
        with pytest.raises(ShapeError):
            replicate_model_meta(2, 3, 2)


# =============================================================================
# 检查点
# =============================================================================


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        outputs, labels = informative_outputs(n=20)
        meta = train_meta_mlp(outputs, labels, MetaConfig(epochs=1, hidden_units=8))
        path = str(tmp_path / "enm2.dgck")
        save_meta(meta, path)
        loaded = load_meta(path)
        assert (loaded.kind, loaded.hidden_units) == ("mlp", 8)
        np.testing.assert_array_equal(meta_predict(loaded, outputs), meta_predict(meta, outputs))

    def test_wrong_shapes_rejected(self, tmp_path):
        path = str(tmp_path / "bad.dgck")
        header = {"kind": "meta", "meta_kind": "linear", "n_models": 2, "num_classes": 3, "hidden_units": 0}
        write_dgck(path, header, {"w1": np.zeros((5, 3), dtype=np.float32), "b1": np.zeros(3, dtype=np.float32)})
        with pytest.raises(FormatError):
            load_meta(path)

    def test_wrong_kind_rejected(self, tmp_path):
        path = str(tmp_path / "cnn.dgck")
        write_dgck(path, {"kind": "cnn"}, {})
        with pytest.raises(FormatError):
            load_meta(path)
