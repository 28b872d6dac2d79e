import numpy as np
import pytest

from hhe.data import SynthConfig, generate_synthetic
from hhe.errors import DegenerateDataset, DimensionMismatch, FormatError, InvalidArchitecture, ShapeMismatch
from hhe.losses import LossConfig, orthogonality_score
from hhe.model import forward, init_network, load_model, save_model
from hhe.optim import Adam, NesterovSGD, StageSchedule
from hhe.training import LOG_COLUMNS, TrainConfig, train


def naive_forward(net, x):
    a = [list(row) for row in x]
    for w, b in net.hidden:
        out = []
        for row in a:
            z = [sum(row[k] * w[k, j] for k in range(w.shape[0])) + b[j] for j in range(w.shape[1])]
            out.append([max(v, 0.0) for v in z])
        a = out
    e = net.embed
    return np.array([[sum(row[k] * e[k, j] for k in range(e.shape[0])) for j in range(e.shape[1])] for row in a])


class TestInit:
    def test_deterministic(self):
        a, b = init_network((8, 16, 8), 4, 3), init_network((8, 16, 8), 4, 3)
        for k, v in a.parameters().items():
            assert v.tobytes() == b.parameters()[k].tobytes()

    def test_shapes(self):
        net = init_network((8, 16, 8), 4, 0)
        assert net.embed.shape == (16, 8)
        assert net.classifier.shape == (4, 8)
        assert net.hidden[0][0].shape == (8, 16) and net.hidden[0][1].shape == (16,)

    def test_linear_only(self):
        net = init_network((5, 3), 2, 0)
        assert net.hidden == [] and net.embed.shape == (5, 3)
        x = np.ones((2, 5))
        np.testing.assert_allclose(forward(net, x), x @ net.embed)

    def test_he_variance(self):
        net = init_network((400, 300, 200), 2, 0)
        assert np.var(net.hidden[0][0]) == pytest.approx(2 / 400, rel=0.02)
        assert np.var(net.embed) == pytest.approx(2 / 300, rel=0.02)
        assert not np.any(net.hidden[0][1])

    @pytest.mark.parametrize("dims,k", [((8,), 3), ((8, 0, 4), 3), ((8, 4), 1)])
    def test_invalid(self, dims, k):
        with pytest.raises(InvalidArchitecture):
            init_network(dims, k, 0)


class TestForward:
    def test_zero_input_linear(self):
        net = init_network((4, 3), 2, 0)
        assert not np.any(forward(net, np.zeros((2, 4))))

    def test_identity_net(self):
        net = init_network((3, 3, 3), 2, 0)
        net.hidden[0] = (np.eye(3), np.zeros(3))
        net.embed = np.eye(3)
        x = np.array([[1.0, 2.0, 3.0], [0.5, 0.0, 4.0]])
        np.testing.assert_array_equal(forward(net, x), x)

    def test_matches_naive_loops(self, rng):
        net = init_network((5, 7, 6, 3), 4, 1)
        for w, b in net.hidden:
            b[:] = rng.normal(size=b.shape)
        x = rng.normal(size=(4, 5))
        np.testing.assert_allclose(forward(net, x), naive_forward(net, x), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            forward(init_network((4, 3), 2, 0), np.zeros((2, 5)))


class TestModelFile:
    def test_round_trip(self, tmp_path):
        net = init_network((6, 5, 4, 3), 4, 9)
        net.meta["variant"] = "JAL_o"
        save_model(net, tmp_path / "m.hhem")
        back = load_model(tmp_path / "m.hhem")
        assert back.meta == net.meta
        for k, v in net.parameters().items():
            assert back.parameters()[k].tobytes() == v.tobytes()

    def test_truncated(self, tmp_path):
        save_model(init_network((3, 2), 2, 0), tmp_path / "m.hhem")
        text = (tmp_path / "m.hhem").read_text().splitlines()
        (tmp_path / "bad.hhem").write_text("\n".join(text[:-1]) + "\n")
        with pytest.raises(FormatError):
            load_model(tmp_path / "bad.hhem")

    def test_bad_header(self, tmp_path):
        (tmp_path / "bad.hhem").write_text("NOPE v1\n")
        with pytest.raises(FormatError, match="line 1"):
            load_model(tmp_path / "bad.hhem")


class TestOptimizers:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        opt = Adam(StageSchedule())
        opt.step(p, {"w": np.zeros(2)}, 0)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])
        assert opt.t == 1

    def test_adam_first_step(self):
        # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        g, lr, eps = 0.37, 1e-3, 1e-8
        p = {"w": np.array([0.5])}
        Adam(StageSchedule(base_lr=lr), eps=eps).step(p, {"w": np.array([g])}, 0)
        assert p["w"][0] == pytest.approx(0.5 - lr * g / (g + eps), abs=1e-15)

    def test_adam_second_step_constant_gradient(self):
        g, lr = -2.0, 1e-2
        p = {"w": np.array([0.0])}
        opt = Adam(StageSchedule(base_lr=lr))
        for _ in range(2):
            opt.step(p, {"w": np.array([g])}, 0)
        assert p["w"][0] == pytest.approx(2 * lr * 2.0 / (2.0 + 1e-8), rel=1e-12)

    def test_nesterov_first_step(self):
        p = {"w": np.array([1.0])}
        NesterovSGD(StageSchedule(base_lr=0.1), momentum=0.9).step(p, {"w": np.array([2.0])}, 0)
        assert p["w"][0] == pytest.approx(1.0 - 0.1 * (2.0 + 0.9 * 2.0))

    def test_schedule_drops_tenfold(self):
        s = StageSchedule(base_lr=1e-3, stage_epochs=(30, 10, 10))
        assert s.lr_at(29) == 1e-3
        assert s.lr_at(30) == pytest.approx(1e-4, rel=1e-15)
        assert s.lr_at(39) / s.lr_at(40) == pytest.approx(10.0)
        assert s.lr_at(10_000) == pytest.approx(1e-5)
        assert s.total_epochs == 50

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            Adam(StageSchedule()).step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0)
        with pytest.raises(ShapeMismatch):
            NesterovSGD(StageSchedule()).step({"w": np.zeros(2)}, {}, 0)


@pytest.fixture(scope="module")
def small_data():
    return generate_synthetic(SynthConfig(num_ids=8, samples_per_id=8, num_cameras=2, dim=12, seed=4))


def _cfg(variant="JAL_o", epochs=(6, 2, 2), **loss):
    return TrainConfig(loss=LossConfig(variant=variant, **loss), hidden=(16,), d_embed=6, P=4, N=3, stage_epochs=epochs)


class TestTrain:
    def test_zero_epochs(self, small_data):
        net, log = train(small_data, _cfg(epochs=(0, 0, 0)), 5)
        ref = init_network((12, 16, 6), 8, 5)
        assert log == []
        for k, v in ref.parameters().items():
            assert net.parameters()[k].tobytes() == v.tobytes()

    def test_deterministic(self, small_data):
        a, la = train(small_data, _cfg(), 1)
        b, lb = train(small_data, _cfg(), 1)
        assert la == lb
        for k, v in a.parameters().items():
            assert b.parameters()[k].tobytes() == v.tobytes()

    def test_log_columns(self, small_data):
        _, log = train(small_data, _cfg(), 0)
        assert len(log) == 10
        assert [e["epoch"] for e in log] == list(range(10))
        assert all(tuple(e) == LOG_COLUMNS for e in log)

    def test_triplet_only_has_no_classification_term(self, small_data):
        _, log = train(small_data, _cfg("T"), 0)
        assert all(e["lambda_L_ac"] == 0.0 for e in log)
        assert all(e["gamma_R_e"] == 0.0 for e in log)

    def test_classification_only_has_no_triplet_term(self, small_data):
        _, log = train(small_data, _cfg("C"), 0)
        assert all(e["L_at"] == 0.0 and e["active_triplet_fraction"] == 0.0 for e in log)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_regularizer_raises_orthogonality(self, small_data, seed):
        with_reg, _ = train(small_data, _cfg("JAL_o", (150, 20, 20), gamma=1e-2), seed)
        without, _ = train(small_data, _cfg("JAL", (150, 20, 20), gamma=1e-2), seed)
        assert orthogonality_score(with_reg.embed) > orthogonality_score(without.embed)

    @pytest.mark.parametrize("variant", ["C", "T", "C+T", "JAL", "JAL_o"])
    def test_first_stage_loss_trends_down(self, variant):
        data = generate_synthetic(SynthConfig(seed=0))
        steps = []
        cfg = TrainConfig(loss=LossConfig(variant=variant), stage_epochs=(30, 10, 10))
        train(data, cfg, 0, step_callback=lambda out: steps.append(out.value))
        first_stage = np.array(steps[: 30 * 4])
        windows = first_stage.reshape(-1, 10).mean(axis=1)
        # sanity check with slack for minibatch noise
        assert np.all(np.diff(windows) <= 0.01 * windows[0])
        assert windows[-1] < windows[0]

    def test_degenerate_dataset(self, small_data):
        single = small_data.subset(np.flatnonzero(small_data.labels == 0)[:3])
        with pytest.raises(DegenerateDataset):
            train(single, _cfg(), 0)
        lonely = small_data.subset(np.concatenate([np.flatnonzero(small_data.labels == 0), [8]]))
        with pytest.raises(DegenerateDataset):
            train(lonely, _cfg(), 0)
