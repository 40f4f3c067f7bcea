import numpy as np
import pytest
import torch

from deterra.config import TrainConfig
from deterra.errors import ArtifactError, DimensionError, InsufficientDataError
from deterra.mathcore import make_rng
from deterra.nn import (
    Kan,
    KanSpec,
    Mlp,
    MlpSpec,
    ParamVector,
    Standardizer,
    backward,
    bspline_basis,
    finite_difference_check,
    fit_scaler,
    kan_forward,
    mlp_forward,
    seeded_init,
    train_regressor,
    width_for_parity,
)
from deterra.nn.kan import uniform_grid
from deterra.nn.params import model_from_dict, model_to_dict


def cox_de_boor(x: float, knots: np.ndarray, i: int, k: int) -> float:
    if k == 0:
        return 1.0 if knots[i] <= x < knots[i + 1] else 0.0
    left = (x - knots[i]) / (knots[i + k] - knots[i]) * cox_de_boor(x, knots, i, k - 1)
    right = (knots[i + k + 1] - x) / (knots[i + k + 1] - knots[i + 1]) * cox_de_boor(x, knots, i + 1, k - 1)
    return left + right


def test_bspline_matches_scalar_recursion():
    grid = uniform_grid(1, 10, 3, -1.0, 1.0)
    knots = grid[0].numpy()
    xs = np.linspace(-1.0, 0.999, 57)
    got = bspline_basis(torch.as_tensor(xs).reshape(-1, 1), grid, 3)[:, 0, :].numpy()
    ref = np.array([[cox_de_boor(x, knots, i, 3) for i in range(13)] for x in xs])
    np.testing.assert_allclose(got, ref, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_bspline_partition_of_unity(order):
    grid = uniform_grid(3, 7, order, -2.0, 3.0)
    x = torch.as_tensor(make_rng(order).uniform(-4.0, 5.0, size=(200, 3)))
    total = bspline_basis(x, grid, order).sum(dim=-1)
    np.testing.assert_allclose(total.numpy(), 1.0, atol=1e-12)


def test_kan_spec_param_count():
    spec = KanSpec([4, 3, 1], grid_size=5, spline_order=3)
    kan = Kan(spec)
    assert sum(p.numel() for p in kan.parameters()) == spec.param_count()


def test_kan_spec_rejects_bad_grid():
    with pytest.raises(ValueError):
        KanSpec([2, 1], grid_range=[1.0, -1.0])


def _squared_output(model, x):
    return lambda: torch.sum(model(x) ** 2)


def test_mlp_gradient_check():
    with seeded_init(1):
        mlp = Mlp(MlpSpec([4, 8, 8, 1], activation="silu"))
    x = torch.as_tensor(make_rng(2).standard_normal((16, 4)))
    assert finite_difference_check(mlp, _squared_output(mlp, x), make_rng(3)) <= 1e-4


def test_kan_gradient_check():
    with seeded_init(1):
        kan = Kan(KanSpec([4, 3, 1], grid_size=5))
    x = torch.as_tensor(make_rng(2).uniform(-0.9, 0.9, size=(16, 4)))
    assert finite_difference_check(kan, _squared_output(kan, x), make_rng(3)) <= 1e-4


def test_backward_input_gradient_matches_central_differences():
    with seeded_init(4):
        mlp = Mlp(MlpSpec([3, 5, 1]))
    x = torch.as_tensor(make_rng(5).standard_normal((1, 3)))
    grads = backward(mlp, lambda y: y.sum(), x)
    assert grads.params.shape == (ParamVector.of(mlp).values.size,)
    h = 1e-6
    with torch.no_grad():
        for j in range(3):
            e = torch.zeros_like(x)
            e[0, j] = h
            numeric = (mlp(x + e).sum() - mlp(x - e).sum()).item() / (2 * h)
            assert grads.inputs[0, j] == pytest.approx(numeric, rel=1e-6, abs=1e-9)


def test_scaler_maps_range_and_constant_dims():
    data = np.array([[0.0, 5.0, 2.0], [10.0, 5.0, 4.0]])
    scaler = fit_scaler(data)
    np.testing.assert_allclose(scaler.apply(data), [[-1.0, 0.0, -1.0], [1.0, 0.0, 1.0]])
    np.testing.assert_allclose(scaler.apply(np.array([5.0, 7.0, 3.0])), [0.0, 0.0, 0.0])


def test_scaler_rejects_empty():
    with pytest.raises(InsufficientDataError):
        fit_scaler(np.empty((0, 2)))


def test_standardizer_constant_target():
    std = Standardizer.fit(np.full(10, 3.0))
    assert std.std == 1.0
    np.testing.assert_allclose(std.apply(np.full(3, 3.0)), 0.0)


def test_width_for_parity():
    # two hidden layers of width w: w^2 + 7w + 1 parameters for 4 -> 1
    assert width_for_parity(4, 1, 1000) == 28
    assert MlpSpec([4, 28, 28, 1]).param_count() == 28 * 28 + 7 * 28 + 1


def test_param_vector_shape_mismatch():
    vec = ParamVector.of(Mlp(MlpSpec([4, 8, 1])))
    with pytest.raises(DimensionError):
        vec.load_into(Mlp(MlpSpec([4, 9, 1])))


def test_param_vector_truncated_payload():
    data = ParamVector.of(Mlp(MlpSpec([2, 3, 1]))).to_dict()
    data["shapes"].append(["extra", [4]])
    with pytest.raises(ArtifactError):
        ParamVector.from_dict(data)


def test_kan_dict_keeps_placed_grids():
    with seeded_init(6):
        kan = Kan(KanSpec([2, 3, 1], grid_size=4, grid_eps=0.5))
    x = torch.as_tensor(make_rng(6).uniform(-1.0, 1.0, size=(100, 2)))
    kan.place_grids(x)
    restored = model_from_dict(model_to_dict(kan))
    with torch.no_grad():
        np.testing.assert_array_equal(restored(x).numpy(), kan(x).numpy())


def test_model_dict_rejects_unknown_version():
    data = model_to_dict(Mlp(MlpSpec([2, 3, 1])))
    data["version"] = 99
    with pytest.raises(ArtifactError):
        model_from_dict(data)


def test_seeded_init_is_deterministic_and_isolated():
    spec = MlpSpec([3, 4, 2])
    with seeded_init(9):
        a = ParamVector.of(Mlp(spec)).values
    with seeded_init(9):
        b = ParamVector.of(Mlp(spec)).values
    np.testing.assert_array_equal(a, b)

    torch.manual_seed(0)
    expected = torch.rand(1)
    torch.manual_seed(0)
    with seeded_init(10):
        Mlp(spec)
    assert torch.rand(1).item() == expected.item()


def test_train_regressor_rejects_mismatched_lengths():
    with pytest.raises(InsufficientDataError):
        train_regressor(Mlp(MlpSpec([2, 4, 1])), np.zeros((5, 2)), np.zeros(4), TrainConfig(epochs=1))


@pytest.mark.slow
def test_mlp_learns_linear_target():
    rng = make_rng(21)
    x = rng.uniform(-1.0, 1.0, size=(1000, 2))
    y = x[:, 0] + x[:, 1]
    with seeded_init(21):
        mlp = Mlp(MlpSpec([2, 16, 16, 1]))
    cfg = TrainConfig(lr=5e-3, epochs=300, batch_size=64, seed=21)
    fit = train_regressor(mlp, x, y, cfg)

    x_new = make_rng(22).uniform(-0.95, 0.95, size=(500, 2))
    raw_mae = np.mean(np.abs(fit.predict(x_new) - x_new.sum(axis=1)))
    assert raw_mae < 0.01
    assert fit.test_mae < 0.02
    assert fit.history[-1] < fit.history[0]


@pytest.mark.slow
def test_train_regressor_is_deterministic():
    x = make_rng(30).uniform(-1.0, 1.0, size=(200, 3))
    y = np.sin(x[:, 0]) + x[:, 2]
    cfg = TrainConfig(lr=1e-2, epochs=5, batch_size=32, seed=4)
    fits = []
    for _ in range(2):
        with seeded_init(4):
            kan = Kan(KanSpec([3, 2, 1], grid_size=4))
        fits.append(train_regressor(kan, x, y, cfg))
    assert fits[0].test_mae == fits[1].test_mae
    np.testing.assert_array_equal(fits[0].predict(x[:5]), fits[1].predict(x[:5]))


def test_forward_helpers_match_module_call():
    x = torch.as_tensor(make_rng(40).uniform(-1.0, 1.0, size=(7, 3)))
    mlp = Mlp(MlpSpec([3, 5, 2]))
    kan = Kan(KanSpec([3, 2, 2], grid_size=3))
    with torch.no_grad():
        assert mlp_forward(mlp, x).shape == (7, 2)
        np.testing.assert_array_equal(mlp_forward(mlp, x).numpy(), mlp(x).numpy())
        np.testing.assert_array_equal(kan_forward(kan, x).numpy(), kan(x).numpy())
