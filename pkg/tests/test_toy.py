import math

import numpy as np
import pytest

from difform.errors import ValidationError
from difform.toy import KAPPAS, ToyProblem, loss_image, render_figure, run_toy, toy_eval

from conftest import fd_check


def test_eval_hand_values():
    v, g = toy_eval(ToyProblem(10.0), 1.0, 2.0)
    assert v == 41.0 and np.array_equal(g, [2.0, 40.0])
    # a quarter turn swaps the roles of the axes
    v, g = toy_eval(ToyProblem(10.0, math.pi / 2), 1.0, 2.0)
    assert v == pytest.approx(4.0 + 10.0)
    assert np.allclose(g, [20.0, 4.0])


@pytest.mark.parametrize("theta", [0.0, 0.3, math.pi / 3])
def test_gradient_matches_finite_differences(theta):
    p = ToyProblem(100.0, theta)
    x = np.array([0.7, -1.3])
    g = toy_eval(p, *x)[1]
    # the objective is quadratic, so central differences carry rounding error only
    fd = fd_check(lambda z: toy_eval(p, *z)[0], x, [0, 1], h=1e-3)
    assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-8


def test_sgd_matches_closed_form():
    eta = 0.004
    for kappa in (1.0, 10.0, 100.0):
        run = run_toy(ToyProblem(kappa), "sgd", iters=50, eta=eta)
        k = np.arange(51)
        expected = np.stack([5 * (1 - 2 * eta) ** k, 5 * (1 - 2 * eta * kappa) ** k], axis=1)
        assert np.max(np.abs(run.trajectory - expected)) < 1e-12


def test_sgd_divergence_is_flagged():
    run = run_toy(ToyProblem(1000.0), "sgd")
    assert run.diverged and run.distance == math.inf
    assert len(run.trajectory) < 1001
    ok = run_toy(ToyProblem(1.0), "sgd")
    assert not ok.diverged and ok.distance < 1e-12


@pytest.mark.parametrize("kappa", [1.0, 10.0, 100.0])
def test_sgd_is_rotation_equivariant(kappa):
    eta = 0.9 / (2 * kappa)
    base = run_toy(ToyProblem(kappa), "sgd", iters=200, eta=eta)
    p = ToyProblem(kappa, math.pi / 3)
    start = p.rotation.T @ np.array([5.0, 5.0])
    rot = run_toy(p, "sgd", iters=200, eta=eta, start=start)
    assert np.allclose(rot.trajectory @ p.rotation.T, base.trajectory, atol=1e-9)
    assert rot.distance == pytest.approx(base.distance, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("theta", [0.0, math.pi / 3])
@pytest.mark.parametrize("kappa", KAPPAS)
def test_adam_converges_for_every_kappa(kappa, theta):
    run = run_toy(ToyProblem(kappa, theta), "adam")
    assert not run.diverged and run.distance <= 1e-3


def test_validation():
    with pytest.raises(ValidationError):
        ToyProblem(0.5)
    with pytest.raises(ValidationError):
        ToyProblem(10.0, float("nan"))
    with pytest.raises(ValidationError):
        run_toy(ToyProblem(1.0), "lbfgs")
    with pytest.raises(ValidationError):
        run_toy(ToyProblem(1.0), "sgd", eta=0.0)


def test_figure_and_csv():
    p = ToyProblem(10.0, 0.4)
    run = run_toy(p, "adam", iters=100)
    img = render_figure(p, run, size=64)
    assert img.shape == (64, 64) and img.dtype == np.uint8
    assert (img == 255).any() and (img == 0).any()
    L = loss_image(p, size=65)
    assert L[32, 32] == pytest.approx(0.0)
    csv = run.to_csv().splitlines()
    assert csv[0] == "iter,x,y" and len(csv) == 102
