import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relu_landscape.net_core import Activation, Architecture, ContractError, Dataset, loss_mse
from relu_landscape.spectra import (EigenConvergenceError, HessianMatrix, eigenvalues, hessian, jacobi_eigh,
                                    read_hessian, write_hessian)


def random_symmetric(rng, n):
    M = rng.normal(size=(n, n))
    return 0.5 * (M + M.T)


def test_jacobi_two_by_two_by_hand():
    lam, V = jacobi_eigh(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(lam, [1.0, 3.0], atol=1e-14)
    np.testing.assert_allclose(np.abs(V[:, 1]), [2**-0.5, 2**-0.5], atol=1e-14)


def test_jacobi_diagonal_input_is_untouched():
    lam, V = jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
    assert lam.tolist() == [-1.0, 2.0, 3.0]
    assert np.array_equal(np.abs(V), np.eye(3)[:, [1, 2, 0]])


@pytest.mark.parametrize("n", [5, 40, 136])
def test_jacobi_against_lapack(n):
    rng = np.random.default_rng(n)
    M = random_symmetric(rng, n)
    lam, V = jacobi_eigh(M)
    ref = np.linalg.eigvalsh(M)
    np.testing.assert_allclose(lam, ref, atol=1e-10 * np.abs(ref).max())
    recon = V @ np.diag(lam) @ V.T
    assert np.linalg.norm(recon - M) / np.linalg.norm(M) < 1e-8
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-10)
    assert abs(lam.sum() - np.trace(M)) <= 1e-8 * np.abs(lam).sum()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_jacobi_eigenpairs(n, seed):
    M = random_symmetric(np.random.default_rng(seed), n)
    lam, V = jacobi_eigh(M)
    assert np.all(np.diff(lam) >= 0)
    np.testing.assert_allclose(M @ V, V * lam, atol=1e-9)


def test_jacobi_rejects_non_square_and_budget():
    with pytest.raises(ContractError):
        jacobi_eigh(np.zeros((2, 3)))
    with pytest.raises(EigenConvergenceError):
        jacobi_eigh(random_symmetric(np.random.default_rng(0), 30), max_sweeps=1)


def test_eigenvalues_rejects_asymmetric():
    with pytest.raises(ContractError):
        eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_spectrum_statistics():
    s = eigenvalues(np.diag([-0.001, 0.001, 0.5, 1.0]))
    assert s.min_ratio() == pytest.approx(-0.001)
    assert s.small_fraction() == 0.5
    assert s.to_csv().splitlines()[0] == "index,eigenvalue"


@pytest.fixture(scope="module")
def small_net():
    rng = np.random.default_rng(7)
    arch = Architecture(2, 3)
    w = rng.normal(size=arch.param_count)
    xs = np.linspace(-1, 1, 9)
    return arch, w, Dataset(xs, np.sin(3 * xs))


def test_hessian_matches_second_differences_of_loss(small_net):
    # independent oracle: second differences of the loss value itself, coarse step
    arch, w, data = small_net
    beta = 50.0
    H = hessian(arch, w, data, sharpness=beta)
    smooth = arch.with_activation(Activation.smoothed(beta))
    f = lambda v: loss_mse(smooth, v, data)
    h = 1e-4
    P = w.size
    ref = np.empty((P, P))
    for i in range(P):
        for j in range(P):
            e_i, e_j = np.eye(P)[i] * h, np.eye(P)[j] * h
            ref[i, j] = (f(w + e_i + e_j) - f(w + e_i - e_j) - f(w - e_i + e_j) + f(w - e_i - e_j)) / (4 * h * h)
    np.testing.assert_allclose(H.matrix, ref, atol=1e-4 * (1 + np.abs(ref).max()))


def test_hessian_symmetric_and_trace_equals_eigensum(small_net):
    arch, w, data = small_net
    H = hessian(arch, w, data)
    assert np.array_equal(H.matrix, H.matrix.T)
    s = eigenvalues(H)
    assert abs(np.trace(H.matrix) - s.eigenvalues.sum()) <= 1e-8 * np.abs(s.eigenvalues).sum()
    assert s.provenance["sharpness"] == 5000.0


def test_hessian_of_linear_model_is_exact():
    # one relu unit always active on x > 0: f = c * (a x + b) + d is bilinear in the weights
    arch = Architecture(1, 1)
    w = np.array([1.0, 1.0, 2.0, 0.5])
    data = Dataset([1.0, 2.0, 3.0], [0.0, 1.0, 0.5])
    H = hessian(arch, w, data, activation=Activation.relu())
    xs, ys = data.xs, data.ys
    a, b, c, d = w
    z = a * xs + b
    r = c * z + d - ys
    J = np.stack([c * xs, c * np.ones(3), z, np.ones(3)], 1)
    ref = 2 * J.T @ J / 3
    # residual times second derivative of the output, nonzero only on (a, c) and (b, c)
    ref[0, 2] += 2 * np.mean(r * xs)
    ref[2, 0] += 2 * np.mean(r * xs)
    ref[1, 2] += 2 * np.mean(r)
    ref[2, 1] += 2 * np.mean(r)
    np.testing.assert_allclose(H.matrix, ref, atol=1e-7)


def test_hessian_file_roundtrip(tmp_path, small_net):
    arch, w, data = small_net
    H = hessian(arch, w, data)
    path = tmp_path / "h.bin"
    write_hessian(H, path)
    assert np.array_equal(read_hessian(path), H.matrix)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ContractError):
        read_hessian(path)


def test_symmetry_diagnostic():
    H = HessianMatrix(np.eye(2), asymmetry=1.0, sharpness=1.0)
    assert not H.symmetry_ok()
