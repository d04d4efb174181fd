import numpy as np
import pytest
import scipy.sparse as sp

from curvedbj.linalg import Factorization, ZeroPivotError, backend_name


def saddle(n=30, seed=0):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=0.2, random_state=seed) + n * sp.identity(n)
    A = (A + A.T).tocsr()
    B = sp.csr_matrix(rng.standard_normal((n // 3, n)))
    return sp.bmat([[A, B.T], [B, None]], format="csr")


BACKENDS = sorted({"superlu", backend_name()})


@pytest.mark.parametrize("backend", BACKENDS)
def test_solves_indefinite_system(backend):
    K = saddle()
    x = np.linspace(-1, 1, K.shape[0])
    lu = Factorization(K, backend)
    assert np.allclose(lu.solve(K @ x), x, atol=1e-11)
    assert lu.kernel_probe() < 1e-10
    lu.release()
    lu.release()


@pytest.mark.parametrize("backend", BACKENDS)
def test_zero_rhs(backend):
    lu = Factorization(saddle(), backend)
    assert not np.any(lu.solve(np.zeros(lu.K.shape[0])))


def test_singular_matrix_detected():
    K = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(ZeroPivotError):
        Factorization(K, "superlu")


def test_backends_agree():
    K = saddle(45, 3)
    b = np.cos(np.arange(K.shape[0]))
    ref = Factorization(K, "superlu").solve(b)
    assert np.allclose(Factorization(K).solve(b), ref, rtol=1e-10, atol=1e-12)
