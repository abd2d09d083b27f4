"""Central finite-difference gradient checking shared by unit and acceptance tests."""

import numpy as np

from swq.tensor_nn import Tensor2D


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar-valued f with respect to array x.

    f is called with no arguments and must read the current contents of x.
    """
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_op_gradients(build, inputs: dict, h: float = 1e-5, tol: float = 1e-4,
                       seed: int = 0) -> None:
    """Assert analytic gradients of a scalar-producing graph match central differences.

    ``build`` maps a dict of name -> Tensor2D to a scalar Tensor2D; ``inputs``
    holds the raw arrays. Every input is checked.
    """
    rng = np.random.default_rng(seed)
    tensors = {k: Tensor2D(v.copy(), requires_grad=True) for k, v in inputs.items()}
    out = build(tensors)
    out.backward()
    analytic = {k: t.grad.copy() for k, t in tensors.items()}

    for name in inputs:
        def f(name=name):
            probe = {
                k: Tensor2D(tensors[k].data, requires_grad=False) for k in tensors
            }
            return build(probe).item()

        num = numeric_grad(f, tensors[name].data, h=h)
        err = rel_error(analytic[name], num)
        assert err < tol, f"gradient mismatch for '{name}': rel err {err:.3e}"
