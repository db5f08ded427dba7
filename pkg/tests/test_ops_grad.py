"""Finite-difference gradient verification for every differentiable op
and the composed fusion/decoder/head forwards."""
import numpy as np
import pytest

from gradcases import CASES
from vecmap.gradcheck import grad_check

SEEDS = range(20)


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradients(name):
    builder, tol = CASES[name]
    worst = 0.0
    for seed in SEEDS:
        fn, inputs = builder(np.random.default_rng(seed))
        step = 1e-4 if "bilinear" in name else 1e-5
        report = grad_check(fn, inputs, step=step)
        worst = max(worst, report.max_rel_err)
        assert report.ok(tol), (
            f"{name} seed {seed}: max rel err {report.max_rel_err:.3e} >= {tol}"
        )
    assert np.isfinite(worst)


def test_gradcheck_flags_wrong_gradient():
    """The checker itself must catch a broken backward rule."""
    from vecmap import ops
    from vecmap.tensor import Tensor, current_tape

    def bad_square(a):
        out = Tensor(a.data**2, requires_grad=True)
        tape = current_tape()
        if tape is not None:
            tape.record(out, (a,), lambda g: (g * 3.0 * a.data,))
        return out

    report = grad_check(bad_square, [Tensor(np.array([1.0, 2.0]))])
    assert not report.ok(1e-4)
