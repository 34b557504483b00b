"""Shared fixtures-as-functions for the test modules."""

import numpy as np

from pasnet import autodiff as ad
from pasnet.models import ModelDims, build_policy, loss_bce

SMALL_DIMS = ModelDims(hidden=8, key_dim=4)


def model_gradient_error(kind, seed, n_antennas=6, batch=2):
    """Worst relative backprop-vs-central-difference error over every parameter.

    Runs in extended precision. Zero-initialised biases are jittered so the
    check point avoids ReLU kinks at exactly zero.
    """
    rng = np.random.default_rng(seed)
    model = build_policy(kind, SMALL_DIMS, seed=seed).astype(np.longdouble)
    for p in model.parameters():
        if not np.any(p.data):
            p.data = rng.uniform(-0.1, 0.1, p.data.shape).astype(np.longdouble)
    feats = rng.standard_normal((batch, n_antennas, 2)).astype(np.longdouble)
    labels = rng.random((batch, n_antennas)) > 0.5
    return max(ad.gradient_check(lambda: loss_bce(model(feats)[1], labels), model.parameters(),
                                 eps=1e-5))


# criterion number -> (passed, title, detail); printed by the conftest summary hook
ACCEPTANCE = {}


def record(number, title, ok, detail):
    ok = bool(ok)
    ACCEPTANCE[number] = (ok, title, detail)
    print(f"{'PASS' if ok else 'FAIL'} {number:2d} {title}: {detail}")
    assert ok, f"criterion {number} ({title}) not met: {detail}"
