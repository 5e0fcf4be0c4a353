import numpy as np
import pytest

from tlce import numerics as nx
from tlce.data import ProtocolSpec, SynthSpec, generate_synth, split_sessions
from tlce.model import HEAD_CE, HEAD_COSINE, ArchitectureSpec, init_params
from tlce.training import TrainConfig, meta_train_rhd, pretrain_ce, train_tkn


def central_differences(loss_fn, tensors, h=1e-5):
    """Numerical gradient of the scalar ``loss_fn()`` w.r.t. every entry of ``tensors``."""
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with nx.no_grad():
                up = loss_fn().item()
            flat[i] = orig - h
            with nx.no_grad():
                down = loss_fn().item()
            flat[i] = orig
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradients(loss_fn, tensors):
    for t in tensors:
        t.grad = None
    nx.backward(loss_fn())
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        mask = np.abs(a) > floor
        if mask.any():
            rel = np.abs(a - n)[mask] / np.maximum(np.abs(a), np.abs(n))[mask]
            worst = max(worst, float(rel.max()))
    return worst


@pytest.fixture(scope="session")
def small_protocol():
    """10 base classes then two 2-way 5-shot sessions, dim 64, 8-sigma separation."""
    spec = ProtocolSpec(num_base_classes=10, num_novel_classes=4, way=2, shot=5, num_sessions=3, seed=7)
    data = generate_synth(
        SynthSpec(num_classes=14, feature_dim=64, train_per_class=60, test_per_class=30,
                  min_center_separation=8.0, seed=7)
    )
    return split_sessions(data, spec), spec


@pytest.fixture(scope="session")
def trained_pair(small_protocol):
    sessions, _ = small_protocol
    base = sessions[0]
    arch = ArchitectureSpec(64, (128,), 64, 128)
    cfg = TrainConfig(learning_rate=0.01, batch_size=32, epochs=10, seed=1, momentum=0.9)
    pre = pretrain_ce(init_params(arch, 11, HEAD_CE, 10), base, cfg)
    rhd = meta_train_rhd(pre, base, TrainConfig(learning_rate=0.01, seed=2, momentum=0.9), episodes=100)
    tkn = train_tkn(init_params(arch, 12, HEAD_COSINE, 10), base, cfg)
    return rhd, tkn
