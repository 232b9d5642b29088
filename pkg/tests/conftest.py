import numpy as np
import pytest
import torch
from torch.func import functional_call

from sasssl.nncore import EncoderConfig, LinearHead, MLPHead, build_encoder, he_init_
from sasssl.pipeline import set_determinism

set_determinism()

# Two residual blocks on 16x16 inputs: small enough for coordinate-wise
# finite differences, deep enough to exercise every layer type.
GRAD_ENCODER = EncoderConfig(stage_widths=(4, 8), blocks_per_stage=(1, 1), feature_dim=8, input_size=16)


class ToyStack:
    """Float64 encoder + heads with a functional loss interface for grad_check."""

    def __init__(self, seed=0, batch=4):
        self.encoder = build_encoder(GRAD_ENCODER, seed).double().train()
        self.projector = he_init_(MLPHead(8, 16, 6), seed + 1).double().train()
        self.predictor = he_init_(MLPHead(6, 12, 6, hidden_norm=True), seed + 2).double().train()
        self.linear = he_init_(LinearHead(8), seed + 3).double()
        gen = torch.Generator().manual_seed(seed)
        self.x1 = torch.rand(batch, 2, 16, 16, generator=gen, dtype=torch.float64) * 3
        self.x2 = torch.rand(batch, 2, 16, 16, generator=gen, dtype=torch.float64) * 3
        self.modules = {"encoder": self.encoder, "projector": self.projector, "predictor": self.predictor, "linear": self.linear}

    def params(self, *names):
        return {f"{n}.{k}": v.detach().clone() for n in names for k, v in self.modules[n].named_parameters()}

    def call(self, name, params, x):
        prefix = name + "."
        own = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
        return functional_call(self.modules[name], own, (x,)) if own else self.modules[name](x)


@pytest.fixture
def toy_stack():
    return ToyStack()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance results, filled by tests/test_acceptance.py and echoed at the end
# of the session as one line per criterion.
ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
