import numpy as np

from app.core import config
from app.core.errors import FormatError


class Adam:
    """Adam over a named parameter dict; moments are kept per parameter name."""

    def __init__(self, params: dict, lr: float, betas: tuple = config.ADAM_BETAS, eps: float = config.ADAM_EPS):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict:
        state = {}
        for name in self.params:
            state[f"m.{name}"] = self.m[name].copy()
            state[f"v.{name}"] = self.v[name].copy()
        return state

    def load_state_dict(self, state: dict, step_count: int):
        for name, p in self.params.items():
            for kind, store in (("m", self.m), ("v", self.v)):
                key = f"{kind}.{name}"
                if key not in state:
                    raise FormatError(f"missing optimizer moment '{key}'")
                store[name] = np.asarray(state[key], dtype=p.data.dtype).reshape(p.shape).copy()
        self.step_count = step_count
