import numpy as np


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays, updated in place."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
        return params


def adam_step(params, grads, state=None, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional form: returns ``(new_params, state)`` without touching the inputs."""
    opt = Adam(lr, beta1, beta2, eps)
    if state is not None:
        opt.t = state["t"]
        opt.m = {k: v.copy() for k, v in state["m"].items()}
        opt.v = {k: v.copy() for k, v in state["v"].items()}
    new = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    opt.step(new, grads)
    return new, {"t": opt.t, "m": opt.m, "v": opt.v}
