"""Rectified Adam with decoupled weight decay."""

import numpy as np


class RAdam:
    """Rectified Adam over a fixed list of (name, Tensor) parameters.

    Applies the variance rectification term when the variance estimate
    is tractable (rho_t > 4) and falls back to a plain momentum step
    otherwise. Weight decay is decoupled from the adaptive update.
    """

    def __init__(self, params, learning_rate=1e-4, weight_decay=1e-4,
                 beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.learning_rate = float(learning_rate)
        self.weight_decay = float(weight_decay)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for _, p in self.params]
        self.second_moment = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def step(self):
        """One deterministic update from the accumulated gradients."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        b2_t = b2 ** t
        rho_t = rho_inf - 2.0 * t * b2_t / (1.0 - b2_t)
        rectified = rho_t > 4.0
        if rectified:
            r = np.sqrt(
                (rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
            )
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise FloatingPointError("non-finite gradient for parameter %r" % name)
            m = self.first_moment[i]
            v = self.second_moment[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** t)
            if rectified:
                v_hat = np.sqrt(v / (1.0 - b2_t))
                update = self.learning_rate * r * m_hat / (v_hat + self.epsilon)
            else:
                update = self.learning_rate * m_hat
            if self.weight_decay:
                p.data -= self.learning_rate * self.weight_decay * p.data
            p.data -= update
