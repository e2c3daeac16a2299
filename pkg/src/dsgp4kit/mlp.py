"""Small dense networks with analytic backprop, and Adam.

Hidden layers are tanh, the output layer is linear, and the output
layer's weights and bias start at zero so a freshly built net computes
exactly zero for every input.  That zero-head init is what makes the
hybrid propagator an identity operator at construction.
"""

import numpy as np

__all__ = ["Mlp", "Adam", "Sgd"]


class Mlp:
    def __init__(self, sizes, seed=0, zero_head=True):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for k in range(len(self.sizes) - 1):
            n_in, n_out = self.sizes[k], self.sizes[k + 1]
            last = k == len(self.sizes) - 2
            if last and zero_head:
                w = np.zeros((n_out, n_in))
            else:
                limit = np.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-limit, limit, size=(n_out, n_in))
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self):
        """Flat list of parameter arrays, weights and biases interleaved."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x):
        """x is (n_in,) or (batch, n_in).  Returns (output, cache)."""
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache = [a]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            a = z if k == last else np.tanh(z)
            cache.append(a)
        if np.ndim(x) == 1:
            return a[0], cache
        return a, cache

    def backward(self, cache, grad_out):
        """Gradient of a scalar loss through the cached forward pass.

        grad_out is dL/d(output) with the same batch shape the forward
        saw.  Returns (grads, grad_input) where grads parallels
        params() and gradients are summed over the batch.
        """
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads = [None] * (2 * len(self.weights))
        for k in range(len(self.weights) - 1, -1, -1):
            a_prev = cache[k]
            if k != len(self.weights) - 1:
                # undo the tanh around this layer's output
                g = g * (1.0 - cache[k + 1] ** 2)
            grads[2 * k] = g.T @ a_prev
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k]
        return grads, g

    def __call__(self, x):
        out, _ = self.forward(x)
        return out

    def copy(self):
        dup = Mlp.__new__(Mlp)
        dup.sizes = self.sizes
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def to_json_dict(self):
        return {
            "sizes": list(self.sizes),
            "weights": [[list(map(float, row)) for row in w] for w in self.weights],
            "biases": [list(map(float, b)) for b in self.biases],
        }

    @classmethod
    def from_json_dict(cls, d):
        net = cls.__new__(cls)
        net.sizes = tuple(d["sizes"])
        net.weights = [np.array(w, dtype=np.float64) for w in d["weights"]]
        net.biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
        return net


class Adam:
    def __init__(self, params, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class Sgd:
    def __init__(self, params, lr=3e-3):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g
