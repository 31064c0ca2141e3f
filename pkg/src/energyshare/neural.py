"""Small fully-connected networks with hand-written backpropagation.

Weights are stored as ``(fan_out, fan_in)`` matrices so a layer computes
``act(x @ W.T + b)``. Inputs may be a single vector or a batch of row vectors;
gradients from a batch are summed over rows.
"""

import numpy as np

from .validation import check_rng

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")

FORMAT_VERSION = 1


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(kind, z, a, upstream):
    if kind == "relu":
        return upstream * (z > 0)
    if kind == "tanh":
        return upstream * (1.0 - a * a)
    if kind == "sigmoid":
        return upstream * a * (1.0 - a)
    return upstream


class FeedforwardNetwork:
    """A stack of affine layers, each followed by an activation.

    Parameters
    ----------
    layers : list of (weight, bias, activation) tuples
    """

    def __init__(self, layers):
        shapes = []
        acts = []
        prev = None
        for weight, bias, act in layers:
            weight = np.array(weight, dtype=float, ndmin=2)
            bias = np.array(bias, dtype=float).ravel()
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if weight.shape[0] != bias.shape[0]:
                raise ValueError("bias length must match the weight's output dimension")
            if prev is not None and weight.shape[1] != prev:
                raise ValueError(
                    f"layer expects {weight.shape[1]} inputs but previous layer emits {prev}"
                )
            prev = weight.shape[0]
            shapes.append((weight, bias))
            acts.append(act)
        if not shapes:
            raise ValueError("a network needs at least one layer")
        self.activations = acts
        self._shapes = [(w.shape, b.shape) for w, b in shapes]
        # every parameter is a view into one flat vector
        self.flat = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in shapes])
        self.weights, self.biases = self._views(self.flat)

    def _views(self, flat):
        weights, biases = [], []
        pos = 0
        for wshape, bshape in self._shapes:
            size = wshape[0] * wshape[1]
            weights.append(flat[pos:pos + size].reshape(wshape))
            pos += size
            biases.append(flat[pos:pos + bshape[0]])
            pos += bshape[0]
        return weights, biases

    @classmethod
    def build(cls, sizes, hidden_activation="relu", output_activation="identity",
              random_state=None):
        """Randomly initialise a network with layer widths ``sizes``.

        Weights and biases are uniform on ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
        """
        rng = check_rng(random_state)
        layers = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            act = output_activation if k == len(sizes) - 2 else hidden_activation
            layers.append((rng.uniform(-bound, bound, size=(fan_out, fan_in)),
                           rng.uniform(-bound, bound, size=fan_out), act))
        return cls(layers)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def sizes(self):
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def parameters(self):
        """Parameter arrays in layer order: ``[W0, b0, W1, b1, ...]``.

        These are live views into :attr:`flat`.
        """
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return FeedforwardNetwork(
            [(w.copy(), b.copy(), a) for w, b, a in zip(self.weights, self.biases, self.activations)]
        )

    def same_architecture(self, other):
        return (self.activations == other.activations
                and [w.shape for w in self.weights] == [w.shape for w in other.weights])

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.input_dim or x.ndim > 2:
            raise ValueError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        return x

    def forward(self, x):
        x = self._check_input(x)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            x = _activate(act, x @ w.T + b)
        return x

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass that also returns what :meth:`backward_cached` needs."""
        x = self._check_input(x)
        cache = [x]
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = x @ w.T + b
            x = _activate(act, z)
            cache.append((z, x))
        return x, cache

    def backward_cached(self, cache, upstream, need_input_grad=True):
        """Reverse pass through a stored forward pass.

        Returns ``(grads, input_grad)`` where ``grads`` mirrors
        :meth:`parameters`.
        """
        delta = np.asarray(upstream, dtype=float)
        out_shape = cache[-1][1].shape
        if delta.shape != out_shape:
            raise ValueError(f"upstream gradient shape {delta.shape} != output shape {out_shape}")
        flat = np.empty_like(self.flat)
        gw, gb = self._views(flat)
        for k in range(len(self.weights) - 1, -1, -1):
            z, a = cache[k + 1]
            x = cache[0] if k == 0 else cache[k][1]
            delta = _activation_grad(self.activations[k], z, a, delta)
            if delta.ndim == 1:
                np.outer(delta, x, out=gw[k])
                gb[k][...] = delta
            else:
                np.matmul(delta.T, x, out=gw[k])
                np.sum(delta, axis=0, out=gb[k])
            if k > 0 or need_input_grad:
                delta = delta @ self.weights[k]
        grads = Gradients(p for pair in zip(gw, gb) for p in pair)
        grads.flat = flat
        return grads, (delta if need_input_grad else None)

    def backward(self, x, upstream):
        """Gradients of ``sum(forward(x) * upstream)`` w.r.t. parameters and input."""
        _, cache = self.forward_cache(x)
        return self.backward_cached(cache, upstream)

    def is_finite(self):
        return bool(np.isfinite(self.flat).all())


class Gradients(list):
    """Per-parameter gradients; ``flat`` holds them contiguously when available."""

    flat = None


class SGD:
    def __init__(self, learning_rate=1e-2):
        if not learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        self.learning_rate = learning_rate

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.learning_rate * g


class Adam:
    """Bias-corrected Adam; moments are created lazily on the first step."""

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        lr_t = self.learning_rate * np.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            # eps is applied to the bias-corrected second moment
            p -= lr_t * m / (np.sqrt(v) + self.eps * np.sqrt(1.0 - self.beta2 ** self.t))


def make_optimizer(kind, learning_rate):
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}; expected 'sgd' or 'adam'")


def apply_update(net, grads, optimizer):
    """Take one optimizer step on ``net`` in place and return it.

    Non-finite gradients raise ``FloatingPointError`` before anything changes.
    """
    flat = getattr(grads, "flat", None)
    if flat is None:
        params = net.parameters()
        if len(grads) != len(params):
            raise ValueError("gradient list does not match the network's parameters")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        flat = np.concatenate([np.ravel(g) for g in grads])
    elif flat.shape != net.flat.shape:
        raise ValueError("gradient vector does not match the network's parameters")
    if not np.isfinite(flat).all():
        raise FloatingPointError("non-finite gradient; training has diverged")
    optimizer.step([net.flat], [flat])
    return net


def soft_update(target, source, tau):
    """Blend ``target`` toward ``source``: ``tau * source + (1 - tau) * target``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if not target.same_architecture(source):
        raise ValueError("soft_update needs identical architectures")
    if tau == 1.0:
        target.flat[...] = source.flat
    elif tau > 0.0:
        target.flat *= 1.0 - tau
        target.flat += tau * source.flat
    return target


def dumps(net):
    """Plain-text checkpoint; floats are written with 17 significant digits."""
    lines = [f"ffn {FORMAT_VERSION}", f"layers {len(net.weights)}"]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        lines.append(f"layer {w.shape[1]} {w.shape[0]} {act}")
        lines.append(" ".join(f"{v:.17g}" for v in w.ravel()))
        lines.append(" ".join(f"{v:.17g}" for v in b))
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.splitlines()
    header = lines[0].split()
    if header[0] != "ffn" or int(header[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported network checkpoint header {lines[0]!r}")
    n_layers = int(lines[1].split()[1])
    layers = []
    for k in range(n_layers):
        tag, fan_in, fan_out, act = lines[2 + 3 * k].split()
        if tag != "layer":
            raise ValueError("malformed network checkpoint")
        fan_in, fan_out = int(fan_in), int(fan_out)
        w = np.array(lines[3 + 3 * k].split(), dtype=float).reshape(fan_out, fan_in)
        b = np.array(lines[4 + 3 * k].split(), dtype=float)
        layers.append((w, b, act))
    return FeedforwardNetwork(layers)


def save(net, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(net))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
