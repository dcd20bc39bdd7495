"""Tiny fully connected network mapping a flattened neighborhood to a stencil row.

One shared network is evaluated at every interior cell; its output is that
cell's row of the global operator. Hidden layers use tanh (smooth, so the
operator stays C^1 inside the adjoint solves), the output layer is linear.
Parameters live in one flat vector with a fixed layer-major layout
[W0.ravel(), b0, W1.ravel(), b1, ...] so the optimizer and the operator
derivatives agree on indexing.
"""

import numpy as np

VALUES = "values"
VALUES_POSITION = "values_position"

_ACTIVATIONS = ("tanh",)


def param_count(layer_sizes):
    """Number of parameters, bias included: sum of (in+1)*out over layers."""
    return sum((i + 1) * o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


class MicroNet:
    def __init__(self, layer_sizes, activation="tanh", input_mode=VALUES,
                 theta=None, seed=0):
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
            raise ValueError(f"bad layer sizes {layer_sizes}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if input_mode not in (VALUES, VALUES_POSITION):
            raise ValueError(f"unknown input mode {input_mode!r}")
        self.layer_sizes = layer_sizes
        self.activation = activation
        self.input_mode = input_mode
        self.seed = int(seed)
        self.n_params = param_count(layer_sizes)
        if theta is None:
            theta = init_params(self, seed)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"theta must have {self.n_params} entries")
        self.theta = theta.copy()

    @property
    def in_size(self):
        return self.layer_sizes[0]

    @property
    def out_size(self):
        return self.layer_sizes[-1]

    def layers(self):
        """Views (W, b) per layer into the flat parameter vector."""
        out = []
        pos = 0
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = self.theta[pos:pos + i * o].reshape(o, i)
            pos += i * o
            b = self.theta[pos:pos + o]
            pos += o
            out.append((W, b))
        return out

    def with_theta(self, theta):
        return MicroNet(self.layer_sizes, self.activation, self.input_mode,
                        theta=theta, seed=self.seed)

    # -- evaluation ------------------------------------------------------

    def forward_batch(self, inputs):
        """(m, in_size) -> (m, out_size)."""
        a = np.asarray(inputs, dtype=float)
        if a.ndim != 2 or a.shape[1] != self.in_size:
            raise ValueError(f"expected (m, {self.in_size}) inputs, got {a.shape}")
        layers = self.layers()
        for li, (W, b) in enumerate(layers):
            a = a @ W.T + b
            if li < len(layers) - 1:
                a = np.tanh(a)
        return a

    def _trace(self, inputs):
        """Forward pass keeping per-layer inputs a_l and pre-activations z_l."""
        a = np.asarray(inputs, dtype=float)
        acts, zs = [a], []
        layers = self.layers()
        for li, (W, b) in enumerate(layers):
            z = a @ W.T + b
            zs.append(z)
            a = np.tanh(z) if li < len(layers) - 1 else z
            acts.append(a)
        return acts, zs

    def _upstreams(self, zs):
        """U_l = d(output)/d(z_l) for each layer, shapes (m, out, width_l)."""
        layers = self.layers()
        m = zs[0].shape[0]
        L = len(layers)
        U = [None] * L
        U[L - 1] = np.broadcast_to(np.eye(self.out_size),
                                   (m, self.out_size, self.out_size)).copy()
        for l in range(L - 2, -1, -1):
            W_next = layers[l + 1][0]
            tp = 1.0 - np.tanh(zs[l]) ** 2
            U[l] = (U[l + 1] @ W_next) * tp[:, None, :]
        return U

    def jacobian_input_batch(self, inputs):
        """Exact d(output)/d(input), shape (m, out_size, in_size)."""
        _, zs = self._trace(np.atleast_2d(inputs))
        U = self._upstreams(zs)
        return U[0] @ self.layers()[0][0]

    def jacobian_params_batch(self, inputs):
        """Exact d(output)/d(theta), shape (m, out_size, n_params)."""
        acts, zs = self._trace(np.atleast_2d(inputs))
        U = self._upstreams(zs)
        blocks = []
        for l in range(len(U)):
            # d out / d W_l[j, k] = U_l[:, :, j] * a_l[:, k]
            dW = np.einsum("moj,mk->mojk", U[l], acts[l])
            blocks.append(dW.reshape(dW.shape[0], dW.shape[1], -1))
            blocks.append(U[l])
        return np.concatenate(blocks, axis=2)

    # -- serialization ---------------------------------------------------

    def save(self, path):
        with open(path, "w") as f:
            f.write("layers " + " ".join(str(s) for s in self.layer_sizes) + "\n")
            f.write(f"activation {self.activation}\n")
            f.write(f"input_mode {self.input_mode}\n")
            f.write(f"seed {self.seed}\n")
            for v in self.theta:
                f.write(f"{v:.17g}\n")

    @staticmethod
    def load(path):
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        header = {}
        for ln in lines[:4]:
            key, _, rest = ln.partition(" ")
            header[key] = rest
        layers = tuple(int(t) for t in header["layers"].split())
        theta = np.array([float(t) for t in lines[4:]])
        return MicroNet(layers, header["activation"], header["input_mode"],
                        theta=theta, seed=int(header["seed"]))


def init_params(net, seed):
    """Deterministic fan-in initialization: uniform in +-sqrt(1/fan_in)."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    parts = []
    for i, o in zip(net.layer_sizes[:-1], net.layer_sizes[1:]):
        scale = np.sqrt(1.0 / i)
        parts.append(rng.uniform(-scale, scale, size=i * o))
        parts.append(rng.uniform(-scale, scale, size=o))
    return np.concatenate(parts)


def net_forward(net, input_vector):
    """Stencil row for one neighborhood input."""
    v = np.asarray(input_vector, dtype=float)
    if v.shape != (net.in_size,):
        raise ValueError(f"expected input of length {net.in_size}, got {v.shape}")
    return net.forward_batch(v[None, :])[0]


def net_jacobian_input(net, input_vector):
    v = np.asarray(input_vector, dtype=float)
    if v.shape != (net.in_size,):
        raise ValueError(f"expected input of length {net.in_size}, got {v.shape}")
    return net.jacobian_input_batch(v[None, :])[0]


def net_jacobian_params(net, input_vector):
    v = np.asarray(input_vector, dtype=float)
    if v.shape != (net.in_size,):
        raise ValueError(f"expected input of length {net.in_size}, got {v.shape}")
    return net.jacobian_params_batch(v[None, :])[0]


def build_inputs(values, positions, input_mode):
    """Assemble net inputs from gathered neighborhood values and positions.

    values: (m, k) gathered field values in flattening order.
    positions: (m, k, rank) physical footprint positions, or None.
    Returns (m, k) for "values" mode, (m, k + k*rank) for "values_position"
    (values first, then positions cell-major).
    """
    values = np.atleast_2d(values)
    if input_mode == VALUES:
        return values
    if positions is None:
        raise ValueError("values_position mode needs footprint positions")
    m = values.shape[0]
    return np.concatenate([values, positions.reshape(m, -1)], axis=1)


def input_size(footprint_size, rank, input_mode):
    if input_mode == VALUES:
        return footprint_size
    return footprint_size * (1 + rank)
