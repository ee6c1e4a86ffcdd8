"""Value, control and adversarial networks with hand-written backprop.

All nets take a time column and a batch of states, concatenated as
``[t, x]`` with shape (B, d+1).  Backward passes return parameter
gradients and the cotangent of the state input; the latter is a
vector-Jacobian product used to chain the loss through the controlled
jump, never a derivative that enters the loss itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, DomainError, RngStream, UsageError

OUTPUTS = ("identity", "relu6", "sine")
CHECKPOINT_FORMAT = "rdohjb-params"
CHECKPOINT_VERSION = 1


@dataclass
class Tape:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)


class MlpNet:
    """Dense ReLU network; output activation is one of ``OUTPUTS``."""

    def __init__(self, sizes, output="identity", rng: RngStream | None = None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError(f"bad layer sizes {sizes}")
        if output not in OUTPUTS:
            raise ConfigError(f"unknown output activation {output!r}")
        self.sizes = sizes
        self.output = output
        self.weights = []
        self.biases = []
        gen = (rng or RngStream(0)).gen
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            s = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(gen.uniform(-s, s, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.last_tape = None

    def params(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def num_params(self):
        return sum(p.size for p in self.params())

    def run(self, inp):
        inp = np.asarray(inp, dtype=np.float64)
        if inp.ndim != 2 or inp.shape[1] != self.sizes[0]:
            raise ConfigError(f"input shape {inp.shape} does not match width {self.sizes[0]}")
        tape = Tape()
        a = inp
        last = len(self.weights) - 1
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            tape.inputs.append(a)
            z = a @ W + b
            tape.pre.append(z)
            if l < last:
                a = np.maximum(z, 0.0)
            elif self.output == "relu6":
                a = np.clip(z, 0.0, 6.0)
            elif self.output == "sine":
                a = np.sin(z)
            else:
                a = z
        self.last_tape = tape
        return a, tape

    def __call__(self, inp):
        return self.run(inp)[0]

    def backward(self, upstream, tape: Tape | None = None):
        """Reverse pass.  Returns (param grads in ``params()`` order, input cotangent)."""
        tape = tape if tape is not None else self.last_tape
        if tape is None or not tape.pre:
            raise UsageError("backward called without a cached forward pass")
        g = np.asarray(upstream, dtype=np.float64)
        z = tape.pre[-1]
        if self.output == "relu6":
            g = g * ((z > 0.0) & (z < 6.0))
        elif self.output == "sine":
            g = g * np.cos(z)
        grads = [None] * (2 * len(self.weights))
        for l in range(len(self.weights) - 1, -1, -1):
            grads[2 * l] = tape.inputs[l].T @ g
            grads[2 * l + 1] = g.sum(axis=0)
            g = g @ self.weights[l].T
            if l > 0:
                g = g * (tape.pre[l - 1] > 0.0)
        return grads, g

    def state(self):
        return {
            "sizes": self.sizes,
            "output": self.output,
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_state(cls, st):
        net = cls(st["sizes"], st["output"])
        for l, (W, b) in enumerate(zip(st["weights"], st["biases"])):
            shape = net.weights[l].shape
            if len(W) != shape[0] * shape[1] or len(b) != shape[1]:
                raise ConfigError(f"layer {l}: stored shape does not match sizes {net.sizes}")
            net.weights[l] = np.array(W, dtype=np.float64).reshape(shape)
            net.biases[l] = np.array(b, dtype=np.float64)
        return net


def _tx(t, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    return t, x, np.column_stack([t, x])


def hidden_sizes(d, width=None, depth=4):
    return [int(width or 2 * d + 20)] * depth


class ValueNet:
    """v(t, x): the body network for t < T, the terminal function at t == T."""

    def __init__(self, d, T, terminal, terminal_grad=None, width=None, depth=4, rng=None, body=None):
        self.d = d
        self.T = float(T)
        self.terminal = terminal
        self.terminal_grad = terminal_grad
        self.body = body or MlpNet([d + 1, *hidden_sizes(d, width, depth), 1], "identity", rng)

    def params(self):
        return self.body.params()

    def run(self, t, x):
        t, x, inp = _tx(t, x)
        if np.any(t < 0.0) or np.any(t > self.T):
            raise DomainError(f"time outside [0, {self.T}]")
        term = t == self.T
        out = np.empty(x.shape[0])
        body_tape = None
        live = ~term
        if live.any():
            y, body_tape = self.body.run(inp[live])
            out[live] = y[:, 0]
        if term.any():
            out[term] = self.terminal(x[term])
        return out, (term, x, body_tape)

    def __call__(self, t, x):
        return self.run(t, x)[0]

    def backward(self, tape, upstream):
        """Returns (param grads, state cotangent of shape (B, d))."""
        term, x, body_tape = tape
        upstream = np.asarray(upstream, dtype=np.float64)
        dx = np.zeros_like(x)
        live = ~term
        if body_tape is not None:
            grads, dinp = self.body.backward(upstream[live][:, None], body_tape)
            dx[live] = dinp[:, 1:]
        else:
            grads = [np.zeros_like(p) for p in self.params()]
        if term.any():
            if self.terminal_grad is None:
                raise UsageError("terminal gradient needed to chain through terminal rows")
            dx[term] = upstream[term][:, None] * self.terminal_grad(x[term])
        return grads, dx


class ControlNet:
    """u(t, x) = a + (b - a)/6 * relu6(psi(t, x)); unbounded identity if no box."""

    def __init__(self, d, m, lower=None, upper=None, width=None, depth=4, rng=None, body=None, T=None):
        self.d, self.m = d, m
        self.T = None if T is None else float(T)
        if (lower is None) != (upper is None):
            raise ConfigError("give both control bounds or neither")
        self.lower = None if lower is None else np.broadcast_to(np.asarray(lower, float), (m,)).copy()
        self.upper = None if upper is None else np.broadcast_to(np.asarray(upper, float), (m,)).copy()
        if self.lower is not None and np.any(self.upper < self.lower):
            raise ConfigError("control upper bound below lower bound")
        out = "identity" if self.lower is None else "relu6"
        if body is None:
            body = MlpNet([d + 1, *hidden_sizes(d, width, depth), m], out, rng)
            if self.boxed:
                # relu6 midpoint: the initial control sits at the box centre
                body.biases[-1][:] = 3.0
        self.body = body

    @property
    def boxed(self):
        return self.lower is not None

    def params(self):
        return self.body.params()

    def run(self, t, x):
        t, x, inp = _tx(t, x)
        if self.T is not None and (np.any(t < 0.0) or np.any(t > self.T)):
            raise DomainError(f"time outside [0, {self.T}]")
        y, tape = self.body.run(inp)
        if self.boxed:
            y = self.lower + (self.upper - self.lower) / 6.0 * y
        return y, tape

    def __call__(self, t, x):
        return self.run(t, x)[0]

    def backward(self, tape, upstream):
        g = np.asarray(upstream, dtype=np.float64)
        if self.boxed:
            g = g * ((self.upper - self.lower) / 6.0)
        grads, dinp = self.body.backward(g, tape)
        return grads, dinp[:, 1:]


class AdversarialNet:
    """rho(t, x) = sin(W1 t + W2 x + b) in R^r.

    Stored as one sine layer acting on ``[t, x]``: row 0 of the weight
    matrix is W1, rows 1..d are W2 transposed.
    """

    def __init__(self, d, r=64, rng=None, body=None):
        self.d, self.r = d, r
        if body is None:
            body = MlpNet([d + 1, r], "sine", rng)
            gen = (rng or RngStream(0)).gen
            body.weights[0] = gen.standard_normal((d + 1, r)) / math.sqrt(d)
            body.biases[0] = gen.uniform(0.0, 2 * math.pi, size=r)
        self.body = body

    @property
    def W1(self):
        return self.body.weights[0][0]

    @property
    def W2(self):
        return self.body.weights[0][1:].T

    @property
    def b(self):
        return self.body.biases[0]

    def params(self):
        return self.body.params()

    def run(self, t, x):
        _, _, inp = _tx(t, x)
        return self.body.run(inp)

    def __call__(self, t, x):
        return self.run(t, x)[0]

    def backward(self, tape, upstream):
        grads, dinp = self.body.backward(upstream, tape)
        return grads, dinp[:, 1:]


def forward_value(net: ValueNet, t, x):
    return net(t, x)


def forward_control(net: ControlNet, t, x):
    return net(t, x)


def forward_adversarial(net: AdversarialNet, t, x):
    return net(t, x)


def backprop_params(net, upstream, tape=None):
    body = net.body if hasattr(net, "body") else net
    return body.backward(upstream, tape)[0]


def save_checkpoint(path, nets: dict, extra: dict | None = None):
    """Write nets (name -> ValueNet/ControlNet/AdversarialNet) as versioned JSON."""
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "nets": {}, "extra": extra or {}}
    for name, net in nets.items():
        entry = {"kind": type(net).__name__, "body": net.body.state()}
        if isinstance(net, ControlNet) and net.boxed:
            entry["lower"] = net.lower.tolist()
            entry["upper"] = net.upper.tolist()
        doc["nets"][name] = entry
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    """Returns (name -> (kind, MlpNet, entry), extra).  Raises ConfigError on a bad file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {doc.get('version')}")
    out = {}
    try:
        for name, entry in doc["nets"].items():
            out[name] = (entry["kind"], MlpNet.from_state(entry["body"]), entry)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"corrupt checkpoint {path}: {exc}") from exc
    return out, doc.get("extra", {})
