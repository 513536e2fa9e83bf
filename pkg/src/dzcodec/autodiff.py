"""Static-graph reverse-mode differentiation over float64 numpy arrays.

A :class:`Graph` is built once by calling its op methods, which append
nodes in topological order and infer static shapes. ``forward`` evaluates
every node and keeps the activations; ``backward`` walks the nodes in
reverse and accumulates gradients into the :class:`Tensor` objects that
back the parameter nodes.

    g = Graph()
    x = g.input((4, 3), "x")
    w = g.param(Tensor(np.zeros((3, 2)), "w"))
    b = g.param(Tensor(np.zeros(2), "b"))
    g.set_output(g.sum(g.square(g.affine(x, w, b))))
    g.forward([np.ones((4, 3))])
    g.backward()
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericError, StateError

__all__ = ["Tensor", "Node", "Graph", "GradCheckReport", "grad_check"]


class Tensor:
    """Real array with an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, name: str = "", grad=None):
        self.data = np.array(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(())
        self.name = name
        self.grad = None
        if grad is not None:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ConfigurationError(
                    f"grad shape {grad.shape} != data shape {self.data.shape}"
                )
            self.grad = grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.shape})"


class Node:
    __slots__ = ("index", "op", "parents", "shape", "attrs", "name", "value", "tensor")

    def __init__(self, index, op, parents, shape, attrs=None, name="", tensor=None):
        self.index = index
        self.op = op
        self.parents = tuple(parents)
        self.shape = tuple(shape)
        self.attrs = attrs or {}
        self.name = name
        self.value = None
        self.tensor = tensor

    def label(self) -> str:
        suffix = f" '{self.name}'" if self.name else ""
        return f"node {self.index} ({self.op}{suffix})"

    def __repr__(self):
        return f"<{self.label()} shape={self.shape}>"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _reduced_shape(shape, axis):
    if axis is None:
        return ()
    axis = axis % len(shape)
    return shape[:axis] + shape[axis + 1:]


# Ops whose derivative is zero almost everywhere; grad_check skips their inputs.
NON_DIFFERENTIABLE = frozenset({"floor"})


class Graph:
    """Ordered list of primitive nodes; insertion order is topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: list[Node] = []
        self.params: list[Node] = []
        self.output: Node | None = None
        self._forwarded = False
        self._adjoints: dict[int, np.ndarray] = {}

    # -- construction -------------------------------------------------
    def _add(self, op, parents, shape, attrs=None, name="", tensor=None) -> Node:
        for p in parents:
            if not isinstance(p, Node) or self.nodes[p.index] is not p:
                raise ConfigurationError(f"{op}: parent does not belong to this graph")
        node = Node(len(self.nodes), op, parents, shape, attrs, name, tensor)
        self.nodes.append(node)
        self._forwarded = False
        return node

    def input(self, shape, name="") -> Node:
        node = self._add("input", (), tuple(int(d) for d in shape), name=name)
        self.inputs.append(node)
        return node

    def param(self, tensor: Tensor) -> Node:
        node = self._add("param", (), tensor.shape, name=tensor.name, tensor=tensor)
        self.params.append(node)
        return node

    def const(self, value, name="") -> Node:
        value = np.asarray(value, dtype=np.float64)
        node = self._add("const", (), value.shape, {"value": value}, name=name)
        return node

    def set_output(self, node: Node) -> Node:
        self.output = node
        return node

    def _broadcast(self, op, a, b, name):
        try:
            shape = np.broadcast_shapes(a.shape, b.shape)
        except ValueError as exc:
            raise ConfigurationError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc
        return self._add(op, (a, b), shape, name=name)

    def affine(self, x, w, b=None, name="") -> Node:
        """``x @ w + b`` for ``x`` of shape (batch, in) and ``w`` of shape (in, out)."""
        if len(x.shape) != 2 or len(w.shape) != 2 or x.shape[1] != w.shape[0]:
            raise ConfigurationError(f"affine: incompatible shapes {x.shape} @ {w.shape}")
        parents = (x, w) if b is None else (x, w, b)
        if b is not None and b.shape != (w.shape[1],):
            raise ConfigurationError(f"affine: bias shape {b.shape} != ({w.shape[1]},)")
        return self._add("affine", parents, (x.shape[0], w.shape[1]), name=name)

    def add(self, a, b, name="") -> Node:
        return self._broadcast("add", a, b, name)

    def multiply(self, a, b, name="") -> Node:
        return self._broadcast("multiply", a, b, name)

    def _unary(op):
        def method(self, x, name=""):
            return self._add(op, (x,), x.shape, name=name)

        method.__name__ = op
        return method

    softplus = _unary("softplus")
    sigmoid = _unary("sigmoid")
    tanh = _unary("tanh")
    log = _unary("log")
    square = _unary("square")
    reciprocal = _unary("reciprocal")
    floor = _unary("floor")
    del _unary

    def clip_min(self, x, lower: float, name="") -> Node:
        return self._add("clip_min", (x,), x.shape, {"lower": float(lower)}, name=name)

    def sum(self, x, axis=None, name="") -> Node:
        return self._add("sum", (x,), _reduced_shape(x.shape, axis), {"axis": axis}, name=name)

    def mean(self, x, axis=None, name="") -> Node:
        return self._add("mean", (x,), _reduced_shape(x.shape, axis), {"axis": axis}, name=name)

    def concat(self, xs: Sequence[Node], axis=0, name="") -> Node:
        ref = xs[0].shape
        axis = axis % len(ref)
        for x in xs[1:]:
            if len(x.shape) != len(ref) or any(
                d != r for i, (d, r) in enumerate(zip(x.shape, ref)) if i != axis
            ):
                raise ConfigurationError(f"concat: incompatible shapes {ref} and {x.shape}")
        shape = list(ref)
        shape[axis] = sum(x.shape[axis] for x in xs)
        return self._add("concat", tuple(xs), shape, {"axis": axis}, name=name)

    def slice(self, x, start, stop, axis=0, name="") -> Node:
        axis = axis % len(x.shape)
        if not 0 <= start < stop <= x.shape[axis]:
            raise ConfigurationError(f"slice: [{start}:{stop}] outside dimension {x.shape[axis]}")
        shape = list(x.shape)
        shape[axis] = stop - start
        return self._add("slice", (x,), shape, {"axis": axis, "start": start, "stop": stop}, name=name)

    def reshape(self, x, shape, name="") -> Node:
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != int(np.prod(x.shape)):
            raise ConfigurationError(f"reshape: {x.shape} -> {shape}")
        return self._add("reshape", (x,), shape, name=name)

    # composites built from the primitives above
    def scale(self, x, factor: float, name="") -> Node:
        return self.multiply(x, self.const(factor), name=name)

    def sub(self, a, b, name="") -> Node:
        return self.add(a, self.scale(b, -1.0), name=name)

    def divide(self, a, b, name="") -> Node:
        return self.multiply(a, self.reciprocal(b), name=name)

    def shift(self, x, amount: float, name="") -> Node:
        return self.add(x, self.const(amount), name=name)

    # -- evaluation ---------------------------------------------------
    def forward(self, inputs: Sequence = ()) -> Tensor:
        """Evaluate all nodes; returns the output node's value."""
        if len(inputs) != len(self.inputs):
            raise ConfigurationError(f"expected {len(self.inputs)} inputs, got {len(inputs)}")
        for node, value in zip(self.inputs, inputs):
            value = np.asarray(value.data if isinstance(value, Tensor) else value, dtype=np.float64)
            if value.shape != node.shape:
                raise ConfigurationError(
                    f"input {node.label()} expects shape {node.shape}, got {value.shape}"
                )
            node.value = value
        with np.errstate(all="ignore"):
            for node in self.nodes:
                if node.op != "input":
                    node.value = _FORWARD[node.op](node)
                if not np.all(np.isfinite(node.value)):
                    self._forwarded = False
                    raise NumericError(f"non-finite value at {node.label()}")
        self._forwarded = True
        self._adjoints = {}
        out = self.output if self.output is not None else self.nodes[-1]
        return Tensor(out.value, out.name)

    def value(self, node: Node) -> np.ndarray:
        if not self._forwarded:
            raise StateError("forward has not been run")
        return node.value

    def backward(self, output_grad=None) -> None:
        """Accumulate reverse-mode gradients into every parameter tensor."""
        if not self._forwarded:
            raise StateError("backward called before forward")
        out = self.output if self.output is not None else self.nodes[-1]
        if output_grad is None:
            output_grad = np.ones(out.shape)
        output_grad = np.asarray(
            output_grad.data if isinstance(output_grad, Tensor) else output_grad, dtype=np.float64
        )
        if output_grad.shape != out.shape:
            raise ConfigurationError(f"output_grad shape {output_grad.shape} != {out.shape}")
        adj: dict[int, np.ndarray] = {out.index: output_grad}
        for node in reversed(self.nodes[: out.index + 1]):
            g = adj.pop(node.index, None)
            if g is None:
                continue
            if node.op == "param":
                t = node.tensor
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            if node.op in ("input", "const"):
                self._adjoints[node.index] = g
                continue
            for parent, pg in zip(node.parents, _BACKWARD[node.op](node, g)):
                if pg is None:
                    continue
                if parent.index in adj:
                    adj[parent.index] = adj[parent.index] + pg
                else:
                    adj[parent.index] = pg

    def input_grad(self, node: Node) -> np.ndarray:
        """Gradient reaching an input node in the most recent backward pass."""
        return self._adjoints.get(node.index, np.zeros(node.shape))

    def zero_grad(self) -> None:
        for node in self.params:
            node.tensor.zero_grad()


def _v(node, i=0):
    return node.parents[i].value


def _fwd_affine(n):
    out = _v(n) @ _v(n, 1)
    if len(n.parents) == 3:
        out = out + _v(n, 2)
    return out


def _fwd_clip(n):
    return np.maximum(_v(n), n.attrs["lower"])


def _fwd_slice(n):
    idx = [slice(None)] * len(n.shape)
    idx[n.attrs["axis"]] = slice(n.attrs["start"], n.attrs["stop"])
    return _v(n)[tuple(idx)]


_FORWARD: dict[str, Callable[[Node], np.ndarray]] = {
    "param": lambda n: n.tensor.data,
    "const": lambda n: n.attrs["value"],
    "affine": _fwd_affine,
    "add": lambda n: _v(n) + _v(n, 1),
    "multiply": lambda n: _v(n) * _v(n, 1),
    "softplus": lambda n: np.logaddexp(0.0, _v(n)),
    "sigmoid": lambda n: _sigmoid(_v(n)),
    "tanh": lambda n: np.tanh(_v(n)),
    "log": lambda n: np.log(_v(n)),
    "square": lambda n: np.square(_v(n)),
    "reciprocal": lambda n: 1.0 / _v(n),
    "floor": lambda n: np.floor(_v(n)),
    "clip_min": _fwd_clip,
    "sum": lambda n: np.asarray(_v(n).sum(axis=n.attrs["axis"])),
    "mean": lambda n: np.asarray(_v(n).mean(axis=n.attrs["axis"])),
    "concat": lambda n: np.concatenate([p.value for p in n.parents], axis=n.attrs["axis"]),
    "slice": _fwd_slice,
    "reshape": lambda n: _v(n).reshape(n.shape),
}


def _bwd_affine(n, g):
    x, w = _v(n), _v(n, 1)
    grads = [g @ w.T, x.T @ g]
    if len(n.parents) == 3:
        grads.append(g.sum(axis=0))
    return grads


def _bwd_reduce(n, g, scale=1.0):
    shape = n.parents[0].shape
    axis = n.attrs["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis % len(shape))
    return (np.broadcast_to(g * scale, shape).copy(),)


def _bwd_mean(n, g):
    count = int(np.prod(n.parents[0].shape)) // max(int(np.prod(n.shape)), 1)
    return _bwd_reduce(n, g, 1.0 / count)


def _bwd_concat(n, g):
    axis = n.attrs["axis"]
    bounds = np.cumsum([p.shape[axis] for p in n.parents])[:-1]
    return np.split(g, bounds, axis=axis)


def _bwd_slice(n, g):
    out = np.zeros(n.parents[0].shape)
    idx = [slice(None)] * len(n.shape)
    idx[n.attrs["axis"]] = slice(n.attrs["start"], n.attrs["stop"])
    out[tuple(idx)] = g
    return (out,)


_BACKWARD = {
    "affine": _bwd_affine,
    "add": lambda n, g: (_unbroadcast(g, n.parents[0].shape), _unbroadcast(g, n.parents[1].shape)),
    "multiply": lambda n, g: (
        _unbroadcast(g * _v(n, 1), n.parents[0].shape),
        _unbroadcast(g * _v(n), n.parents[1].shape),
    ),
    "softplus": lambda n, g: (g * _sigmoid(_v(n)),),
    "sigmoid": lambda n, g: (g * n.value * (1.0 - n.value),),
    "tanh": lambda n, g: (g * (1.0 - n.value * n.value),),
    "log": lambda n, g: (g / _v(n),),
    "square": lambda n, g: (2.0 * g * _v(n),),
    "reciprocal": lambda n, g: (-g * n.value * n.value,),
    "floor": lambda n, g: (None,),
    "clip_min": lambda n, g: (g * (_v(n) > n.attrs["lower"]),),
    "sum": _bwd_reduce,
    "mean": _bwd_mean,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "reshape": lambda n, g: (g.reshape(n.parents[0].shape),),
}


@dataclass
class GradCheckReport:
    errors: dict[str, float] = field(default_factory=dict)
    excluded: list[str] = field(default_factory=list)
    tolerance: float = 1e-6

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def __str__(self):
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        lines += [f"excluded: {label}" for label in self.excluded]
        lines.append(f"{'PASS' if self.passed else 'FAIL'} max={self.max_error:.3e} tol={self.tolerance:g}")
        return "\n".join(lines)


def grad_check(graph: Graph, inputs, tolerance: float = 1e-6, h: float = 1e-5) -> GradCheckReport:
    """Compare analytic parameter gradients of ``sum(output)`` with central differences.

    The error for one parameter tensor is ``max|analytic - numeric|`` divided
    by the larger of the two gradients' max-abs values, so near-zero entries
    do not blow up the ratio.
    """
    report = GradCheckReport(tolerance=tolerance)
    report.excluded = [n.label() for n in graph.nodes if n.op in NON_DIFFERENTIABLE]
    saved = {id(p.tensor): p.tensor.grad for p in graph.params}
    tensors = list({id(p.tensor): p.tensor for p in graph.params}.values())
    try:
        for t in tensors:
            t.zero_grad()
        graph.forward(inputs)
        graph.backward()

        def objective():
            return float(np.sum(graph.forward(inputs).data))

        for i, t in enumerate(tensors):
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
            numeric = np.zeros_like(t.data)
            flat = t.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = objective()
                flat[k] = orig - h
                down = objective()
                flat[k] = orig
                numeric.reshape(-1)[k] = (up - down) / (2 * h)
            scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
            diff = np.abs(analytic - numeric).max(initial=0.0)
            name = t.name or f"param{i}"
            report.errors[name] = 0.0 if diff == 0.0 else diff / max(scale, 1e-300)
        graph.forward(inputs)
    finally:
        for t in tensors:
            t.grad = saved[id(t)]
    return report
