"""Input-convex networks for the charge/discharge energy-transfer curves.

Architecture: z_i = relu(W_i z_{i-1} + D_i x + b_i), scalar input and output.
The output is convex in x provided every W from layer 2 on is entrywise
nonnegative and the activations are convex and nondecreasing; nonnegativity
is maintained by clamping after each optimizer step.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .battery import BatteryParams, charge_transfer, discharge_transfer


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class Layer:
    w: np.ndarray  # (out, prev) weights on the previous activation
    d: np.ndarray  # (out, 1) skip weights on the raw input; zero in layer 1
    b: np.ndarray  # (out,)


@dataclass
class Icnn:
    layers: list

    @property
    def widths(self):
        return [lyr.w.shape[0] for lyr in self.layers]

    def validate(self):
        prev = 1
        for i, lyr in enumerate(self.layers):
            h = lyr.w.shape[0]
            if lyr.w.shape != (h, prev):
                raise ValueError(f"layer {i}: W shape {lyr.w.shape}, expected ({h}, {prev})")
            if lyr.d.shape != (h, 1) or lyr.b.shape != (h,):
                raise ValueError(f"layer {i}: inconsistent D/b shapes")
            if i == 0 and np.any(lyr.d != 0.0):
                raise ValueError("layer 1 skip weights must be identically zero")
            if i > 0 and lyr.w.min() < 0.0:
                raise ValueError(f"layer {i}: negative inter-layer weight breaks convexity")
            prev = h
        if prev != 1:
            raise ValueError("final layer width must be 1")
        return self


@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.inputs.shape != self.targets.shape:
            raise ValueError("inputs and targets must have equal length")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("training inputs must lie in [0, 1]")


@dataclass
class TrainHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 20000
    seed: int = 0
    batch_size: int = 0  # 0 means full batch

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")


def forward(net: Icnn, x):
    """Evaluate the network at scalar or 1-D ``x``."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    xin = arr[None, :]
    z = xin
    for lyr in net.layers:
        z = np.maximum(0.0, lyr.w @ z + lyr.d @ xin + lyr.b[:, None])
    if z.shape[0] != 1:
        raise ValueError("final layer width must be 1")
    out = z[0]
    return float(out[0]) if np.ndim(x) == 0 else out


def project_nonneg(net: Icnn) -> Icnn:
    """Clamp every inter-layer weight from layer 2 on at zero from below."""
    layers = [Layer(net.layers[0].w.copy(), net.layers[0].d.copy(), net.layers[0].b.copy())]
    for lyr in net.layers[1:]:
        layers.append(Layer(np.maximum(lyr.w, 0.0), lyr.d.copy(), lyr.b.copy()))
    return Icnn(layers)


def generate_training_data(params: BatteryParams, side: str, n: int) -> TrainingSet:
    """Uniform per-unit power grid with plant-curve energy-transfer targets."""
    if side not in ("charge", "discharge"):
        raise ValueError(f"side must be 'charge' or 'discharge', got {side!r}")
    p = np.linspace(0.0, 1.0, n)
    y = charge_transfer(p, params) if side == "charge" else discharge_transfer(p, params)
    return TrainingSet(inputs=p, targets=y)


def init_net(widths, seed: int) -> Icnn:
    """Seeded init: W uniform in [0, 0.5] so the projection starts inactive,
    D and b uniform in [-0.5, 0.5]."""
    rng = np.random.default_rng(seed)
    layers = []
    prev = 1
    for i, h in enumerate(widths):
        w = rng.uniform(0.0, 0.5, size=(h, prev))
        d = np.zeros((h, 1)) if i == 0 else rng.uniform(-0.5, 0.5, size=(h, 1))
        b = rng.uniform(-0.5, 0.5, size=h)
        layers.append(Layer(w, d, b))
        prev = h
    if widths[-1] != 1:
        raise ValueError("final layer width must be 1")
    return Icnn(layers)


def _forward_cached(layers, xin):
    """Forward pass keeping pre-activations for backprop."""
    pre = []
    z = xin
    acts = [xin]
    for lyr in layers:
        a = lyr.w @ z + lyr.d @ xin + lyr.b[:, None]
        pre.append(a)
        z = np.maximum(0.0, a)
        acts.append(z)
    return pre, acts


def loss_and_grad(net: Icnn, inputs, targets):
    """Mean-squared error and its gradient w.r.t. all parameters.

    Reverse-mode accumulation through the ReLU recursion with subgradient 0
    at the kink.  Returns (loss, grads) where grads mirrors the layer list
    as (gw, gd, gb) triples; the layer-1 skip gradient is zeroed since that
    block is frozen.
    """
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float)
    n = x.size
    xin = x[None, :]
    pre, acts = _forward_cached(net.layers, xin)
    resid = acts[-1][0] - y
    loss = float(np.mean(resid**2))
    grads = [None] * len(net.layers)
    dz = (2.0 / n) * resid[None, :]
    for i in range(len(net.layers) - 1, -1, -1):
        da = dz * (pre[i] > 0.0)
        gw = da @ acts[i].T
        gd = da @ xin.T if i > 0 else np.zeros_like(net.layers[0].d)
        gb = da.sum(axis=1)
        grads[i] = (gw, gd, gb)
        if i > 0:
            dz = net.layers[i].w.T @ da
    return loss, grads


def adam_train(data: TrainingSet, widths, hyper: TrainHyper) -> Icnn:
    """Fit the network to ``data`` by Adam on the MSE, projecting the
    inter-layer weights onto the nonnegative orthant after every update."""
    if data.inputs.size == 0:
        raise ValueError("training set is empty")
    net = init_net(widths, hyper.seed)
    m = [(np.zeros_like(l.w), np.zeros_like(l.d), np.zeros_like(l.b)) for l in net.layers]
    v = [(np.zeros_like(l.w), np.zeros_like(l.d), np.zeros_like(l.b)) for l in net.layers]
    rng = np.random.default_rng(hyper.seed + 1)
    n = data.inputs.size
    bs = hyper.batch_size if 0 < hyper.batch_size < n else n
    t = 0
    for epoch in range(hyper.epochs):
        if bs == n:
            batches = [(data.inputs, data.targets)]
        else:
            order = rng.permutation(n)
            batches = [
                (data.inputs[order[s : s + bs]], data.targets[order[s : s + bs]])
                for s in range(0, n, bs)
            ]
        for bx, by in batches:
            loss, grads = loss_and_grad(net, bx, by)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}")
            t += 1
            c1 = 1.0 - hyper.beta1**t
            c2 = 1.0 - hyper.beta2**t
            for i, lyr in enumerate(net.layers):
                for j, param in enumerate((lyr.w, lyr.d, lyr.b)):
                    if i == 0 and j == 1:
                        continue  # layer-1 skip stays zero
                    g = grads[i][j]
                    m[i][j][:] = hyper.beta1 * m[i][j] + (1.0 - hyper.beta1) * g
                    v[i][j][:] = hyper.beta2 * v[i][j] + (1.0 - hyper.beta2) * g**2
                    param -= hyper.learning_rate * (m[i][j] / c1) / (np.sqrt(v[i][j] / c2) + hyper.epsilon)
                if i > 0:
                    np.maximum(lyr.w, 0.0, out=lyr.w)
    return net.validate()


def rmse(net: Icnn, inputs, targets) -> float:
    pred = forward(net, np.asarray(inputs, dtype=float))
    return float(np.sqrt(np.mean((pred - np.asarray(targets, dtype=float)) ** 2)))


@dataclass
class ConvexityReport:
    max_violation: float
    violations: int
    pairs: int


def check_convexity(net: Icnn, n_pairs: int, seed: int, tol: float = 1e-9) -> ConvexityReport:
    """Sample midpoint-inequality violations f((x1+x2)/2) <= (f(x1)+f(x2))/2.

    Pairs are drawn uniformly from [-0.5, 1.5]; an excess beyond ``tol``
    counts as a violation.
    """
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-0.5, 1.5, size=n_pairs)
    x2 = rng.uniform(-0.5, 1.5, size=n_pairs)
    f1 = forward(net, x1)
    f2 = forward(net, x2)
    fm = forward(net, 0.5 * (x1 + x2))
    excess = fm - 0.5 * (f1 + f2)
    return ConvexityReport(
        max_violation=float(max(0.0, excess.max())) if n_pairs else 0.0,
        violations=int(np.sum(excess > tol)),
        pairs=n_pairs,
    )


def signed_fit_bias(net: Icnn, params: BatteryParams, side: str, lo: float, hi: float, n: int = 200) -> float:
    """Mean signed surrogate error on a per-unit power band (surrogate minus plant)."""
    p = np.linspace(lo, hi, n)
    truth = charge_transfer(p, params) if side == "charge" else discharge_transfer(p, params)
    return float(np.mean(forward(net, p) - truth))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_matrix(mat: np.ndarray) -> str:
    rows = ", ".join("[" + ", ".join(_fmt(v) for v in row) + "]" for row in np.atleast_2d(mat))
    return "[" + rows + "]"


def dumps_icnn(net: Icnn) -> str:
    """Serialize to JSON with row-major matrices and 17-significant-digit floats."""
    widths = "[" + ", ".join(str(w) for w in net.widths) + "]"
    layers = []
    for lyr in net.layers:
        layers.append(
            '{"W": %s, "D": %s, "b": %s}'
            % (_fmt_matrix(lyr.w), _fmt_matrix(lyr.d), "[" + ", ".join(_fmt(v) for v in lyr.b) + "]")
        )
    return '{"widths": %s, "layers": [%s]}\n' % (widths, ", ".join(layers))


def save_icnn(net: Icnn, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_icnn(net))


def load_icnn(path) -> Icnn:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    layers = [
        Layer(
            np.asarray(entry["W"], dtype=float),
            np.asarray(entry["D"], dtype=float),
            np.asarray(entry["b"], dtype=float),
        )
        for entry in doc["layers"]
    ]
    net = Icnn(layers).validate()
    if net.widths != list(doc["widths"]):
        raise ValueError("widths field inconsistent with layer shapes")
    return net
