"""Hand-built perfect-fit weights and exact piecewise-linear analysis of 1-D ReLU nets.

The constructed K x (N1 + N2) network carries two independent blocks:

* nodes ``0..N1-1`` of every hidden layer implement an N1-piece tent map, so
  the K-fold composition is a sawtooth with ``N1**K`` linear pieces on [0, 1];
* nodes ``N1..N-1`` hold the relu basis of a linear spline in the first layer
  and pass it unchanged (relu of a nonnegative value) through the later layers.

The output node adds ``amplitude * sawtooth`` and the spline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net_core import Activation, Architecture, ContractError, Dataset, flatten, forward_many, preactivations

COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class PiecewiseLinear:
    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        k = np.array(self.knots, dtype=np.float64)
        v = np.array(self.values, dtype=np.float64)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2:
            raise ContractError("need at least two knots with matching values")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise ContractError("knots and values must be finite")
        if np.any(np.diff(k) <= 0):
            raise ContractError("knots must be strictly increasing")
        k.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)

    @property
    def segment_count(self) -> int:
        return self.knots.size - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    def total_variation(self) -> float:
        return float(np.sum(np.abs(np.diff(self.values))))

    def to_dict(self) -> dict:
        return {"knots": [repr(float(x)) for x in self.knots],
                "values": [repr(float(y)) for y in self.values]}

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseLinear":
        return cls([float(x) for x in d["knots"]], [float(y) for y in d["values"]])


@dataclass(frozen=True)
class BlockSpec:
    hidden_layers: int
    sawtooth_width: int
    spline_width: int
    spline: PiecewiseLinear | None = None
    amplitude: float = 0.25

    @property
    def width(self) -> int:
        return self.sawtooth_width + self.spline_width

    def validate(self) -> None:
        K, n1, n2 = self.hidden_layers, self.sawtooth_width, self.spline_width
        if K < 1:
            raise ContractError("need at least one hidden layer")
        if n1 < 0 or n2 < 0 or n1 + n2 < 1:
            raise ContractError("block widths must be nonnegative with positive sum")
        if n1 == 1:
            raise ContractError("a tent map needs at least 2 relu units (N1 = 1 given)")
        if not self.amplitude > 0:
            raise ContractError("amplitude must be positive")
        if self.spline is not None:
            lo, hi = self.spline.domain
            if lo != 0.0 or hi != 1.0:
                raise ContractError("spline must be defined on [0, 1]")
            if self.spline.segment_count > n2:
                raise ContractError(
                    f"spline has {self.spline.segment_count} segments but only {n2} first-layer units")

    def to_dict(self) -> dict:
        return {"hidden_layers": self.hidden_layers, "sawtooth_width": self.sawtooth_width,
                "spline_width": self.spline_width, "amplitude": self.amplitude,
                "spline": None if self.spline is None else self.spline.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BlockSpec":
        sp = d.get("spline")
        return cls(int(d["hidden_layers"]), int(d["sawtooth_width"]), int(d["spline_width"]),
                   None if sp is None else PiecewiseLinear.from_dict(sp),
                   float(d.get("amplitude", 0.25)))


def random_spline(seed: int, segments: int = 3, grid: int = 32, value_range=(0.0, 1.5)) -> PiecewiseLinear:
    """Random spline on [0, 1] whose interior knots sit on a 1/grid lattice.

    Placing the knots on the sawtooth's breakpoint lattice keeps the target's
    segment count at ``grid`` for the main 5 x (2+3) example.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    interior = np.sort(rng.choice(np.arange(1, grid), size=segments - 1, replace=False)) / grid
    knots = np.concatenate([[0.0], interior, [1.0]])
    values = rng.uniform(*value_range, size=knots.size)
    return PiecewiseLinear(knots, values)


def default_block_spec(seed: int = 2019) -> BlockSpec:
    return BlockSpec(5, 2, 3, random_spline(seed), 0.25)


def tent_coefficients(n1: int) -> np.ndarray:
    """Output weights c with m(x) = sum_i c_i relu(x - i/n1) the n1-piece tent map."""
    c = np.array([2.0 * n1 * (-1) ** i for i in range(n1)])
    c[0] = n1
    return c


def tent_map(x, n1: int):
    """Closed-form n1-piece tent map on [0, 1] (slopes alternate +n1, -n1)."""
    x = np.asarray(x, dtype=np.float64)
    p = np.minimum(np.floor(x * n1), n1 - 1)
    up = (p % 2) == 0
    return np.where(up, n1 * x - p, p + 1 - n1 * x)


def sawtooth(x, n1: int, k: int):
    for _ in range(k):
        x = tent_map(x, n1)
    return x


@dataclass(frozen=True)
class SawtoothBlock:
    """Layerwise weights of the tent-map block: layer 1 reads x, layers 2..K read the previous block."""

    first_weights: np.ndarray   # (N1, 1)
    hidden_weights: np.ndarray  # (N1, N1), shared by layers 2..K
    biases: np.ndarray          # (N1,)
    output_weights: np.ndarray  # (N1,)
    layers: int


def build_sawtooth_block(hidden_layers: int, n1: int) -> SawtoothBlock:
    if n1 < 2:
        raise ContractError("a tent map needs at least 2 relu units")
    if hidden_layers < 1:
        raise ContractError("need at least one hidden layer")
    c = tent_coefficients(n1)
    return SawtoothBlock(
        first_weights=np.ones((n1, 1)),
        hidden_weights=np.tile(c, (n1, 1)),
        biases=-np.arange(n1) / n1,
        output_weights=c,
        layers=hidden_layers,
    )


def build_perfect_fit(spec: BlockSpec) -> tuple[Architecture, np.ndarray]:
    spec.validate()
    K, n1, n2 = spec.hidden_layers, spec.sawtooth_width, spec.spline_width
    N = n1 + n2
    arch = Architecture(K, N, Activation.relu())
    layers = [(np.zeros((N, 1)), np.zeros(N))]
    layers += [(np.zeros((N, N)), np.zeros(N)) for _ in range(K - 1)]
    out_W, out_b = np.zeros((1, N)), np.zeros(1)

    if n1:
        saw = build_sawtooth_block(K, n1)
        layers[0][0][:n1] = saw.first_weights
        layers[0][1][:n1] = saw.biases
        for W, b in layers[1:]:
            W[:n1, :n1] = saw.hidden_weights
            b[:n1] = saw.biases
        out_W[0, :n1] = spec.amplitude * saw.output_weights

    if spec.spline is not None and n2:
        sp = spec.spline
        m = sp.segment_count
        s = sp.slopes
        idx = np.arange(n1, n1 + m)
        layers[0][0][idx, 0] = 1.0
        layers[0][1][idx] = -sp.knots[:-1]
        for W, _ in layers[1:]:
            W[idx, idx] = 1.0
        out_W[0, idx] = np.concatenate([[s[0]], np.diff(s)])
        out_b[0] = sp.values[0]

    layers.append((out_W, out_b))
    return arch, flatten(layers)


def target_function(spec: BlockSpec):
    """Closed-form output of the constructed network on [0, 1]."""
    def f(x):
        x = np.asarray(x, dtype=np.float64)
        y = np.zeros_like(x)
        if spec.sawtooth_width:
            y = y + spec.amplitude * sawtooth(x, spec.sawtooth_width, spec.hidden_layers)
        if spec.spline is not None:
            y = y + spec.spline(x)
        return y
    return f


def merge_collinear(knots, values, tol: float = COLLINEAR_TOL) -> PiecewiseLinear:
    knots = np.asarray(knots, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    keep_x, keep_y = [knots[0]], [values[0]]
    for i in range(1, knots.size - 1):
        x0, y0 = keep_x[-1], keep_y[-1]
        x2, y2 = knots[i + 1], values[i + 1]
        line = y0 + (y2 - y0) * (knots[i] - x0) / (x2 - x0)
        if abs(values[i] - line) > tol:
            keep_x.append(knots[i])
            keep_y.append(values[i])
    keep_x.append(knots[-1])
    keep_y.append(values[-1])
    return PiecewiseLinear(keep_x, keep_y)


def extract_knots(arch: Architecture, w, interval=(0.0, 1.0)) -> PiecewiseLinear:
    """Exact piecewise-linear form of a relu network's output on ``interval``.

    Breakpoints are propagated layer by layer: on each current segment every
    preactivation of the next layer is affine, so its zero crossing is found by
    linear interpolation between the segment endpoints.
    """
    if arch.activation.kind != "relu":
        raise ContractError("breakpoint extraction needs relu activation")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ContractError("interval must satisfy lo < hi")
    xs = np.array([lo, hi])
    min_gap = 1e-13 * (hi - lo)
    for layer in range(arch.hidden_layers):
        z = preactivations(arch, w, xs)[layer]
        za, zb = z[:, :-1], z[:, 1:]
        cross = (za * zb) < 0
        if not cross.any():
            continue
        node, seg = np.nonzero(cross)
        a, b = xs[seg], xs[seg + 1]
        t = za[node, seg] / (za[node, seg] - zb[node, seg])
        new = a + t * (b - a)
        new = new[(new - a > min_gap) & (b - new > min_gap)]
        xs = np.unique(np.concatenate([xs, new]))
    ys = forward_many(arch, w, xs)
    return merge_collinear(xs, ys)


def count_local_extrema(pl: PiecewiseLinear) -> int:
    """Local extrema on the half-open domain [lo, hi).

    Counts every interior knot where the slope changes sign (flat pieces are
    skipped) plus the left endpoint when the function leaves it non-flat.
    """
    s = pl.slopes
    sgn = np.sign(s[s != 0])
    if sgn.size == 0:
        return 0
    return int(np.count_nonzero(sgn[1:] != sgn[:-1])) + 1


def sample_training_set(pl: PiecewiseLinear, points_per_segment: int = 10,
                        include_right_endpoint: bool = False) -> Dataset:
    """Knots plus equally spaced interior points on every segment.

    Each segment contributes its left knot and ``points_per_segment - 1``
    interior points; the final knot is only added on request, so a 32-segment
    function gives 320 points by default.
    """
    if points_per_segment < 1:
        raise ContractError("points_per_segment must be >= 1")
    a, b = pl.knots[:-1], pl.knots[1:]
    frac = np.arange(points_per_segment) / points_per_segment
    xs = (a[:, None] + (b - a)[:, None] * frac[None, :]).ravel()
    if include_right_endpoint:
        xs = np.append(xs, pl.knots[-1])
    xs = np.unique(xs)
    return Dataset(xs, pl(xs))
