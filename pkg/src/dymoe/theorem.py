"""Gaussian-mixture bench comparing parameter isolation against gated mixing.

Two isotropic Gaussian components with means ``mu1`` and ``mu2`` a distance
``B`` apart generate i.i.d. vectors.  Each component carries two classes:
points within radius ``d`` of their component mean get the "inner" label,
the rest the "outer" label.  One small MLP expert is trained per component.
The parameter-isolation rule sums the experts' logits; the mixture rule
weights them by a Gaussian-similarity gate before the softmax.  We estimate
both expected cross-entropies and their paired difference.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import chi2

from . import diffmath as dm
from .baselines import pi_combine
from .diffmath import DiffValue
from .optim import Adam
from .trainer import SequencingError

NUM_CLASSES = 4


class MixtureSpecError(ValueError):
    pass


@dataclass
class MixtureSpec:
    """Two-component mixture; ``mu1`` sits at the origin and ``mu2`` at ``B e_1``."""

    B: float = 4.0
    sigma: float = 1.0
    d: float = 1.0
    dims: int = 8
    n_train: int = 2000
    n_eval: int = 10000
    n_components: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.sigma <= 0:
            raise MixtureSpecError("sigma must be positive")
        if self.d < 0 or self.B < 0:
            raise MixtureSpecError("B and d must be nonnegative")
        if 2 * self.d > self.B:
            raise MixtureSpecError(f"threshold radius too large: 2d = {2 * self.d} > B = {self.B}")
        if self.dims < 1 or self.n_train < 1 or self.n_eval < 1:
            raise MixtureSpecError("dims and sample counts must be positive")
        if self.n_components not in (1, 2):
            raise MixtureSpecError("n_components must be 1 or 2")

    @property
    def mu1(self) -> np.ndarray:
        return np.zeros(self.dims)

    @property
    def mu2(self) -> np.ndarray:
        m = np.zeros(self.dims)
        m[0] = self.B
        return m

    def mean(self, component: int) -> np.ndarray:
        if component not in (1, 2):
            raise ValueError(f"component must be 1 or 2, got {component}")
        return self.mu1 if component == 1 else self.mu2

    def inner_mass(self) -> float:
        """Probability that a sample lies within ``d`` of its own mean."""
        return float(chi2.cdf((self.d / self.sigma) ** 2, self.dims))


@dataclass
class MixtureSample:
    x: np.ndarray
    labels: np.ndarray
    component: np.ndarray


def label_by_distance(x, spec: MixtureSpec, component: int) -> int:
    """0/1 for component 1 and 2/3 for component 2; the inner ball is closed."""
    dist = np.linalg.norm(np.asarray(x, dtype=np.float64) - spec.mean(component))
    base = 0 if component == 1 else 2
    return base if dist <= spec.d else base + 1


def _labels(x: np.ndarray, comp: np.ndarray, spec: MixtureSpec) -> np.ndarray:
    means = np.where((comp == 1)[:, None], spec.mu1[None, :], spec.mu2[None, :])
    dist = np.linalg.norm(x - means, axis=1)
    return np.where(comp == 1, 0, 2) + (dist > spec.d).astype(np.int64)


def sample_component(spec: MixtureSpec, component: int, n: int, seed) -> MixtureSample:
    rng = np.random.default_rng(seed)
    x = spec.mean(component) + spec.sigma * rng.standard_normal((n, spec.dims))
    comp = np.full(n, component, dtype=np.int64)
    return MixtureSample(x, _labels(x, comp, spec), comp)


def sample_mixture(spec: MixtureSpec, n: int, seed) -> MixtureSample:
    """``n // 2`` samples per component (all ``n`` from component 1 if single)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    if spec.n_components == 1:
        comp = np.ones(n, dtype=np.int64)
    else:
        comp = np.repeat(np.array([1, 2]), [n - n // 2, n // 2])
    means = np.where((comp == 1)[:, None], spec.mu1[None, :], spec.mu2[None, :])
    x = means + spec.sigma * rng.standard_normal((n, spec.dims))
    return MixtureSample(x, _labels(x, comp, spec), comp)


def gaussian_gate(x, spec: MixtureSpec, gates=None) -> np.ndarray:
    """Normalized ``exp(-||x - g_i||^2 / (2 sigma^2))`` over the two gate vectors.

    ``gates`` defaults to the true means; pass empirical means to mirror a
    trained gate.  Accepts one vector or a batch of rows.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.stack([spec.mu1, spec.mu2]) if gates is None else np.asarray(gates, dtype=np.float64)
    xb = np.atleast_2d(x)
    logits = -((xb[:, None, :] - g[None, :, :]) ** 2).sum(axis=2) / (2 * spec.sigma**2)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if x.ndim == 1 else w


# -- experts ---------------------------------------------------------------
@dataclass
class MLPExpert:
    """Two affine maps with a ReLU between, ``dims -> hidden -> 4`` logits."""

    w1: DiffValue
    b1: DiffValue
    w2: DiffValue
    b2: DiffValue
    trained: bool = False
    losses: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, dims: int, hidden: int, rng: np.random.Generator) -> "MLPExpert":
        a, b = 1.0 / np.sqrt(dims), 1.0 / np.sqrt(hidden)
        return cls(dm.parameter(rng.uniform(-a, a, (hidden, dims))), dm.parameter(rng.uniform(-a, a, hidden)),
                   dm.parameter(rng.uniform(-b, b, (NUM_CLASSES, hidden))),
                   dm.parameter(rng.uniform(-b, b, NUM_CLASSES)))

    def params(self) -> list[DiffValue]:
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x) -> DiffValue:
        h = dm.relu(dm.add(dm.matmul(dm.as_value(x), dm.transpose(self.w1)), self.b1))
        return dm.add(dm.matmul(h, dm.transpose(self.w2)), self.b2)

    def logits(self, x) -> np.ndarray:
        if not self.trained:
            raise SequencingError("expert used before training")
        with dm.no_grad():
            return self.forward(np.atleast_2d(x)).data


def train_expert(x: np.ndarray, y: np.ndarray, seed, epochs: int = 200, lr: float = 1e-3,
                 hidden: int = 32, batch_size: int = 128) -> MLPExpert:
    """Minibatch Adam on cross-entropy over the 4 classes."""
    rng = np.random.default_rng(seed)
    expert = MLPExpert.init(x.shape[1], hidden, rng)
    opt = Adam(lr)
    params = expert.params()
    for _ in range(epochs):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for lo in range(0, order.size, batch_size):
            idx = order[lo:lo + batch_size]
            for p in params:
                p.zero_grad()
            loss = dm.cross_entropy(expert.forward(x[idx]), y[idx])
            dm.backward(loss)
            opt.step(params)
            total += loss.item() * idx.size
        expert.losses.append(total / x.shape[0])
    expert.trained = True
    return expert


@dataclass
class TrainedPair:
    expert1: MLPExpert
    expert2: MLPExpert | None
    gates: np.ndarray


def train_pair(spec: MixtureSpec, seed: int = 0, epochs: int = 200, lr: float = 1e-3,
               hidden: int = 32) -> TrainedPair:
    """Train one expert per component; gate vectors are the empirical component means."""
    s1 = sample_component(spec, 1, spec.n_train, [seed, 1])
    e1 = train_expert(s1.x, s1.labels, [seed, 11], epochs, lr, hidden)
    if spec.n_components == 1:
        return TrainedPair(e1, None, s1.x.mean(axis=0)[None, :])
    s2 = sample_component(spec, 2, spec.n_train, [seed, 2])
    e2 = train_expert(s2.x, s2.labels, [seed, 12], epochs, lr, hidden)
    return TrainedPair(e1, e2, np.stack([s1.x.mean(axis=0), s2.x.mean(axis=0)]))


def _nll(prob: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -np.log(np.maximum(prob[np.arange(y.size), y], dm.EPS))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    return dm.softmax(DiffValue(z), axis=1).data


def bootstrap_se(values: np.ndarray, resamples: int = 1000, seed=0) -> float:
    """Standard deviation of the resampled means."""
    rng = np.random.default_rng(seed)
    n = values.size
    means = np.array([values[rng.integers(0, n, n)].mean() for _ in range(resamples)])
    return float(means.std(ddof=1))


@dataclass
class LossComparison:
    loss_pi: float
    loss_dy: float
    delta: float
    stderr: float

    @property
    def significant(self) -> bool:
        return self.delta > 0 and abs(self.delta) > 3 * self.stderr

    @property
    def verdict(self) -> str:
        if self.significant:
            return "holds"
        return "inconclusive" if self.delta > 0 else "violated"


def compare_losses(spec: MixtureSpec, expert1: MLPExpert, expert2: MLPExpert | None, n: int, seed,
                   gates=None, resamples: int = 1000) -> LossComparison:
    """Monte-Carlo cross-entropy of both combination rules on ``n`` fresh samples.

    With a single expert both rules reduce to the expert's own softmax.
    """
    if not expert1.trained or (expert2 is not None and not expert2.trained):
        raise SequencingError("experts must be trained before comparison")
    s = sample_mixture(spec, n, [seed, 99])
    f1 = expert1.logits(s.x)
    if expert2 is None:
        per_pi = per_dy = _nll(_softmax_rows(f1), s.labels)
    else:
        f2 = expert2.logits(s.x)
        alpha = gaussian_gate(s.x, spec, gates)
        per_pi = _nll(pi_combine(f1, f2), s.labels)
        per_dy = _nll(_softmax_rows(alpha[:, :1] * f1 + alpha[:, 1:] * f2), s.labels)
    diff = per_pi - per_dy
    return LossComparison(float(per_pi.mean()), float(per_dy.mean()), float(diff.mean()),
                          bootstrap_se(diff, resamples, [seed, 7]))


@dataclass
class SweepPoint:
    d_over_sigma: float
    sigma: float
    comparison: LossComparison


def run_comparison(spec: MixtureSpec, seed: int = 0, epochs: int = 200, lr: float = 1e-3) -> LossComparison:
    pair = train_pair(spec, seed, epochs, lr)
    return compare_losses(spec, pair.expert1, pair.expert2, spec.n_eval, seed, pair.gates)


def sweep(base: MixtureSpec, ratios=(1.0, 2.0, 4.0), seed: int = 0, epochs: int = 200,
          lr: float = 1e-3) -> list[SweepPoint]:
    """Vary ``d / sigma`` by shrinking sigma with ``d`` and ``B`` held fixed."""
    out = []
    for r in ratios:
        spec = MixtureSpec(**{**asdict(base), "sigma": base.d / r})
        out.append(SweepPoint(r, spec.sigma, run_comparison(spec, seed, epochs, lr)))
    return out


def is_monotone(points: list[SweepPoint], tol_se: float = 1.0) -> bool:
    """Each Delta is at least the previous one minus ``tol_se`` standard errors."""
    for a, b in zip(points, points[1:]):
        slack = tol_se * max(a.comparison.stderr, b.comparison.stderr)
        if b.comparison.delta < a.comparison.delta - slack:
            return False
    return True


def report_dict(spec: MixtureSpec, cmp: LossComparison, points: list[SweepPoint] | None = None) -> dict:
    out = {
        "spec": asdict(spec),
        "E_L_PI": cmp.loss_pi,
        "E_L_Dy": cmp.loss_dy,
        "delta": cmp.delta,
        "stderr": cmp.stderr,
        "verdict": cmp.verdict,
    }
    if points is not None:
        out["sweep"] = [{"d_over_sigma": p.d_over_sigma, "sigma": p.sigma, "delta": p.comparison.delta,
                         "stderr": p.comparison.stderr, "E_L_PI": p.comparison.loss_pi,
                         "E_L_Dy": p.comparison.loss_dy} for p in points]
        out["sweep_monotone"] = is_monotone(points)
    return out
