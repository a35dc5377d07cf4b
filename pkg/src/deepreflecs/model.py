"""The reflection-list classification network.

Pipeline (per sample): row-wise linear + ReLU on each reflection's five
features, optional global context layer, a second row-wise linear + ReLU,
global max pooling over the (unmasked) reflection list, and a dense
softmax head. The two pooling-style layers have no learnable parameters;
with the default widths the whole network has exactly 1,284 of them.

Only the real reflection rows are ever evaluated: the forward pass
compacts the padded buffer down to its unmasked rows first, which makes
the output bitwise independent of the pad length and of whatever values
sit in padding rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from . import container
from . import nn
from .preprocess import NormStats, PaddedInput

MAGIC = b"RFLN"


@dataclass(frozen=True)
class ReflectNetConfig:
    """Architecture knobs; defaults give the 1,284-parameter build."""

    n_features: int = 5
    width1: int = 16
    width2: int = 32
    n_classes: int = 4
    pad_length: int = 64
    use_gcl: bool = True  # the ablation switch

    def __post_init__(self):
        for name in ("n_features", "width1", "width2", "n_classes", "pad_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def conv2_in(self) -> int:
        # the global context layer doubles the feature width it feeds into
        return 2 * self.width1 if self.use_gcl else self.width1


@dataclass
class ClassDistribution:
    """Class probabilities plus the argmax decision (ties -> lowest index)."""

    probabilities: np.ndarray
    predicted: int


@dataclass
class ReflectNetModel:
    config: ReflectNetConfig
    conv1: nn.LinearParams
    conv2: nn.LinearParams
    head: nn.LinearParams
    norm_stats: NormStats

    def params(self) -> Dict[str, np.ndarray]:
        """Live views of all learnable tensors, keyed by stable names."""
        return {
            "conv1.weights": self.conv1.weights,
            "conv1.bias": self.conv1.bias,
            "conv2.weights": self.conv2.weights,
            "conv2.bias": self.conv2.bias,
            "head.weights": self.head.weights,
            "head.bias": self.head.bias,
        }

    def set_params(self, params: Dict[str, np.ndarray]) -> None:
        self.conv1 = nn.LinearParams(params["conv1.weights"], params["conv1.bias"])
        self.conv2 = nn.LinearParams(params["conv2.weights"], params["conv2.bias"])
        self.head = nn.LinearParams(params["head.weights"], params["head.bias"])

    def copy(self) -> "ReflectNetModel":
        return ReflectNetModel(
            config=self.config,
            conv1=self.conv1.copy(),
            conv2=self.conv2.copy(),
            head=self.head.copy(),
            norm_stats=NormStats(self.norm_stats.mean.copy(), self.norm_stats.std.copy()),
        )

    def astype(self, dtype) -> "ReflectNetModel":
        """Same model at a different parameter precision (e.g. float64)."""
        return ReflectNetModel(
            config=self.config,
            conv1=self.conv1.astype(dtype),
            conv2=self.conv2.astype(dtype),
            head=self.head.astype(dtype),
            norm_stats=self.norm_stats,
        )

    # convenience delegates so generic training code can stay model-agnostic
    def predict(self, inp: PaddedInput) -> ClassDistribution:
        return forward(self, inp)

    def train_step(self, batch, labels, lr, opt_state, rng=None, optimizer="adam"):
        return train_step(self, batch, labels, lr, opt_state, optimizer=optimizer)


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> nn.LinearParams:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
    bias = np.zeros(fan_out, dtype=dtype)
    return nn.LinearParams(weights, bias)


def build_model(
    config: ReflectNetConfig = ReflectNetConfig(),
    seed: int = 0,
    dtype=np.float32,
) -> ReflectNetModel:
    """Seeded uniform fan-in/fan-out init; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    conv1 = _init_linear(rng, config.n_features, config.width1, dtype)
    conv2 = _init_linear(rng, config.conv2_in, config.width2, dtype)
    head = _init_linear(rng, config.width2, config.n_classes, dtype)
    return ReflectNetModel(
        config=config,
        conv1=conv1,
        conv2=conv2,
        head=head,
        norm_stats=NormStats.identity(config.n_features),
    )


def count_params(model: ReflectNetModel) -> int:
    """Learnable scalars over all linear layers; pooling layers add none."""
    return model.conv1.size() + model.conv2.size() + model.head.size()


def _compact(inp: PaddedInput, dtype) -> np.ndarray:
    mask = np.asarray(inp.mask, dtype=bool)
    if not mask.any():
        raise nn.EmptyPoolError("input has no unmasked reflections")
    return np.ascontiguousarray(inp.features[mask]).astype(dtype, copy=False)


def forward(model: ReflectNetModel, inp: PaddedInput) -> ClassDistribution:
    """Class probabilities for one padded input."""
    x = _compact(inp, model.conv1.weights.dtype)
    all_rows = np.ones(x.shape[0], dtype=bool)
    h1 = nn.relu(nn.rowwise_linear(x, model.conv1))
    h = nn.global_context_layer(h1, all_rows) if model.config.use_gcl else h1
    h2 = nn.relu(nn.rowwise_linear(h, model.conv2))
    pooled = nn.masked_global_max_pool(h2, all_rows)
    logits = nn.dense(pooled, model.head)
    probs = nn.softmax(logits)
    return ClassDistribution(probabilities=probs, predicted=int(np.argmax(probs)))


def _forward_cache(model: ReflectNetModel, inp: PaddedInput) -> dict:
    x = _compact(inp, model.conv1.weights.dtype)
    all_rows = np.ones(x.shape[0], dtype=bool)
    z1 = nn.rowwise_linear(x, model.conv1)
    h1 = nn.relu(z1)
    h = nn.global_context_layer(h1, all_rows) if model.config.use_gcl else h1
    z2 = nn.rowwise_linear(h, model.conv2)
    h2 = nn.relu(z2)
    pooled = nn.masked_global_max_pool(h2, all_rows)
    logits = nn.dense(pooled, model.head)
    probs = nn.softmax(logits)
    return {
        "x": x, "mask": all_rows, "z1": z1, "h1": h1, "h": h,
        "z2": z2, "h2": h2, "pooled": pooled, "probs": probs,
    }


def loss_and_grads(
    model: ReflectNetModel,
    batch: Sequence[PaddedInput],
    labels: Sequence[int],
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its parameter gradients."""
    if len(batch) == 0:
        raise nn.TrainingError("empty training batch")
    dtype = model.conv1.weights.dtype
    grads = {name: np.zeros_like(p) for name, p in model.params().items()}
    total_loss = 0.0
    scale = 1.0 / len(batch)
    w1 = model.config.width1
    for inp, label in zip(batch, labels):
        cache = _forward_cache(model, inp)
        total_loss += nn.cross_entropy(cache["probs"], label)
        d_logits = (nn.softmax_cross_entropy_grad(cache["probs"], label) * scale).astype(dtype)
        d_pooled, d_hw, d_hb = nn.dense_backward(cache["pooled"], model.head, d_logits)
        grads["head.weights"] += d_hw
        grads["head.bias"] += d_hb
        d_h2 = nn.masked_global_max_pool_backward(cache["h2"], cache["mask"], d_pooled)
        d_z2 = nn.relu_backward(cache["z2"], d_h2)
        d_h, d_w2, d_b2 = nn.rowwise_linear_backward(cache["h"], model.conv2, d_z2)
        grads["conv2.weights"] += d_w2
        grads["conv2.bias"] += d_b2
        if model.config.use_gcl:
            d_h1 = nn.global_context_layer_backward(cache["h1"], cache["mask"], d_h)
        else:
            d_h1 = d_h
        d_z1 = nn.relu_backward(cache["z1"], d_h1)
        _, d_w1, d_b1 = nn.rowwise_linear_backward(cache["x"], model.conv1, d_z1)
        grads["conv1.weights"] += d_w1
        grads["conv1.bias"] += d_b1
    return total_loss * scale, grads


def train_step(
    model: ReflectNetModel,
    batch: Sequence[PaddedInput],
    labels: Sequence[int],
    lr: float,
    opt_state: nn.AdamState | None = None,
    optimizer: str = "adam",
) -> Tuple[float, nn.AdamState | None]:
    """One optimizer step on the mean batch loss; returns the pre-step loss."""
    loss, grads = loss_and_grads(model, batch, labels)
    if not np.isfinite(loss):
        raise nn.TrainingError(f"non-finite training loss {loss}")
    new_params, opt_state = nn.optimizer_step(
        model.params(), grads, lr, opt_state, strategy=optimizer
    )
    model.set_params(new_params)
    return loss, opt_state


def _pool_tie_margin(activations: np.ndarray) -> float:
    """Smallest gap between a column's two largest positive values.

    Columns pinned at zero by the ReLU are safe (covered by the
    pre-activation margin) and ignored; an exact tie between positive
    values returns 0.
    """
    if activations.shape[0] < 2:
        return np.inf
    part = np.partition(activations, activations.shape[0] - 2, axis=0)
    top1, top2 = part[-1], part[-2]
    gaps = top1 - top2
    positive = top1 > 0
    if not np.any(positive):
        return np.inf
    return float(gaps[positive].min())


def kink_margin(model: ReflectNetModel, inp: PaddedInput) -> float:
    """Distance of one sample's forward pass from every ReLU/max kink.

    Gradient checks need this to be comfortably larger than the finite
    difference step, otherwise the perturbed losses straddle a kink.
    """
    wide = model.astype(np.float64)
    cache = _forward_cache(wide, inp)
    margins = [np.abs(cache["z1"]).min(), np.abs(cache["z2"]).min()]
    if model.config.use_gcl:
        margins.append(_pool_tie_margin(cache["h1"]))
    margins.append(_pool_tie_margin(cache["h2"]))
    return float(min(margins))


def gradcheck(
    model: ReflectNetModel,
    inp: PaddedInput,
    label: int,
    h: float = 1e-5,
    max_checks_per_tensor: int | None = None,
    seed: int = 0,
) -> nn.GradCheckReport:
    """End-to-end central-difference check of every layer, in float64."""
    wide = model.astype(np.float64)
    _, analytic = loss_and_grads(wide, [inp], [label])

    def loss_fn(_params):
        return nn.cross_entropy(forward(wide, inp).probabilities, label)

    return nn.finite_diff_gradcheck(
        loss_fn, wide.params(), analytic, h=h,
        max_checks_per_tensor=max_checks_per_tensor, seed=seed,
    )


def random_safe_sample(
    model: ReflectNetModel,
    rng: np.random.Generator,
    margin: float = 1e-4,
    max_tries: int = 200,
) -> Tuple[PaddedInput, int]:
    """Random input whose forward pass stays clear of ReLU/max kinks."""
    cfg = model.config
    for _ in range(max_tries):
        m = int(rng.integers(2, cfg.pad_length + 1))
        features = np.zeros((cfg.pad_length, cfg.n_features))
        features[:m] = rng.standard_normal((m, cfg.n_features))
        mask = np.zeros(cfg.pad_length, dtype=bool)
        mask[:m] = True
        inp = PaddedInput(features=features, mask=mask, m_real=m)
        if kink_margin(model, inp) > margin:
            return inp, int(rng.integers(0, cfg.n_classes))
    raise RuntimeError(f"no kink-safe sample found in {max_tries} tries")


def gradcheck_random_sample(
    seed: int = 0,
    h: float = 1e-5,
    max_checks_per_tensor: int | None = None,
    config: ReflectNetConfig | None = None,
) -> nn.GradCheckReport:
    """Convenience wrapper: seeded model, seeded kink-safe sample, full check."""
    config = config or ReflectNetConfig(pad_length=8)
    net = build_model(config, seed=seed)
    rng = np.random.default_rng([seed, 1])
    inp, label = random_safe_sample(net, rng)
    return gradcheck(
        net, inp, label, h=h, max_checks_per_tensor=max_checks_per_tensor, seed=seed
    )


def serialize(model: ReflectNetModel) -> bytes:
    """Versioned binary blob; parameters as 32-bit floats, stats as float64."""
    cfg = model.config
    config_dict = {
        "n_features": cfg.n_features,
        "width1": cfg.width1,
        "width2": cfg.width2,
        "n_classes": cfg.n_classes,
        "pad_length": cfg.pad_length,
        "use_gcl": cfg.use_gcl,
    }
    arrays = [
        (name, np.asarray(p, dtype=np.float32)) for name, p in model.params().items()
    ]
    return container.write_container(
        MAGIC, config_dict, (model.norm_stats.mean, model.norm_stats.std), arrays
    )


def deserialize(data: bytes) -> ReflectNetModel:
    parsed = container.read_container(data, MAGIC)
    cfg = ReflectNetConfig(**parsed.config)
    model = build_model(cfg, seed=0)
    expected = {name: p.shape for name, p in model.params().items()}
    for name, shape in expected.items():
        if name not in parsed.arrays:
            raise container.ContainerError(f"missing parameter block '{name}'")
        if parsed.arrays[name].shape != shape:
            raise container.ContainerError(
                f"parameter '{name}' has shape {parsed.arrays[name].shape}, "
                f"expected {shape}"
            )
    if parsed.norm_means.size != cfg.n_features:
        raise container.ContainerError(
            f"norm-stats block has {parsed.norm_means.size} entries, "
            f"expected {cfg.n_features}"
        )
    model.set_params({name: parsed.arrays[name] for name in expected})
    model.norm_stats = NormStats(parsed.norm_means, parsed.norm_stds)
    return model


def save_model(model: ReflectNetModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path: str) -> ReflectNetModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
