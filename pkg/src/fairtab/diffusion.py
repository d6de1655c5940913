"""Denoising diffusion over encoded tables.

The forward (corruption) process runs two branches over one encoded
matrix: the numerical block follows the Gaussian kernel

    q(x_t | x_0) = N(sqrt(abar_t) x_0, (1 - abar_t) I)

and each one-hot categorical block follows the uniform-mixing kernel
Cat((1 - beta_t) x_{t-1} + beta_t / K), whose t-step marginal is
abar_t x_0 + (1 - abar_t) / K.  A single MLP sees the corrupted row plus
a learned timestep embedding and predicts the Gaussian noise for the
numerical block and per-category logits for every categorical block.

Sampling runs the learned chain backwards from pure noise: the
numerical block steps through the epsilon-parameterized posterior mean
with variance beta_t, and each categorical block samples from the
one-step posterior blended with the softmax of the predicted logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    DataTable,
    EncodedLayout,
    EncodedMatrix,
    QuantileTransform,
    ColumnTransform,
    TableSchema,
    build_layout,
    decode,
)
from .errors import SchemaError, TrainingError
from .serialize import load_bundle, save_bundle

DIFFUSION_BUNDLE = "fairtab-diffusion"
SAMPLE_CHUNK = 8192


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step corruption rates beta_t with their cumulative products."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 1:
            raise TrainingError("schedule needs at least one beta")
        if np.any(b <= 0.0) or np.any(b >= 1.0):
            raise TrainingError("every beta must lie strictly in (0, 1)")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", 1.0 - b)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - b))
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise TrainingError("alpha_bar must be strictly decreasing")

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t):
        """abar at 1-based step t (scalar or array)."""
        return self.alpha_bars[np.asarray(t) - 1]

    def alpha_bar_prev(self, t: int) -> float:
        """abar at step t-1, defined as 1 at t = 1."""
        return 1.0 if t == 1 else float(self.alpha_bars[t - 2])


def linear_schedule(timesteps: int, start: float = 1e-4, end: float = 0.02) -> NoiseSchedule:
    """Linear betas, rescaled so shorter chains still reach pure noise.

    The grid start..end is the conventional 1000-step one; for T steps
    the betas are multiplied by 1000/T (clipped below 1) so that abar_T
    stays near zero for any T.
    """
    if timesteps < 1:
        raise TrainingError("timesteps must be at least 1")
    scale = 1000.0 / timesteps
    betas = np.clip(np.linspace(start, end, timesteps) * scale, 1e-8, 0.999)
    return NoiseSchedule(betas=betas)


def _check_t(schedule: NoiseSchedule, t) -> np.ndarray:
    arr = np.asarray(t)
    if arr.min() < 1 or arr.max() > schedule.timesteps:
        raise TrainingError(f"timestep {t} outside 1..{schedule.timesteps}")
    return arr


def gaussian_forward(schedule: NoiseSchedule, x0, t, noise) -> np.ndarray:
    """Closed-form corruption of a real block at step t."""
    t = _check_t(schedule, t)
    x0 = np.asarray(x0, dtype=np.float64)
    ab = schedule.alpha_bar(t)
    if x0.ndim == 2:
        ab = np.reshape(ab, (-1, 1)) if np.ndim(ab) == 1 else ab
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(noise)


def multinomial_forward(schedule: NoiseSchedule, x0_onehot, t) -> np.ndarray:
    """Closed-form t-step category distribution for one-hot rows."""
    t = _check_t(schedule, t)
    x0 = np.asarray(x0_onehot, dtype=np.float64)
    k = x0.shape[-1]
    if k < 2:
        raise TrainingError("categorical blocks need at least 2 categories")
    ab = schedule.alpha_bar(t)
    if x0.ndim == 2 and np.ndim(ab) == 1:
        ab = np.reshape(ab, (-1, 1))
    return ab * x0 + (1.0 - ab) / k


def gaussian_reverse_step(schedule: NoiseSchedule, xt, t: int, eps_hat, noise=None) -> np.ndarray:
    """One learned reverse step for the numerical block (variance beta_t)."""
    _check_t(schedule, t)
    beta = schedule.betas[t - 1]
    ab = schedule.alpha_bars[t - 1]
    mean = (xt - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(1.0 - beta)
    if t > 1 and noise is not None:
        return mean + math.sqrt(beta) * noise
    return mean


def multinomial_posterior(schedule: NoiseSchedule, xt_onehot, t: int, x0_probs) -> np.ndarray:
    """Categorical reverse distribution q(x_{t-1} | x_t, x0_probs)."""
    _check_t(schedule, t)
    xt = np.asarray(xt_onehot, dtype=np.float64)
    k = xt.shape[-1]
    alpha = schedule.alphas[t - 1]
    ab_prev = schedule.alpha_bar_prev(t)
    theta = (alpha * xt + (1.0 - alpha) / k) * (ab_prev * x0_probs + (1.0 - ab_prev) / k)
    return theta / theta.sum(axis=-1, keepdims=True)


def _sample_categories(probs: np.ndarray, rng) -> np.ndarray:
    """One index per row from per-row probability vectors."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(len(probs))
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


@dataclass(frozen=True)
class DiffusionConfig:
    """Hyperparameters of the generative model and its training run."""

    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: tuple[int, ...] = (256, 256)
    embed_dim: int = 64
    epochs: int = 300
    batch_size: int = 256
    learning_rate: float = 1e-3
    momentum: float = 0.9

    def __post_init__(self):
        if self.timesteps < 1 or self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("timesteps, epochs, and batch_size must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise TrainingError("hidden layer sizes must be positive")
        if self.embed_dim < 1:
            raise TrainingError("embed_dim must be positive")
        if self.learning_rate <= 0.0 or not (0.0 <= self.momentum < 1.0):
            raise TrainingError("learning_rate must be > 0 and momentum in [0, 1)")
        if not (0.0 < self.beta_start <= self.beta_end):
            raise TrainingError("need 0 < beta_start <= beta_end")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return {
            "timesteps": self.timesteps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "hidden": list(self.hidden),
            "embed_dim": self.embed_dim,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DiffusionConfig":
        known = {k: raw[k] for k in raw}
        if "hidden" in known:
            known["hidden"] = tuple(known["hidden"])
        try:
            return cls(**known)
        except TypeError as exc:
            raise TrainingError(f"bad diffusion config: {exc}") from exc


class DenoiserMLP:
    """Rectifier MLP mapping a corrupted row (plus a learned timestep
    embedding added to the first hidden pre-activation) back to noise
    predictions and category logits, all in one output row."""

    def __init__(self, width: int, timesteps: int, hidden=(256, 256), embed_dim: int = 64, seed: int = 0):
        if width < 1:
            raise TrainingError("denoiser width must be positive")
        self.width = width
        self.timesteps = timesteps
        self.hidden = tuple(hidden)
        self.embed_dim = embed_dim
        rng = np.random.default_rng(seed)
        sizes = [width, *self.hidden, width]
        self.params: dict[str, np.ndarray] = {}
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            scale = math.sqrt(2.0 / fan_in) if i < len(sizes) - 2 else math.sqrt(1.0 / fan_in)
            self.params[f"w{i}"] = rng.standard_normal((fan_in, fan_out)) * scale
            self.params[f"b{i}"] = np.zeros(fan_out)
        self.params["emb"] = rng.standard_normal((timesteps, embed_dim)) * 0.01
        self.params["time_proj"] = rng.standard_normal((embed_dim, self.hidden[0])) * math.sqrt(
            2.0 / embed_dim
        )
        self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def n_layers(self) -> int:
        return len(self.hidden) + 1

    def forward(self, x: np.ndarray, tidx: np.ndarray):
        """Returns (output, cache); tidx is 0-based per row."""
        p = self.params
        emb_rows = p["emb"][tidx]
        pres, acts = [], []
        a = x
        for i in range(self.n_layers - 1):
            pre = a @ p[f"w{i}"] + p[f"b{i}"]
            if i == 0:
                pre = pre + emb_rows @ p["time_proj"]
            pres.append(pre)
            a = np.maximum(pre, 0.0)
            acts.append(a)
        out = a @ p[f"w{self.n_layers - 1}"] + p[f"b{self.n_layers - 1}"]
        return out, (x, tidx, emb_rows, pres, acts)

    def backward(self, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss with the given d(loss)/d(output)."""
        x, tidx, emb_rows, pres, acts = cache
        p = self.params
        grads: dict[str, np.ndarray] = {}
        last = self.n_layers - 1
        d = dout
        grads[f"w{last}"] = acts[-1].T @ d
        grads[f"b{last}"] = d.sum(axis=0)
        d = d @ p[f"w{last}"].T
        for i in range(last - 1, -1, -1):
            d = d * (pres[i] > 0.0)
            inp = acts[i - 1] if i > 0 else x
            grads[f"w{i}"] = inp.T @ d
            grads[f"b{i}"] = d.sum(axis=0)
            if i == 0:
                grads["time_proj"] = emb_rows.T @ d
                d_emb_rows = d @ p["time_proj"].T
                g_emb = np.zeros_like(p["emb"])
                np.add.at(g_emb, tidx, d_emb_rows)
                grads["emb"] = g_emb
            else:
                d = d @ p[f"w{i}"].T
        return grads

    def sgd_update(self, grads: dict[str, np.ndarray], learning_rate: float, momentum: float) -> None:
        for key, g in grads.items():
            v = self.velocity[key]
            v *= momentum
            v -= learning_rate * g
            self.params[key] += v


@dataclass(frozen=True)
class TrainingLoss:
    """Loss of one step: noise MSE plus mean per-column category loss."""

    numerical: float
    categorical: float

    def __post_init__(self):
        if not (math.isfinite(self.numerical) and math.isfinite(self.categorical)):
            raise TrainingError(
                "non-finite training loss; lower the learning rate or check the inputs"
            )
        if self.numerical < 0.0 or self.categorical < 0.0:
            raise TrainingError("loss components cannot be negative")

    @property
    def total(self) -> float:
        return self.numerical + self.categorical


def diffusion_loss(denoiser: DenoiserMLP, layout: EncodedLayout, x_t, tidx, eps_target, cat_targets,
                   with_grads: bool = True):
    """Loss (and optionally parameter gradients) on one corrupted batch.

    The numerical part is the mean squared error of the predicted noise
    over all numerical entries; the categorical part averages, over the
    categorical columns, the cross-entropy between each block's softmax
    and the original category.
    """
    out, cache = denoiser.forward(np.asarray(x_t, dtype=np.float64), np.asarray(tidx))
    n = len(out)
    num_width = layout.numerical_slice.stop
    cat_blocks = layout.categorical_blocks()
    dout = np.zeros_like(out)
    l_num = 0.0
    if num_width > 0:
        diff = out[:, :num_width] - eps_target
        l_num = float(np.mean(diff**2))
        dout[:, :num_width] = 2.0 * diff / (n * num_width)
    l_cat = 0.0
    if cat_blocks:
        rows = np.arange(n)
        for j, block in enumerate(cat_blocks):
            logits = out[:, block.offset : block.offset + block.width]
            z = logits - logits.max(axis=1, keepdims=True)
            log_softmax = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            softmax = np.exp(log_softmax)
            target = cat_targets[:, j]
            l_cat += -float(np.mean(log_softmax[rows, target]))
            g = softmax.copy()
            g[rows, target] -= 1.0
            dout[:, block.offset : block.offset + block.width] = g / (n * len(cat_blocks))
        l_cat /= len(cat_blocks)
    loss = TrainingLoss(numerical=l_num, categorical=l_cat)
    if not with_grads:
        return loss, None
    return loss, denoiser.backward(cache, dout)


def corrupt_batch(schedule: NoiseSchedule, layout: EncodedLayout, x0: np.ndarray, rng):
    """Draw per-row timesteps and corrupt both branches of a clean batch.

    Returns (x_t, tidx, eps, cat_targets): the corrupted rows, 0-based
    timestep indices, the Gaussian noise that was injected, and the
    original category index per categorical column.
    """
    n = len(x0)
    t = rng.integers(1, schedule.timesteps + 1, size=n)
    ab = schedule.alpha_bar(t)[:, None]
    x_t = np.zeros_like(x0)
    num_sl = layout.numerical_slice
    eps = np.zeros((n, num_sl.stop))
    if num_sl.stop > 0:
        eps = rng.standard_normal((n, num_sl.stop))
        x_t[:, num_sl] = np.sqrt(ab) * x0[:, num_sl] + np.sqrt(1.0 - ab) * eps
    cat_blocks = layout.categorical_blocks()
    cat_targets = np.zeros((n, len(cat_blocks)), dtype=np.int64)
    for j, block in enumerate(cat_blocks):
        sl = slice(block.offset, block.offset + block.width)
        probs = ab * x0[:, sl] + (1.0 - ab) / block.width
        drawn = _sample_categories(probs, rng)
        x_t[np.arange(n), block.offset + drawn] = 1.0
        cat_targets[:, j] = np.argmax(x0[:, sl], axis=1)
    return x_t, t - 1, eps, cat_targets


@dataclass
class DiffusionModel:
    """A trained generative model plus everything needed to decode rows."""

    config: DiffusionConfig
    schedule: NoiseSchedule
    denoiser: DenoiserMLP
    layout: EncodedLayout
    transform: QuantileTransform
    loss_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.denoiser.width != self.layout.width:
            raise SchemaError("denoiser width does not match the encoded layout")


def _validate_layout_for_training(layout: EncodedLayout) -> None:
    for block in layout.categorical_blocks():
        if block.width < 2:
            raise TrainingError(
                f"column {block.name!r} has a single category; need at least 2"
            )


def training_step(model: DiffusionModel, batch: EncodedMatrix, seed: int = 0) -> TrainingLoss:
    """One corruption + gradient step; returns the pre-update loss."""
    if batch.n_rows == 0:
        raise TrainingError("training batch is empty")
    if batch.layout.width != model.layout.width:
        raise SchemaError("batch layout does not match the model layout")
    rng = np.random.default_rng(seed)
    return _step(model, batch.data, rng)


def _step(model: DiffusionModel, x0: np.ndarray, rng) -> TrainingLoss:
    x_t, tidx, eps, cat_targets = corrupt_batch(model.schedule, model.layout, x0, rng)
    loss, grads = diffusion_loss(model.denoiser, model.layout, x_t, tidx, eps, cat_targets)
    model.denoiser.sgd_update(grads, model.config.learning_rate, model.config.momentum)
    return loss


def train(
    train_encoded: EncodedMatrix,
    transform: QuantileTransform,
    config: DiffusionConfig | None = None,
    seed: int = 0,
) -> DiffusionModel:
    """Fit the denoiser on an encoded training table.

    Deterministic for a fixed seed.  Aborts if the loss diverges past
    1000x its starting value or turns non-finite.
    """
    config = config or DiffusionConfig()
    if train_encoded.n_rows < 100:
        raise TrainingError(
            f"diffusion training needs at least 100 rows, got {train_encoded.n_rows}"
        )
    layout = train_encoded.layout
    _validate_layout_for_training(layout)
    schedule = linear_schedule(config.timesteps, config.beta_start, config.beta_end)
    root = np.random.SeedSequence(seed)
    init_seed, loop_seed = root.spawn(2)
    denoiser = DenoiserMLP(
        width=layout.width,
        timesteps=config.timesteps,
        hidden=config.hidden,
        embed_dim=config.embed_dim,
        seed=init_seed,
    )
    model = DiffusionModel(
        config=config,
        schedule=schedule,
        denoiser=denoiser,
        layout=layout,
        transform=transform,
        loss_log=[],
    )
    rng = np.random.default_rng(loop_seed)
    data = train_encoded.data
    n = len(data)
    first_loss = None
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = data[order[start : start + config.batch_size]]
            loss = _step(model, batch, rng)
            if first_loss is None:
                first_loss = loss.total
            if loss.total > 1000.0 * max(first_loss, 1e-12):
                raise TrainingError(
                    f"training diverged: loss {loss.total:.3g} exceeds 1000x the initial "
                    f"{first_loss:.3g}; lower the learning rate"
                )
            epoch_losses.append(loss.total)
        model.loss_log.append(float(np.mean(epoch_losses)))
    return model


def sample(model: DiffusionModel, n: int, seed: int = 0) -> DataTable:
    """Generate n rows by running the reverse chain from pure noise.

    Rows are produced in fixed-size chunks, each with its own child seed,
    so results are deterministic for a given (model, n, seed).
    """
    if n < 0:
        raise TrainingError("sample count cannot be negative")
    schema = model.layout.schema
    if set(model.layout.column_names) != set(schema.column_names):
        raise SchemaError("sampling requires a model trained on every schema column")
    if n == 0:
        return DataTable(
            schema=schema,
            numerical=np.zeros((0, len(schema.numerical_columns))),
            categorical=np.zeros((0, len(schema.categorical_columns)), dtype=np.int64),
            weights=np.zeros(0),
        )
    root = np.random.SeedSequence([seed, 2])
    chunks = []
    n_chunks = (n + SAMPLE_CHUNK - 1) // SAMPLE_CHUNK
    seeds = root.spawn(n_chunks)
    produced = 0
    for i in range(n_chunks):
        m = min(SAMPLE_CHUNK, n - produced)
        chunks.append(_sample_chunk(model, m, np.random.default_rng(seeds[i])))
        produced += m
    data = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
    return decode(EncodedMatrix(data=data, layout=model.layout), model.transform)


def _sample_chunk(model: DiffusionModel, m: int, rng) -> np.ndarray:
    layout = model.layout
    schedule = model.schedule
    num_sl = layout.numerical_slice
    cat_blocks = layout.categorical_blocks()
    x = np.zeros((m, layout.width))
    if num_sl.stop > 0:
        x[:, num_sl] = rng.standard_normal((m, num_sl.stop))
    for block in cat_blocks:
        start = rng.integers(0, block.width, size=m)
        x[np.arange(m), block.offset + start] = 1.0
    for t in range(schedule.timesteps, 0, -1):
        tidx = np.full(m, t - 1, dtype=np.int64)
        out, _ = model.denoiser.forward(x, tidx)
        new_x = np.zeros_like(x)
        if num_sl.stop > 0:
            noise = rng.standard_normal((m, num_sl.stop)) if t > 1 else None
            new_x[:, num_sl] = gaussian_reverse_step(schedule, x[:, num_sl], t, out[:, num_sl], noise)
        for block in cat_blocks:
            sl = slice(block.offset, block.offset + block.width)
            logits = out[:, sl]
            z = logits - logits.max(axis=1, keepdims=True)
            ez = np.exp(z)
            x0_probs = ez / ez.sum(axis=1, keepdims=True)
            theta = multinomial_posterior(schedule, x[:, sl], t, x0_probs)
            drawn = _sample_categories(theta, rng)
            new_x[np.arange(m), block.offset + drawn] = 1.0
        x = new_x
    return x


def save_model(model: DiffusionModel, path) -> None:
    """Write the model (schedule, parameters, layout, transform) to disk."""
    meta = {
        "config": model.config.to_dict(),
        "schema": model.layout.schema.to_dict(),
        "loss_log": [float(v) for v in model.loss_log],
        "transform_log": list(model.transform.log),
        "transform_columns": [
            {"name": ct.name, "constant": bool(ct.constant)} for ct in model.transform.columns
        ],
    }
    arrays = {"betas": model.schedule.betas}
    for key, value in model.denoiser.params.items():
        arrays[f"p_{key}"] = value
    for i, ct in enumerate(model.transform.columns):
        arrays[f"qt{i}_values"] = ct.values
        arrays[f"qt{i}_scores"] = ct.scores
    save_bundle(path, DIFFUSION_BUNDLE, meta, arrays)


def load_model(path) -> DiffusionModel:
    """Read back a model written by save_model."""
    meta, arrays = load_bundle(path, DIFFUSION_BUNDLE)
    try:
        config = DiffusionConfig.from_dict(meta["config"])
        schema = TableSchema.from_dict(meta["schema"])
        schedule = NoiseSchedule(betas=arrays["betas"])
        layout = build_layout(schema)
        denoiser = DenoiserMLP(
            width=layout.width,
            timesteps=config.timesteps,
            hidden=config.hidden,
            embed_dim=config.embed_dim,
        )
        for key in denoiser.params:
            stored = arrays[f"p_{key}"]
            if stored.shape != denoiser.params[key].shape:
                raise SchemaError(f"parameter {key} has shape {stored.shape}")
            denoiser.params[key] = stored
        columns = []
        for i, entry in enumerate(meta["transform_columns"]):
            columns.append(
                ColumnTransform(
                    name=entry["name"],
                    values=arrays[f"qt{i}_values"],
                    scores=arrays[f"qt{i}_scores"],
                    constant=bool(entry["constant"]),
                )
            )
        transform = QuantileTransform(columns=tuple(columns), log=tuple(meta["transform_log"]))
    except (KeyError, IndexError) as exc:
        from .errors import ModelFormatError

        raise ModelFormatError(f"{path}: incomplete model bundle: {exc}") from exc
    return DiffusionModel(
        config=config,
        schedule=schedule,
        denoiser=denoiser,
        layout=layout,
        transform=transform,
        loss_log=list(meta.get("loss_log", [])),
    )
