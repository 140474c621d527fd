"""Autoencoder feature extractor and the latent transform fed to the controller.

The autoencoder is a plain fully connected ReLU network trained with
full-batch gradient descent on the (tiny) set of environment observations.
After training it is frozen; every controller in a population shares it.

Latents go through two more steps before reaching a controller: per-feature
min-max scaling to [0, 1], then a clamped inverse sigmoid

    w = clip(log(v / (1 - v)), 0, 1)

which squashes most features to exactly 0 or 1.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctgraph

log = logging.getLogger(__name__)

LAYER_SIZES = (144, 64, 16, 64, 144)
SCHEMA = "neuromodlab.autoencoder/1"
EPS = 1e-6


class FeatureError(ValueError):
    pass


@dataclass
class AutoencoderParams:
    """Weights are stored ``(fan_in, fan_out)``; layer ``k`` maps sizes[k] -> sizes[k+1]."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise FeatureError("weights and biases must be non-empty and of equal length")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise FeatureError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and self.weights[k - 1].shape[1] != w.shape[0]:
                raise FeatureError(f"layer {k}: input size {w.shape[0]} does not chain")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def num_encoder_layers(self) -> int:
        return len(self.weights) // 2

    @property
    def latent_size(self) -> int:
        return self.layer_sizes[self.num_encoder_layers]

    def copy(self) -> "AutoencoderParams":
        return AutoencoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AutoencoderParams":
        if doc.get("schema") != SCHEMA:
            raise FeatureError(f"unsupported autoencoder schema {doc.get('schema')!r}")
        params = cls([np.asarray(w, dtype=float) for w in doc["weights"]],
                     [np.asarray(b, dtype=float) for b in doc["biases"]])
        if list(params.layer_sizes) != list(doc["layer_sizes"]):
            raise FeatureError("layer_sizes do not match the stored matrices")
        return params


def init_params(layer_sizes=LAYER_SIZES, rng=None, hidden_bias=0.1, output_bias=0.5) -> AutoencoderParams:
    """Glorot-uniform weights.

    Biases start slightly positive, and the output layer near the mean pixel
    intensity, so that ReLU units (the reconstruction layer included) do not
    start out dead.
    """
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.full(fan_out, hidden_bias))
    biases[-1][:] = output_bias
    return AutoencoderParams(weights, biases)


def _forward(params: AutoencoderParams, x: np.ndarray, layers=None):
    acts, pre = [x], []
    for w, b in list(zip(params.weights, params.biases))[:layers]:
        z = acts[-1] @ w + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0))
    return acts, pre


def _as_batch(params: AutoencoderParams, data) -> np.ndarray:
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if x.shape[1] != params.layer_sizes[0]:
        raise FeatureError(f"expected inputs of length {params.layer_sizes[0]}, got {x.shape[1]}")
    return x


def reconstruct(params: AutoencoderParams, data) -> np.ndarray:
    return _forward(params, _as_batch(params, data))[0][-1]


def loss(params: AutoencoderParams, data) -> float:
    """Training objective: squared reconstruction error per observation, averaged."""
    x = _as_batch(params, data)
    err = reconstruct(params, x) - x
    return float(np.sum(err * err) / x.shape[0])


def mse(params: AutoencoderParams, data) -> float:
    """Per-pixel mean squared reconstruction error."""
    x = _as_batch(params, data)
    err = reconstruct(params, x) - x
    return float(np.mean(err * err))


def gradients(params: AutoencoderParams, data):
    """Backprop gradients of :func:`loss` as ``(weight_grads, bias_grads)``."""
    x = _as_batch(params, data)
    acts, pre = _forward(params, x)
    delta = 2.0 * (acts[-1] - x) / x.shape[0]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for k in range(len(params.weights) - 1, -1, -1):
        delta = delta * (pre[k] > 0)
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k].T
    return gw, gb


def train_autoencoder(dataset, learning_rate=0.001, epochs=5000, rng=None,
                      layer_sizes=LAYER_SIZES, params=None):
    """Full-batch SGD on the reconstruction loss.

    Returns ``(params, history)`` where ``history`` holds the per-pixel MSE
    before each epoch's update plus the final value.
    """
    x = np.atleast_2d(np.asarray(dataset, dtype=float))
    if x.shape[0] == 0:
        raise FeatureError("cannot train on an empty dataset")
    if params is None:
        params = init_params(layer_sizes, rng)
    else:
        params = params.copy()
    history = []
    for epoch in range(epochs):
        acts, pre = _forward(params, x)
        err = acts[-1] - x
        history.append(float(np.mean(err * err)))
        delta = 2.0 * err / x.shape[0]
        for k in range(len(params.weights) - 1, -1, -1):
            delta = delta * (pre[k] > 0)
            gw = acts[k].T @ delta
            gb = delta.sum(axis=0)
            delta = delta @ params.weights[k].T
            params.weights[k] -= learning_rate * gw
            params.biases[k] -= learning_rate * gb
        if epoch and epoch % 1000 == 0:
            log.debug("epoch %d mse %.3g", epoch, history[-1])
    history.append(mse(params, x))
    return params, history


def encode(params: AutoencoderParams, obs) -> np.ndarray:
    """Latent features of one observation (1-D) or a batch (2-D)."""
    arr = np.asarray(obs, dtype=float)
    x = _as_batch(params, arr)
    z = _forward(params, x, params.num_encoder_layers)[0][-1]
    return z[0] if arr.ndim == 1 else z


def collect_observations(config: ctgraph.CtGraphConfig, replicate: int = 1) -> np.ndarray:
    """Every distinct image the environment can emit, each repeated ``replicate`` times."""
    return np.repeat(np.array(ctgraph.observation_table(config)), replicate, axis=0)


@dataclass
class LatentScaler:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=float)
        self.maximum = np.asarray(self.maximum, dtype=float)
        if self.minimum.shape != self.maximum.shape:
            raise FeatureError("min and max must have the same shape")
        if np.any(self.minimum > self.maximum):
            raise FeatureError("scaler min exceeds max")

    def scale(self, latent) -> np.ndarray:
        latent = np.asarray(latent, dtype=float)
        span = self.maximum - self.minimum
        degenerate = span <= 0
        safe = np.where(degenerate, 1.0, span)
        v = np.clip((latent - self.minimum) / safe, 0.0, 1.0)
        return np.where(degenerate, 0.5, v)

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "max": self.maximum.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentScaler":
        return cls(doc["min"], doc["max"])


def fit_scaler(latents) -> LatentScaler:
    latents = np.atleast_2d(np.asarray(latents, dtype=float))
    if latents.shape[0] < 2:
        raise FeatureError("need at least two latent vectors to fit a scaler")
    return LatentScaler(latents.min(axis=0), latents.max(axis=0))


def inverse_sigmoid_clamp(v) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=float), EPS, 1.0 - EPS)
    s = np.log(v / (1.0 - v))
    return np.where(s > 1.0, 1.0, np.where(s < 0.0, 0.0, s))


def transform(scaler: LatentScaler, latent) -> np.ndarray:
    """Scale a raw latent into [0, 1] and apply the clamped inverse sigmoid."""
    return inverse_sigmoid_clamp(scaler.scale(latent))


@dataclass
class FeatureExtractor:
    """A frozen autoencoder plus its scaler: observation pixels -> controller input."""

    params: AutoencoderParams
    scaler: LatentScaler
    meta: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_features(self) -> int:
        return self.params.latent_size

    def __call__(self, pixels) -> np.ndarray:
        return transform(self.scaler, encode(self.params, pixels))

    def table(self, config: ctgraph.CtGraphConfig) -> np.ndarray:
        """Controller inputs for every observation id of ``config``; cached."""
        key = (config.obs_seed, config.obs_side)
        if key not in self._cache:
            tbl = np.ascontiguousarray(self(ctgraph.observation_table(config)))
            tbl.setflags(write=False)
            self._cache[key] = tbl
        return self._cache[key]

    def to_dict(self) -> dict:
        doc = self.params.to_dict()
        doc["scaler"] = self.scaler.to_dict()
        doc["meta"] = self.meta
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureExtractor":
        return cls(AutoencoderParams.from_dict(doc), LatentScaler.from_dict(doc["scaler"]),
                   dict(doc.get("meta", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureExtractor":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def build_features(config: ctgraph.CtGraphConfig, epochs=5000, learning_rate=0.001, rng=None,
                   replicate: int = 1) -> FeatureExtractor:
    """Pretrain on every environment observation, then fit the scaler on the encodings."""
    data = collect_observations(config, replicate)
    params, history = train_autoencoder(data, learning_rate, epochs, rng)
    scaler = fit_scaler(encode(params, data))
    return FeatureExtractor(params, scaler, {
        "epochs": epochs,
        "learning_rate": learning_rate,
        "final_mse": history[-1],
        "num_observations": int(data.shape[0]),
    })
