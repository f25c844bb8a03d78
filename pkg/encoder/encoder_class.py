from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from core.domain import ToyImage
from core.errors import ConfigInvalid, DegenerateNorm, ShapeMismatch
from libraries.utils import make_rng

PARAM_NAMES = ("patch_w", "patch_b", "mix1_w", "mix1_b", "mix2_w", "mix2_b",
               "proj1_w", "proj1_b", "proj2_w", "proj2_b")
NORM_EPS = 1e-12
# f starts without offsets so a blank canvas maps to m = 0
ZERO_INIT = ("patch_b", "mix1_b", "mix2_b")


@dataclass(frozen=True)
class EncoderConfig:
    image_side: int = 16
    channels: int = 1
    patch_size: int = 4
    d1: int = 64
    d_hidden: int = 64
    d2: int = 32

    def __post_init__(self):
        if self.patch_size < 1 or self.image_side % self.patch_size:
            raise ConfigInvalid(f"patch_size={self.patch_size} must divide image_side={self.image_side}")
        if min(self.channels, self.d1, self.d_hidden, self.d2) < 1:
            raise ConfigInvalid("Encoder widths must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_side // self.patch_size

    @property
    def patch_pixels(self) -> int:
        return self.channels * self.patch_size ** 2

    def shapes(self) -> dict:
        return {
            "patch_w": (self.patch_pixels, self.d1), "patch_b": (self.d1,),
            "mix1_w": (self.d1, self.d1), "mix1_b": (self.d1,),
            "mix2_w": (self.d1, self.d1), "mix2_b": (self.d1,),
            "proj1_w": (self.d1, self.d_hidden), "proj1_b": (self.d_hidden,),
            "proj2_w": (self.d_hidden, self.d2), "proj2_b": (self.d2,),
        }

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EncoderParams:
    """f (patch embedding + per-position mixer) and g (two-layer projection head), by name."""

    config: EncoderConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def check(self) -> None:
        for name, shape in self.config.shapes().items():
            tensor = self.tensors.get(name)
            if tensor is None or tensor.shape != shape:
                raise ShapeMismatch(f"Parameter {name} should have shape {shape}")
            if not np.all(np.isfinite(tensor)):
                raise ValueError(f"Parameter {name} holds non-finite values")


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """
    Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for every weight and for the projection-head biases.
    The biases of f start at zero.
    """

    rng = make_rng(seed, 0xE1C0)
    fan_in = {"patch": config.patch_pixels, "mix1": config.d1, "mix2": config.d1,
              "proj1": config.d1, "proj2": config.d_hidden}
    tensors = {}
    for name, shape in config.shapes().items():
        if name in ZERO_INIT:
            tensors[name] = np.zeros(shape)
            continue
        bound = 1.0 / np.sqrt(fan_in[name.split("_")[0]])
        tensors[name] = rng.uniform(-bound, bound, size=shape)

    return EncoderParams(config, tensors)


@dataclass
class EncoderState:
    online: EncoderParams
    momentum: EncoderParams
    step_count: int = 0

    @classmethod
    def create(cls, config: EncoderConfig, seed: int) -> "EncoderState":
        online = init_params(config, seed)
        return cls(online=online, momentum=online.copy())


@dataclass(frozen=True)
class FeatureMap:
    """m with data of shape (d1, h, w)."""

    d1: int
    h: int
    w: int
    data: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class Representation:
    z: np.ndarray


@dataclass
class ForwardCache:
    """Intermediate activations of a batch forward pass, kept for backward."""

    patches: np.ndarray
    embed: np.ndarray
    pre_mix: np.ndarray
    mixed_hidden: np.ndarray
    maps: np.ndarray
    pooled: np.ndarray
    pre_proj: np.ndarray
    proj_hidden: np.ndarray
    unnormalized: np.ndarray
    norms: np.ndarray
    z: np.ndarray


def relu(x):
    return np.maximum(x, 0.0)


def images_to_array(images, config: EncoderConfig) -> np.ndarray:
    """Stacks ToyImages (or arrays) into a float64 (B, C, H, W) batch."""

    batch = []
    for image in images:
        data = image.data if isinstance(image, ToyImage) else np.asarray(image)
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.shape != (config.channels, config.image_side, config.image_side):
            raise ShapeMismatch(f"Image of shape {data.shape} does not match encoder input "
                                f"({config.channels}, {config.image_side}, {config.image_side})")
        batch.append(data)

    return np.stack(batch)


def extract_patches(batch: np.ndarray, patch_size: int) -> np.ndarray:
    """(B, C, H, W) -> (B, h*w, C*p*p), positions in row-major (i, j) order."""

    b, c, height, width = batch.shape
    if height % patch_size or width % patch_size:
        raise ShapeMismatch(f"Patch size {patch_size} does not divide image {height}x{width}")
    gh, gw = height // patch_size, width // patch_size
    patches = batch.reshape(b, c, gh, patch_size, gw, patch_size).transpose(0, 2, 4, 1, 3, 5)

    return patches.reshape(b, gh * gw, c * patch_size * patch_size)


def forward_batch(params: EncoderParams, images) -> ForwardCache:
    """
    Runs f and g on a batch.

    Args:
        params (EncoderParams): Encoder weights.
        images: Iterable of ToyImage / arrays, or a (B, C, H, W) array.

    Returns:
        ForwardCache: Every activation plus z of shape (B, d2).

    Raises:
        ShapeMismatch: If an image does not fit the encoder input.
        DegenerateNorm: If a projection output has (near) zero norm.
    """

    cfg = params.config
    batch = images if isinstance(images, np.ndarray) and images.ndim == 4 else images_to_array(images, cfg)
    patches = extract_patches(np.asarray(batch, dtype=np.float64), cfg.patch_size)

    embed = patches @ params["patch_w"] + params["patch_b"]
    pre_mix = embed @ params["mix1_w"] + params["mix1_b"]
    mixed_hidden = relu(pre_mix)
    maps = mixed_hidden @ params["mix2_w"] + params["mix2_b"]
    pooled = maps.mean(axis=1)

    pre_proj = pooled @ params["proj1_w"] + params["proj1_b"]
    proj_hidden = relu(pre_proj)
    unnormalized = proj_hidden @ params["proj2_w"] + params["proj2_b"]
    norms = np.linalg.norm(unnormalized, axis=1)
    if np.any(norms < NORM_EPS):
        raise DegenerateNorm("Projection output has zero norm and cannot be normalised")
    z = unnormalized / norms[:, None]

    return ForwardCache(patches, embed, pre_mix, mixed_hidden, maps, pooled, pre_proj, proj_hidden,
                        unnormalized, norms, z)


def forward_map(params: EncoderParams, image) -> FeatureMap:
    """Feature map m = mixer(patch_embed(patch at (i, j))) without pooling, shape (d1, h, w)."""

    cfg = params.config
    batch = images_to_array([image], cfg)
    patches = extract_patches(batch, cfg.patch_size)
    embed = patches @ params["patch_w"] + params["patch_b"]
    maps = relu(embed @ params["mix1_w"] + params["mix1_b"]) @ params["mix2_w"] + params["mix2_b"]

    grid = cfg.grid
    return FeatureMap(d1=cfg.d1, h=grid, w=grid, data=maps[0].T.reshape(cfg.d1, grid, grid))


def pool(m: FeatureMap) -> np.ndarray:
    """Global average pooling: h[c] = mean over (i, j) of m[c, i, j]."""

    return m.data.reshape(m.d1, -1).mean(axis=1)


def project(params: EncoderParams, h_vec) -> Representation:
    """z = normalize(MLP(h)); raises DegenerateNorm when the MLP output is (near) zero."""

    h_vec = np.asarray(h_vec, dtype=np.float64)
    u = relu(h_vec @ params["proj1_w"] + params["proj1_b"]) @ params["proj2_w"] + params["proj2_b"]
    norm = np.linalg.norm(u)
    if norm < NORM_EPS:
        raise DegenerateNorm("Projection output has zero norm and cannot be normalised")

    return Representation(u / norm)


def backward_pooled(params: EncoderParams, cache: ForwardCache, grad_pooled) -> dict:
    """Gradients of sum_b grad_pooled[b] . h[b] for the encoder f (projection grads are zero)."""

    grads = params.zeros_like()
    batch, positions, d1 = cache.maps.shape

    grad_maps = np.broadcast_to(grad_pooled[:, None, :] / positions, cache.maps.shape)
    flat_maps = grad_maps.reshape(-1, d1)
    grads["mix2_w"] = cache.mixed_hidden.reshape(-1, d1).T @ flat_maps
    grads["mix2_b"] = flat_maps.sum(axis=0)

    grad_pre_mix = (flat_maps @ params["mix2_w"].T) * (cache.pre_mix.reshape(-1, d1) > 0)
    grads["mix1_w"] = cache.embed.reshape(-1, d1).T @ grad_pre_mix
    grads["mix1_b"] = grad_pre_mix.sum(axis=0)

    grad_embed = grad_pre_mix @ params["mix1_w"].T
    grads["patch_w"] = cache.patches.reshape(batch * positions, -1).T @ grad_embed
    grads["patch_b"] = grad_embed.sum(axis=0)

    return grads


def backward(params: EncoderParams, cache: ForwardCache, upstream_grad_z) -> dict:
    """
    Gradients of sum_b upstream[b] . z[b] for every parameter, normalisation Jacobian included.

    Args:
        params (EncoderParams): The weights used in the forward pass.
        cache (ForwardCache): Activations from forward_batch.
        upstream_grad_z (np.ndarray): dLoss/dz of shape (B, d2) (or (d2,) for a single image).

    Returns:
        dict: Parameter name -> gradient, summed over the batch.
    """

    grad_z = np.asarray(upstream_grad_z, dtype=np.float64).reshape(cache.z.shape)
    z = cache.z

    grad_u = (grad_z - z * np.sum(z * grad_z, axis=1, keepdims=True)) / cache.norms[:, None]
    grad_proj_hidden = grad_u @ params["proj2_w"].T
    grad_pre_proj = grad_proj_hidden * (cache.pre_proj > 0)
    grad_pooled = grad_pre_proj @ params["proj1_w"].T

    grads = backward_pooled(params, cache, grad_pooled)
    grads["proj2_w"] = cache.proj_hidden.T @ grad_u
    grads["proj2_b"] = grad_u.sum(axis=0)
    grads["proj1_w"] = cache.pooled.T @ grad_pre_proj
    grads["proj1_b"] = grad_pre_proj.sum(axis=0)

    return grads


def momentum_update(state: EncoderState, coef: float) -> None:
    """momentum <- coef * momentum + (1 - coef) * online, parameter-wise; online is untouched."""

    if not 0.0 <= coef < 1.0:
        raise ConfigInvalid(f"Momentum coefficient must lie in [0, 1), got {coef}")
    for name, online in state.online.tensors.items():
        state.momentum.tensors[name] = coef * state.momentum.tensors[name] + (1.0 - coef) * online


def sgd_step(params: EncoderParams | dict, grads: dict, lr, weight_decay, sgd_momentum, velocity: dict) -> None:
    """
    In-place SGD with a momentum buffer; L2 weight decay is added to the gradient before the buffer update.

    Args:
        params: EncoderParams or a plain name -> array dict.
        grads (dict): Gradients by name.
        lr, weight_decay, sgd_momentum (float): Optimizer knobs.
        velocity (dict): Momentum buffers by name, created on first use.
    """

    tensors = params.tensors if isinstance(params, EncoderParams) else params
    for name, grad in grads.items():
        theta = tensors[name]
        if grad.shape != theta.shape:
            raise ShapeMismatch(f"Gradient for {name} has shape {grad.shape}, expected {theta.shape}")
        step = grad + weight_decay * theta
        buffer = velocity.get(name)
        buffer = step if buffer is None else sgd_momentum * buffer + step
        velocity[name] = buffer
        tensors[name] = theta - lr * buffer
