"""Visual-denoising GAN: residual generator, 70x70 patch discriminator,
cycle-consistency losses and a toy-scale adversarial training step.

The generator follows the residual image-translation recipe: a 7x7
stride-1 stem, two stride-2 downsampling convs (so the transformer works
at one quarter of the input size), residual blocks, two stride-2
transposed convs back up, and a 7x7 tanh head. Reflection padding and
instance normalization throughout. The discriminator is the 4x4 stack
with strides 2,2,2,1,1 and channels 64,128,256,512,1 whose receptive
field per output score is exactly 70 input pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ShapeError, UsageError
from .nn import NamedTensorStore, Tensor
from .nn import tensor as T

DISC_CHANNELS = (64, 128, 256, 512, 1)
DISC_STRIDES = (2, 2, 2, 1, 1)
DISC_KERNEL = 4


def make_lip_image(pixels: np.ndarray) -> np.ndarray:
    """Validate an [H,W,C] image in [-1, 1] with spatial dims divisible by 4."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"lip image must be [H,W,C], got {img.shape}")
    h, w, _ = img.shape
    if h % 4 or w % 4:
        raise ShapeError(f"image dims must be divisible by 4, got {h}x{w}")
    if np.abs(img).max(initial=0.0) > 1.0:
        raise ShapeError("pixel values must lie in [-1, 1]")
    return img


@dataclass(frozen=True)
class GanConfig:
    """Structure and loss weights for both translation directions."""

    residual_blocks: int = 6
    cycle_lambda: float = 10.0
    base_channels: int = 64
    channels: int = 1  # grayscale lip crops

    def __post_init__(self):
        if self.residual_blocks < 1 or self.cycle_lambda < 0:
            raise UsageError("need residual_blocks >= 1 and cycle_lambda >= 0")

    @classmethod
    def toy(cls) -> "GanConfig":
        return cls(residual_blocks=2, base_channels=8)


def _conv_params(rng, store, name, kh, kw, cin, cout):
    store.add(f"{name}.kernel", nn.kaiming_uniform(rng, (kh, kw, cin, cout), fan_in=kh * kw * cin))
    store.add(f"{name}.bias", nn.zeros((cout,)))


def init_generator(cfg: GanConfig = GanConfig(), seed: int = 0, prefix: str = "") -> NamedTensorStore:
    rng = np.random.default_rng(seed)
    store = NamedTensorStore()
    c = cfg.base_channels
    _conv_params(rng, store, f"{prefix}stem", 7, 7, cfg.channels, c)
    _conv_params(rng, store, f"{prefix}down1", 3, 3, c, 2 * c)
    _conv_params(rng, store, f"{prefix}down2", 3, 3, 2 * c, 4 * c)
    for i in range(cfg.residual_blocks):
        _conv_params(rng, store, f"{prefix}res{i}.a", 3, 3, 4 * c, 4 * c)
        _conv_params(rng, store, f"{prefix}res{i}.b", 3, 3, 4 * c, 4 * c)
    _conv_params(rng, store, f"{prefix}up1", 3, 3, 4 * c, 2 * c)
    _conv_params(rng, store, f"{prefix}up2", 3, 3, 2 * c, c)
    _conv_params(rng, store, f"{prefix}head", 7, 7, c, cfg.channels)
    return store


def init_discriminator(cfg: GanConfig = GanConfig(), seed: int = 0, prefix: str = "") -> NamedTensorStore:
    rng = np.random.default_rng(seed)
    store = NamedTensorStore()
    scale = cfg.base_channels / 64.0
    cin = cfg.channels
    for i, ch in enumerate(DISC_CHANNELS, start=1):
        cout = 1 if ch == 1 else max(int(round(ch * scale)), 1)
        _conv_params(rng, store, f"{prefix}d{i}", DISC_KERNEL, DISC_KERNEL, cin, cout)
        cin = cout
    return store


def generator_forward(img: np.ndarray, weights: NamedTensorStore, cfg: GanConfig, prefix: str = "") -> Tensor:
    """Translate one image; spatial dims are preserved, output is tanh-bounded."""
    arr = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"generator expects [H,W,C], got {arr.shape}")
    h, w, _ = arr.shape
    if h % 4 or w % 4:
        raise ShapeError(f"generator needs dims divisible by 4, got {h}x{w}")
    x = img if isinstance(img, Tensor) else Tensor(arr)

    def block(t, name, stride=1, kernel_pad=None, norm=True, act=True):
        k = weights[f"{prefix}{name}.kernel"]
        b = weights[f"{prefix}{name}.bias"]
        if kernel_pad is not None:
            t = T.pad2d(t, ((kernel_pad, kernel_pad), (kernel_pad, kernel_pad)), mode="reflect")
            t = nn.conv2d(t, k, b, stride=stride, padding="valid")
        else:
            t = nn.conv2d(t, k, b, stride=stride, padding="same")
        if norm:
            t = nn.instance_norm(t)
        if act:
            t = T.relu(t)
        return t

    x = block(x, "stem", kernel_pad=3)
    x = block(x, "down1", stride=2)
    x = block(x, "down2", stride=2)
    for i in range(cfg.residual_blocks):
        y = block(x, f"res{i}.a", kernel_pad=1)
        y = block(y, f"res{i}.b", kernel_pad=1, act=False)
        x = T.add(x, y)
    x = T.relu(nn.instance_norm(nn.transposed_conv2d(x, weights[f"{prefix}up1.kernel"], stride=2, bias=weights[f"{prefix}up1.bias"])))
    x = T.relu(nn.instance_norm(nn.transposed_conv2d(x, weights[f"{prefix}up2.kernel"], stride=2, bias=weights[f"{prefix}up2.bias"])))
    x = T.pad2d(x, ((3, 3), (3, 3)), mode="reflect")
    x = nn.conv2d(x, weights[f"{prefix}head.kernel"], weights[f"{prefix}head.bias"], padding="valid")
    return T.tanh(x)


def discriminator_forward(img, weights: NamedTensorStore, prefix: str = "") -> Tensor:
    """Patch-wise real/fake score map (strides 2,2,2,1,1 over 4x4 kernels)."""
    arr = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"discriminator expects [H,W,C], got {arr.shape}")
    if arr.shape[0] < 8 or arr.shape[1] < 8:
        raise ShapeError(f"discriminator needs at least 8x8 input, got {arr.shape[0]}x{arr.shape[1]}")
    x = img if isinstance(img, Tensor) else Tensor(arr)
    n = len(DISC_STRIDES)
    for i, stride in enumerate(DISC_STRIDES, start=1):
        k = weights[f"{prefix}d{i}.kernel"]
        b = weights[f"{prefix}d{i}.bias"]
        x = nn.conv2d(x, k, b, stride=stride, padding="same")
        if i < n:
            if i > 1:
                x = nn.instance_norm(x)
            x = T.leaky_relu(x, 0.2)
    return x


def receptive_field(kernels=None, strides=None) -> int:
    """Input pixels seen by one discriminator output unit (layer recurrence)."""
    kernels = kernels if kernels is not None else [DISC_KERNEL] * len(DISC_STRIDES)
    strides = strides if strides is not None else DISC_STRIDES
    rf = 1
    jump = 1
    for k, s in zip(kernels, strides):
        rf += (k - 1) * jump
        jump *= s
    return rf


@dataclass
class GanWeights:
    """The four networks of the unpaired translation setup."""

    g_ab: NamedTensorStore
    g_ba: NamedTensorStore
    d_a: NamedTensorStore
    d_b: NamedTensorStore
    cfg: GanConfig

    @classmethod
    def create(cls, cfg: GanConfig = GanConfig(), seed: int = 0) -> "GanWeights":
        return cls(
            g_ab=init_generator(cfg, seed),
            g_ba=init_generator(cfg, seed + 1),
            d_a=init_discriminator(cfg, seed + 2),
            d_b=init_discriminator(cfg, seed + 3),
            cfg=cfg,
        )


@dataclass
class CycleGanLosses:
    adv_ab: float
    adv_ba: float
    cycle_a: float
    cycle_b: float

    @property
    def total(self) -> float:
        return self.adv_ab + self.adv_ba + self.cycle_a + self.cycle_b


def cyclegan_losses(real_a: np.ndarray, real_b: np.ndarray, gw: GanWeights) -> CycleGanLosses:
    """Least-squares adversarial terms plus lambda-weighted L1 cycle terms."""
    fake_b = generator_forward(real_a, gw.g_ab, gw.cfg)
    fake_a = generator_forward(real_b, gw.g_ba, gw.cfg)
    score_b = discriminator_forward(fake_b, gw.d_b)
    score_a = discriminator_forward(fake_a, gw.d_a)
    adv_ab = nn.mse(score_b, np.ones(score_b.shape))
    adv_ba = nn.mse(score_a, np.ones(score_a.shape))
    cyc_a = nn.l1(generator_forward(fake_b, gw.g_ba, gw.cfg), np.asarray(real_a, dtype=np.float64))
    cyc_b = nn.l1(generator_forward(fake_a, gw.g_ab, gw.cfg), np.asarray(real_b, dtype=np.float64))
    lam = gw.cfg.cycle_lambda
    return CycleGanLosses(adv_ab.item(), adv_ba.item(), lam * cyc_a.item(), lam * cyc_b.item())


@dataclass
class GanOptimState:
    g_ab: nn.AdamState
    g_ba: nn.AdamState
    d_a: nn.AdamState
    d_b: nn.AdamState

    @classmethod
    def create(cls, gw: GanWeights, lr: float = 2e-4) -> "GanOptimState":
        return cls(
            nn.AdamState(gw.g_ab, lr=lr),
            nn.AdamState(gw.g_ba, lr=lr),
            nn.AdamState(gw.d_a, lr=lr),
            nn.AdamState(gw.d_b, lr=lr),
        )


def _apply(params: NamedTensorStore, loss, state: nn.AdamState) -> None:
    grads_list = nn.gradients(loss, params.tensors())
    grads = NamedTensorStore()
    for name, g in zip(params.names(), grads_list):
        grads.add(name, Tensor(g))
    nn.adam_step(params, grads, state)


@dataclass
class GanStepRecord:
    d_a_loss: float
    d_b_loss: float
    g_loss: float
    adv_ab: float
    adv_ba: float
    cycle_a: float
    cycle_b: float


def gan_train_step(
    batch_a: list[np.ndarray],
    batch_b: list[np.ndarray],
    gw: GanWeights,
    opt: GanOptimState,
) -> GanStepRecord:
    """One discriminator update (fakes detached), then one generator update."""
    if not batch_a or not batch_b:
        raise UsageError("empty batch")
    lam = gw.cfg.cycle_lambda

    # discriminators: real -> 1, detached fake -> 0
    fakes_b = [generator_forward(a, gw.g_ab, gw.cfg).detach() for a in batch_a]
    fakes_a = [generator_forward(b, gw.g_ba, gw.cfg).detach() for b in batch_b]

    def disc_loss(d_weights, reals, fakes):
        terms = []
        for r in reals:
            score = discriminator_forward(r, d_weights)
            terms.append(nn.mse(score, np.ones(score.shape)))
        for f in fakes:
            score = discriminator_forward(f, d_weights)
            terms.append(nn.mse(score, np.zeros(score.shape)))
        acc = terms[0]
        for t in terms[1:]:
            acc = T.add(acc, t)
        return T.mul(acc, Tensor(1.0 / len(terms)))

    da_loss = disc_loss(gw.d_a, batch_a, fakes_a)
    db_loss = disc_loss(gw.d_b, batch_b, fakes_b)
    _apply(gw.d_a, da_loss, opt.d_a)
    _apply(gw.d_b, db_loss, opt.d_b)

    # generators: adversarial (against the just-updated discriminators) + cycle
    g_params = NamedTensorStore()
    for name, t in gw.g_ab.items():
        g_params.add(f"ab.{name}", t)
    for name, t in gw.g_ba.items():
        g_params.add(f"ba.{name}", t)
    terms = []
    adv_ab_v = adv_ba_v = cyc_a_v = cyc_b_v = 0.0
    for a in batch_a:
        fake_b = generator_forward(a, gw.g_ab, gw.cfg)
        score = discriminator_forward(fake_b, gw.d_b)
        adv = nn.mse(score, np.ones(score.shape))
        cyc = nn.l1(generator_forward(fake_b, gw.g_ba, gw.cfg), np.asarray(a, dtype=np.float64))
        terms.append(T.add(adv, T.mul(cyc, Tensor(lam))))
        adv_ab_v += adv.item()
        cyc_a_v += lam * cyc.item()
    for b in batch_b:
        fake_a = generator_forward(b, gw.g_ba, gw.cfg)
        score = discriminator_forward(fake_a, gw.d_a)
        adv = nn.mse(score, np.ones(score.shape))
        cyc = nn.l1(generator_forward(fake_a, gw.g_ab, gw.cfg), np.asarray(b, dtype=np.float64))
        terms.append(T.add(adv, T.mul(cyc, Tensor(lam))))
        adv_ba_v += adv.item()
        cyc_b_v += lam * cyc.item()
    g_loss = terms[0]
    for t in terms[1:]:
        g_loss = T.add(g_loss, t)
    g_loss = T.mul(g_loss, Tensor(1.0 / len(terms)))
    g_grads_list = nn.gradients(g_loss, g_params.tensors())
    g_grads = NamedTensorStore()
    for name, g in zip(g_params.names(), g_grads_list):
        g_grads.add(name, Tensor(g))
    ab_grads = NamedTensorStore()
    ba_grads = NamedTensorStore()
    for name, g in g_grads.items():
        if name.startswith("ab."):
            ab_grads.add(name[3:], g)
        else:
            ba_grads.add(name[3:], g)
    nn.adam_step(gw.g_ab, ab_grads, opt.g_ab)
    nn.adam_step(gw.g_ba, ba_grads, opt.g_ba)

    n_a, n_b = len(batch_a), len(batch_b)
    return GanStepRecord(
        d_a_loss=da_loss.item(),
        d_b_loss=db_loss.item(),
        g_loss=g_loss.item(),
        adv_ab=adv_ab_v / n_a,
        adv_ba=adv_ba_v / n_b,
        cycle_a=cyc_a_v / n_a,
        cycle_b=cyc_b_v / n_b,
    )
