"""Classical networks: dense/conv autoencoders, value critic, CNN policy.

All weights live in flat ``{name: Tensor}`` dicts (prefix-scoped) so one
optimizer can update any combination of components jointly.  Latent codes and
reconstructed pixels go through sigmoids, keeping them in (0, 1) for the
quantum encoders downstream; dense reconstruction outputs stay linear because
raw low-dimensional observations are unbounded.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["DenseAutoencoder", "ConvAutoencoder", "Critic", "CNNPolicy",
           "count_params"]


def count_params(params: dict[str, Tensor], prefix: str = "") -> int:
    return sum(p.size for k, p in params.items() if k.startswith(prefix))


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _he(rng, fan_in, shape):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class _Net:
    """Base: owns a parameter dict; subclasses add weights via _add."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.params: dict[str, Tensor] = {}

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        full = f"{self.prefix}.{name}"
        t = ad.parameter(data, name=full)
        self.params[full] = t
        return t

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class DenseAutoencoder(_Net):
    """Fully connected autoencoder for low-dimensional observations.

    ``sizes`` lists the encoder layer widths ending at the bottleneck, e.g.
    ``[2]`` (direct 4->2) or ``[8, 2]``.  Every encoder layer is a sigmoid
    (so the code lies in (0,1)); the decoder mirrors the sizes with sigmoid
    hidden layers and a linear output.
    """

    def __init__(self, obs_dim: int, sizes: list[int],
                 rng: np.random.Generator, prefix: str = "ae"):
        super().__init__(prefix)
        self.obs_dim = obs_dim
        self.sizes = list(sizes)
        self.latent_dim = sizes[-1]
        dims = [obs_dim] + self.sizes
        self.enc = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.enc.append((self._add(f"enc{i}.w", _glorot(rng, a, b, (a, b))),
                             self._add(f"enc{i}.b", np.zeros(b))))
        rdims = list(reversed(dims))
        self.dec = []
        for i, (a, b) in enumerate(zip(rdims[:-1], rdims[1:])):
            self.dec.append((self._add(f"dec{i}.w", _glorot(rng, a, b, (a, b))),
                             self._add(f"dec{i}.b", np.zeros(b))))

    def encode(self, x: Tensor) -> Tensor:
        h = x
        for w, b in self.enc:
            h = ad.sigmoid(ad.affine(h, w, b))
        return h

    def decode(self, z: Tensor) -> Tensor:
        h = z
        for i, (w, b) in enumerate(self.dec):
            h = ad.affine(h, w, b)
            if i < len(self.dec) - 1:
                h = ad.sigmoid(h)
        return h

    def reconstruction_loss(self, x: Tensor, z: Tensor | None = None) -> Tensor:
        if z is None:
            z = self.encode(x)
        return ad.tmean(ad.square(self.decode(z) - x))


class ConvAutoencoder(_Net):
    """Convolutional autoencoder for square grayscale images.

    Encoder: stride-2 'same' 3x3 convs (relu) with channels ``enc_channels``,
    then a dense sigmoid bottleneck.  Decoder: dense relu back to the coarsest
    grid, then per stage bilinear x2 upsampling + 3x3 conv (relu between
    stages, sigmoid on the final 1-channel output).
    """

    def __init__(self, image_hw: int = 48, enc_channels=(2, 4, 8, 8),
                 latent_dim: int = 8, rng: np.random.Generator | None = None,
                 prefix: str = "ae"):
        super().__init__(prefix)
        rng = rng if rng is not None else np.random.default_rng()
        self.image_hw = image_hw
        self.enc_channels = tuple(enc_channels)
        self.latent_dim = latent_dim
        n_stages = len(self.enc_channels)
        if image_hw % (2 ** n_stages):
            raise ValueError(f"image size {image_hw} not divisible by "
                             f"2^{n_stages}")
        self.base_hw = image_hw // (2 ** n_stages)
        cin = 1
        self.enc = []
        for i, cout in enumerate(self.enc_channels):
            fan_in = 9 * cin
            self.enc.append((
                self._add(f"enc{i}.w", _he(rng, fan_in, (3, 3, cin, cout))),
                self._add(f"enc{i}.b", np.zeros(cout))))
            cin = cout
        flat = self.base_hw * self.base_hw * cin
        self.fc_enc = (self._add("enc_fc.w",
                                 _glorot(rng, flat, latent_dim, (flat, latent_dim))),
                       self._add("enc_fc.b", np.zeros(latent_dim)))
        self.fc_dec = (self._add("dec_fc.w",
                                 _glorot(rng, latent_dim, flat, (latent_dim, flat))),
                       self._add("dec_fc.b", np.zeros(flat)))
        dec_channels = tuple(reversed(self.enc_channels))  # e.g. (8, 8, 4, 2)
        outs = dec_channels[1:] + (1,)
        self.dec = []
        cin = dec_channels[0]
        for i, cout in enumerate(outs):
            fan_in = 9 * cin
            self.dec.append((
                self._add(f"dec{i}.w", _he(rng, fan_in, (3, 3, cin, cout))),
                self._add(f"dec{i}.b", np.zeros(cout))))
            cin = cout

    def encode(self, x: Tensor) -> Tensor:
        h = x
        for w, b in self.enc:
            h = ad.relu(ad.conv2d(h, w, b, stride=2, padding="same"))
        h = ad.reshape(h, (h.shape[0], -1))
        return ad.sigmoid(ad.affine(h, *self.fc_enc))

    def decode(self, z: Tensor) -> Tensor:
        h = ad.relu(ad.affine(z, *self.fc_dec))
        c0 = self.enc_channels[-1]
        h = ad.reshape(h, (z.shape[0], self.base_hw, self.base_hw, c0))
        last = len(self.dec) - 1
        for i, (w, b) in enumerate(self.dec):
            h = ad.upsample_bilinear(h, 2)
            h = ad.conv2d(h, w, b, stride=1, padding="same")
            h = ad.sigmoid(h) if i == last else ad.relu(h)
        return h

    def reconstruction_loss(self, x: Tensor, z: Tensor | None = None) -> Tensor:
        if z is None:
            z = self.encode(x)
        return ad.tmean(ad.square(self.decode(z) - x))


class Critic(_Net):
    """State-value head: two tanh hidden layers, linear scalar output."""

    def __init__(self, in_dim: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None,
                 prefix: str = "critic"):
        super().__init__(prefix)
        rng = rng if rng is not None else np.random.default_rng()
        dims = [in_dim] + list(hidden) + [1]
        self.layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            w = _glorot(rng, a, b, (a, b))
            if i == len(dims) - 2:
                w = w * 0.01  # small head: early values near zero
            self.layers.append((self._add(f"l{i}.w", w),
                                self._add(f"l{i}.b", np.zeros(b))))

    def value(self, x: Tensor) -> Tensor:
        h = x
        for i, (w, b) in enumerate(self.layers):
            h = ad.affine(h, w, b)
            if i < len(self.layers) - 1:
                h = ad.tanh(h)
        return ad.reshape(h, (h.shape[0],))


class CNNPolicy(_Net):
    """Convolutional softmax policy over raw grayscale images.

    2x2 'same' convs (relu) with channels (8, 4, 3) interleaved with max
    pooling (4, 4, 3) down to a 1x1x3 map, then one relu hidden dense layer
    and a linear action head.  ``hidden_width`` can be solved to hit a total
    parameter budget via :meth:`solve_hidden_width`.
    """

    CHANNELS = (8, 4, 3)
    POOLS = (4, 4, 3)

    def __init__(self, image_hw: int, n_actions: int, hidden_width: int,
                 rng: np.random.Generator | None = None,
                 prefix: str = "policy"):
        super().__init__(prefix)
        rng = rng if rng is not None else np.random.default_rng()
        self.n_actions = n_actions
        self.hidden_width = hidden_width
        cin = 1
        hw = image_hw
        self.convs = []
        for i, (cout, pool) in enumerate(zip(self.CHANNELS, self.POOLS)):
            fan_in = 4 * cin
            self.convs.append((
                self._add(f"conv{i}.w", _he(rng, fan_in, (2, 2, cin, cout))),
                self._add(f"conv{i}.b", np.zeros(cout))))
            cin = cout
            hw //= pool
        if hw == 0:
            raise ValueError(f"image size {image_hw} collapses under pooling "
                             f"{self.POOLS}")
        flat = hw * hw * cin
        self.fc1 = (self._add("fc1.w",
                              _he(rng, flat, (flat, hidden_width))),
                    self._add("fc1.b", np.zeros(hidden_width)))
        self.fc2 = (self._add("fc2.w",
                              _glorot(rng, hidden_width, n_actions,
                                      (hidden_width, n_actions))),
                    self._add("fc2.b", np.zeros(n_actions)))

    def logits(self, x: Tensor) -> Tensor:
        h = x
        for (w, b), pool in zip(self.convs, self.POOLS):
            h = ad.relu(ad.conv2d(h, w, b, stride=1, padding="same"))
            h = ad.maxpool2d(h, pool)
        h = ad.reshape(h, (h.shape[0], -1))
        h = ad.relu(ad.affine(h, *self.fc1))
        return ad.affine(h, *self.fc2)

    @classmethod
    def fixed_param_count(cls, image_hw: int, n_actions: int) -> int:
        """Parameters independent of the hidden width."""
        cin, total, hw = 1, 0, image_hw
        for cout, pool in zip(cls.CHANNELS, cls.POOLS):
            total += 4 * cin * cout + cout
            cin = cout
            hw //= pool
        return total + n_actions  # + action-head bias

    @classmethod
    def solve_hidden_width(cls, target_total: int, image_hw: int = 48,
                           n_actions: int = 4) -> int:
        """Smallest-error hidden width for a requested total budget."""
        cin, hw = 1, image_hw
        for cout, pool in zip(cls.CHANNELS, cls.POOLS):
            cin = cout
            hw //= pool
        flat = hw * hw * cin
        fixed = cls.fixed_param_count(image_hw, n_actions)
        per_unit = flat + 1 + n_actions
        return max(1, round((target_total - fixed) / per_unit))
