"""Feature-specific spatial diffusion of the risk tensor.

Each week and channel is smoothed independently over the normalized
adjacency with the convex update x <- (1-alpha) x + alpha A_norm x, repeated
a channel-specific number of iterations, then blended with the original
values by a fusion weight beta. Channels get their own (alpha, iterations)
because safety, infrastructure, and environmental risk propagate over
different spatial ranges; the named presets span no smoothing through
deliberate over-smoothing for the ablation runner.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .errors import ConfigError, ShapeMismatchError
from .features import RiskTensor


@dataclass(frozen=True)
class DiffusionConfig:
    name: str = "Differentiated_B"
    alpha: tuple[float, float, float] = (0.25, 0.15, 0.3)
    iters: tuple[int, int, int] = (1, 1, 2)
    beta: float = 0.7
    fuse_each_step: bool = False  # blend after every iteration instead of once at the end

    def __post_init__(self):
        if any(not (0.0 <= a <= 1.0) for a in self.alpha):
            raise ConfigError(f"diffusion alphas must lie in [0,1]: {self.alpha}")
        if any(i < 0 for i in self.iters):
            raise ConfigError(f"diffusion iteration counts must be >= 0: {self.iters}")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigError(f"fusion weight must lie in [0,1]: {self.beta}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alpha": list(self.alpha),
            "iters": list(self.iters),
            "beta": self.beta,
            "fuse_each_step": self.fuse_each_step,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DiffusionConfig":
        if set(raw) == {"preset"} or ("preset" in raw and len(raw) == 1):
            return preset(raw["preset"])
        base = preset(raw["preset"]) if "preset" in raw else cls()
        return replace(
            base,
            name=raw.get("name", raw.get("preset", base.name)),
            alpha=tuple(raw.get("alpha", base.alpha)),
            iters=tuple(raw.get("iters", base.iters)),
            beta=float(raw.get("beta", base.beta)),
            fuse_each_step=bool(raw.get("fuse_each_step", base.fuse_each_step)),
        )


def _cfg(name, alpha, iters) -> DiffusionConfig:
    return DiffusionConfig(name=name, alpha=alpha, iters=iters)


PRESETS = {
    c.name: c
    for c in (
        _cfg("No_Diffusion", (0.0, 0.0, 0.0), (0, 0, 0)),
        _cfg("Uniform_Weak", (0.1, 0.1, 0.1), (1, 1, 1)),
        _cfg("Uniform_Medium", (0.2, 0.2, 0.2), (1, 1, 1)),
        _cfg("Uniform_Strong", (0.3, 0.3, 0.3), (2, 2, 2)),
        _cfg("Differentiated_Current", (0.2, 0.2, 0.2), (1, 1, 1)),
        _cfg("Differentiated_A", (0.3, 0.1, 0.25), (2, 1, 2)),
        _cfg("Differentiated_B", (0.25, 0.15, 0.3), (1, 1, 2)),
        _cfg("Over_Diffusion", (0.5, 0.4, 0.4), (3, 3, 3)),
    )
}


def preset(name: str) -> DiffusionConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown diffusion preset {name!r}; known: {sorted(PRESETS)}"
        ) from None


def diffuse_feature(
    x: np.ndarray,
    a_norm: sparse.spmatrix | np.ndarray,
    alpha: float,
    iters: int,
) -> np.ndarray:
    """Apply x <- (1-alpha) x + alpha A_norm x `iters` times.

    x may be a length-N vector or an (N, m) stack of columns smoothed
    together. alpha=0 or iters=0 returns the input unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    n = a_norm.shape[0]
    if x.shape[0] != n or a_norm.shape != (n, n):
        raise ShapeMismatchError(
            f"diffusion shapes disagree: x {x.shape}, A_norm {a_norm.shape}"
        )
    if alpha == 0.0 or iters == 0:
        return x.copy()
    out = x.copy()
    for _ in range(iters):
        out = (1.0 - alpha) * out + alpha * (a_norm @ out)
    return out


def fuse(diffused: np.ndarray, original: np.ndarray, beta: float) -> np.ndarray:
    """beta * diffused + (1-beta) * original, elementwise."""
    diffused = np.asarray(diffused, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if diffused.shape != original.shape:
        raise ShapeMismatchError(
            f"fuse shapes disagree: {diffused.shape} vs {original.shape}"
        )
    return beta * diffused + (1.0 - beta) * original


def apply_diffusion(
    tensor: RiskTensor,
    a_norm: sparse.spmatrix | np.ndarray,
    config: DiffusionConfig,
) -> RiskTensor:
    """Diffuse every week and channel independently, then fuse with the input.

    Output shape equals input shape; side-by-side channels stay concatenated
    in the shared (W, N, 3) layout.
    """
    w, n, _ = tensor.values.shape
    if a_norm.shape != (n, n):
        raise ShapeMismatchError(
            f"tensor has {n} nodes but adjacency is {a_norm.shape}"
        )
    out = np.empty_like(tensor.values)
    for f in range(3):
        original = tensor.values[:, :, f].T  # (N, W): weeks smoothed as columns
        if config.alpha[f] == 0.0 or config.iters[f] == 0:
            # fusing an unmoved signal with itself must stay the exact identity
            out[:, :, f] = original.T
        elif config.fuse_each_step:
            current = original.copy()
            for _ in range(config.iters[f]):
                stepped = diffuse_feature(current, a_norm, config.alpha[f], 1)
                current = fuse(stepped, current, config.beta)
            out[:, :, f] = current.T
        else:
            diffused = diffuse_feature(
                original, a_norm, config.alpha[f], config.iters[f]
            )
            out[:, :, f] = fuse(diffused, original, config.beta).T
    result = tensor.copy()
    result.values = out
    result.meta = {**tensor.meta, "diffusion": config.to_dict()}
    return result


@dataclass
class MinMaxScaler:
    """Per-channel affine map to [0, 1], fit on the training weeks only.

    Fitting on the full series would leak test-period magnitudes into
    training, so the fit range is explicit. A constant channel maps to 0.
    """

    minima: np.ndarray | None = None
    maxima: np.ndarray | None = None

    def fit(self, tensor: RiskTensor, week_range: tuple[int, int] | None = None):
        lo, hi = week_range or (0, tensor.n_weeks)
        block = tensor.values[lo:hi]
        if block.size == 0:
            raise ShapeMismatchError("cannot fit a scaler on an empty week range")
        self.minima = block.min(axis=(0, 1))
        self.maxima = block.max(axis=(0, 1))
        return self

    def _check(self):
        if self.minima is None:
            raise ValueError("scaler not fitted")

    def transform(self, values: np.ndarray) -> np.ndarray:
        self._check()
        span = self.maxima - self.minima
        safe = np.where(span == 0.0, 1.0, span)
        out = (values - self.minima) / safe
        return np.where(span == 0.0, 0.0, out)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        self._check()
        return values * (self.maxima - self.minima) + self.minima

    def inverse_channel(self, values: np.ndarray, channel: int) -> np.ndarray:
        self._check()
        span = self.maxima[channel] - self.minima[channel]
        return values * span + self.minima[channel]

    def transform_tensor(self, tensor: RiskTensor) -> RiskTensor:
        out = tensor.copy()
        clipped = self.transform(tensor.values)
        if (clipped < -1e-9).any() or (clipped > 1 + 1e-9).any():
            warnings.warn(
                "values outside the fitted range were scaled beyond [0,1]"
            )
        out.values = clipped
        out.meta = {**tensor.meta, "scaling": self.to_dict()}
        return out

    def to_dict(self) -> dict:
        self._check()
        return {"minima": self.minima.tolist(), "maxima": self.maxima.tolist()}

    @classmethod
    def from_dict(cls, raw: dict) -> "MinMaxScaler":
        return cls(
            minima=np.asarray(raw["minima"], dtype=float),
            maxima=np.asarray(raw["maxima"], dtype=float),
        )
