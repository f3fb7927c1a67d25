"""Small trainable maps, the diagonal-Gaussian latent head and spectral normalization."""

from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ContractError

VAR_MIN = math.exp(-1.0) / 2.0
VAR_MAX = math.e / 2.0

_ACTIVATIONS = {"tanh": nn.Tanh, "relu": nn.ReLU}


def mlp(sizes: Sequence[int], activation: str = "tanh", linear=nn.Linear) -> nn.Sequential:
    """Fully connected stack; no activation after the last layer."""
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(_ACTIVATIONS[activation]())
    return nn.Sequential(*layers)


# ---------------------------------------------------------------- Gaussian latent


@dataclass
class LatentRep:
    mean: torch.Tensor
    var: torch.Tensor
    sample: torch.Tensor | None = None


def gaussian_head(raw: torch.Tensor) -> LatentRep:
    """Split ``raw`` (..., K) into mean = first half, var = exp(tanh(second half)) / 2."""
    k = raw.shape[-1]
    if k % 2:
        raise ContractError(f"raw latent width must be even, got {k}")
    mean, pre = raw[..., : k // 2], raw[..., k // 2 :]
    return LatentRep(mean, torch.exp(torch.tanh(pre)) / 2.0)


def sample_latent(rep: LatentRep, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterized draw ``mean + sqrt(var) * noise``; zero noise gives the mean."""
    if noise.shape != rep.mean.shape:
        raise ContractError(f"noise shape {tuple(noise.shape)} does not match latent {tuple(rep.mean.shape)}")
    return rep.mean + torch.sqrt(rep.var) * noise


# ---------------------------------------------------------------- spectral normalization


def _l2n(x: torch.Tensor) -> torch.Tensor:
    return x / (x.norm() + 1e-12)


class PowerIteration:
    """Left/right singular-vector estimates persisted between calls."""

    def __init__(self, n_rows: int, n_cols: int, generator: torch.Generator | None = None):
        self.u = _l2n(torch.randn(n_rows, generator=generator, dtype=torch.float64))
        self.v = _l2n(torch.randn(n_cols, generator=generator, dtype=torch.float64))

    def run(self, weight: torch.Tensor, iters: int) -> float:
        w = weight.detach().to(torch.float64)
        for _ in range(iters):
            self.v = _l2n(w.T @ self.u)
            self.u = _l2n(w @ self.v)
        return float(self.u @ w @ self.v)


def spectral_normalize(weight, iters: int = 1, state: PowerIteration | None = None):
    """Divide ``weight`` by its largest singular value, estimated by ``iters``
    power-iteration steps continuing from ``state``. Accepts numpy arrays or
    tensors and returns the same type."""
    if iters < 1:
        raise ContractError("iters must be >= 1")
    is_np = isinstance(weight, np.ndarray)
    w = torch.as_tensor(weight)
    if state is None:
        state = PowerIteration(*w.shape)
    sigma = state.run(w, iters)
    if not np.isfinite(sigma) or abs(sigma) < 1e-12:
        warnings.warn("spectral norm undefined for a zero matrix; returned unchanged", RuntimeWarning)
        return weight
    out = w / sigma
    return out.numpy() if is_np else out


class SNLinear(nn.Linear):
    """Linear layer whose weight is divided by its spectral norm.

    In training mode every forward runs ``n_power_iterations`` steps on the
    persistent ``u, v`` buffers; in eval mode the stored vectors are reused, so
    the map is a pure function of the parameters. The vectors are warmed up at
    construction so an untrained layer is already normalized. ``sigma = u^T W v`` keeps the
    gradient path through ``W`` as in the usual formulation.
    """

    def __init__(self, in_features: int, out_features: int, bias: bool = True, n_power_iterations: int = 10, warmup: int = 30):
        super().__init__(in_features, out_features, bias)
        self.n_power_iterations = n_power_iterations
        self.sn_enabled = True
        self.register_buffer("_u", _l2n(torch.randn(out_features)))
        self.register_buffer("_v", _l2n(torch.randn(in_features)))
        self._iterate(warmup)

    @torch.no_grad()
    def _iterate(self, n: int | None = None) -> None:
        w = self.weight
        u, v = self._u, self._v
        for _ in range(self.n_power_iterations if n is None else n):
            v = _l2n(w.T @ u)
            u = _l2n(w @ v)
        self._u.copy_(u)
        self._v.copy_(v)

    def normalized_weight(self) -> torch.Tensor:
        if not self.sn_enabled:
            return self.weight
        if self.training:
            self._iterate()
        sigma = self._u @ self.weight @ self._v
        if sigma.abs() < 1e-12:
            return self.weight
        return self.weight / sigma

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.linear(x, self.normalized_weight(), self.bias)


def max_singular_value(weight: torch.Tensor) -> float:
    return float(torch.linalg.matrix_norm(weight.detach().to(torch.float64), ord=2))


# ---------------------------------------------------------------- gradient check


def grad_check(
    module: nn.Module,
    inputs: Sequence[torch.Tensor],
    loss_fn: Callable[[torch.Tensor], torch.Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max elementwise relative error between autograd and central differences.

    Runs on a float64 copy in eval mode so stateful layers do not drift while
    perturbing. A map without parameters returns 0.0.
    """
    m = copy.deepcopy(module).double().eval()
    params = [p for p in m.parameters() if p.requires_grad]
    if not params:
        return 0.0
    xs = [x.detach().double() for x in inputs]

    def loss() -> torch.Tensor:
        return loss_fn(m(*xs))

    analytic = torch.autograd.grad(loss(), params)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat, gflat = p.view(-1), g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss().item()
                flat[i] = orig - eps
                down = loss().item()
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                a = gflat[i].item()
                err = abs(a - fd) / max(abs(a), abs(fd), floor)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(modules: Mapping[str, nn.Module], path: str | Path) -> Path:
    """Write ``path`` (raw little-endian float32 blocks) and ``path.manifest``.

    Manifest lines: ``name<TAB>shape<TAB>offset_bytes<TAB>count``, where shape
    is comma-separated (empty for scalars).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    offset = 0
    with open(path, "wb") as fh:
        for mname, module in modules.items():
            for pname, tensor in module.state_dict().items():
                arr = tensor.detach().cpu().numpy().astype("<f4")
                fh.write(arr.tobytes())
                shape = ",".join(str(s) for s in arr.shape)
                lines.append(f"{mname}.{pname}\t{shape}\t{offset}\t{arr.size}")
                offset += arr.nbytes
    Path(str(path) + ".manifest").write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(modules: Mapping[str, nn.Module], path: str | Path) -> None:
    path = Path(path)
    raw = path.read_bytes()
    blocks = {}
    for line in Path(str(path) + ".manifest").read_text().splitlines():
        if not line.strip():
            continue
        name, shape, offset, count = line.split("\t")
        dims = tuple(int(s) for s in shape.split(",")) if shape else ()
        arr = np.frombuffer(raw, dtype="<f4", count=int(count), offset=int(offset)).reshape(dims)
        blocks[name] = torch.from_numpy(arr.copy())
    for mname, module in modules.items():
        state = {k: blocks[f"{mname}.{k}"].to(v.dtype) for k, v in module.state_dict().items()}
        module.load_state_dict(state)
