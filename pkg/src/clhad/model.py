"""Generator / discriminator networks, differentiable augmentation and checkpoints."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArgumentError, FormatError, ShapeError

KERNEL_SIZES = (1, 3, 5)


@dataclass
class GeneratorConfig:
    input_dim: int
    hidden_dims: list[int] | None = None
    latent_dim: int | None = None
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.input_dim < 2:
            raise ArgumentError(f"input_dim must be >= 2, got {self.input_dim}")
        if self.hidden_dims is None:
            self.hidden_dims = [max(1, self.input_dim // 2), max(1, self.input_dim // 4)]
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if self.latent_dim is None:
            self.latent_dim = math.ceil(self.input_dim / 8)
        if not 1 <= self.latent_dim < self.input_dim:
            raise ArgumentError(f"latent_dim must satisfy 1 <= L < {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ArgumentError("hidden dims must be >= 1")

    @property
    def encoder_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.latent_dim]


@dataclass
class DiscriminatorConfig:
    input_dim: int
    channels_per_scale: int = 4
    kernel_sizes: tuple[int, ...] = KERNEL_SIZES
    patch: int = 16
    attention_dim: int | None = None
    ffn_mult: int = 2
    head_hidden: int = 32
    dropout: float = 0.1
    negative_slope: float = 0.2

    def __post_init__(self):
        if tuple(self.kernel_sizes) != KERNEL_SIZES:
            raise ArgumentError(f"kernel sizes must be exactly {KERNEL_SIZES}")
        self.kernel_sizes = tuple(self.kernel_sizes)
        if self.input_dim < 2:
            raise ArgumentError(f"input_dim must be >= 2, got {self.input_dim}")
        # largest patch <= requested that tiles the spectral axis
        self.patch = max(p for p in range(1, max(1, self.patch) + 1) if self.input_dim % p == 0)
        if self.attention_dim is None:
            self.attention_dim = self.feature_dim
        if self.feature_dim % self.attention_dim:
            raise ArgumentError(
                f"attention_dim {self.attention_dim} must divide feature width {self.feature_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ArgumentError("dropout must lie in [0, 1)")

    @property
    def feature_dim(self) -> int:
        return self.channels_per_scale * len(self.kernel_sizes)

    @property
    def tokens(self) -> int:
        return self.input_dim // self.patch


# ---------------------------------------------------------------- generator


class Generator(nn.Module):
    """Fully connected encoder-decoder; leaky hidden activations, logistic output."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        dims = cfg.encoder_dims
        self.encoder = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        rdims = dims[::-1]
        self.decoder = nn.ModuleList(nn.Linear(a, b) for a, b in zip(rdims[:-1], rdims[1:]))

    def encode(self, x):
        for layer in self.encoder:
            x = F.leaky_relu(layer(x), self.cfg.negative_slope)
        return x

    def decode(self, z):
        for layer in self.decoder[:-1]:
            z = F.leaky_relu(layer(z), self.cfg.negative_slope)
        return torch.sigmoid(self.decoder[-1](z))

    def forward(self, x):
        if x.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"generator expects {self.cfg.input_dim} columns, got {x.shape[-1]}")
        return self.decode(self.encode(x))


# ---------------------------------------------------------------- discriminator


def _unit_rows(x, eps=1e-12):
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def l2_self_attention(features, w_q, w_k, w_v, scale_dim, return_weights=False):
    """Cosine self-attention over the rows of ``features`` (..., n, d).

    Logits are row-normalised Q times row-normalised K transposed, divided by
    sqrt(scale_dim). A zero-norm query row yields uniform weights.
    """
    a = w_q.shape[1]
    qkv = (features.reshape(-1, features.shape[-1]) @ torch.cat([w_q, w_k, w_v], dim=1))
    qkv = qkv.reshape(*features.shape[:-1], 3 * a)
    q, k, v = (t.contiguous() for t in qkv.split(a, dim=-1))
    q, k = _unit_rows(q), _unit_rows(k)
    if not return_weights:
        # fused kernel; same softmax(q k^T * scale) v
        out = F.scaled_dot_product_attention(
            q.unsqueeze(-3), k.unsqueeze(-3), v.unsqueeze(-3), scale=1.0 / math.sqrt(scale_dim))
        return out.squeeze(-3)
    weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(scale_dim), dim=-1)
    return weights @ v, weights


class MultiScaleConv(nn.Module):
    """Same-padded 1-D convolutions of width 1, 3 and 5 along the spectrum,
    concatenated and averaged over non-overlapping patches of ``patch`` positions.

    Convolution followed by a patch mean is one linear map per patch, so each
    token is computed as its padded window times an effective kernel assembled
    from the tap weights. ``dense`` gives the unpooled per-position output.
    """

    def __init__(self, channels: int, patch: int):
        super().__init__()
        self.patch = patch
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        r = max(KERNEL_SIZES) // 2
        for k in KERNEL_SIZES:
            bound = 1.0 / math.sqrt(k)
            self.weights.append(nn.Parameter(torch.empty(k, channels).uniform_(-bound, bound)))
            self.biases.append(nn.Parameter(torch.empty(channels).uniform_(-bound, bound)))
            # placement[o, j]: how often tap j reads window offset o, over the patch
            placement = torch.zeros(patch + 2 * r, k)
            for pos in range(patch):
                for j in range(k):
                    placement[pos + j - k // 2 + r, j] += 1.0 / patch
            self.register_buffer(f"placement_{k}", placement, persistent=False)

    def effective_kernel(self):
        mats = [getattr(self, f"placement_{k}").to(w.dtype) @ w
                for k, w in zip(KERNEL_SIZES, self.weights)]
        return torch.cat(mats, dim=-1), torch.cat(list(self.biases))

    def forward(self, x):
        r = max(KERNEL_SIZES) // 2
        windows = F.pad(x, (r, r)).unfold(-1, self.patch + 2 * r, self.patch)  # (n, T, patch+4)
        kernel, bias = self.effective_kernel()
        return windows @ kernel + bias

    def dense(self, x):
        r = max(KERNEL_SIZES) // 2
        windows = F.pad(x, (r, r)).unfold(-1, 2 * r + 1, 1)  # (n, 2C, 5)
        outs = []
        for k, w, b in zip(KERNEL_SIZES, self.weights, self.biases):
            lo = r - k // 2
            outs.append(windows[..., lo:lo + k] @ w + b)
        return torch.cat(outs, dim=-1)


class Discriminator(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        d, a = cfg.feature_dim, cfg.attention_dim
        self.msc = MultiScaleConv(cfg.channels_per_scale, cfg.patch)
        self.position = nn.Parameter(torch.zeros(cfg.tokens, d))
        nn.init.normal_(self.position, std=0.02)
        self.w_q = nn.Parameter(torch.empty(d, a))
        self.w_k = nn.Parameter(torch.empty(d, a))
        self.w_v = nn.Parameter(torch.empty(d, a))
        for w in (self.w_q, self.w_k, self.w_v):
            nn.init.xavier_uniform_(w)
        self.proj = nn.Linear(a, d)
        self.ffn = nn.Sequential(
            nn.Dropout(cfg.dropout),
            nn.Linear(d, cfg.ffn_mult * d),
            nn.GELU(),
            nn.Linear(cfg.ffn_mult * d, d),
        )
        self.head = nn.Sequential(
            nn.Linear(cfg.tokens * d, cfg.head_hidden),
            nn.LeakyReLU(cfg.negative_slope),
            nn.Linear(cfg.head_hidden, 1),
        )

    def features(self, x):
        return self.msc(x) + self.position

    def forward(self, x):
        if x.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"discriminator expects {self.cfg.input_dim} columns, got {x.shape[-1]}")
        f = self.features(x)
        sa = l2_self_attention(f, self.w_q, self.w_k, self.w_v, self.cfg.input_dim)
        h = self.proj(sa) + f
        h = self.ffn(h) + h
        return torch.sigmoid(self.head(h.flatten(1))).squeeze(-1)


# ---------------------------------------------------------------- augmentation


def draw_augment_params(n: int, dtype=torch.float32, generator=None):
    """Per-sample (brightness shift, contrast scale, saturation blend)."""
    u = torch.rand(n, 3, dtype=dtype, generator=generator)
    delta = (u[:, 0:1] - 0.5) * 0.4
    scale = u[:, 1:2] + 0.5
    blend = u[:, 2:3]
    return delta, scale, blend


def diff_augment(x, params=None, generator=None):
    """Brightness, contrast and saturation-style jitter, differentiable in ``x``."""
    if params is None:
        params = draw_augment_params(x.shape[0], x.dtype, generator)
    delta, scale, blend = params
    x = x + delta
    mean = x.mean(dim=-1, keepdim=True)
    x = (x - mean) * scale + mean
    mean = x.mean(dim=-1, keepdim=True)
    return (1.0 - blend) * x + blend * mean


# ---------------------------------------------------------------- state


def _flatten(params) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in params])


@dataclass
class ModelState:
    """Generator + discriminator with their Adam optimizers."""

    g_cfg: GeneratorConfig
    d_cfg: DiscriminatorConfig
    seed: int = 0
    learning_rate: float = 5e-5
    betas: tuple[float, float] = (0.5, 0.999)
    task_index: int = 0
    generator: Generator = field(init=False, repr=False)
    discriminator: Discriminator = field(init=False, repr=False)
    opt_g: torch.optim.Adam = field(init=False, repr=False)
    opt_d: torch.optim.Adam = field(init=False, repr=False)

    def __post_init__(self):
        if self.g_cfg.input_dim != self.d_cfg.input_dim:
            raise ArgumentError("generator and discriminator disagree on input_dim")
        with torch.random.fork_rng():
            torch.manual_seed(self.seed)
            self.generator = Generator(self.g_cfg)
            self.discriminator = Discriminator(self.d_cfg)
        self._make_optimizers()

    def _make_optimizers(self):
        kw = dict(lr=self.learning_rate, betas=tuple(self.betas), foreach=True)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), **kw)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), **kw)

    @classmethod
    def create(cls, bands: int, seed: int = 0, learning_rate: float = 5e-5, **d_kwargs) -> ModelState:
        return cls(GeneratorConfig(2 * bands), DiscriminatorConfig(2 * bands, **d_kwargs),
                   seed=seed, learning_rate=learning_rate)

    @property
    def input_dim(self) -> int:
        return self.g_cfg.input_dim

    def param_counts(self) -> dict[str, int]:
        g = sum(p.numel() for p in self.generator.parameters())
        d = sum(p.numel() for p in self.discriminator.parameters())
        return {"generator": g, "discriminator": d, "training": g + d, "detection": g}

    def flat_parameters(self) -> np.ndarray:
        params = [*self.generator.parameters(), *self.discriminator.parameters()]
        return _flatten(params).to(torch.float32).numpy()

    def eval(self):
        self.generator.eval()
        self.discriminator.eval()
        return self

    def train(self):
        self.generator.train()
        self.discriminator.train()
        return self

    def clone(self) -> ModelState:
        return copy.deepcopy(self)

    @torch.no_grad()
    def reconstruct(self, batch) -> np.ndarray:
        """Generator forward on a numpy batch in eval mode."""
        self.generator.eval()
        x = torch.as_tensor(np.asarray(batch), dtype=next(self.generator.parameters()).dtype)
        return self.generator(x).numpy()

    # ------------------------------------------------------------ checkpoint

    def _optimizer_blocks(self):
        blocks, steps = [], {}
        for name, opt, module in (("generator", self.opt_g, self.generator),
                                  ("discriminator", self.opt_d, self.discriminator)):
            params = list(module.parameters())
            state = [opt.state.get(p, {}) for p in params]
            if all("exp_avg" in s for s in state):
                blocks.append((f"{name}.exp_avg", _flatten([s["exp_avg"] for s in state])))
                blocks.append((f"{name}.exp_avg_sq", _flatten([s["exp_avg_sq"] for s in state])))
                steps[name] = float(state[0]["step"]) if params else 0.0
        return blocks, steps

    def save(self, path) -> Path:
        """Write a flat float32 payload plus JSON manifest; returns the payload path."""
        path = Path(path).with_suffix(".bin")
        path.parent.mkdir(parents=True, exist_ok=True)
        counts = self.param_counts()
        blocks = [("parameters", torch.from_numpy(self.flat_parameters()))]
        opt_blocks, steps = self._optimizer_blocks()
        blocks += opt_blocks
        offsets, cursor, chunks = {}, 0, []
        for name, vec in blocks:
            arr = vec.to(torch.float32).numpy().astype("<f4")
            offsets[name] = [cursor, arr.size]
            cursor += arr.size
            chunks.append(arr)
        path.write_bytes(np.concatenate(chunks).tobytes())
        manifest = {
            "arch": {"generator": asdict(self.g_cfg), "discriminator": asdict(self.d_cfg)},
            "dims": {"generator": counts["generator"], "discriminator": counts["discriminator"],
                     "total": cursor},
            "seed": self.seed,
            "task_index": self.task_index,
            "learning_rate": self.learning_rate,
            "betas": list(self.betas),
            "optimizer_state_offsets": offsets,
            "optimizer_steps": steps,
        }
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> ModelState:
        path = Path(path).with_suffix(".bin")
        try:
            manifest = json.loads(path.with_suffix(".json").read_text())
            raw = path.read_bytes()
        except FileNotFoundError as exc:
            raise FormatError(f"missing checkpoint file: {exc.filename}") from None
        flat = np.frombuffer(raw, dtype="<f4")
        if flat.size != manifest["dims"]["total"]:
            raise FormatError(f"{path}: payload has {flat.size} floats, manifest declares "
                              f"{manifest['dims']['total']}")
        arch = manifest["arch"]
        d_arch = dict(arch["discriminator"])
        d_arch["kernel_sizes"] = tuple(d_arch["kernel_sizes"])
        state = cls(GeneratorConfig(**arch["generator"]), DiscriminatorConfig(**d_arch),
                    seed=manifest["seed"], learning_rate=manifest["learning_rate"],
                    betas=tuple(manifest["betas"]), task_index=manifest["task_index"])
        offsets = manifest["optimizer_state_offsets"]

        def block(name):
            start, size = offsets[name]
            return torch.from_numpy(flat[start:start + size].copy())

        params = [*state.generator.parameters(), *state.discriminator.parameters()]
        torch.nn.utils.vector_to_parameters(block("parameters"), params)
        for name, opt, module in (("generator", state.opt_g, state.generator),
                                  ("discriminator", state.opt_d, state.discriminator)):
            if f"{name}.exp_avg" not in offsets:
                continue
            m, v = block(f"{name}.exp_avg"), block(f"{name}.exp_avg_sq")
            cursor = 0
            for p in module.parameters():
                n = p.numel()
                opt.state[p] = {
                    "step": torch.tensor(manifest["optimizer_steps"][name]),
                    "exp_avg": m[cursor:cursor + n].view_as(p).clone(),
                    "exp_avg_sq": v[cursor:cursor + n].view_as(p).clone(),
                }
                cursor += n
        return state
