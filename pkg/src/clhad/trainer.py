"""Continual training over a task stream, plus fine-tune and joint baselines."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .bsm import BackgroundSet, select_background
from .errors import ConfigError, DivergenceError, FormatError, SelectionError
from .evalmetrics import AucMatrix, anomaly_map, roc_triplet
from .hsi_io import GroundTruthMask, HsiCube, load_cube, load_mask, mask_path_for, resample_bands
from .losses import LossBreakdown, adversarial_losses, af_loss, cl_loss, recon_loss, select_beta
from .model import DiscriminatorConfig, GeneratorConfig, ModelState, diff_augment
from .replay import ReplayBuffer, kmeans, select_exemplars, update_buffer

log = logging.getLogger(__name__)

MODES = ("continual", "fine_tune", "joint", "single_task")


@dataclass
class TrainConfig:
    mu: float = 0.99
    P: int = 3
    w: int = 3
    lambda_af: float = 0.1
    lambda_cl: float = 0.9
    learning_rate: float = 5e-5
    epochs: int = 200
    batch_size: int = 64
    seed: int = 0
    beta: float | None = None
    beta_grid: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0])
    probe_epochs: int = 5
    mode: str = "continual"
    replay_every: int = 4
    recon_reduction: str = "sample"
    adam_betas: list[float] = field(default_factory=lambda: [0.5, 0.999])
    generator: dict = field(default_factory=dict)
    discriminator: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(0.0 < self.mu <= 1.0, "mu", f"must lie in (0, 1], got {self.mu}")
        need(isinstance(self.P, int) and self.P >= 1, "P", f"must be an integer >= 1, got {self.P}")
        need(isinstance(self.w, int) and self.w >= 3 and self.w % 2 == 1, "w",
             f"must be an odd integer >= 3, got {self.w}")
        need(self.lambda_af >= 0, "lambda_af", f"must be >= 0, got {self.lambda_af}")
        need(self.lambda_cl >= 0, "lambda_cl", f"must be >= 0, got {self.lambda_cl}")
        need(self.learning_rate > 0, "learning_rate", f"must be > 0, got {self.learning_rate}")
        need(isinstance(self.epochs, int) and self.epochs >= 1, "epochs", "must be an integer >= 1")
        need(isinstance(self.batch_size, int) and self.batch_size >= 1, "batch_size",
             "must be an integer >= 1")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(self.beta is None or 0.0 <= self.beta <= 1.0, "beta", "must lie in [0, 1] or be null")
        need(isinstance(self.beta_grid, list) and len(self.beta_grid) > 0
             and all(0.0 <= b <= 1.0 for b in self.beta_grid), "beta_grid",
             "must be a non-empty list of values in [0, 1]")
        need(isinstance(self.probe_epochs, int) and self.probe_epochs >= 1, "probe_epochs",
             "must be an integer >= 1")
        need(self.mode in MODES, "mode", f"must be one of {MODES}, got {self.mode!r}")
        need(isinstance(self.replay_every, int) and self.replay_every >= 1, "replay_every",
             "must be an integer >= 1")
        need(self.recon_reduction in ("mean", "sample"), "recon_reduction",
             f"must be 'mean' or 'sample', got {self.recon_reduction!r}")
        need(len(self.adam_betas) == 2 and all(0.0 <= b < 1.0 for b in self.adam_betas),
             "adam_betas", "must be two values in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> TrainConfig:
        if not isinstance(obj, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown field")
        numeric = {"mu", "lambda_af", "lambda_cl", "learning_rate"}
        for key in numeric & obj.keys():
            if isinstance(obj[key], bool) or not isinstance(obj[key], (int, float)):
                raise ConfigError(key, f"must be a number, got {obj[key]!r}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from None

    @classmethod
    def from_json(cls, path) -> TrainConfig:
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<root>", f"invalid JSON: {exc}") from None
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TaskStream:
    """Ordered tasks, band-aligned to the smallest band count."""

    cubes: list[HsiCube]
    masks: list[GroundTruthMask | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.cubes:
            raise ConfigError("tasks", "stream needs at least one task")
        if not self.masks:
            self.masks = [None] * len(self.cubes)
        c = self.common_bands
        self.cubes = [resample_bands(cube, c) for cube in self.cubes]

    @classmethod
    def from_paths(cls, paths) -> TaskStream:
        cubes, masks = [], []
        for p in paths:
            cubes.append(load_cube(p, normalize=True))
            mp = mask_path_for(p)
            masks.append(load_mask(mp) if mp.exists() else None)
        return cls(cubes, masks)

    @property
    def common_bands(self) -> int:
        return min(c.bands for c in self.cubes)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.cubes]

    def __len__(self) -> int:
        return len(self.cubes)


@dataclass
class TaskCheckpoint:
    task: int  # 1-based
    name: str
    state: ModelState
    buffer: ReplayBuffer
    beta: float | None = None
    n_background: int = 0


@dataclass
class CheckpointSet:
    config_hash: str
    checkpoints: list[TaskCheckpoint] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    @property
    def final(self) -> TaskCheckpoint:
        return self.checkpoints[-1]

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        index = {"config_hash": self.config_hash, "tasks": []}
        for ck in self.checkpoints:
            stem = f"task{ck.task:02d}"
            ck.state.save(out / f"ckpt_{stem}.bin")
            ck.buffer.save(out / f"replay_{stem}.bsq")
            index["tasks"].append({
                "task": ck.task, "name": ck.name, "checkpoint": f"ckpt_{stem}.bin",
                "replay": f"replay_{stem}.bsq", "beta": ck.beta, "n_background": ck.n_background,
            })
        (out / "checkpoints.json").write_text(json.dumps(index, indent=2) + "\n")
        with (out / "train_log.jsonl").open("w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")
        return out

    @classmethod
    def load(cls, out_dir) -> CheckpointSet:
        out = Path(out_dir)
        try:
            index = json.loads((out / "checkpoints.json").read_text())
        except FileNotFoundError:
            raise FormatError(f"{out} holds no checkpoints.json") from None
        cks = [TaskCheckpoint(t["task"], t["name"], ModelState.load(out / t["checkpoint"]),
                              ReplayBuffer.load(out / t["replay"]), t["beta"], t["n_background"])
               for t in index["tasks"]]
        log_path = out / "train_log.jsonl"
        records = [json.loads(line) for line in log_path.read_text().splitlines()] if log_path.exists() else []
        return cls(index["config_hash"], cks, records)


# ---------------------------------------------------------------- training core


def _task_seed(seed: int, task: int) -> int:
    return (seed * 1_000_003 + task * 7919) % (2 ** 31)


def new_model(bands: int, cfg: TrainConfig) -> ModelState:
    g_cfg = GeneratorConfig(2 * bands, **cfg.generator)
    d_cfg = DiscriminatorConfig(2 * bands, **cfg.discriminator)
    return ModelState(g_cfg, d_cfg, seed=cfg.seed, learning_rate=cfg.learning_rate,
                      betas=tuple(cfg.adam_betas))


def run_epochs(state: ModelState, data: np.ndarray, cfg: TrainConfig, *, task: int,
               epochs: int, replay: np.ndarray | None = None, lambda_af: float = 0.0,
               lambda_cl: float = 0.0, records: list | None = None):
    """Alternating D/G updates over ``data``.

    Every ``cfg.replay_every``-th batch the generator batch is extended by a
    replay batch, which also feeds the CL loss. Randomness comes from the
    global torch RNG; callers seed it.
    """
    G, D = state.generator, state.discriminator
    state.train()
    x_all = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))
    r_all = None
    if replay is not None and len(replay):
        r_all = torch.from_numpy(np.ascontiguousarray(replay, dtype=np.float32))
    n = len(x_all)
    bs = min(cfg.batch_size, n)
    for epoch in range(epochs):
        perm = torch.randperm(n)
        for step, start in enumerate(range(0, n, bs)):
            x = x_all[perm[start:start + bs]]
            m = len(x)
            # discriminator step
            with torch.no_grad():
                fake = G(x)
            p = D(torch.cat([x, diff_augment(fake)]))
            _, l_d = adversarial_losses(p[:m], p[m:])
            state.opt_d.zero_grad(set_to_none=True)
            l_d.backward()
            state.opt_d.step()
            # generator step
            use_replay = r_all is not None and step % cfg.replay_every == 0
            if use_replay:
                # a replay batch has B_b rows; small buffers are drawn with replacement
                if len(r_all) >= bs:
                    pick = torch.randperm(len(r_all))[:bs]
                else:
                    pick = torch.randint(len(r_all), (bs,))
                xg = torch.cat([x, r_all[pick]])
            else:
                xg = x
            rec = G(xg)
            l_recon = recon_loss(xg, rec, cfg.recon_reduction)
            l_g, _ = adversarial_losses(p[:m].detach(), D(diff_augment(rec[:m])))
            total = l_recon + l_g
            l_cl = l_af = 0.0
            if use_replay and lambda_cl > 0:
                l_cl = cl_loss(rec[m:], lambda_cl)
                total = total + l_cl
            if lambda_af > 0:
                l_af = af_loss(G.parameters(), lambda_af)
                total = total + l_af
            state.opt_g.zero_grad(set_to_none=True)
            total.backward()
            state.opt_g.step()
            lb = LossBreakdown(*(float(v.detach()) if torch.is_tensor(v) else float(v)
                               for v in (l_recon, l_g, l_d, l_af, l_cl)))
            if not math.isfinite(lb.total):
                raise DivergenceError(f"non-finite loss at task {task}, epoch {epoch}, step {step}")
            if records is not None:
                rec_d = lb.as_record(task=task, epoch=epoch, step=step)
                rec_d.pop("total")
                records.append(rec_d)
    state.eval()


@torch.no_grad()
def reconstruction_fitness(state: ModelState, data: np.ndarray, reduction: str = "sample") -> float:
    x = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float32))
    state.generator.eval()
    return -float(recon_loss(x, state.generator(x), reduction))


def _background(cube: HsiCube, cfg: TrainConfig, task: int) -> BackgroundSet:
    try:
        _, bs = select_background(cube, cfg.mu, cfg.w)
    except SelectionError as exc:
        raise SelectionError(f"task {task} ({cube.name}): {exc}") from None
    return bs


def _choose_beta(state, bs, replay, cfg, task) -> float:
    if cfg.beta is not None:
        return float(cfg.beta)

    def probe(beta):
        trial = state.clone()
        with torch.random.fork_rng():
            torch.manual_seed(_task_seed(cfg.seed, task) + 1)
            run_epochs(trial, bs.vectors, cfg, task=task, epochs=cfg.probe_epochs, replay=replay,
                       lambda_af=cfg.lambda_af * beta, lambda_cl=cfg.lambda_cl)
        fit = reconstruction_fitness(trial, bs.vectors, cfg.recon_reduction)
        log.debug("task %d probe beta=%.2f fitness=%.6f", task, beta, fit)
        return fit

    return select_beta(cfg.beta_grid, probe)


def _train_stream(stream: TaskStream, cfg: TrainConfig, *, regularize: bool,
                  replay_on: bool, resume: CheckpointSet | None = None) -> CheckpointSet:
    result = CheckpointSet(cfg.config_hash())
    if resume is not None and resume.checkpoints:
        if resume.config_hash != result.config_hash:
            raise ConfigError("config", "resume checkpoints were produced with a different config")
        done = [ck.name for ck in resume.checkpoints]
        if done != stream.names[: len(done)]:
            raise ConfigError("tasks", f"resume tasks {done} are not a prefix of the stream")
        result.checkpoints = list(resume.checkpoints)
        result.log = [r for r in resume.log if r["task"] <= len(done)]
        state = resume.final.state.clone()
        buffer = resume.final.buffer
    else:
        state = new_model(stream.common_bands, cfg)
        buffer = ReplayBuffer()

    for t in range(len(result.checkpoints) + 1, len(stream) + 1):
        cube = stream.cubes[t - 1]
        bs = _background(cube, cfg, t)
        replay = buffer.vectors if (replay_on and t > 1 and len(buffer)) else None
        beta = None
        lam_af = lam_cl = 0.0
        if regularize and t > 1:
            lam_cl = cfg.lambda_cl
            beta = _choose_beta(state, bs, replay, cfg, t)
            lam_af = cfg.lambda_af * beta
        log.info("task %d (%s): %d background rows, beta=%s", t, cube.name, len(bs), beta)
        torch.manual_seed(_task_seed(cfg.seed, t))
        run_epochs(state, bs.vectors, cfg, task=t, epochs=cfg.epochs, replay=replay,
                   lambda_af=lam_af, lambda_cl=lam_cl, records=result.log)
        state.task_index = t
        if replay_on:
            clusters = kmeans(bs.vectors, cfg.P, seed=_task_seed(cfg.seed, t))
            sel = select_exemplars(bs.vectors, clusters)
            buffer = update_buffer(buffer, t, bs.vectors[sel.rows], bs.indices[sel.rows], sel)
        result.checkpoints.append(
            TaskCheckpoint(t, cube.name, state.clone(), buffer, beta, len(bs)))
    return result


def train_continual(stream: TaskStream, cfg: TrainConfig,
                    resume: CheckpointSet | None = None) -> CheckpointSet:
    """Background selection, regularised GAN training with replay, exemplar update; per task."""
    return _train_stream(stream, cfg, regularize=True, replay_on=True, resume=resume)


def train_fine_tune(stream: TaskStream, cfg: TrainConfig,
                    resume: CheckpointSet | None = None) -> CheckpointSet:
    """Same loop without the AF/CL terms and without replay."""
    return _train_stream(stream, cfg, regularize=False, replay_on=False, resume=resume)


def train_single_task(cube: HsiCube, cfg: TrainConfig) -> CheckpointSet:
    return train_continual(TaskStream([cube]), cfg)


def train_joint(stream: TaskStream, cfg: TrainConfig) -> ModelState:
    """One model on the concatenated background sets of every task."""
    sets = [_background(cube, cfg, t) for t, cube in enumerate(stream.cubes, start=1)]
    data = np.concatenate([bs.vectors for bs in sets])
    state = new_model(stream.common_bands, cfg)
    torch.manual_seed(_task_seed(cfg.seed, 1))
    run_epochs(state, data, cfg, task=1, epochs=cfg.epochs)
    state.task_index = len(stream)
    return state


def train(stream: TaskStream, cfg: TrainConfig, resume: CheckpointSet | None = None) -> CheckpointSet:
    """Dispatch on ``cfg.mode``; joint mode yields a single checkpoint."""
    if cfg.mode in ("continual", "single_task"):
        if cfg.mode == "single_task" and len(stream) != 1:
            raise ConfigError("mode", "single_task mode takes exactly one task")
        return train_continual(stream, cfg, resume)
    if cfg.mode == "fine_tune":
        return train_fine_tune(stream, cfg, resume)
    state = train_joint(stream, cfg)
    return CheckpointSet(cfg.config_hash(),
                         [TaskCheckpoint(len(stream), "+".join(stream.names), state, ReplayBuffer())])


# ---------------------------------------------------------------- evaluation


def task_auc(state: ModelState, cube: HsiCube, mask: GroundTruthMask, w: int = 3) -> float:
    return roc_triplet(anomaly_map(cube, state, w), mask).auc_df


def auc_matrix(result: CheckpointSet, stream: TaskStream, cfg: TrainConfig,
               reference: list[float | None] | None = None) -> AucMatrix:
    """Evaluate every checkpoint on every task seen so far."""
    if any(m is None for m in stream.masks):
        raise FormatError("every task needs a ground-truth mask to build the AUC matrix")
    rows = []
    for ck in result.checkpoints:
        rows.append([task_auc(ck.state, stream.cubes[i], stream.masks[i], cfg.w)
                     for i in range(ck.task)])
    return AucMatrix(rows, reference)


def reference_aucs(stream: TaskStream, cfg: TrainConfig) -> list[float | None]:
    """AUC* per task from an independent single-task model (task 1 left as None)."""
    refs: list[float | None] = [None]
    for i in range(1, len(stream)):
        single = train_single_task(stream.cubes[i], cfg).final.state
        refs.append(task_auc(single, stream.cubes[i], stream.masks[i], cfg.w))
    return refs
