"""Desk-scale experiment drivers shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

from .evalmetrics import AucMatrix, continual_metrics
from .hsi_io import SceneSpec, synth_scene, synth_stream
from .replay import ReplayBuffer
from .trainer import (CheckpointSet, TaskStream, TrainConfig, auc_matrix, task_auc, train_continual,
                      train_fine_tune, train_single_task)


def synthetic_stream(n_tasks: int, seed: int, **spec) -> TaskStream:
    pairs = synth_stream(n_tasks, SceneSpec(seed=seed, **spec))
    return TaskStream([c for c, _ in pairs], [m for _, m in pairs])


@dataclass
class ModeResult:
    matrix: AucMatrix
    acc: float
    bwt: float | None
    betas: list[float | None]


@dataclass
class GapResult:
    seed: int
    continual: ModeResult
    fine_tune: ModeResult
    seconds: float

    @property
    def bwt_gap(self) -> float:
        return self.continual.bwt - self.fine_tune.bwt

    @property
    def acc_gap(self) -> float:
        return self.continual.acc - self.fine_tune.acc

    def as_dict(self) -> dict:
        def mode(r: ModeResult):
            return {"matrix": r.matrix.rows, "acc": r.acc, "bwt": r.bwt, "betas": r.betas}
        return {"seed": self.seed, "continual": mode(self.continual), "fine_tune": mode(self.fine_tune),
                "bwt_gap": self.bwt_gap, "acc_gap": self.acc_gap, "seconds": round(self.seconds, 1)}


def _summarise(result: CheckpointSet, stream: TaskStream, cfg: TrainConfig) -> ModeResult:
    matrix = auc_matrix(result, stream, cfg)
    m = continual_metrics(matrix)
    return ModeResult(matrix, m.acc, m.bwt, [ck.beta for ck in result.checkpoints])


def forgetting_gap(stream: TaskStream, cfg: TrainConfig) -> GapResult:
    """Continual vs fine-tune on one stream.

    Task 1 trains identically in both modes (no regulariser, no replay yet), so
    fine-tune resumes from the continual run's first checkpoint instead of
    repeating it.
    """
    started = time.time()
    cl_cfg = dataclasses.replace(cfg, mode="continual")
    ft_cfg = dataclasses.replace(cfg, mode="fine_tune")
    cl = train_continual(stream, cl_cfg)
    first = cl.checkpoints[0]
    seed_ft = CheckpointSet(ft_cfg.config_hash(),
                            [dataclasses.replace(first, state=first.state.clone(), buffer=ReplayBuffer())],
                            [r for r in cl.log if r["task"] == 1])
    ft = train_fine_tune(stream, ft_cfg, resume=seed_ft)
    return GapResult(cfg.seed, _summarise(cl, stream, cl_cfg), _summarise(ft, stream, ft_cfg),
                     time.time() - started)


def single_task_auc(seed: int, cfg: TrainConfig, **spec) -> float:
    cube, mask = synth_scene(SceneSpec(seed=seed, **spec))
    state = train_single_task(cube, dataclasses.replace(cfg, mode="single_task", seed=seed)).final.state
    return task_auc(state, cube, mask, cfg.w)
