"""REINFORCE with the shared multi-start baseline, x8 augmentation, Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as policy
from .autodiff import ParamStore, Tensor
from .geo import angle_matrix
from .instances import make_instance
from .model import Trajectory  # noqa: F401 - rollouts produce these; re-exported here

AUGMENT_FACTOR = 8
VAL_SEED_BASE = 777_000_000  # validation instances share seeds across runs


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "atsp"
    n_nodes: int = 10
    batch_size: int = 64
    instances_per_epoch: int = 2000
    epochs: int = 20
    lr: float = 4e-4
    weight_decay: float = 1e-6
    milestone_ratios: tuple = (0.9, 0.975)
    gamma: float = 0.1
    n_starts: int = 8
    augment: bool = False
    augment_factor: int = AUGMENT_FACTOR
    grad_clip: float = 1.0
    seed: int = 0
    sampler: str = "uniform"
    val_instances: int = 128

    def __post_init__(self):
        for name in ("batch_size", "instances_per_epoch", "epochs", "n_starts", "n_nodes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(m >= self.epochs for m in self.milestones()):
            raise ValueError("milestones must fall before the final epoch")

    def milestones(self) -> list[int]:
        return [int(r * self.epochs) for r in self.milestone_ratios]

    def to_json(self) -> str:
        doc = asdict(self)
        doc["milestone_ratios"] = list(self.milestone_ratios)
        doc["milestones"] = self.milestones()
        return json.dumps(doc, indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        doc.pop("milestones", None)
        if "milestone_ratios" in doc:
            doc["milestone_ratios"] = tuple(doc["milestone_ratios"])
        return cls(**doc)


def scheduled_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-indexed epoch: lr * gamma^(milestones passed).

    Decimal arithmetic keeps the decayed value decimal-exact (4e-4 decayed
    once is exactly 4e-5).
    """
    k = sum(1 for m in cfg.milestones() if m < epoch)
    return float(Decimal(repr(cfg.lr)) * Decimal(repr(cfg.gamma)) ** k)


def pomo_advantage(rewards: np.ndarray) -> np.ndarray:
    """Advantage against the per-row mean over starts: adv = r - mean_s(r)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 2 or rewards.shape[1] < 2:
        raise ValueError("rewards must be (B, S) with S >= 2")
    return rewards - rewards.mean(axis=1, keepdims=True)


def reinforce_loss(logps: Tensor, adv: np.ndarray) -> Tensor:
    """loss = -mean(adv * logp); the advantage is a constant."""
    adv = np.asarray(adv)
    if adv.shape != tuple(logps.shape):
        raise ValueError(f"shape mismatch {adv.shape} vs {logps.shape}")
    if not (np.isfinite(adv).all() and np.isfinite(logps.data).all()):
        raise ValueError("non-finite inputs to reinforce_loss")
    return ad.mul(-1.0, ad.mean(ad.mul(Tensor(adv.astype(logps.dtype)), logps)))


def augment_x8(coords: np.ndarray) -> list[np.ndarray]:
    """The 8 dihedral coordinate variants of [0,1]^2; variant 0 is the identity."""
    coords = np.asarray(coords)
    x, y = coords[:, 0], coords[:, 1]
    quads = [(x, y), (1 - x, y), (x, 1 - y), (1 - x, 1 - y)]
    variants = [np.column_stack(q).astype(coords.dtype) for q in quads]
    variants += [v[:, ::-1].copy() for v in variants]  # axes swapped
    return variants


def augment_instance(inst) -> list:
    """8 instances sharing matrices and features; coords and angle transformed."""
    out = []
    for coords in augment_x8(inst.coords):
        out.append(replace(inst, coords=coords, angle=angle_matrix(coords)))
    return out


class Adam:
    """Adam with decoupled weight decay over a ParamStore."""

    def __init__(self, store: ParamStore, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-6):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p: np.zeros_like(t.data, dtype=np.float64) for p, t in store.items()}
        self.v = {p: np.zeros_like(t.data, dtype=np.float64) for p, t in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for path, tensor in self.store.items():
            if tensor.grad is None:
                continue
            g = tensor.grad.astype(np.float64)
            m = self.m[path] = self.b1 * self.m[path] + (1.0 - self.b1) * g
            v = self.v[path] = self.b2 * self.v[path] + (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            data = tensor.data.astype(np.float64)
            data -= self.lr * self.weight_decay * data  # decoupled decay
            data -= self.lr * update
            tensor.data = data.astype(tensor.data.dtype)


def greedy_eval(instances, params: ParamStore, cfg: policy.ModelConfig,
                n_starts: int, augment: bool = False, batch_size: int = 32) -> np.ndarray:
    """Best greedy multi-start cost per instance (optionally over x8 variants)."""
    best = np.full(len(instances), np.inf)
    for lo in range(0, len(instances), batch_size):
        chunk = instances[lo:lo + batch_size]
        variant_sets = [[inst] if not augment else augment_instance(inst) for inst in chunk]
        n_var = len(variant_sets[0])
        for v in range(n_var):
            insts = [vs[v] for vs in variant_sets]
            with ad.no_grad():
                res = policy.rollout_batch(insts, params, cfg, n_starts, mode="greedy")
            best[lo:lo + len(chunk)] = np.minimum(best[lo:lo + len(chunk)],
                                                  res.costs.min(axis=1))
    return best


@dataclass
class TrainResult:
    out_dir: Path
    metrics: list
    best_val_cost: float
    best_path: Path
    final_path: Path


def make_validation_set(basemaps, cfg: TrainConfig) -> list:
    return [make_instance(basemaps[i % len(basemaps)], cfg.task, cfg.n_nodes,
                          sampler=cfg.sampler, seed=VAL_SEED_BASE + i)
            for i in range(cfg.val_instances)]


def train(basemaps, params: ParamStore, model_cfg: policy.ModelConfig,
          cfg: TrainConfig, out_dir, val_basemaps=None) -> TrainResult:
    """Policy-gradient training loop; deterministic given cfg.seed (single worker).

    Per step: fresh instances, sampled multi-start rollouts (x8 variants when
    augmenting, with the baseline grouped per instance-variant pair), Adam
    update with decoupled decay and global-norm clipping. Per epoch: greedy
    validation, JSONL metrics, checkpoints (every epoch + best validation).
    """
    if not basemaps:
        raise ValueError("need at least one base map")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "model_config.json").write_text(model_cfg.to_json())
    (out_dir / "train_config.json").write_text(cfg.to_json())

    ss = np.random.SeedSequence(cfg.seed)
    seeds = ss.spawn(4)
    map_rng = np.random.default_rng(seeds[0])
    inst_seed_rng = np.random.default_rng(seeds[1])
    knn_rng = np.random.default_rng(seeds[2])
    action_rng = np.random.default_rng(seeds[3])

    val_set = make_validation_set(val_basemaps or basemaps, cfg)
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    steps_per_epoch = max(1, cfg.instances_per_epoch // cfg.batch_size)
    metrics = []
    best_val = np.inf
    best_path = out_dir / "best.params"
    metrics_path = out_dir / "metrics.jsonl"

    with open(metrics_path, "w") as log:
        for epoch in range(1, cfg.epochs + 1):
            opt.lr = scheduled_lr(cfg, epoch)
            epoch_costs, epoch_losses = [], []
            for _ in range(steps_per_epoch):
                insts = [make_instance(basemaps[int(map_rng.integers(len(basemaps)))],
                                       cfg.task, cfg.n_nodes, sampler=cfg.sampler,
                                       seed=int(inst_seed_rng.integers(2 ** 63)))
                         for _ in range(cfg.batch_size)]
                if cfg.augment:
                    insts = [v for inst in insts for v in augment_instance(inst)]
                res = policy.rollout_batch(insts, params, model_cfg, cfg.n_starts,
                                           mode="sample", rng=action_rng,
                                           deterministic_knn=False, knn_rng=knn_rng,
                                           collect_graph=True)
                adv = pomo_advantage(res.rewards)
                loss = reinforce_loss(res.logp, adv)
                if not np.isfinite(loss.data):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} "
                        f"(mean cost {res.costs.mean():.4f}, lr {opt.lr:g})")
                params.zero_grad()
                loss.backward()
                params.clip_grad_norm(cfg.grad_clip)
                opt.step()
                epoch_costs.append(float(res.costs.mean()))
                epoch_losses.append(float(loss.data))

            val_costs = greedy_eval(val_set, params, model_cfg, cfg.n_starts)
            entry = {
                "epoch": epoch,
                "mean_cost": float(np.mean(epoch_costs)),
                "loss": float(np.mean(epoch_losses)),
                "lr": opt.lr,
                "val_cost": float(val_costs.mean()),
            }
            metrics.append(entry)
            log.write(json.dumps(entry) + "\n")
            log.flush()
            ad.save_params(params, out_dir / f"epoch_{epoch:03d}.params")
            if entry["val_cost"] < best_val:
                best_val = entry["val_cost"]
                ad.save_params(params, best_path)

    final_path = out_dir / f"epoch_{cfg.epochs:03d}.params"
    if not best_path.exists():  # degenerate 0-epoch guard
        ad.save_params(params, best_path)
    return TrainResult(out_dir=out_dir, metrics=metrics, best_val_cost=float(best_val),
                       best_path=best_path, final_path=final_path)
