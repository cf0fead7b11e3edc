"""Constructive routing policy for asymmetric matrices.

Encoder: gated fusion of coordinate and sampled-distance features into dual
row/column node embeddings, a learned pairwise bias from distance and angle
matrices, and a stack of attention-free mixing layers. Decoder: multi-head
attention over column embeddings from a dynamic context query, plus a
log-distance compatibility score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from . import envs
from .autodiff import ParamStore, Tensor
from .instances import RoutingInstance, TW_HORIZON

INV_DIST_EPS = 1e-6   # guards inverse-distance sampling weights
LOG_DIST_EPS = 1e-6   # guards the -log(dist) compatibility bias

DYNAMIC_DIMS = {"atsp": 1, "acvrp": 1, "acvrptw": 2}
NODE_FEATURE_DIMS = {"atsp": 0, "acvrp": 1, "acvrptw": 3}


@dataclass
class ModelConfig:
    embed_dim: int = 128
    n_heads: int = 8
    n_layers: int = 12
    ff_dim: int = 512
    knn_k: int = 25
    clip_c: float = 10.0
    norm: str = "instance"
    init_context: str = "gate"  # gate | coords | dist (ablation switch)
    use_nab: bool = True        # ablation switch; False leaves the mixing bias at 0

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        if self.init_context not in ("gate", "coords", "dist"):
            raise ValueError(f"unknown init_context {self.init_context!r}")
        if self.norm != "instance":
            raise ValueError("only instance normalization is supported")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


@dataclass
class Embeddings:
    row: Tensor  # (B, N, E)
    col: Tensor  # (B, N, E)


@dataclass
class DecoderContext:
    last_node_embedding: Tensor  # (B, S, E)
    dynamic: np.ndarray          # (B, S, d_attr)


@dataclass
class Trajectory:
    actions: list
    logps: np.ndarray  # per decided step
    reward: float      # negative route cost, recomputed independently

    @property
    def logp_sum(self) -> float:
        return float(self.logps.sum())


@dataclass
class InstanceBatch:
    task: str
    n: int
    coords: np.ndarray   # (B, N, 2)
    dist: np.ndarray     # (B, N, N)
    dur: np.ndarray
    angle: np.ndarray
    demands: np.ndarray | None
    capacity: np.ndarray | None
    tw: np.ndarray | None

    @classmethod
    def from_instances(cls, instances) -> "InstanceBatch":
        first = instances[0]
        if any(i.task != first.task or i.n != first.n for i in instances):
            raise ValueError("batch requires one task and one size")
        cap = first.capacity is not None
        return cls(
            task=first.task,
            n=first.n,
            coords=np.stack([i.coords for i in instances]),
            dist=np.stack([i.dist for i in instances]),
            dur=np.stack([i.dur for i in instances]),
            angle=np.stack([i.angle for i in instances]),
            demands=np.stack([i.demands for i in instances]) if cap else None,
            capacity=np.array([i.capacity for i in instances]) if cap else None,
            tw=np.stack([i.tw for i in instances]) if first.tw is not None else None,
        )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def init_params(cfg: ModelConfig, task: str, seed: int = 0, dtype=None) -> ParamStore:
    """All learnable tensors, addressable by path, in deterministic order."""
    if task not in DYNAMIC_DIMS:
        raise ValueError(f"unknown task {task!r}")
    dtype = np.dtype(dtype or ad.get_default_dtype())
    rng = np.random.default_rng(seed)
    e, ff, k = cfg.embed_dim, cfg.ff_dim, cfg.knn_k
    store = ParamStore()

    def linear(path: str, fi: int, fo: int, bias: bool = True):
        store.add(f"{path}.w", _xavier(rng, fi, fo, dtype))
        if bias:
            store.add(f"{path}.b", np.zeros(fo, dtype=dtype))

    def norm_affine(path: str):
        store.add(f"{path}.g", np.ones(e, dtype=dtype))
        store.add(f"{path}.b", np.zeros(e, dtype=dtype))

    linear("init.coord", 2, e)
    for stream in ("row", "col"):
        linear(f"init.{stream}.dist", k, e)
        linear(f"init.{stream}.gate1", 2 * e, e)
        linear(f"init.{stream}.gate2", e, e)
        linear(f"init.{stream}.comb1", 2 * e, e)
        linear(f"init.{stream}.comb2", e, e)
    d_feat = NODE_FEATURE_DIMS[task]
    if d_feat:
        linear("init.node", d_feat, e)

    linear("nab.dist1", 1, e, bias=False)
    linear("nab.dist2", e, e, bias=False)
    linear("nab.angle1", 1, e, bias=False)
    linear("nab.angle2", e, e, bias=False)
    linear("nab.gate", 2 * e, 1, bias=False)
    linear("nab.out", e, 1, bias=False)

    for layer in range(cfg.n_layers):
        for stream in ("row", "col"):
            base = f"enc.{layer}.{stream}"
            linear(f"{base}.wq", e, e, bias=False)
            linear(f"{base}.wk", e, e, bias=False)
            linear(f"{base}.wv", e, e, bias=False)
            norm_affine(f"{base}.norm1")
            linear(f"{base}.ff1", e, ff)
            linear(f"{base}.ff2", ff, e)
            norm_affine(f"{base}.norm2")

    d_attr = DYNAMIC_DIMS[task]
    linear("dec.q", e + d_attr, e, bias=False)
    linear("dec.k", e, e, bias=False)
    linear("dec.v", e, e, bias=False)
    linear("dec.o", e, e, bias=False)
    linear("dec.idt", e + d_attr, e, bias=False)
    linear("dec.mlp1", e, ff)
    linear("dec.mlp2", ff, e)
    linear("dec.logit", e, e, bias=False)
    return store


def _linear(x: Tensor, params: ParamStore, path: str) -> Tensor:
    y = ad.matmul(x, params[f"{path}.w"])
    if f"{path}.b" in params:
        y = ad.add(y, params[f"{path}.b"])
    return y


def _mlp2(x: Tensor, params: ParamStore, p1: str, p2: str) -> Tensor:
    return _linear(ad.relu(_linear(x, params, p1)), params, p2)


def sample_knn_distances(dist: np.ndarray, k: int, rng: np.random.Generator | None = None,
                         deterministic: bool = True) -> np.ndarray:
    """Per-node distance features: k neighbors per row, values sorted ascending.

    Deterministic mode takes the k smallest off-diagonal distances. Stochastic
    mode samples k distinct neighbors without replacement with probability
    proportional to 1/d (zero distances floored at 1e-6), via Gumbel top-k.
    When k > n-1 the sorted vector is padded by repeating its largest entry.
    """
    dist = np.asarray(dist)
    squeeze = dist.ndim == 2
    if squeeze:
        dist = dist[None]
    b, n, _ = dist.shape
    k_eff = min(k, n - 1)
    d = dist.astype(np.float64).copy()
    idx = np.arange(n)
    d[:, idx, idx] = np.inf  # exclude the diagonal
    if deterministic:
        vals = np.sort(d, axis=-1)[..., :k_eff]
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        w = -np.log(np.maximum(d, INV_DIST_EPS))  # diagonal (d = inf) stays -inf
        g = rng.gumbel(size=d.shape)
        keys = np.where(np.isfinite(w), w + g, -np.inf)
        picks = np.argpartition(-keys, k_eff - 1, axis=-1)[..., :k_eff]
        vals = np.sort(np.take_along_axis(d, picks, axis=-1), axis=-1)
    if k_eff < k:
        pad = np.repeat(vals[..., -1:], k - k_eff, axis=-1)
        vals = np.concatenate([vals, pad], axis=-1)
    return vals[0] if squeeze else vals


def knn_distance_features(dist: np.ndarray, k: int, params: ParamStore, stream: str = "row",
                          rng: np.random.Generator | None = None, deterministic: bool = True):
    """Sampled per-node distances plus their linear projection to embed_dim."""
    sampled = sample_knn_distances(dist, k, rng=rng, deterministic=deterministic)
    pdtype = params.dtype
    f_dist = _linear(Tensor(sampled.astype(pdtype)), params, f"init.{stream}.dist")
    return sampled, f_dist


def contextual_gate(f_a: Tensor, f_b: Tensor, params: ParamStore, prefix: str) -> Tensor:
    """Convex per-element fusion h = g*f_a + (1-g)*f_b, g = sigmoid(MLP([f_a; f_b]))."""
    if f_a.shape != f_b.shape:
        raise ValueError(f"shape mismatch {f_a.shape} vs {f_b.shape}")
    z = ad.concat([f_a, f_b], axis=-1)
    h = ad.relu(_linear(z, params, f"{prefix}.gate1"))
    g = ad.sigmoid(_linear(h, params, f"{prefix}.gate2"))
    return ad.add(ad.mul(g, f_a), ad.mul(ad.sub(1.0, g), f_b))


def _node_features(batch: InstanceBatch, pdtype) -> np.ndarray | None:
    if batch.task == "atsp":
        return None
    if batch.task == "acvrp":
        return batch.demands[..., None].astype(pdtype)
    return np.concatenate([batch.demands[..., None], batch.tw], axis=-1).astype(pdtype)


def initial_embed_batch(batch: InstanceBatch, params: ParamStore, cfg: ModelConfig,
                        rng: np.random.Generator | None = None,
                        deterministic: bool = True) -> Embeddings:
    pdtype = params.dtype
    b, n = batch.dist.shape[:2]
    f_coord = _linear(Tensor(batch.coords.astype(pdtype)), params, "init.coord")
    streams = {}
    for stream, mat in (("row", batch.dist), ("col", batch.dist.transpose(0, 2, 1))):
        if cfg.init_context == "coords":
            streams[stream] = f_coord
            continue
        _, f_dist = knn_distance_features(mat, cfg.knn_k, params, stream,
                                          rng=rng, deterministic=deterministic)
        if cfg.init_context == "dist":
            streams[stream] = f_dist
        else:
            streams[stream] = contextual_gate(f_coord, f_dist, params, f"init.{stream}")
    feats = _node_features(batch, pdtype)
    if feats is None:
        f_node = Tensor(np.zeros((b, n, cfg.embed_dim), dtype=pdtype))
    else:
        f_node = _linear(Tensor(feats), params, "init.node")
    row = _mlp2(ad.concat([streams["row"], f_node], axis=-1), params,
                "init.row.comb1", "init.row.comb2")
    col = _mlp2(ad.concat([streams["col"], f_node], axis=-1), params,
                "init.col.comb1", "init.col.comb2")
    return Embeddings(row=row, col=col)


def initial_embed(instance: RoutingInstance, params: ParamStore, cfg: ModelConfig,
                  rng: np.random.Generator | None = None,
                  deterministic: bool = True) -> Embeddings:
    batch = InstanceBatch.from_instances([instance])
    return initial_embed_batch(batch, params, cfg, rng=rng, deterministic=deterministic)


def neural_adaptive_bias(dist, angle, params: ParamStore) -> Tensor:
    """Learned pairwise bias from distance and angle matrices.

    Lifts each scalar entry to embed_dim, gates the two embeddings against
    each other, and projects back to one scalar per node pair: (B, N, N).
    """
    pdtype = params.dtype
    dist_t = dist if isinstance(dist, Tensor) else Tensor(np.asarray(dist, dtype=pdtype))
    angle_t = angle if isinstance(angle, Tensor) else Tensor(np.asarray(angle, dtype=pdtype))
    if dist_t.shape != angle_t.shape:
        raise ValueError("dist and angle shapes must match")
    b, n, _ = dist_t.shape
    d4 = ad.reshape(dist_t, (b, n, n, 1))
    p4 = ad.reshape(angle_t, (b, n, n, 1))
    d_emb = ad.matmul(ad.relu(ad.matmul(d4, params["nab.dist1.w"])), params["nab.dist2.w"])
    p_emb = ad.matmul(ad.relu(ad.matmul(p4, params["nab.angle1.w"])), params["nab.angle2.w"])
    gate = ad.sigmoid(ad.matmul(ad.concat([d_emb, p_emb], axis=-1), params["nab.gate.w"]))
    fused = ad.add(ad.mul(gate, d_emb), ad.mul(ad.sub(1.0, gate), p_emb))
    return ad.reshape(ad.matmul(fused, params["nab.out.w"]), (b, n, n))


def aafm(q: Tensor, k: Tensor, v: Tensor, a: Tensor) -> Tensor:
    """Attention-free mixing: sigmoid(Q) * (exp(A) @ (exp(K) * V)) / (exp(A) @ exp(K)).

    Stabilized by subtracting the per-row max of A and the per-feature max of
    K before exponentiation (detached constants; exact by shift invariance),
    so the exponentials never exceed 1. Exact in float64 for |A|, |K| <= 80.
    """
    m_a = a.data.max(axis=-1, keepdims=True)   # (B, N, 1)
    m_k = k.data.max(axis=-2, keepdims=True)   # (B, 1, E)
    ea = ad.exp(ad.sub(a, Tensor(m_a)))
    ek = ad.exp(ad.sub(k, Tensor(m_k)))
    num = ad.matmul(ea, ad.mul(ek, v))
    den = ad.matmul(ea, ek)
    return ad.mul(ad.sigmoid(q), ad.div(num, den))


def encode_batch(batch: InstanceBatch, params: ParamStore, cfg: ModelConfig,
                 rng: np.random.Generator | None = None,
                 deterministic: bool = True) -> Embeddings:
    """Run the full encoder stack; the pairwise bias is built once and shared."""
    pdtype = params.dtype
    emb = initial_embed_batch(batch, params, cfg, rng=rng, deterministic=deterministic)
    h_row, h_col = emb.row, emb.col
    if cfg.use_nab:
        bias = neural_adaptive_bias(batch.dist, batch.angle, params)
        bias_t = ad.transpose(bias, (0, 2, 1))
    else:
        zero = Tensor(np.zeros(batch.dist.shape, dtype=pdtype))
        bias = bias_t = zero

    def sublayer(h_q: Tensor, h_kv: Tensor, a: Tensor, base: str) -> Tensor:
        mixed = aafm(ad.matmul(h_q, params[f"{base}.wq.w"]),
                     ad.matmul(h_kv, params[f"{base}.wk.w"]),
                     ad.matmul(h_kv, params[f"{base}.wv.w"]), a)
        h1 = ad.instance_norm(ad.add(h_q, mixed),
                              params[f"{base}.norm1.g"], params[f"{base}.norm1.b"])
        ffn = _mlp2(h1, params, f"{base}.ff1", f"{base}.ff2")
        return ad.instance_norm(ad.add(h1, ffn),
                                params[f"{base}.norm2.g"], params[f"{base}.norm2.b"])

    for layer in range(cfg.n_layers):
        new_row = sublayer(h_row, h_col, bias, f"enc.{layer}.row")
        new_col = sublayer(h_col, h_row, bias_t, f"enc.{layer}.col")
        h_row, h_col = new_row, new_col
    return Embeddings(row=h_row, col=h_col)


def encode(instance: RoutingInstance, params: ParamStore, cfg: ModelConfig,
           rng: np.random.Generator | None = None, deterministic: bool = True) -> Embeddings:
    return encode_batch(InstanceBatch.from_instances([instance]), params, cfg,
                        rng=rng, deterministic=deterministic)


class _DecoderCache:
    """Per-rollout projections of the column embeddings."""

    def __init__(self, emb: Embeddings, params: ParamStore, cfg: ModelConfig):
        b, n, e = emb.col.shape
        heads, dh = cfg.n_heads, e // cfg.n_heads
        k_nodes = ad.matmul(emb.col, params["dec.k.w"])
        v_nodes = ad.matmul(emb.col, params["dec.v.w"])
        # (B, 1, H, N, dh) so queries broadcast over the start dimension
        self.k_heads = ad.transpose(ad.reshape(k_nodes, (b, 1, n, heads, dh)), (0, 1, 3, 2, 4))
        self.v_heads = ad.transpose(ad.reshape(v_nodes, (b, 1, n, heads, dh)), (0, 1, 3, 2, 4))
        logit_nodes = ad.matmul(emb.col, params["dec.logit.w"])  # (B, N, E)
        self.logit_t = ad.reshape(ad.transpose(logit_nodes, (0, 2, 1)), (b, 1, e, n))


def decode_step(ctx: DecoderContext, emb: Embeddings, mask: np.ndarray,
                dist_row_from_current: np.ndarray, params: ParamStore, cfg: ModelConfig,
                cache: _DecoderCache | None = None) -> Tensor:
    """One decoding step: probabilities over nodes, exactly 0 where masked.

    mask: (B, S, N) booleans, True = feasible. dist_row_from_current: the
    current node's row of the dist matrix, (B, S, N); its -log enters the
    compatibility score so nearer nodes score higher.
    """
    if cache is None:
        cache = _DecoderCache(emb, params, cfg)
    b, s, e = ctx.last_node_embedding.shape
    heads, dh = cfg.n_heads, e // cfg.n_heads
    pdtype = params.dtype
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("decode_step: a state has no feasible action")

    h_ctx = ad.concat([ctx.last_node_embedding,
                       Tensor(ctx.dynamic.astype(pdtype))], axis=-1)  # (B, S, E+d_attr)
    q = ad.matmul(h_ctx, params["dec.q.w"])
    q_heads = ad.reshape(q, (b, s, heads, 1, dh))
    att_logits = ad.mul(ad.matmul(q_heads, ad.transpose(cache.k_heads, (0, 1, 2, 4, 3))),
                        1.0 / np.sqrt(dh))                            # (B, S, H, 1, N)
    att = ad.softmax_masked(att_logits, mask[:, :, None, None, :], axis=-1)
    mha = ad.reshape(ad.matmul(att, cache.v_heads), (b, s, e))
    h_ref = ad.add(ad.matmul(mha, params["dec.o.w"]),
                   ad.matmul(h_ctx, params["dec.idt.w"]))             # MHA out + reshaped context
    q_final = ad.add(h_ref, _mlp2(h_ref, params, "dec.mlp1", "dec.mlp2"))

    compat = ad.reshape(ad.matmul(ad.reshape(q_final, (b, s, 1, e)), cache.logit_t), (b, s, -1))
    log_bias = np.log(dist_row_from_current.astype(np.float64) + LOG_DIST_EPS).astype(pdtype)
    logits = ad.mul(cfg.clip_c, ad.tanh(ad.sub(ad.mul(compat, 1.0 / np.sqrt(e)),
                                               Tensor(log_bias))))
    return ad.softmax_masked(logits, mask, axis=-1)


@dataclass
class RolloutResult:
    actions: list          # [B][S] lists of node indices
    logp: Tensor | None    # (B, S) sum of decided-step log-probs (graph-connected)
    logps_steps: np.ndarray  # (B, S, T) per-step values (0 after termination)
    rewards: np.ndarray    # (B, S) = -route_cost, recomputed through the env
    costs: np.ndarray      # (B, S)


def _start_states(instances, n_starts: int):
    """Reset one env per (instance, start); capacitated starts force customer s+1."""
    task = instances[0].task
    n = instances[0].n
    if task == "atsp":
        if not 1 <= n_starts <= n:
            raise ValueError("atsp needs 1 <= n_starts <= n")
        states = [[envs.reset(inst, s) for s in range(n_starts)] for inst in instances]
        actions = [[[s] for s in range(n_starts)] for _ in instances]
    else:
        if not 1 <= n_starts <= n - 1:
            raise ValueError("capacitated tasks need 1 <= n_starts <= n-1")
        states, actions = [], []
        for inst in instances:
            row_states, row_actions = [], []
            for s in range(n_starts):
                st = envs.step(envs.reset(inst, 0), s + 1)
                row_states.append(st)
                row_actions.append([s + 1])
            states.append(row_states)
            actions.append(row_actions)
    return states, actions


def _dynamic_features(states, task: str, n: int) -> np.ndarray:
    b, s = len(states), len(states[0])
    if task == "atsp":
        dyn = np.array([[st.step_count / n for st in row] for row in states])
        return dyn.reshape(b, s, 1)
    if task == "acvrp":
        dyn = np.array([[st.remaining_capacity for st in row] for row in states])
        return dyn.reshape(b, s, 1)
    dyn = np.array([[(st.remaining_capacity, st.clock / TW_HORIZON) for st in row]
                    for row in states])
    return dyn.reshape(b, s, 2)


def rollout_batch(instances, params: ParamStore, cfg: ModelConfig, n_starts: int,
                  mode: str = "greedy", rng: np.random.Generator | None = None,
                  deterministic_knn: bool = True,
                  knn_rng: np.random.Generator | None = None,
                  collect_graph: bool = False) -> RolloutResult:
    """Encode once per instance, then decode every start to termination."""
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    batch = InstanceBatch.from_instances(instances)
    b, n, task = len(instances), batch.n, batch.task
    s = n_starts
    m = b * s
    b_idx = np.repeat(np.arange(b), s)

    emb = encode_batch(batch, params, cfg, rng=knn_rng, deterministic=deterministic_knn)
    cache = _DecoderCache(emb, params, cfg)
    states, actions = _start_states(instances, n_starts)

    logp_total: Tensor | None = None
    step_logs: list[np.ndarray] = []
    max_steps = 2 * n + 2
    for _ in range(max_steps):
        alive = np.array([[not st.done for st in row] for row in states])
        if not alive.any():
            break
        current = np.array([[st.current_node for st in row] for row in states])
        feas = np.zeros((b, s, n), dtype=bool)
        for i in range(b):
            for j in range(s):
                if alive[i][j]:
                    feas[i, j] = envs.feasible_mask(states[i][j])
                    if not feas[i, j].any():
                        raise envs.DeadEndError("masked rollout reached a dead end")
                else:
                    feas[i, j, current[i, j]] = True  # placeholder; contributes logp 0

        last_emb = ad.reshape(ad.gather_nodes(emb.row, b_idx, current.reshape(-1)), (b, s, -1))
        ctx = DecoderContext(last_node_embedding=last_emb,
                             dynamic=_dynamic_features(states, task, n))
        dist_rows = batch.dist[b_idx, current.reshape(-1)].reshape(b, s, n)
        probs = decode_step(ctx, emb, feas, dist_rows, params, cfg, cache=cache)

        flat_p = ad.reshape(probs, (m, n))
        pdata = flat_p.data
        if mode == "greedy":
            chosen = np.argmax(pdata, axis=-1)
        else:
            cs = np.cumsum(pdata.astype(np.float64), axis=-1)
            cs /= cs[:, -1:]
            chosen = (rng.random(m)[:, None] > cs).sum(axis=-1)
        chosen = np.where(alive.reshape(-1), chosen, current.reshape(-1))

        alive_f = alive.reshape(-1).astype(params.dtype)
        p_sel = ad.take_indexed(flat_p, chosen)
        p_safe = ad.add(ad.mul(p_sel, Tensor(alive_f)), Tensor(1.0 - alive_f))
        logp_step = ad.reshape(ad.log(p_safe), (b, s))
        logp_total = logp_step if logp_total is None else ad.add(logp_total, logp_step)
        step_logs.append(logp_step.data.astype(np.float64))

        chosen2 = chosen.reshape(b, s)
        for i in range(b):
            for j in range(s):
                if alive[i][j]:
                    states[i][j] = envs.step(states[i][j], int(chosen2[i, j]))
                    actions[i][j].append(int(chosen2[i, j]))
    else:
        raise envs.DeadEndError(f"rollout exceeded {max_steps} steps")

    costs = np.empty((b, s), dtype=np.float64)
    for i in range(b):
        for j in range(s):
            costs[i, j] = envs.route_cost(instances[i], actions[i][j])
    rewards = -costs
    return RolloutResult(
        actions=actions,
        logp=logp_total if collect_graph else None,
        logps_steps=np.stack(step_logs, axis=-1) if step_logs else np.zeros((b, s, 0)),
        rewards=rewards,
        costs=costs,
    )


def rollout(instance: RoutingInstance, params: ParamStore, cfg: ModelConfig,
            n_starts: int, mode: str = "greedy", rng: np.random.Generator | None = None,
            deterministic_knn: bool = True) -> list[Trajectory]:
    """Multi-start rollout of one instance; returns one Trajectory per start."""
    with ad.no_grad():
        res = rollout_batch([instance], params, cfg, n_starts, mode=mode, rng=rng,
                            deterministic_knn=deterministic_knn)
    out = []
    for j in range(n_starts):
        decided = len(res.actions[0][j]) - 1  # first action is the start / forced customer
        out.append(Trajectory(actions=res.actions[0][j],
                              logps=res.logps_steps[0, j][:decided],
                              reward=float(res.rewards[0, j])))
    return out


def trajectory_logprob(instance: RoutingInstance, actions, params: ParamStore,
                       cfg: ModelConfig, reduce: str = "mean") -> Tensor:
    """Graph-connected log-probability of a fixed action sequence (for grad checks).

    For ATSP the first action is the start node (no probability); capacitated
    routes start at the depot and their first action is the forced customer.
    """
    emb = encode(instance, params, cfg, deterministic=True)
    cache = _DecoderCache(emb, params, cfg)
    task, n = instance.task, instance.n
    if task == "atsp":
        state = envs.reset(instance, int(actions[0]))
    else:
        state = envs.step(envs.reset(instance, 0), int(actions[0]))
    terms = []
    for action in actions[1:]:
        feas = envs.feasible_mask(state)[None, None, :]
        last = ad.reshape(ad.gather_nodes(emb.row, np.array([0]),
                                          np.array([state.current_node])), (1, 1, -1))
        ctx = DecoderContext(last_node_embedding=last,
                             dynamic=_dynamic_features([[state]], task, n))
        dist_row = instance.dist[state.current_node][None, None, :]
        probs = decode_step(ctx, emb, feas, dist_row, params, cfg, cache=cache)
        terms.append(ad.log(ad.take_indexed(ad.reshape(probs, (1, n)), [int(action)])))
        state = envs.step(state, int(action))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    if reduce == "mean":
        total = ad.mul(total, 1.0 / len(terms))
    return ad.reshape(total, ())
