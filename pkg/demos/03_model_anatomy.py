"""Model anatomy: gated features, the learned pairwise bias, attention-free mixing.

Three mechanisms carry the asymmetric structure into the policy:
  1. each node fuses coordinate features with sampled row/column distances
     through a learned sigmoid gate (a convex combination);
  2. a pairwise bias network lifts (distance, angle) pairs into a score matrix
     that replaces query-key attention inside the mixing layers;
  3. the decoder subtracts log(distance) in its compatibility score, so nearby
     nodes win ties out of the box.
"""

import numpy as np

from rrnco import autodiff as ad
from rrnco.autodiff import Tensor
from rrnco.ingest import SynthConfig, synth_basemap
from rrnco.instances import make_instance
from rrnco.model import (DecoderContext, ModelConfig, aafm, decode_step, encode,
                         init_params, neural_adaptive_bias)

cfg = ModelConfig(embed_dim=32, n_heads=4, n_layers=2, ff_dim=64, knn_k=8)
bmap = synth_basemap(SynthConfig(n=100, seed=1, asymmetry=0.6))
inst = make_instance(bmap, "atsp", 10, seed=2)
params = init_params(cfg, "atsp", seed=0)

print("== pairwise bias from (distance, angle) ==")
bias = neural_adaptive_bias(inst.dist[None], inst.angle[None], params).data[0]
print(f"bias matrix {bias.shape}, range [{bias.min():.3f}, {bias.max():.3f}]")
corr = np.corrcoef(bias[~np.eye(10, dtype=bool)], inst.dist[~np.eye(10, dtype=bool)])[0, 1]
print(f"correlation with raw distance at init: {corr:+.3f} (learned, not hardwired)")

print("\n== attention-free mixing is shift-invariant ==")
rng = np.random.default_rng(0)
q, k, v = (Tensor(rng.normal(size=(1, 6, 8))) for _ in range(3))
a = Tensor(rng.normal(size=(1, 6, 6)))
out1 = aafm(q, k, v, a).data
shifted = a.data.copy()
shifted[0, 2, :] += 123.0  # per-row shifts cancel in the softmax-like ratio
out2 = aafm(q, k, v, Tensor(shifted)).data
print(f"max change after shifting one bias row by 123: {np.abs(out1 - out2).max():.2e}")

print("\n== decoder prefers near nodes before any training ==")
for path in params.paths():  # zero the decoder so only the -log(dist) term remains
    if path.startswith("dec."):
        params[path].data = np.zeros_like(params[path].data)
emb = encode(inst, params, cfg)
last = ad.reshape(ad.gather_nodes(emb.row, np.array([0]), np.array([0])), (1, 1, -1))
ctx = DecoderContext(last_node_embedding=last, dynamic=np.zeros((1, 1, 1)))
mask = np.ones((1, 1, 10), dtype=bool)
mask[0, 0, 0] = False
probs = decode_step(ctx, emb, mask, inst.dist[0][None, None, :], params, cfg).data[0, 0]
order = np.argsort(inst.dist[0, 1:]) + 1
print("nodes by distance from node 0:", order)
print("their probabilities          :", np.round(probs[order], 3))

print("\n== gradients flow end to end ==")
from rrnco.model import rollout, trajectory_logprob

params64 = init_params(cfg, "atsp", seed=0, dtype=np.float64)
actions = rollout(inst, params64, cfg, n_starts=1)[0].actions
report = ad.grad_check(lambda s: trajectory_logprob(inst, actions, s, cfg),
                       params64, eps=1e-5, max_coords=60)
print(f"finite-difference check over {report.n_coords} coordinates: "
      f"max relative error {report.max_rel_err:.2e}")
