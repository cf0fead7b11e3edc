"""A one-minute training run: multi-start policy gradients on synthetic cities.

Each step samples fresh instances from the base maps, rolls the policy out
from several starts, and reinforces actions that beat the per-instance mean
reward. Validation uses greedy decoding on a fixed held-out set. Outputs land
in demos/out/.
"""

from pathlib import Path

import numpy as np

from rrnco.baselines import held_karp_atsp
from rrnco.ingest import SynthConfig, synth_basemap
from rrnco.instances import make_instance
from rrnco.model import ModelConfig, init_params
from rrnco.train import TrainConfig, greedy_eval, train

out_dir = Path(__file__).parent / "out" / "desk_run"
train_maps = [synth_basemap(SynthConfig(n=200, seed=s, asymmetry=0.6)) for s in range(2)]
held_out = synth_basemap(SynthConfig(n=200, seed=77, asymmetry=0.6))

model_cfg = ModelConfig(embed_dim=32, n_heads=4, n_layers=2, ff_dim=64, knn_k=8)
train_cfg = TrainConfig(task="atsp", n_nodes=8, batch_size=32, instances_per_epoch=512,
                        epochs=6, n_starts=6, seed=0, val_instances=32)

test_set = [make_instance(held_out, "atsp", 8, seed=9000 + i) for i in range(50)]
optimal = np.array([held_karp_atsp(inst.dist)[0] for inst in test_set])

params = init_params(model_cfg, train_cfg.task, seed=0)
before = greedy_eval(test_set, params, model_cfg, n_starts=6)
print(f"untrained greedy gap: {((before / optimal - 1).mean() * 100):6.2f}%")

result = train(train_maps, params, model_cfg, train_cfg, out_dir,
               val_basemaps=[held_out])
for entry in result.metrics:
    print(f"epoch {entry['epoch']}: train cost {entry['mean_cost']:.4f} "
          f"val cost {entry['val_cost']:.4f} lr {entry['lr']:g}")

after = greedy_eval(test_set, params, model_cfg, n_starts=6)
print(f"trained greedy gap  : {((after / optimal - 1).mean() * 100):6.2f}%")
print(f"checkpoints + metrics in {result.out_dir}")
print("render the curve with: rrnco curves --metrics "
      f"{result.out_dir / 'metrics.jsonl'} --out {out_dir / 'curve.svg'}")
