"""Solve the binary-labor contract, recover its stage lotteries and simulate.

Run with ``python demos/example1_walkthrough.py``; takes about a minute.
"""
import numpy as np

from recdual.dual_value import evaluate, value_iterate
from recdual.oracles import action_labels, build_example_model, example1_values, example_gamma_grid
from recdual.policy import check_stage, initial_promise, recover_stage, simulate

spec = build_example_model(1, beta=0.4)
labels = action_labels(spec)
exact = example1_values(0.4)
print(f"{spec.n_actions} (consumption, labor) actions; closed form V = {exact['V2']:.5f}")

fields = {}
for variant in ("infsup", "supinf"):
    field, rep = value_iterate(spec, variant, gamma_grid=example_gamma_grid())
    fields[variant] = field
    print(f"{variant}: value {evaluate(field, [0.0], 0, 0):.5f} after {rep.iterations} sweeps")

field = fields["infsup"]
phi = initial_promise(spec)
for x, p in ((0, phi), (1, np.zeros(1))):
    lot = recover_stage(spec, field, p, x, 0)
    chk = check_stage(spec, field, p, x, 0, lot)
    c = np.array([labels[a][0] for a in lot.support])
    work = np.array([labels[a][1] for a in lot.support]) == 1.0
    print(f"state {x}, promise {p[0]:+.3f}: {lot.support.size} actions, work with prob "
          f"{lot.probs[work].sum():.3f}, mean consumption {lot.probs @ c:.4f}, "
          f"worst residual {chk.worst():.1e}")

res = simulate(spec, field, T=40, n_paths=20_000, rng_seed=1)
print(f"simulated value {res.value:.4f} +- {res.stderr:.4f} vs field {res.target:.4f}; "
      f"{res.stages} distinct stages solved")
