"""Show that no deterministic labor sequence reaches the lottery value
in the second contracting example."""
from recdual.dual_value import evaluate, value_iterate
from recdual.oracles import build_example_model, example2_deterministic_scan, example2_solve, \
    example_gamma_grid

sigma = 0.1
sol = example2_solve(sigma)
spec = build_example_model(2)
field, _ = value_iterate(spec, "infsup", gamma_grid=example_gamma_grid())
print(f"beta = {sol['beta']:.4f}, closed form V = {sol['V']:.6f}, "
      f"solver {evaluate(field, [0.0], 0, 0):.6f}")
for length in (4, 8, 12):
    scan = example2_deterministic_scan(sigma, length=length)
    print(f"best of {scan['sequences']:5d} deterministic sequences (length {length:2d}) "
          f"<= {scan['bound']:.6f}, gap {scan['margin']:.2e}")
