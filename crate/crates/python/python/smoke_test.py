"""Smoke test for the phobs extension module on the DEA instance."""

import math

import phobs

params = phobs.DeaParams()
domain = phobs.Domain(-8.1257e-6, 4.67545e-4, -6.302908e-3, 2.228859e-3, 0.0, 2.64196e7)
emb = phobs.Embedding(params, domain)

bounds = {name: (lo, hi) for name, lo, hi in emb.bounds()}
assert emb.vertex_count == 16
assert math.isclose(bounds["a"][0], 1.65281e-5, rel_tol=1e-5)
assert math.isclose(bounds["beta"][0], -2.280516e-7, rel_tol=1e-5)

h = emb.weights(1e-4, 0.0, 1e7)
assert len(h) == 16 and abs(sum(h) - 1.0) < 1e-12

design = emb.synthesize(0.897, mode="const")
assert design.verify(emb)
assert design.mode == "const" and design.kappa >= 1.0

lam, best = emb.max_decay_rate("const")
assert abs(lam - 0.897) < 0.05 * 0.897, lam

try:
    emb.synthesize(6.0, mode="sched")
except phobs.InfeasibleError:
    pass
else:
    raise AssertionError("rate above the scheduled maximum was accepted")

traj = emb.simulate(design, horizon_s=1.2, dt_s=1e-4, sample_every=10)
cols = traj.columns()
assert list(cols)[:7] == ["t", "q", "p", "qhat", "phat", "qerr", "perr"]
assert len(cols["t"]) == len(traj) == 1201
m = traj.metrics()
assert abs(m["peak_qerr"] - 2e-4) < 1e-12
assert m["bound_holds"]

plant = emb.simulate(None, horizon_s=0.1, dt_s=1e-4)
assert plant.metrics() is None
assert plant.csv().splitlines()[0] == "t,q,p,y,u"

print(f"phobs {phobs.__version__}: lambda_max const = {lam:.4f}, kappa = {design.kappa:.2f}, "
      f"peak |p~| = {m['peak_perr'] * 1e3:.3f} g m/s; smoke test passed")
