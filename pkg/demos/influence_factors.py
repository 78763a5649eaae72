"""How the per-channel influence factors respond to the quantization step.

Each convolution channel carries one trainable scalar theta >= 0; its feature
map is multiplied by 1 / (1 + theta * qsq) where qsq is the rescaled squared
quantization step for the batch's QP.  Channels with theta = 0 pass through
untouched at every QP; channels with larger theta are attenuated more, and
the attenuation deepens as QP (hence quantization noise) grows.
"""

import numpy as np

from qafilter import QpContext, influence_factors, qsq_norm_from_qp, qstep_from_qp

thetas = np.array([0.0, 0.05, 0.3, 1.0, 4.0])
qps = [12, 22, 27, 32, 37, 42, 51]

print("QP ->  Qstep      qsq_norm   then one influence factor per theta")
print(f"{'QP':>4} {'Qstep':>10} {'qsq':>10} | " + " ".join(f"th={t:<5g}" for t in thetas))
for qp in qps:
    ctx = QpContext.from_qp(qp)
    f = influence_factors(thetas, ctx)
    cells = " ".join(f"{v:8.4f}" for v in f)
    print(f"{qp:>4} {qstep_from_qp(qp):>10.3f} {qsq_norm_from_qp(qp):>10.4f} | {cells}")

print()
print("theta = 0 is the plain filter: factors stay exactly 1 at every QP.")
print("For theta > 0 the factor is strictly decreasing in QP and always in (0, 1].")

# the normalization of the squared step is invisible to the trained model:
# rescaling qsq by any constant c while rescaling theta by 1/c is the same map
ctx = QpContext.from_qp(27)
scaled = QpContext(qp=ctx.qp, qstep=ctx.qstep, qsq_norm=ctx.qsq_norm * 4.0)
a = influence_factors(thetas, ctx)
b = influence_factors(thetas / 4.0, scaled)
print(f"\nrescale check (c = 4): max |factor difference| = {np.abs(a - b).max():.3e}")
