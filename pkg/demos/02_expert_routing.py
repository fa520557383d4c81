# The mixture layer up close: shared + separate low-rank experts behind a
# top-1 router, and the load-balancing loss that keeps dispatch honest.

import numpy as np

from molex import mole, rng
from molex.tensor import Tensor

d = 32
layer = mole.make_mole_layer(d, shared_rank=8, separate_ranks=(4, 8, 16), seed=1)

# give the experts and router something to do (B starts at zero)
for expert in layer.separate:
    expert.B.data[:] = rng.gaussian(2, expert.B.shape, 0.3)
layer.shared.B.data[:] = rng.gaussian(3, layer.shared.B.shape, 0.3)
layer.router.W.data[:] = rng.gaussian(4, layer.router.W.shape)

tokens = Tensor(rng.gaussian(5, (12, d)))
frozen = lambda x: x * 0.5  # stand-in for the frozen MLP

h, stats = mole.mole_mlp_forward(tokens, frozen, layer)
print("per-token expert assignment:", stats.assignments)
print("dispatch fractions f_j:", np.round(stats.dispatch_fraction, 3))
print("mean gate probs P_j:   ", np.round(stats.mean_gate.data, 3))

lb = mole.load_balance_loss(stats, 3)
print("load-balance loss N*sum f_j P_j =", round(float(lb.data), 4))

print()
print("== the loss is 1.0 exactly at the uniform optimum ==")
uniform = mole.RoutingStats(dispatch_fraction=np.full(3, 1 / 3),
                            mean_gate=Tensor(np.full(3, 1 / 3)),
                            token_count=12, assignments=np.zeros(12, dtype=np.intp))
print("uniform dispatch + uniform gates ->", float(mole.load_balance_loss(uniform, 3).data))

print()
print("== and 2.7 when everything lands on one expert with gate 0.9 ==")
collapsed = mole.RoutingStats(dispatch_fraction=np.array([1.0, 0.0, 0.0]),
                              mean_gate=Tensor(np.array([0.9, 0.05, 0.05])),
                              token_count=12, assignments=np.zeros(12, dtype=np.intp))
print("collapsed ->", float(mole.load_balance_loss(collapsed, 3).data))

print()
print("== the gate factor carries gradient back to the router ==")
loss = (h * h).mean() + 0.01 * lb
loss.backward()
print("router grad norm:", np.linalg.norm(layer.router.W.grad))
print("selected experts' B grads are nonzero, e.g. expert 0:",
      np.linalg.norm(layer.separate[0].B.grad))
