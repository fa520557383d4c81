# Walk through the float64 autodiff core: build a graph, run backward,
# and check one gradient against central finite differences by hand.

import numpy as np

from molex import tensor as T
from molex.tensor import Tensor

print("== tensors and the tape ==")
a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
b = Tensor([[5.0], [6.0]], requires_grad=True)
c = T.matmul(a, b)          # [[17], [39]]
print("a @ b =", c.data.ravel())

loss = (c * c).mean()
loss.backward()
print("d loss / d a =\n", a.grad)
print("d loss / d b =\n", b.grad)

print()
print("== softmax is stabilized, rows sum to one ==")
logits = Tensor([[1000.0, 0.0, -1000.0], [0.3, 0.2, 0.1]])
probs = T.softmax(logits, axis=-1)
print(probs.data)
print("row sums:", probs.data.sum(axis=-1))

print()
print("== finite-difference spot check ==")
w = Tensor(np.array([0.2, -0.4, 0.7]), requires_grad=True)


def f():
    return (T.gelu(w) * T.sigmoid(w)).sum()


f().backward()
h = 1e-5
numeric = np.zeros(3)
with T.no_grad():
    for i in range(3):
        w.data[i] += h
        plus = float(f().data)
        w.data[i] -= 2 * h
        minus = float(f().data)
        w.data[i] += h
        numeric[i] = (plus - minus) / (2 * h)
print("analytic:", w.grad)
print("numeric: ", numeric)
print("max rel err:", np.abs(w.grad - numeric).max() / np.abs(numeric).max())

print()
print("== AdamW: decoupled decay shrinks even with zero gradient ==")
from molex.optim import adamw_step

p = np.array([2.0])
adamw_step(p, np.zeros(1), np.zeros(1), np.zeros(1), step=1, lr=0.1, weight_decay=0.5)
print("after one zero-gradient step at lr=0.1, wd=0.5:", p, "(= 2 * (1 - 0.05))")
