"""
Reverse-mode differentiation, checked against finite differences
================================================================

Training runs on a small tape-based autograd over numpy arrays: matmul,
broadcast add, Hadamard, ReLU/sigmoid, row/column concat, reductions, masked
softmax, dropout, and binary cross-entropy. The gradient of any scalar output
lands on every parameter with one backward() call, and a central-difference
probe verifies it numerically.
"""
import numpy as np

from sqlsem import autograd as ag
from sqlsem.autograd import ParamStore, Tensor, finite_diff_check

rng = np.random.default_rng(0)

# -- forward + backward on a tiny MLP ----------------------------------------
x = Tensor(rng.normal(size=(4, 3)))
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros((1, 2)), requires_grad=True)
hidden = ag.relu(ag.add(ag.matmul(x, w), b))
pred = ag.sigmoid(ag.matmul(hidden, Tensor(np.ones((2, 1)))))
loss = ag.bce_loss(pred, np.array([[1.0], [0.0], [1.0], [0.0]]))
loss.backward()
print("loss:", round(loss.item(), 6))
print("dL/dw:\n", np.round(w.grad, 4))
print("dL/db:", np.round(b.grad, 4))

# -- the same graph, audited entry by entry ----------------------------------
store = ParamStore()
store.add("w", rng.normal(size=(3, 2)))
store.add("b", np.zeros((1, 2)))


def model(params: ParamStore) -> Tensor:
    h = ag.relu(ag.add(ag.matmul(x, params["w"]), params["b"]))
    p = ag.sigmoid(ag.matmul(h, Tensor(np.ones((2, 1)))))
    return ag.bce_loss(p, np.array([[1.0], [0.0], [1.0], [0.0]]))


worst = finite_diff_check(model, store, eps=1e-5)
print(f"\nfinite-difference audit over {store.n_entries()} parameters:")
print(f"  max relative error = {worst:.3e}  (central differences, eps=1e-5)")

# -- gradients accumulate across reuse ----------------------------------------
t = Tensor(np.array([[2.0]]), requires_grad=True)
ag.add(t, t).backward()
print("\nd(add(t, t))/dt =", t.grad[0, 0], " (each use contributes once)")
