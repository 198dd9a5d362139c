"""Tour of the reverse-mode engine the ranker is trained with.

Everything is a float64 matrix.  Ops behave like plain numpy until a Tape
is active; inside one, each op records how to push gradients back, and
backward() replays the records in reverse.  The same few ops power the
whole model, so a ridge-free least squares fit makes a faithful miniature
of the training loop.
"""

import numpy as np

from taxograft import Tape, Tensor, backward, check_gradients
from taxograft import autodiff as ad

rng = np.random.default_rng(0)

# -- fit y = X w by gradient descent on the tape ----------------------------

X = rng.standard_normal((40, 3))
true_w = np.array([[1.5], [-2.0], [0.25]])
y = X @ true_w + 0.01 * rng.standard_normal((40, 1))

w = Tensor(np.zeros((3, 1)), requires_grad=True)
x_t, y_t = Tensor(X), Tensor(y)

def mse(params):
    residual = ad.add(ad.matmul(x_t, params["w"]), ad.scale(y_t, -1.0))
    return ad.mean_reduce(ad.mul(residual, residual))

for step in range(200):
    w.zero_grad()
    with Tape() as tape:
        loss = mse({"w": w})
    backward(tape, loss)
    w.values -= 0.1 * w.grad
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss.item():.6f}")

solution = np.linalg.lstsq(X, y, rcond=None)[0]
print("learned  ", w.values.ravel().round(4))
print("lstsq    ", solution.ravel().round(4))

# -- the gradients themselves are audited numerically ------------------------

errors = check_gradients(mse, {"w": Tensor(rng.standard_normal((3, 1)), requires_grad=True)})
print(f"central-difference check on the loss: rel err {errors['w']:.2e}")

# -- segment ops: one call covers many variable-sized neighborhoods ---------

# rows 0-2 belong to segment 0, rows 3-4 to segment 1, exactly like the
# nodes of two candidate egonets stacked into one batch
logits = Tensor(np.array([[1.0], [2.0], [3.0], [0.5], [0.5]]))
segments = np.array([0, 0, 0, 1, 1])
lse = ad.segment_logsumexp(logits, segments, 2)
print("per-segment logsumexp:", lse.values.ravel().round(4))
print("check vs numpy       :", [
    round(float(np.logaddexp.reduce([1.0, 2.0, 3.0])), 4),
    round(float(np.logaddexp.reduce([0.5, 0.5])), 4),
])

att = ad.segment_softmax(logits, segments, 2)
print(
    "per-segment softmax sums:",
    round(float(att.values[:3].sum()), 9),
    round(float(att.values[3:].sum()), 9),
)
