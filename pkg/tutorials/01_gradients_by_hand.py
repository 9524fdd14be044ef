"""
Gradients by hand
=================

Differentiate a loss through a small network and compare the result
against central finite differences.  Then take a few Adam steps.
"""

import numpy as np

from mpac import diffnet

# A 3 -> 16 -> 16 -> 2 network.  Weights are N(0, 1/fan_in), biases zero.
net = diffnet.init_mlp([3, 16, 16, 2], seed=0)
print("layer sizes:", net.layer_sizes)

rng = np.random.default_rng(1)
x = rng.standard_normal((8, 3))      # a batch of 8 inputs
y = rng.standard_normal((8, 2))      # regression targets


def loss_of(params):
    out, _ = diffnet.forward(params, x)
    return float(np.mean(np.sum((out - y) ** 2, axis=1)))


# Reverse mode: forward records a tape; backward turns d(loss)/d(output)
# into gradients for every weight and bias.  The batch mean is folded into
# output_grad because backward sums over rows.
out, tape = diffnet.forward(net, x)
grads = diffnet.backward(net, tape, 2.0 * (out - y) / len(x))

# Central differences over every parameter, one at a time.
h = 1e-5
numeric = []
for a in net.arrays():
    flat = a.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss_of(net)
        flat[i] = keep - h
        down = loss_of(net)
        flat[i] = keep
        numeric.append((up - down) / (2 * h))
numeric = np.array(numeric)
analytic = grads.flat()
rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
print(f"{analytic.size} parameters, largest relative error {rel.max():.2e}")

# Writing to the arrays in place does not invalidate the tape; set_flat and
# apply_step do, and backward refuses a stale tape.
opt = diffnet.make_optimizer(net, "adam", lr=1e-2)
for step in range(200):
    out, tape = diffnet.forward(net, x)
    diffnet.apply_step(net, diffnet.backward(net, tape, 2.0 * (out - y) / len(x)), opt)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {loss_of(net):.4f}")
print(f"final loss {loss_of(net):.4f} after {opt.t} adam steps")
