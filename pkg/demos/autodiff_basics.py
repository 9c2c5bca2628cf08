"""The reverse-mode graph that powers training, shown on a tiny network.

Builds a two-layer temporal conv net by hand, backpropagates a scalar
loss, and checks a few gradients against central finite differences.

    python3 demos/autodiff_basics.py
"""

import numpy as np

from gesturegen.numeric import (
    Graph,
    Tensor,
    add_bias,
    conv1d,
    l1_loss,
    leaky_relu,
)


def loss_value(w1, b1, w2, b2, x, target):
    """Same network as below, plain float64 numpy, for the FD check."""
    pad = 1

    def conv(x, k, stride):
        c_out, c_in, width = k.shape
        xp = np.pad(x, ((0, 0), (pad, pad)))
        t_out = (xp.shape[1] - width) // stride + 1
        out = np.zeros((c_out, t_out))
        for o in range(c_out):
            for t in range(t_out):
                out[o, t] = (k[o] * xp[:, t * stride : t * stride + width]).sum()
        return out

    h = conv(x, w1, 2) + b1[:, None]
    h = np.where(h >= 0, h, 0.2 * h)
    y = conv(h, w2, 1) + b2[:, None]
    return np.abs(y - target).mean()


def main():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((3, 16)).astype(np.float32)
    target = rng.standard_normal((2, 8)).astype(np.float32)
    w1 = Tensor(rng.standard_normal((4, 3, 3)).astype(np.float32) * 0.3,
                requires_grad=True)
    b1 = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
    w2 = Tensor(rng.standard_normal((2, 4, 3)).astype(np.float32) * 0.3,
                requires_grad=True)
    b2 = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)

    with Graph() as g:
        h = leaky_relu(add_bias(conv1d(Tensor(x), w1, stride=2, padding=1), b1))
        y = add_bias(conv1d(h, w2, stride=1, padding=1), b2)
        loss = l1_loss(y, Tensor(target))
    grads = g.backward(loss)
    print(f"loss = {loss.item():.6f}")

    arrays = {
        "w1": w1, "b1": b1, "w2": w2, "b2": b2,
    }
    f64 = {name: t.data.astype(np.float64) for name, t in arrays.items()}
    h_step = 1e-5
    for name, tensor in arrays.items():
        analytic = grads[tensor]
        # probe a few random elements of each parameter
        n_probe = min(3, tensor.data.size)
        flat_idx = np.random.default_rng(7).choice(tensor.data.size, n_probe,
                                                   replace=False)
        for fi in flat_idx:
            idx = tuple(int(i) for i in np.unravel_index(fi, tensor.data.shape))
            trial = {k: v.copy() for k, v in f64.items()}
            trial[name][idx] += h_step
            up = loss_value(trial["w1"], trial["b1"], trial["w2"], trial["b2"], x, target)
            trial[name][idx] -= 2 * h_step
            down = loss_value(trial["w1"], trial["b1"], trial["w2"], trial["b2"], x, target)
            fd = (up - down) / (2 * h_step)
            print(f"d loss / d {name}{list(idx)}: graph {analytic[idx]:+.6f}  "
                  f"fd {fd:+.6f}")


if __name__ == "__main__":
    main()
