"""Minimal differentiable sequence-model kernel.

LSTM/GRU cells with hand-written backward passes, softmax, Adam, and a
finite-difference gradient checker.  All math is float64.  Parameters are
plain dicts of numpy arrays (``{"w": (4H, D+H), "b": (4H,)}`` for an LSTM
cell) so the optimizer and the gradient checker can treat every model
uniformly; a multi-layer stack is a list of such cells.

Gate row order inside the fused weight matrix: LSTM ``i, f, g, o``;
GRU ``z, r, n`` (update, reset, candidate).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeError, TrainingError

INIT_SCALE = 0.08  # uniform init range for recurrent weights
FORGET_BIAS = 1.0  # LSTM forget-gate bias at init


def sigmoid(x):
    # tanh formulation: stable for large |x|, no overflow warnings.
    return 0.5 * (np.tanh(0.5 * np.asarray(x)) + 1.0)


def softmax(v):
    """Map a vector of logits to a probability vector.

    Invariant under adding a constant to every logit; output sums to 1.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InputError("softmax of an empty vector is undefined")
    e = np.exp(v - v.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def lstm_cell_init(rng, input_dim, hidden_dim):
    w = rng.uniform(-INIT_SCALE, INIT_SCALE, (4 * hidden_dim, input_dim + hidden_dim))
    b = np.zeros(4 * hidden_dim)
    b[hidden_dim:2 * hidden_dim] = FORGET_BIAS
    return {"w": w, "b": b}


def lstm_stack_init(rng, input_dim, hidden_dim, layers):
    cells = []
    d = input_dim
    for _ in range(layers):
        cells.append(lstm_cell_init(rng, d, hidden_dim))
        d = hidden_dim
    return cells


def lstm_hidden_dim(cell):
    return cell["b"].shape[0] // 4


def lstm_input_dim(cell):
    return cell["w"].shape[1] - lstm_hidden_dim(cell)


def zero_lstm_state(cells):
    return [(np.zeros(lstm_hidden_dim(c)), np.zeros(lstm_hidden_dim(c))) for c in cells]


def _lstm_cell_forward(cell, h, c, x):
    hdim = h.shape[0]
    xh = np.concatenate((x, h))
    z = cell["w"] @ xh + cell["b"]
    i = sigmoid(z[:hdim])
    f = sigmoid(z[hdim:2 * hdim])
    g = np.tanh(z[2 * hdim:3 * hdim])
    o = sigmoid(z[3 * hdim:])
    c2 = f * c + i * g
    tc2 = np.tanh(c2)
    h2 = o * tc2
    cache = (xh, c, i, f, g, o, tc2)
    return h2, c2, cache


def _lstm_cell_backward(cell, cache, dh2, dc2, grads, wkey, bkey):
    """Backprop one step; accumulates into ``grads`` and returns (dh, dc, dx)."""
    xh, c, i, f, g, o, tc2 = cache
    hdim = i.shape[0]
    dtc = dh2 * o * (1.0 - tc2 * tc2) + dc2
    do = dh2 * tc2
    di = dtc * g
    df = dtc * c
    dg = dtc * i
    dc = dtc * f
    dz = np.concatenate((
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ))
    grads[wkey] += np.outer(dz, xh)
    grads[bkey] += dz
    dxh = cell["w"].T @ dz
    return dxh[-hdim:], dc, dxh[:-hdim]


def lstm_step(cells, state, x):
    """Advance a stack of LSTM cells one frame.

    ``state`` is a list of (h, c) pairs, one per layer.  A zero-length stack
    is the identity: the input comes back untouched.  Returns
    ``(new_state, output)`` where ``output`` is the top layer's hidden vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(state) != len(cells):
        raise ShapeError(f"state has {len(state)} layers, stack has {len(cells)}")
    if cells and x.shape != (lstm_input_dim(cells[0]),):
        raise ShapeError(
            f"input has shape {x.shape}, cell expects ({lstm_input_dim(cells[0])},)")
    new_state = []
    out = x
    for cell, (h, c) in zip(cells, state):
        h2, c2, _ = _lstm_cell_forward(cell, h, c, out)
        new_state.append((h2, c2))
        out = h2
    return new_state, out


def lstm_run(cells, xs, state=None):
    """Run a stack over a sequence ``xs`` (T, D) without caching.

    Returns the (T, H) top-layer outputs and the final state.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if state is None:
        state = zero_lstm_state(cells)
    outs = []
    for t in range(xs.shape[0]):
        state, out = lstm_step(cells, state, xs[t])
        outs.append(out)
    return np.array(outs), state


def lstm_run_cached(cells, xs, state=None):
    """Like :func:`lstm_run` but keeps per-step caches for BPTT.

    Returns ``(outputs, final_state, caches)`` with ``caches[l][t]`` holding
    layer ``l``'s cache at step ``t``.
    """
    if state is None:
        state = zero_lstm_state(cells)
    state = list(state)
    T = xs.shape[0]
    caches = [[None] * T for _ in cells]
    outs = np.empty((T, lstm_hidden_dim(cells[-1])) if cells else xs.shape)
    for t in range(T):
        inp = xs[t]
        for l, cell in enumerate(cells):
            h, c = state[l]
            h2, c2, cache = _lstm_cell_forward(cell, h, c, inp)
            caches[l][t] = cache
            state[l] = (h2, c2)
            inp = h2
        outs[t] = inp
    return outs, state, caches


def lstm_backward(cells, caches, d_outs, grads, prefix, d_state_final=None):
    """BPTT through a cached stack run.

    ``d_outs`` is (T, H): gradient w.r.t. the top-layer output at every step.
    ``d_state_final`` optionally adds gradient w.r.t. the final (h, c) of
    every layer.  Parameter gradients accumulate into ``grads`` under keys
    ``{prefix}{l}.w`` / ``{prefix}{l}.b``.  Returns d_inputs (T, D) and the
    gradient w.r.t. the initial state.
    """
    L = len(cells)
    if L == 0:
        return d_outs.copy(), []
    T = len(caches[0])
    dh = [np.zeros(lstm_hidden_dim(c)) for c in cells]
    dc = [np.zeros(lstm_hidden_dim(c)) for c in cells]
    if d_state_final is not None:
        for l in range(L):
            dh[l] = dh[l] + d_state_final[l][0]
            dc[l] = dc[l] + d_state_final[l][1]
    d_inputs = None
    for t in range(T - 1, -1, -1):
        d_top = d_outs[t]
        for l in range(L - 1, -1, -1):
            dh_prev, dc_prev, dx = _lstm_cell_backward(
                cells[l], caches[l][t], dh[l] + d_top, dc[l], grads,
                f"{prefix}{l}.w", f"{prefix}{l}.b")
            dh[l], dc[l] = dh_prev, dc_prev
            d_top = dx
        if d_inputs is None:
            d_inputs = np.zeros((T, d_top.shape[0]))
        d_inputs[t] = d_top
    return d_inputs, list(zip(dh, dc))


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def gru_cell_init(rng, input_dim, hidden_dim):
    w = rng.uniform(-INIT_SCALE, INIT_SCALE, (3 * hidden_dim, input_dim + hidden_dim))
    b = np.zeros(3 * hidden_dim)
    return {"w": w, "b": b}


def gru_stack_init(rng, input_dim, hidden_dim, layers):
    cells = []
    d = input_dim
    for _ in range(layers):
        cells.append(gru_cell_init(rng, d, hidden_dim))
        d = hidden_dim
    return cells


def gru_hidden_dim(cell):
    return cell["b"].shape[0] // 3


def gru_input_dim(cell):
    return cell["w"].shape[1] - gru_hidden_dim(cell)


def zero_gru_state(cells):
    return [np.zeros(gru_hidden_dim(c)) for c in cells]


def _gru_cell_forward(cell, h, x):
    hdim = h.shape[0]
    w, b = cell["w"], cell["b"]
    xh = np.concatenate((x, h))
    zr = w[:2 * hdim] @ xh + b[:2 * hdim]
    z = sigmoid(zr[:hdim])
    r = sigmoid(zr[hdim:])
    xrh = np.concatenate((x, r * h))
    n = np.tanh(w[2 * hdim:] @ xrh + b[2 * hdim:])
    h2 = (1.0 - z) * h + z * n
    cache = (xh, xrh, h, z, r, n)
    return h2, z, cache


def _gru_cell_backward(cell, cache, dh2, grads, wkey, bkey):
    xh, xrh, h, z, r, n = cache
    hdim = h.shape[0]
    w = cell["w"]
    dz = dh2 * (n - h)
    dn = dh2 * z
    dh = dh2 * (1.0 - z)
    da_n = dn * (1.0 - n * n)
    grads[wkey][2 * hdim:] += np.outer(da_n, xrh)
    grads[bkey][2 * hdim:] += da_n
    dxrh = w[2 * hdim:].T @ da_n
    dx_n = dxrh[:-hdim]
    drh = dxrh[-hdim:]
    dr = drh * h
    dh += drh * r
    da_z = dz * z * (1.0 - z)
    da_r = dr * r * (1.0 - r)
    da_zr = np.concatenate((da_z, da_r))
    grads[wkey][:2 * hdim] += np.outer(da_zr, xh)
    grads[bkey][:2 * hdim] += da_zr
    dxh = w[:2 * hdim].T @ da_zr
    dh += dxh[-hdim:]
    return dh, dx_n + dxh[:-hdim]


def gru_step(cells, state, x):
    """Advance a GRU stack one frame.

    Returns ``(new_state, output, update_gates)`` where ``update_gates`` is a
    list with each layer's update-gate activation vector (entries in (0, 1)).
    A zero-length stack is the identity on the input.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(state) != len(cells):
        raise ShapeError(f"state has {len(state)} layers, stack has {len(cells)}")
    if cells and x.shape != (gru_input_dim(cells[0]),):
        raise ShapeError(
            f"input has shape {x.shape}, cell expects ({gru_input_dim(cells[0])},)")
    new_state = []
    gates = []
    out = x
    for cell, h in zip(cells, state):
        h2, z, _ = _gru_cell_forward(cell, h, out)
        new_state.append(h2)
        gates.append(z)
        out = h2
    return new_state, out, gates


def gru_run_cached(cells, xs, state=None):
    """Run a GRU stack over (T, D) inputs keeping caches and update gates."""
    if state is None:
        state = zero_gru_state(cells)
    state = list(state)
    T = xs.shape[0]
    caches = [[None] * T for _ in cells]
    gates = [np.empty((T, gru_hidden_dim(c))) for c in cells]
    outs = np.empty((T, gru_hidden_dim(cells[-1])) if cells else xs.shape)
    for t in range(T):
        inp = xs[t]
        for l, cell in enumerate(cells):
            h2, z, cache = _gru_cell_forward(cell, state[l], inp)
            caches[l][t] = cache
            gates[l][t] = z
            state[l] = h2
            inp = h2
        outs[t] = inp
    return outs, state, gates, caches


def gru_backward(cells, caches, d_outs, grads, prefix, d_state_final=None):
    """BPTT through a cached GRU stack run; mirror of :func:`lstm_backward`."""
    L = len(cells)
    if L == 0:
        return d_outs.copy(), []
    T = len(caches[0])
    dh = [np.zeros(gru_hidden_dim(c)) for c in cells]
    if d_state_final is not None:
        for l in range(L):
            dh[l] = dh[l] + d_state_final[l]
    d_inputs = None
    for t in range(T - 1, -1, -1):
        d_top = d_outs[t]
        for l in range(L - 1, -1, -1):
            dh_prev, dx = _gru_cell_backward(
                cells[l], caches[l][t], dh[l] + d_top, grads,
                f"{prefix}{l}.w", f"{prefix}{l}.b")
            dh[l] = dh_prev
            d_top = dx
        if d_inputs is None:
            d_inputs = np.zeros((T, d_top.shape[0]))
        d_inputs[t] = d_top
    return d_inputs, dh


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_update(params, grads, state):
    """One bias-corrected Adam step, in place on ``params`` and ``state``."""
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def zero_grads(params):
    return {name: np.zeros_like(p) for name, p in params.items()}


def clip_global_norm(grads, max_norm):
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple

    def __str__(self):
        return (f"max rel error {self.max_rel_error:.3e} "
                f"at {self.worst_param}{list(self.worst_index)}")


def finite_diff_check(loss_fn, grad_fn, params, eps=1e-5):
    """Compare ``grad_fn`` against central differences of ``loss_fn``.

    ``loss_fn(params) -> float`` and ``grad_fn(params) -> dict`` share the
    same dict-of-arrays parameter layout.  Per-coordinate relative error is
    ``|analytic - numeric| / max(|numeric|, floor)`` with the floor at 1e-3
    of the largest numeric-gradient magnitude (coordinates far below the
    gradient's own scale sit inside central-difference roundoff, so they are
    judged against that scale instead); the worst coordinate is reported.
    """
    analytic = grad_fn(params)
    numeric = {}
    for name in sorted(params):
        p = params[name]
        if analytic[name].shape != p.shape:
            raise ShapeError(f"analytic gradient shape mismatch for '{name}'")
        num = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + eps
            lp = loss_fn(params)
            p[idx] = orig - eps
            lm = loss_fn(params)
            p[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise TrainingError(f"non-finite loss while perturbing '{name}'")
            num[idx] = (lp - lm) / (2.0 * eps)
            it.iternext()
        numeric[name] = num
    scale = max((float(np.max(np.abs(n))) for n in numeric.values()), default=0.0)
    floor = max(1e-8, 1e-3 * scale)
    worst = GradCheckResult(0.0, "", ())
    for name in sorted(params):
        err = np.abs(analytic[name] - numeric[name]) \
            / np.maximum(np.abs(numeric[name]), floor)
        idx = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
        if err.size and err[idx] > worst.max_rel_error:
            worst = GradCheckResult(float(err[idx]), name, idx)
    return worst
