"""Independent oracles used by the tests: central finite differences, a
per-joint reimplementation of the forward kinematics, and plain-arithmetic
loss re-evaluation. These deliberately avoid the package's autodiff path.
"""

import numpy as np


def central_diff(f, phi, coords=None, step=1e-5):
    """Central finite differences of a scalar function of a flat vector.

    Returns (gradient_estimates, coords). With ``coords=None`` every
    coordinate is probed, otherwise only the listed ones.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if coords is None:
        coords = range(phi.size)
    coords = np.asarray(list(coords), dtype=np.int64)
    out = np.zeros(coords.size)
    for n, k in enumerate(coords):
        e = np.zeros_like(phi)
        e[k] = step
        out[n] = (f(phi + e) - f(phi - e)) / (2.0 * step)
    return out, coords


def max_rel_err(got, want):
    """Largest per-coordinate relative error, with tiny entries compared
    against a floor of 1e-3 of the largest reference magnitude so that
    noise-dominated near-zero coordinates do not blow up the ratio."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    floor = 1e-3 * max(np.abs(want).max(), 1e-12)
    denom = np.maximum.reduce([np.abs(want), np.abs(got), np.full_like(want, floor)])
    return float((np.abs(got - want) / denom).max())


def rodrigues_matrix(v):
    """Single-vector Rodrigues rotation, straightforward implementation."""
    v = np.asarray(v, dtype=np.float64)
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    axis = v / angle
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def fk_reference(spec, beta, theta):
    """Per-joint forward kinematics written independently of the package
    implementation (explicit loops, matrix Rodrigues)."""
    beta = np.asarray(beta, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    k = spec.n_joints
    rots = [rodrigues_matrix(theta[j]) for j in range(k)]
    glob = [None] * k
    pos = [None] * k
    glob[0] = rots[0]
    pos[0] = np.zeros(3)
    for j in range(1, k):
        p = int(spec.parents[j])
        glob[j] = glob[p] @ rots[j]
        bone = spec.rest_dirs[j - 1] * spec.rest_lens[j - 1] * beta[j - 1]
        pos[j] = pos[p] + glob[j] @ bone
    return np.stack(pos)


def frame_loss_reference(weights, body_spec, x, points_true, src, priors, lw):
    """Plain-arithmetic frame loss (no autodiff types anywhere)."""
    raw = mlp_reference(weights.values, weights.spec, x)
    k = weights.spec.n_joints
    theta = raw[: 3 * k].reshape(k, 3)
    beta = np.exp(raw[3 * k : 4 * k - 1])
    s = np.exp(raw[4 * k - 1])
    t = raw[4 * k :]
    joints = fk_reference(body_spec, beta, theta)
    pts = s * joints[:, :2] + t
    reproj = float(((pts - points_true) ** 2).sum())
    zb = (beta - priors.shape_mean) / np.sqrt(priors.shape_var)
    zt = (theta - priors.pose_mean) / np.sqrt(priors.pose_var)
    msq = ((zb ** 2).sum() + (zt ** 2).sum()) / (zb.size + zt.size)
    prior = float(np.sqrt(msq + 0.01 ** 2) - 0.01)
    total = lw.reproj * reproj + lw.prior * prior
    replay = 0.0
    if src is not None:
        raw_s = mlp_reference(weights.values, weights.spec, src.x)
        theta_s = raw_s[: 3 * k].reshape(k, 3)
        beta_s = np.exp(raw_s[3 * k : 4 * k - 1])
        joints_s = fk_reference(body_spec, beta_s, theta_s)
        truth = src.joints3d - src.joints3d[0]
        replay = float(((joints_s - truth) ** 2).sum() / k)
        total += lw.replay * replay
    return total, reproj, prior, replay


def mlp_reference(values, spec, x):
    """Plain forward pass through the (W, b) blocks with the bounded head."""
    h = np.asarray(x, dtype=np.float64)
    dims = spec.layer_dims
    off = 0
    for i in range(len(dims) - 1):
        din, dout = dims[i], dims[i + 1]
        w = values[off:off + din * dout].reshape(din, dout)
        off += din * dout
        b = values[off:off + dout]
        off += dout
        h = h @ w + b
        if i < len(dims) - 2:
            h = np.tanh(h)
    return np.tanh(h) * spec.output_bounds
