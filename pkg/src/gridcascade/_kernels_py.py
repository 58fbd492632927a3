"""Vectorized numpy fallback for the power-flow kernels."""

import numpy as np


def calc_injections(g, b, v, theta):
    th = theta[:, None] - theta[None, :]
    ct = np.cos(th)
    st = np.sin(th)
    a = g * ct + b * st
    d = g * st - b * ct
    p = v * (a @ v)
    q = v * (d @ v)
    return p, q


def calc_jacobian(g, b, v, theta, p, q):
    th = theta[:, None] - theta[None, :]
    ct = np.cos(th)
    st = np.sin(th)
    a = g * ct + b * st
    d = g * st - b * ct
    vv = v[:, None] * v[None, :]

    dp_dth = vv * d
    dq_dth = -vv * a
    dp_dv = v[:, None] * a
    dq_dv = v[:, None] * d

    gd = np.diag(g)
    bd = np.diag(b)
    np.fill_diagonal(dp_dth, -q - bd * v * v)
    np.fill_diagonal(dq_dth, p - gd * v * v)
    np.fill_diagonal(dp_dv, p / v + gd * v)
    np.fill_diagonal(dq_dv, q / v - bd * v)
    return dp_dth, dp_dv, dq_dth, dq_dv
