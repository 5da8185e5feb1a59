"""Independent brute-force oracles used only by the tests.

These deliberately avoid the library's contact-database pipeline: the 2-link
environment CDF is computed from an analytic enumeration of contact
configurations, the self-collision CDF from the fold-back geometry.
"""

import math

import numpy as np

from cdf_barrier.kinematics import ArmModel


def analytic_contacts_2link(arm: ArmModel, p: np.ndarray, n_u: int = 2000):
    """All contact configurations for workspace point p, as (config, contact_link).

    Link-1 contacts fix q1 = atan2(p) (q2 free, prefix length 1). Link-2
    contacts are enumerated over the contact location u along link 2 using
    two-link IK with effective lengths (L1, u).
    """
    l1, l2 = arm.link_lengths
    r = float(np.linalg.norm(p))
    configs, links = [], []
    if r <= l1 + 1e-12:
        q1 = math.atan2(p[1], p[0])
        configs.append((q1, 0.0))
        links.append(1)
    for u in np.linspace(1e-6, l2, n_u):
        c2 = (r * r - l1 * l1 - u * u) / (2.0 * l1 * u)
        if abs(c2) > 1.0:
            continue
        g2 = math.acos(min(1.0, max(-1.0, c2)))
        base = math.atan2(p[1], p[0])
        for sign in (1.0, -1.0):
            q2 = sign * g2
            q1 = base - math.atan2(u * math.sin(q2), l1 + u * math.cos(q2))
            q1 = (q1 + math.pi) % (2 * math.pi) - math.pi
            configs.append((q1, q2))
            links.append(2)
    return np.asarray(configs), np.asarray(links)


def brute_cdf_2link(arm: ArmModel, p: np.ndarray, q: np.ndarray, n_u: int = 2000) -> float:
    """Prefix-refined CDF from the analytic contact enumeration."""
    configs, links = analytic_contacts_2link(arm, p, n_u)
    if configs.size == 0:
        return np.inf
    best = np.inf
    for cfg, k in zip(configs, links):
        d = np.linalg.norm(q[:k] - cfg[:k])
        best = min(best, d)
    return best


def brute_scdf_2link(q: np.ndarray) -> float:
    """Distance to the fold-back set {q2 = +/- pi} of a thin 2-link arm."""
    return min(abs(q[1] - np.pi), abs(q[1] + np.pi))


def finite_difference_grad(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
