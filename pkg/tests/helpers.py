"""Small builders shared by the simulation tests."""

import math

import numpy as np

from phasemhd.mesh import build_mesh
from phasemhd.params import PhysicalParams, derive_groups
from phasemhd.stepper import Stepper

MATCHED = dict(rho_plus=1.0, rho_minus=1.0, eta_plus=1.0, eta_minus=1.0,
               sigma_plus=1.0, sigma_minus=1.0)


def make_stepper(dim=2, cells=(8, 8), box=None, tau=1e-3, order=2, mode="auto",
                 solvers=None, **params):
    if box is None:
        box = (np.zeros(dim), np.ones(dim))
    mesh = build_mesh(dim, box, cells)
    groups = derive_groups(PhysicalParams(**params))
    return mesh, groups, Stepper(mesh, groups, tau, order, solvers, mode)


def quiescent_params(**extra):
    kw = dict(MATCHED, g=0.0, u_ref=1.0, epsilon=0.05)
    kw.update(extra)
    return kw


def smooth_blob(mesh, Cn, center=(0.5, 0.5), radius=0.25):
    """A well-resolved phase field with a wide tanh layer."""
    d = np.linalg.norm(mesh.coordinates - np.asarray(center)[None, :], axis=1)
    return np.tanh((d - radius) / (math.sqrt(2.0) * Cn))
