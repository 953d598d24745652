"""Bilevel optimization via double regularization and gradient sampling.

The lower level minimizes g(x, y) + h(G(x, y)) with h proper, nondecreasing,
and epi-polyhedral.  Replacing h by its Moreau envelope (parameter alpha) and
adding a Tikhonov term (beta/2)|y|^2 makes the primal-dual solution mapping
single-valued and piecewise smooth, with a closed-form Jacobian built from
the critical cone of h.  Two gradient-sampling drivers (unconstrained and
penalty-SQP constrained) consume those hyper-gradients.
"""

__version__ = "0.1.0"
