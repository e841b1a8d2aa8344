# %% [markdown]
# # Checking adjoints and gradients
#
# Every operator comes with a hand-written transpose. The dot test
# ``<A x, y> == <x, A^T y>`` and central finite differences catch mistakes in them.

# %%
import numpy as np

from ctmar.checks import max_dot_error
from ctmar.geometry import fan_covering
from ctmar.projector import adjoint_fan, forward_fan
from ctmar.ril import make_plan, ril_backward, ril_forward

side = 48
fan = fan_covering(side, 1.0, 61, 48)
plan = make_plan(fan, side)
rng = np.random.default_rng(0)
print("projector  ", max_dot_error(lambda v: forward_fan(v, fan),
                                   lambda w: adjoint_fan(w, fan, side),
                                   (side, side), fan.shape, 10, rng, np.float64))
print("FBP (f_R)  ", max_dot_error(lambda w: ril_forward(w, plan),
                                   lambda v: ril_backward(v, plan),
                                   fan.shape, (side, side), 10, rng, np.float64))

# %% [markdown]
# The gradient of ``0.5 * ||f_R(y) - x0||^2`` with respect to ``y`` is
# ``ril_backward(f_R(y) - x0)``. Compare one entry with a central difference.

# %%
y = rng.standard_normal(fan.shape)
x0 = rng.standard_normal((side, side))
grad = ril_backward(ril_forward(y, plan) - x0, plan)
h = 1e-3
yp, ym = y.copy(), y.copy()
yp[30, 10] += h
ym[30, 10] -= h


def loss(v):
    return 0.5 * np.sum((ril_forward(v, plan) - x0) ** 2)


print("analytic", grad[30, 10], " central difference", (loss(yp) - loss(ym)) / (2 * h))
