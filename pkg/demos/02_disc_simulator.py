# # The hard-disc simulator
#
# Discs of radius 0.2 bounce around the box [-1, 1]^2. Each step moves them
# ballistically, resolves contacts with sequential normal impulses (restitution
# 0.9, no friction), then pushes any residual overlap apart.

import numpy as np

from permdyn.sim import (DiscState, SimConfig, diagnostics, generate_trajectory, init_and_relax,
                         kinetic_energy, step)


# ## A head-on collision
#
# Two equal discs approaching at unit speed leave at 0.9 of that speed.

cfg = SimConfig(n_discs=2, walls=False)
s = DiscState(np.array([[-0.2, 0.0], [0.2, 0.0]]), np.array([[1.0, 0.0], [-1.0, 0.0]]),
              np.full(2, 0.2))
print(step(s, cfg).velocities)


# ## Relaxation
#
# Starting positions are drawn uniformly and then relaxed until no pair
# overlaps by more than 1e-6.

state = init_and_relax(SimConfig(n_discs=12), seed=0)
print("worst overlap after relaxation:", diagnostics(state).max_penetration)


# ## A recorded trajectory
#
# After relaxation every velocity component is drawn from N(0, 1) and 400
# steps are recorded, giving 401 states.

tr = generate_trajectory(SimConfig(n_discs=8), seed=3)
print("states:", tr.states.shape)
ke = kinetic_energy(tr.states)
print("kinetic energy at steps 0, 100, 200, 400:", ke[[0, 100, 200, 400]].round(3))
print("largest increase between steps:", np.max(np.diff(ke)))
print("worst overlap over the run:", max(d.max_penetration for d in diagnostics(tr)))
