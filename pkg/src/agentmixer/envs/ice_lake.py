"""Frozen-lake corridor where the safe crossing lane depends on hidden pits.

The agent starts on the bank at the center column and must step across a
single ice row.  Two pit cells block the center of the ice row; whether
they sit center-left or center-right is drawn at episode start with equal
probability.  A fully observing agent cuts across next to the pits; an
agent that cannot see the pits must detour to an edge column, which costs
one extra step.  This is the smallest instance where distilling a
state-conditioned policy into an observation-conditioned one provably
loses value.
"""
import numpy as np

from agentmixer.envs.tabular import TabularPomdp

N_COLS = 5
START_COL = 2
GAMMA = 0.95
PIT_REWARD = -10.0
CROSS_REWARD = 10.0

# pit layout 0 sits center-left, layout 1 center-right
PIT_COLS = ({1, 2}, {2, 3})

ACT_LEFT, ACT_RIGHT, ACT_FORWARD = 0, 1, 2
N_ACTIONS = 3

DONE_STATE = 2 * 2 * N_COLS  # 20
N_STATES = DONE_STATE + 1


def state_index(row, col, pit):
    return pit * 2 * N_COLS + row * N_COLS + col


def ice_lake_tabular(observable=False):
    """Build the corridor POMDP; observable=True exposes the pit layout."""
    t = np.zeros((N_STATES, N_ACTIONS, N_STATES))
    r = np.zeros((N_STATES, N_ACTIONS))

    for pit in range(2):
        for row in range(2):
            for col in range(N_COLS):
                s = state_index(row, col, pit)
                if row == 1 and col in PIT_COLS[pit]:
                    # pit cells are never occupied (entry redirects to done),
                    # kept absorbing-to-done for completeness
                    t[s, :, DONE_STATE] = 1.0
                    r[s, :] = PIT_REWARD
                    continue
                for a in range(N_ACTIONS):
                    if a == ACT_LEFT:
                        dest_row, dest_col = row, max(col - 1, 0)
                    elif a == ACT_RIGHT:
                        dest_row, dest_col = row, min(col + 1, N_COLS - 1)
                    elif row == 0:
                        dest_row, dest_col = 1, col
                    else:
                        # forward off the far edge of the ice: crossed
                        t[s, a, DONE_STATE] = 1.0
                        r[s, a] = CROSS_REWARD
                        continue
                    if dest_row == 1 and dest_col in PIT_COLS[pit]:
                        t[s, a, DONE_STATE] = 1.0
                        r[s, a] = PIT_REWARD
                    else:
                        t[s, a, state_index(dest_row, dest_col, pit)] = 1.0

    t[DONE_STATE, :, DONE_STATE] = 1.0

    if observable:
        obs = np.eye(N_STATES)
    else:
        # observation = own cell plus a crossed/fell flag; pit layout hidden
        n_obs = 2 * N_COLS + 1
        obs = np.zeros((N_STATES, n_obs))
        for pit in range(2):
            for row in range(2):
                for col in range(N_COLS):
                    obs[state_index(row, col, pit), row * N_COLS + col] = 1.0
        obs[DONE_STATE, n_obs - 1] = 1.0

    rho0 = np.zeros(N_STATES)
    rho0[state_index(0, START_COL, 0)] = 0.5
    rho0[state_index(0, START_COL, 1)] = 0.5

    absorbing = np.zeros(N_STATES, dtype=bool)
    absorbing[DONE_STATE] = True

    pomdp = TabularPomdp(t, r, obs, rho0, GAMMA, absorbing)
    pomdp.validate()
    return pomdp
