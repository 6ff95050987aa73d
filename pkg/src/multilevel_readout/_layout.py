"""Index layout of the flat float64 config vectors handed to the kernels.

``_kernels.pyx`` hard-codes the same indices; keep both in sync.
"""

# protocol / reset config
P_KD = 0          # continuous storage loss rate 1/T1, 1/s
P_KU = 1          # storage gain rate, 1/s
P_T_MAP = 2
P_T_R = 3
P_LEAD = 4        # storage evolution before the first cycle (final herald check)
P_DEMOL = 5       # per-photon demolition probability per ancilla readout
P_G_GE = 6        # ancilla e->g rate
P_G_EF = 7
P_G_FH = 8
P_G_UP = 9        # ancilla thermal g->e rate
P_G_LEAK = 10     # decay rate of the leaked level back to h
P_LEAK = 11       # per-readout probability of leaking above h
P_FIXED = 12      # 1.0: ideal reset, fixed cycle time, lumped vote errors
P_DELTA0 = 13
P_DELTA1 = 14
P_NMAX = 15
P_MAX_ITER = 16
P_SIZE = 17

# readout-record config
R_DT = 0
R_NOISE = 1
R_G_GE = 2
R_G_EF = 3
R_G_FH = 4
R_G_UP = 5
R_SIZE = 6

LEVEL_HIGHER = 4
MAX_JUMPS = 256

# status codes returned by kernels
OK = -1
