"""Where the zero padding reaches.

Every 'same' convolution of support K drags the void beyond each edge K // 2
frames inward. Four of them leave 4 * (K // 2) frames at each end that have
seen padding before the LSTM. The last clean frame is N_t - 2K + 1.
"""

import numpy as np

from spkcount.analysis import StackSpec, empirical_taint, optimal_position, overhead_frames, taint_mask
from spkcount.crnn import CrnnConfig, build

n_t = 30
for k in (1, 3, 5, 7):
    mask = taint_mask(StackSpec.uniform(k), n_t)
    row = "".join("x" if f else "." for f in mask.per_frame)
    print(f"K={k}  {row}  n_opt={optimal_position(n_t, k)}  look-ahead {overhead_frames(k) * 32} ms")

# the same mask, measured: refill the padding with 10.0 and see which frames move
cfg = CrnnConfig(kernel_size=5, conv_channels=(4, 4, 4, 4))
measured = empirical_taint(build(cfg, seed=0, dtype=np.float64), n_t)
print("K=5 measured head/tail:", measured.head, measured.tail)
