"""The decoding-position curve at desk scale.

Renders about 45 minutes of scenes, trains the narrowed counting network for
a few epochs, then asks: if a frame sits at position n of its 30-frame
window, how often is its count right? Expect a climb over the first frames
while the LSTM gathers context, a plateau, and a dip in the last 4 frames,
whose conv features saw the zero padding. Takes about 15 minutes per seed
on one core.
"""

import logging
import sys

from spkcount.toy import toy_data, toy_run

logging.basicConfig(level=logging.INFO, format="%(message)s")
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

data = toy_data()
run = toy_run(seed, data)
acc = run.sweep.accuracies
s = run.summary

for n, a in enumerate(acc):
    mark = " <- n_opt" if n == s.n_opt else ""
    print(f"n={n:2d}  {a:.3f}  {'#' * int(round((a - acc.min()) * 400))}{mark}")
print(f"best position {s.n_best}, n_opt {s.n_opt}, head rise {acc.max() - acc[0]:+.3f}, "
      f"tail drop {s.tail_drop:+.3f}")
print("criteria:", run.criteria())
