# SCN vs. the encoder-decoder baseline with very few training images.
#
# Both models get the same optimisation budget. Arguments: train size and
# steps (defaults 10 and 120, a couple of minutes on one core).

import sys

import numpy as np

from scnlab.evaluation import ExperimentSpec, run_experiment
from scnlab.synth import GenConfig, generate_samples

size = int(sys.argv[1]) if len(sys.argv) > 1 else 10
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 120

pool = generate_samples(GenConfig(), size + 50)
spec = ExperimentSpec(train_sizes=(size,), n_test=50, seeds=(0,), steps=steps)
res = run_experiment(spec, pool, log=print)

for row in res.summary:
    print(row)

# the error distribution tells more than the median
for r in res.reports:
    ced = r.ced(np.array([0, 1, 2, 5, 10]))
    print(r.model.ljust(9), " ".join(f"<= {t:>2.0f}px: {f:5.1%}" for t, f in zip(*ced)))
