# Why the product of two maps helps.
#
# The appearance maps fire on every blob, landmarks and distractors alike.
# The configuration maps are coarse but know roughly where each landmark
# should be; their product keeps only the right blob.

from dataclasses import replace

import numpy as np

from scnlab.evaluation import appearance_predict, forcing_fraction, mislocalization_rate
from scnlab.model import predict, scn_forward
from scnlab.synth import GenConfig, generate_samples
from scnlab.training import Hyperparams, batch_arrays, train

gen = GenConfig()
train_set = generate_samples(gen, 30)
clean_test = generate_samples(replace(gen, noise_amplitude=0.0), 40, start=1000)

result = train("scn", train_set, Hyperparams(epochs=40))
params = result.params
print("loss: first epoch %.2e, last epoch %.2e" % (result.history[0], result.history[-1]))

radius = gen.min_separation / 2
abl = mislocalization_rate(appearance_predict(params, clean_test), clean_test, radius)
full = mislocalization_rate(predict(params, batch_arrays(clean_test)), clean_test, radius)
print(f"images with a landmark on a distractor: appearance only {abl:.0%}, full model {full:.0%}")
print(f"landmarks where both maps agree: {forcing_fraction(params, clean_test):.0%}")

# look at one landmark on one image
s = clean_test[0]
out = scn_forward(params, s.image[None])
i = 3
la, sc, h = out.h_la.data[i], out.h_sc.data[i], out.h.data[i]
x, y = s.landmarks[i].astype(int)
print(f"\nlandmark {i} at ({x}, {y})")
for name, m in (("appearance", la), ("configuration", sc), ("product", h)):
    yy, xx = np.unravel_index(np.argmax(m), m.shape)
    print(f"  {name:13s} max {m.max():+.3f} at ({xx}, {yy}); value at groundtruth {m[y, x]:+.3f}")
print("  appearance values at the distractors:",
      " ".join(f"{la[int(dy), int(dx)]:+.2f}" for dx, dy in s.distractors))
