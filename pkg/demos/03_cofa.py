"""Feature averaging across consecutive samples.

With sticky labels the previous sample usually shares the class, so the
averaged feature is a less noisy estimate and COFA helps. With i.i.d.
labels neighbours mostly disagree, and the confidence filter does not
fully protect against confidently wrong averages.
"""
import numpy as np

from unitta.cofa import COFA, single_predict
from unitta.markov import AxisConfig
from unitta.stream import ScenarioConfig, generate
from unitta.world import SyntheticWorld, fit_source

world = SyntheticWorld.make(2, 4, noise=2.0, shift=0.0, scale_range=(1.0, 1.0), seed=0)
model = fit_source(world)

for name, axis in (("sticky classes", AxisConfig(4, "noniid", 0.95)), ("iid classes", AxisConfig(4, "iid"))):
    s = generate(ScenarioConfig(AxisConfig(2, "iid"), axis, 20_000, seed=8))
    z = np.stack([model.forward(x) for x in world.samples(s.domain, s.cls, s.sample_id)])
    errs = {}
    for label, filt in (("filtered", True), ("unfiltered", False)):
        cofa = COFA(model.classifier, filter_enabled=filt)
        pred = []
        for zi in z:
            pred.append(np.argmax(cofa.predict(zi)))
            cofa.push(zi)
        errs[label] = 100 * np.mean(np.array(pred) != s.cls)
    single = 100 * np.mean(np.argmax(single_predict(z, model.classifier), axis=1) != s.cls)
    print(f"{name:15s} single {single:5.2f}%  cofa filtered {errs['filtered']:5.2f}%  unfiltered {errs['unfiltered']:5.2f}%")
