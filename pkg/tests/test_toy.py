import dataclasses

import numpy as np

from ffsv.scoring import Trial, eer, score_trials
from ffsv.toy import ToyConfig, embed_all, make_toy, run_dat_toy


def test_fit_logistic_separates_shifted_gaussians():
    from ffsv.toy import probe_accuracy
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 200)
    x = rng.normal(size=(400, 3)) + 2.0 * y[:, None]
    assert probe_accuracy(x[::2], y[::2], x[1::2], y[1::2]) > 0.9


def test_make_toy_is_balanced_and_seeded():
    cfg = ToyConfig(per_cell=5)
    a, b = make_toy(cfg, 3), make_toy(cfg, 3)
    assert len(a.features) == 20
    assert np.array_equal(np.stack(a.features), np.stack(b.features))
    assert np.bincount(a.speakers).tolist() == [10, 10]
    assert np.bincount(a.domains).tolist() == [10, 10]


def test_dat_lowers_cross_domain_eer_on_toy_trials():
    # weaker class separation than the default toy, where both nets score 0% EER
    cfg = dataclasses.replace(ToyConfig(), class_sep=0.25)
    res = run_dat_toy(cfg)
    held = make_toy(cfg, cfg.seed + 2000)
    enroll = np.flatnonzero(held.domains == 0)[:48]
    test = np.flatnonzero(held.domains == 1)[:48]
    trials = [Trial(f"u{i}", f"u{j}", bool(held.speakers[i] == held.speakers[j]))
              for i in enroll for j in test]
    labels = [t.label for t in trials]
    rates = {}
    for name, net in res.nets.items():
        emb = embed_all(net, held)
        rates[name] = eer(score_trials(trials, {f"u{i}": e for i, e in enumerate(emb)}), labels)[0]
    assert rates["dat"] < rates["base"], rates
