"""Smoke test for the niaque extension module.

Build and run:
    maturin develop -m crates/py/Cargo.toml
    python crates/py/python/smoke_test.py
"""

import math
import os
import tempfile

import niaque


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert close(niaque.pinball(3.0, 1.0, 0.9), 1.8)
    assert close(niaque.pinball(1.0, 3.0, 0.9), 0.2)
    assert close(niaque.coverage([1.0, 2.0, 3.0], [0.0, 2.0, 0.0], [2.0, 3.0, 4.0]), 200.0 / 3.0)
    m = niaque.point_metrics([1.0, 2.0], [1.0, 4.0])
    assert close(m["aad"], 1.0) and close(m["bias"], 1.0)
    assert close(niaque.gaussian_crps(0.0, 1.0, 0.0), 2.0 / math.sqrt(2 * math.pi) - 1 / math.sqrt(math.pi))
    assert close(niaque.true_quantile("hetero-gaussian", [0.0] * 5, 0.5), 0.0)

    model = niaque.Model(seed=1, latent_dim=8, hidden_width=8, input_embed_dim=4, feature_vocab_capacity=8)
    rows = [[(0, 0.5), (3, -1.0)], [(2, 1.5)]]
    pred = model.predict(rows, [0.1, 0.5, 0.9])
    assert len(pred) == 2 and all(len(r) == 3 for r in pred)
    # Zero-initialised quantile conditioning: every level gives the same value.
    assert pred[0][0] == pred[0][2]
    swapped = model.predict([[(3, -1.0), (0, 0.5)]], [0.5])
    assert abs(swapped[0][0] - pred[0][1]) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        niaque.synth("hetero-gaussian", 300, 7, os.path.join(d, "h.csv"))
        with open(os.path.join(d, "m.tsv"), "w") as f:
            f.write("h\th.csv\ty\n")
        overrides = [
            "model.latent_dim=8", "model.hidden_width=8", "model.input_embed_dim=4",
            "model.feature_vocab_capacity=8", "train.batch_size=32", "train.total_batches=60",
            "train.lr_drop_points=[]", "train.val_interval=20",
        ]
        log = niaque.train(os.path.join(d, "m.tsv"), os.path.join(d, "run"), seed=3, overrides=overrides)
        assert log[-1].startswith("batch=60 "), log
        ckpt = niaque.Checkpoint.load(os.path.join(d, "run", "final.ckpt"))
        assert ckpt.datasets == ["h"]
        report = niaque.evaluate(ckpt, os.path.join(d, "m.tsv"), seed=3, overrides=overrides)
        for key in ("smape", "aad", "bias", "rmse", "rmsle", "crps", "coverage@95"):
            assert key in report, key
        triples = ckpt.predict_csv(os.path.join(d, "h.csv"), [0.1, 0.9])
        assert len(triples) == 600
        ranking = niaque.importance(ckpt, os.path.join(d, "m.tsv"), seed=3)
        assert sorted(r[1] for r in ranking) == ["x1", "x2", "x3", "x4", "x5"]
        assert close(sum(r[3] for r in ranking), 1.0)

    assert niaque.gradcheck(configs=2, seed=5) <= 1e-4
    print("smoke test passed")


if __name__ == "__main__":
    main()
