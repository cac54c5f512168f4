"""Build the checked-in test fixture: an 8x8 downscaled-digits classifier
(64 inputs, one hidden layer of 16 units, 10 classes), post-training
quantized to the model file format, plus a 50-query robustness workload at
radii 2 and 4.

Run from the repository root:

    python scripts/make_fixture.py

Writes tests/assets/fixture_digits.json and tests/assets/fixture_queries.json.
"""

import json
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from qnnverify.inference import predict  # noqa: E402
from qnnverify.model import load_model, serialize_model  # noqa: E402

SEED = 7
HIDDEN = 16
N_QUERIES = 50
RADII = (2, 4)


def quantize_weights_per_row(w):
    """Symmetric signed-8 per-output-row quantization."""
    scales = np.maximum(np.abs(w).max(axis=1), 1e-8) / 127.0
    wq = np.clip(np.round(w / scales[:, None]), -127, 127).astype(int)
    return wq, scales


def activation_quant(values, n_levels=255):
    """Asymmetric affine quantization of an observed activation range."""
    lo = float(min(values.min(), 0.0))
    hi = float(max(values.max(), 1e-3))
    scale = (hi - lo) / n_levels
    zp = int(np.clip(round(-lo / scale), 0, n_levels))
    return scale, zp


def main():
    digits = load_digits()
    X = digits.data.astype(np.float64)  # pixel values 0..16
    y = digits.target
    X_tr, X_te, y_tr, y_te = train_test_split(X, y, test_size=400, random_state=SEED,
                                              stratify=y)

    clf = MLPClassifier(hidden_layer_sizes=(HIDDEN,), activation="relu",
                        max_iter=2000, random_state=SEED, alpha=1e-3)
    clf.fit(X_tr, y_tr)
    float_acc = clf.score(X_te, y_te)

    w1 = clf.coefs_[0].T          # (16, 64)
    b1 = clf.intercepts_[0]
    w2 = clf.coefs_[1].T          # (10, 16)
    b2 = clf.intercepts_[1]

    # input: pixels 0..16 on 255 integer levels
    s_x = 16.0 / 255.0
    z_x = 0

    # calibrate activation ranges on the training set
    h_pre = X_tr @ w1.T + b1
    s_h, z_h = activation_quant(h_pre)
    h_post = np.maximum(h_pre, 0.0)
    logits = h_post @ w2.T + b2
    s_o, z_o = activation_quant(logits)

    w1_q, s_w1 = quantize_weights_per_row(w1)
    w2_q, s_w2 = quantize_weights_per_row(w2)
    b1_acc = np.round(b1 / (s_x * s_w1)).astype(int)
    b2_acc = np.round(b2 / (s_h * s_w2)).astype(int)

    doc = {
        "format_version": 1,
        "input_shape": [64],
        "input_quant": {"scale": repr(s_x), "zero_point": z_x, "lb": 0, "ub": 255},
        "rounding_mode": "half-up",
        "layers": [
            {
                "type": "qlinear",
                "weight": w1_q.tolist(),
                "weight_quant": [{"scale": repr(float(s)), "zero_point": 0} for s in s_w1],
                "bias_acc": b1_acc.tolist(),
                "output_quant": {"scale": repr(s_h), "zero_point": z_h, "lb": 0, "ub": 255},
                "activation": "relu",
            },
            {
                "type": "qlinear",
                "weight": w2_q.tolist(),
                "weight_quant": [{"scale": repr(float(s)), "zero_point": 0} for s in s_w2],
                "bias_acc": b2_acc.tolist(),
                "output_quant": {"scale": repr(s_o), "zero_point": z_o, "lb": 0, "ub": 255},
                "activation": "none",
            },
        ],
    }
    model = load_model(json.dumps(doc).encode())

    def quantize_input(x):
        return np.clip(np.floor(x / s_x + z_x + 0.5), 0, 255).astype(int)

    correct = 0
    q_candidates = []
    for xi, yi in zip(X_te, y_te):
        xq = quantize_input(xi)
        if predict(model, xq) == yi:
            correct += 1
            q_candidates.append((xq, int(yi)))
    q_acc = correct / len(y_te)
    print(f"float accuracy {float_acc:.3f}, quantized accuracy {q_acc:.3f} on {len(y_te)} test digits")

    rng = np.random.default_rng(SEED)
    rng.shuffle(q_candidates)
    queries = []
    per_radius = N_QUERIES // len(RADII)
    for i, r in enumerate(RADII):
        for xq, label in q_candidates[i * per_radius:(i + 1) * per_radius]:
            queries.append({"input": [int(v) for v in xq], "label": label, "radius": r})

    assets = REPO / "tests" / "assets"
    assets.mkdir(parents=True, exist_ok=True)
    (assets / "fixture_digits.json").write_bytes(serialize_model(model))
    (assets / "fixture_queries.json").write_text(json.dumps(queries))
    print(f"wrote fixture model + {len(queries)} queries to {assets}")


if __name__ == "__main__":
    main()
