import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qnnverify.model import DtypeBounds, QLinearLayer, QuantModel, QuantParams

ASSETS = Path(__file__).parent / "assets"


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def worked_neuron_model():
    """The hand-evaluated single neuron: w=[2,-1], s_w=0.5, s_x=1, s_y=2,
    z_w=z_x=0, z_y=3, relu fused.  On x=[4,2]: acc=6, f=0.25, yhat0=4.5,
    half-up 5, clip[3,255] -> 5."""
    layer = QLinearLayer(
        weights=np.array([[2, -1]]),
        weight_qps=[QuantParams(scale=0.5, zero_point=0)],
        bias_acc=np.array([0]),
        input_qp=QuantParams(scale=1.0, zero_point=0),
        output_qp=QuantParams(scale=2.0, zero_point=3),
        out_bounds=DtypeBounds(0, 255),
        activation="relu",
    )
    return QuantModel(input_shape=(2,), input_qp=layer.input_qp,
                      input_bounds=DtypeBounds(0, 255), layers=[layer], num_classes=1)


def minimal_model_json() -> str:
    """A 2->2 single-linear-layer model file."""
    return """
{
 "format_version": 1,
 "input_shape": [2],
 "input_quant": {"scale": "0.5", "zero_point": 0, "lb": 0, "ub": 15},
 "rounding_mode": "half-up",
 "layers": [
  {
   "type": "qlinear",
   "weight": [[1, 2], [-1, 1]],
   "weight_quant": [{"scale": "0.25", "zero_point": 0}, {"scale": "0.25", "zero_point": 0}],
   "bias_acc": [4, -2],
   "output_quant": {"scale": "0.5", "zero_point": 2, "lb": 0, "ub": 255},
   "activation": "none"
  }
 ]
}
"""
