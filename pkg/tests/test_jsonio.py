import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deconv import jsonio


def test_float_format():
    assert jsonio.dumps(0.1, indent=0) == "0.10000000000000001\n"
    assert jsonio.dumps(2.0, indent=0) == "2.0\n"
    assert jsonio.dumps(-3.0, indent=0) == "-3.0\n"
    assert jsonio.dumps(1e300, indent=0) == "1.0000000000000001e+300\n"
    assert jsonio.dumps([math.nan, math.inf, None], indent=0) == "[null, null, null]\n"


def test_numpy_and_objects():
    class Thing:
        def to_dict(self):
            return {"a": np.float64(0.5), "b": np.arange(3), "c": np.bool_(True)}

    assert json.loads(jsonio.dumps(Thing())) == {"a": 0.5, "b": [0, 1, 2], "c": True}
    with pytest.raises(TypeError):
        jsonio.dumps(object())


@given(st.recursive(st.none() | st.booleans() | st.integers(-10**6, 10**6) | st.text(max_size=5)
                    | st.floats(allow_nan=False, allow_infinity=False),
                    lambda kids: st.lists(kids, max_size=4) | st.dictionaries(st.text(max_size=4), kids, max_size=4),
                    max_leaves=20))
def test_round_trip_exact(obj):
    assert json.loads(jsonio.dumps(obj)) == obj


def test_load_json_arg(tmp_path):
    assert jsonio.load_json_arg('{"x": 1}') == {"x": 1}
    p = tmp_path / "c.json"
    jsonio.dump({"y": 2.5}, p)
    assert jsonio.load_json_arg(str(p)) == {"y": 2.5}
