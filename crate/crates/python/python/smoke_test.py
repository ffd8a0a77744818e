"""Quick end-to-end check of the hpinn extension module.

Build and install first, e.g. `maturin develop --release` or
`maturin build --release && pip install target/wheels/hpinn-*.whl`.
"""

import math
import sys
import tempfile
from pathlib import Path

import hpinn


def main() -> int:
    lv = hpinn.System.lotka_volterra()
    assert lv.state_names == ["x", "y"]
    assert lv.hidden_input_names == ["x", "y"]
    f1, f2 = lv.hidden_true([2.0, 3.0])
    assert math.isclose(f1, -0.9 * 6.0) and math.isclose(f2, 0.8 * 6.0)

    pts = hpinn.lhs(8, [(0.0, 1.0), (-1.0, 1.0)], seed=3)
    assert len(pts) == 8
    assert sorted(int(p[0] * 8) for p in pts) == list(range(8))

    data = hpinn.Dataset.generate(lv, count=10, seed=1)
    assert len(data) == 10 and data.times[0] == 0.0

    net = hpinn.Mlp([2, 8, 1], seed=4)
    assert len(net.forward([0.1, 0.2])) == 1
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "net.json"
        net.save(path)
        again = hpinn.Mlp.load(path)
        assert again.params == net.params
        data.write_csv(Path(tmp) / "data.csv")
        assert hpinn.Dataset.read_csv(Path(tmp) / "data.csv").states == data.states

    result = hpinn.train_pinn(
        lv, data, n_interior=100, iterations=300, learning_rate=5e-3,
        surrogate_layers=[16, 16], hidden_layers=[16], seed=0,
    )
    loss = result.loss
    assert len(loss) == 300 and loss[-1] < loss[0]
    assert math.isfinite(result.hidden_mse)
    assert len(result.predict_hidden([1.0, 2.0])) == 2

    xs = [[0.5 + 0.1 * i, 1.0 + 0.2 * j] for i in range(6) for j in range(6)]
    ys = [-0.9 * x * y for x, y in xs]
    expr, terms, mse = hpinn.symbolic_fit(xs, ys, ["x", "y"], max_degree=3, threshold=0.05)
    assert [t for t, _ in terms] == ["x*y"], expr
    assert abs(terms[0][1] + 0.9) < 1e-9 and mse < 1e-20

    try:
        hpinn.Mlp([2], seed=0)
    except ValueError:
        pass
    else:
        raise AssertionError("bad widths accepted")

    print(f"hpinn {hpinn.__version__}: smoke test passed "
          f"(hidden MSE after 300 steps {result.hidden_mse:.3e}, fit {expr})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
