import numpy as np
import pytest

from gsfit import expr as ex
from gsfit.oracle import DomainBox, make_oracle, sample_uniform


def test_box_rejects_degenerate_interval():
    with pytest.raises(ValueError):
        DomainBox((0.0,), (0.0,))


def test_sample_uniform_within_box_and_counts():
    box = DomainBox.cube(-3, 3, 2)
    s = sample_uniform(box, 400, seed=7)
    assert s.points.shape == (400, 2)
    assert np.all(s.points >= -3) and np.all(s.points <= 3)


def test_sample_uniform_case6_box():
    box = DomainBox.cube(1, 3, 5)
    s = sample_uniform(box, 1000, seed=1)
    assert np.all(s.points >= 1) and np.all(s.points <= 3)


def test_sample_uniform_is_seed_deterministic():
    box = DomainBox.cube(-1, 4, 3)
    a = sample_uniform(box, 64, seed=11)
    b = sample_uniform(box, 64, seed=11)
    assert np.array_equal(a.points, b.points)


def test_uniform_mean_within_three_standard_errors():
    box = DomainBox((-3.0, 1.0), (3.0, 3.0))
    s = sample_uniform(box, 100_000, seed=5)
    for j, (lo, hi) in enumerate(zip(box.lo, box.hi)):
        mid = 0.5 * (lo + hi)
        se = (hi - lo) / np.sqrt(12 * len(s))
        assert abs(s.points[:, j].mean() - mid) < 3 * se


def test_make_oracle_counter_semantics():
    target = ex.parse("0.5*exp(x1)*sin(2*x2)", 2)
    box = DomainBox.cube(-3, 3, 2)
    o = make_oracle(target, box)
    assert o.arity == 2
    assert o.eval_count == 0
    o(box.midpoint())
    assert o.eval_count == 1
    s = sample_uniform(box, 1000, seed=2)
    o.collect(s)
    assert o.eval_count == 1001


def test_oracle_arity_mismatch():
    with pytest.raises(ValueError):
        make_oracle(ex.parse("x3", 3), DomainBox.cube(0, 1, 2))


def test_collect_values_match_target():
    target = ex.parse("x1*x2", 2)
    box = DomainBox.cube(-2, 2, 2)
    o = make_oracle(target, box)
    s = o.collect(sample_uniform(box, 50, seed=9))
    assert np.allclose(s.values, s.points[:, 0] * s.points[:, 1])


def test_sample_redraws_invalid_rows():
    # 1/x1 is invalid only on a measure-zero set; sample() must come back clean
    o = make_oracle(ex.parse("1/x1", 1), DomainBox.cube(-1, 1, 1))
    s = o.sample(200, seed=3)
    assert np.all(np.isfinite(s.values))


def test_csv_serialization_has_header():
    box = DomainBox.cube(0, 1, 2)
    o = make_oracle(ex.parse("x1+x2", 2), box)
    s = o.sample(3, seed=1)
    text = s.to_csv()
    assert text.splitlines()[0] == "x1,x2,f"
    assert len(text.splitlines()) == 4


def test_counter_is_thread_safe():
    import threading

    o = make_oracle(ex.parse("x1", 1), DomainBox.cube(-1, 1, 1))
    pts = np.zeros((100, 1))

    def work():
        for _ in range(50):
            o.eval_batch(pts)

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert o.eval_count == 4 * 50 * 100
