import math

import numpy as np
import pytest

from hopelab import analysis as an
from hopelab.analysis import DecayCurve
from hopelab.encodings import EncodingConfig, hope_score_fused, make_encoder


def enc(variant, d=64, **kw):
    return make_encoder(EncodingConfig(head_dim=d, variant=variant, **kw))


ONES = np.ones(64)


def test_curve_validation():
    with pytest.raises(ValueError):
        DecayCurve([0, 2, 1], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        DecayCurve([0, 1], [1.0])
    with pytest.raises(ValueError):
        DecayCurve([], [])
    with pytest.raises(ValueError):
        an.decay_curve_fixed(ONES, ONES, enc("hope"), 0)


def test_nope_curve_is_constant(rng):
    q, k = rng.normal(size=(2, 64))
    c = an.decay_curve_fixed(q, k, enc("nope"), 32)
    np.testing.assert_allclose(c.scores, q @ k / 8, rtol=1e-14)
    assert list(c.distances) == list(range(33))


def test_hope_curve_matches_fused_and_stays_under_envelope():
    e = enc("hope")
    c = an.decay_curve_fixed(ONES, ONES, e, 256)
    np.testing.assert_allclose(c.scores, hope_score_fused(ONES, ONES, np.arange(257), e.config) / 8,
                               rtol=1e-14)
    bound = an.envelope_bound(ONES, ONES, e, 256)
    assert np.all(np.abs(c.scores) <= bound + 1e-12)


def test_alibi_curve_is_a_line():
    e = make_encoder(EncodingConfig(head_dim=64, variant="alibi"), slope=0.25)
    c = an.decay_curve_fixed(ONES, ONES, e, 40)
    np.testing.assert_allclose(c.scores, 8.0 - 0.25 * np.arange(41), rtol=1e-15)


def test_single_sample_gaussian_equals_fixed_on_that_pair():
    e = enc("rope")
    q, k = an.gaussian_pair(3, 0, 64)
    g = an.decay_curve_gaussian(e, 1, 3, 50)
    f = an.decay_curve_fixed(q, k, e, 50)
    np.testing.assert_array_equal(g.scores, f.scores)


def test_gaussian_curve_deterministic():
    e = enc("hope")
    a = an.decay_curve_gaussian(e, 20, 9, 30)
    b = an.decay_curve_gaussian(e, 20, 9, 30)
    assert a.scores.tobytes() == b.scores.tobytes()
    assert a.meta["seed"] == 9 and a.meta["n_samples"] == 20


def test_nope_gaussian_mean_near_zero():
    # each sample q.k/sqrt(d) has unit variance, so the mean has sd 1/sqrt(n)
    n = 4000
    c = an.decay_curve_gaussian(enc("nope"), n, 0, 4)
    assert abs(c.scores[0]) <= 3 / math.sqrt(n)


def test_doubling_samples_shrinks_standard_error_by_sqrt2():
    e = enc("hope")
    n = 2000
    small = an.gaussian_curves(e, n, 1, 1)[:, 0]
    large = an.gaussian_curves(e, 2 * n, 2, 1)[:, 0]
    se_small = small.std(ddof=1) / math.sqrt(n)
    se_large = large.std(ddof=1) / math.sqrt(2 * n)
    ratio = se_large / se_small
    # sd of a sample-sd estimate is ~ sd/sqrt(2n); propagate to the ratio
    band = 3 * ratio * math.sqrt(1 / (2 * n) + 1 / (4 * n)) * math.sqrt(2)
    assert abs(ratio - 1 / math.sqrt(2)) <= band


def test_oscillation_index_examples():
    assert an.oscillation_index(np.linspace(5, 1, 20)) == 0
    alt = np.array([1.0, 0.0] * 50)
    assert an.oscillation_index(alt) == 1.0
    assert an.oscillation_index(np.array([1.0, 0, 1, 1.5, 2])) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        an.oscillation_index(np.array([1.0, 2.0]))


def test_rope_oscillates_and_hope_does_not():
    rope = an.decay_curve_fixed(ONES, ONES, enc("rope"), 256)
    hope = an.decay_curve_fixed(ONES, ONES, enc("hope"), 256)
    assert an.oscillation_index(rope) > an.oscillation_index(hope)
    assert an.oscillation_index(rope) >= 0.10
    assert an.oscillation_index(hope.beyond(2)) <= 0.02


def test_export_round_trip_is_bit_exact(tmp_path):
    c = an.decay_curve_gaussian(enc("hope"), 5, 11, 64)
    path = an.export_csv(c, tmp_path)
    assert path.name == "hope_gaussian_64.csv"
    back = an.read_csv(path)
    assert back.scores.tobytes() == c.scores.tobytes()
    np.testing.assert_array_equal(back.distances, c.distances)
    text = path.read_text().splitlines()
    comments = [l for l in text if l.startswith("#")]
    assert any(l.startswith("# variant:") and "hope" in l for l in comments)
    assert any(l == "# seed: 11" for l in comments)
    assert text[len(comments)] == "distance,score"
    assert len(text) - len(comments) - 1 == 65


def test_export_to_explicit_file_and_naming(tmp_path):
    c = an.decay_curve_fixed(ONES, ONES, enc("rope"), 10)
    assert an.default_filename(c) == "rope_fixed_10.csv"
    p = an.export_csv(c, tmp_path / "custom.csv")
    assert p.name == "custom.csv" and p.exists()


def test_export_failure_names_path(tmp_path):
    c = an.decay_curve_fixed(ONES, ONES, enc("rope"), 10)
    bad = tmp_path / "missing" / "x.csv"
    with pytest.raises(OSError, match="missing"):
        an.export_csv(c, bad)


def test_output_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("HOPELAB_OUT", str(tmp_path))
    assert an.env_output_dir() == tmp_path
    monkeypatch.delenv("HOPELAB_OUT")
    assert str(an.env_output_dir("fallback")) == "fallback"
