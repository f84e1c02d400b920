import json

import numpy as np
import pytest

from hopelab import properties as pr
from hopelab.encodings import EncodingConfig, hope_score_fused, hope_transform_key, hope_transform_query


@pytest.fixture(scope="module")
def default_suite():
    return {r.name: r for r in pr.run_all(EncodingConfig(head_dim=64), seed=0)}


@pytest.mark.parametrize("name", ["shift_invariance[rope]", "shift_invariance[hope]", "decay_bound",
                                  "rope_special_case", "lorentz_group_laws", "boost_norm_bound"])
def test_default_suite_passes(default_suite, name):
    r = default_suite[name]
    assert r.applicable and r.passed, r


def test_path_equivalence_reports_measured_error(default_suite):
    r = default_suite["path_equivalence"]
    assert r.applicable and r.measured is not None and r.tolerance == 1e-9


def test_paths_agree_in_well_conditioned_regime():
    # with theta' well above theta_max the factored paths lose no precision
    cfg = EncodingConfig(head_dim=64, freq_scale=0.01, theta_prime=0.03)
    r = pr.path_equivalence(cfg)
    assert r.passed, r


def test_factored_error_tracks_cancellation_estimate():
    # |error| ~ eps * exp(2 n theta_max) relative to the score scale
    cfg = EncodingConfig(head_dim=2, freq_scale=0.01)
    rng = np.random.default_rng(0)
    n = 1800
    errs = []
    for _ in range(50):
        q, k = rng.normal(size=(2, 2))
        fac = hope_transform_query(q, n, cfg) @ hope_transform_key(k, n, cfg)
        errs.append(abs(fac - hope_score_fused(q, k, 0, cfg)) / max(1, abs(q @ k)))
    predicted = np.finfo(float).eps * np.exp(2 * n * cfg.max_theta)
    assert 1e-3 * predicted < max(errs) < 1e3 * predicted


def test_boundary_damping_is_not_applicable():
    cfg = EncodingConfig(head_dim=64, freq_scale=0.01, theta_prime=0.01, validate=False)
    r = pr.decay_bound(cfg)
    assert not r.applicable and r.passed and r.measured is None


def test_result_json_round_trip(default_suite):
    for r in default_suite.values():
        back = pr.PropertyResult.from_dict(json.loads(json.dumps(r.to_dict())))
        assert back == r
