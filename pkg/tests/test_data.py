import numpy as np
import pytest

from pasnet.data import (Dataset, dumps_dataset, evaluate, evaluate_probs, generate_dataset,
                         load_dataset, loads_dataset, sample_user, save_dataset, snr_of,
                         threshold_activation)
from pasnet.geometry import SystemConfig, channel_gains
from pasnet.solver import Method, solve

CFG12 = SystemConfig(n_antennas=12)


@pytest.fixture(scope="module")
def ds12():
    return generate_dataset(CFG12, 50, seed=11)


def test_empty_dataset():
    ds = generate_dataset(CFG12, 0, seed=1)
    assert len(ds) == 0 and ds.labels.shape == (0, 12)
    assert len(loads_dataset(dumps_dataset(ds))) == 0
    assert np.isnan(evaluate(lambda g: g.real, ds).snr_accuracy)


def test_users_in_region():
    pts = np.array([sample_user(CFG12, 3, i) for i in range(200)])
    assert np.all(np.abs(pts[:, :2]) <= CFG12.region_half_side)
    assert np.all((pts[:, 2] >= 0) & (pts[:, 2] <= 1))


def test_instances_do_not_depend_on_count():
    a = generate_dataset(CFG12, 3, seed=4)
    b = generate_dataset(CFG12, 6, seed=4)
    assert dumps_dataset(a).splitlines()[1:] == dumps_dataset(b).splitlines()[1:4]


def test_generation_is_byte_identical():
    assert dumps_dataset(generate_dataset(CFG12, 5, 8)) == dumps_dataset(generate_dataset(CFG12, 5, 8))
    assert dumps_dataset(generate_dataset(CFG12, 5, 8)) != dumps_dataset(generate_dataset(CFG12, 5, 9))


def test_labels_match_brute_force(ds12):
    brute = generate_dataset(CFG12, 50, seed=11, method=Method.BRUTE_FORCE)
    np.testing.assert_allclose(ds12.gamma_star, brute.gamma_star, rtol=1e-10)
    np.testing.assert_array_equal(ds12.labels, brute.labels)


def test_brute_force_limited():
    with pytest.raises(ValueError):
        generate_dataset(SystemConfig(n_antennas=30), 1, 0, method="brute_force")


def test_round_trip(ds12, tmp_path):
    path = tmp_path / "d.jsonl"
    save_dataset(ds12, path)
    back = load_dataset(path)
    assert dumps_dataset(back) == dumps_dataset(ds12)
    np.testing.assert_array_equal(back.gains, ds12.gains)
    np.testing.assert_array_equal(back.gamma_star, ds12.gamma_star)
    assert back.config == ds12.config and back.seed == 11


def test_records_carry_provenance(ds12):
    r = ds12.records[7]
    assert r.seed_path == (11, 7) and r.config_hash == CFG12.digest()
    assert all(-np.pi < p <= np.pi for p in r.phase)


def test_stored_gains_reproduce_channel(ds12):
    direct = channel_gains(CFG12, ds12.users[3])
    np.testing.assert_allclose(ds12.gains[3], direct, rtol=1e-12, atol=1e-15)


def test_resolving_stored_gains_reproduces_snr(ds12):
    for i in range(10):
        sol = solve(ds12.gains[i], Method.ANGLE_SWEEP, rho=CFG12.rho)
        assert sol.snr == pytest.approx(ds12.gamma_star[i], rel=1e-12)
        assert ds12.rate_star[i] == pytest.approx(np.log2(1 + ds12.gamma_star[i]), rel=1e-12)


def test_bad_files():
    with pytest.raises(ValueError):
        loads_dataset("")
    with pytest.raises(ValueError):
        loads_dataset('{"format": "other", "version": 1}\n')
    text = dumps_dataset(generate_dataset(CFG12, 2, 0))
    with pytest.raises(ValueError, match="announces"):
        loads_dataset("\n".join(text.splitlines()[:-1]))


def test_subset(ds12):
    sub = ds12.subset([4, 1])
    np.testing.assert_array_equal(sub.gains, ds12.gains[[4, 1]])
    assert sub.config_hash == ds12.config_hash


# -- metrics --------------------------------------------------------------------

def test_labels_score_one(ds12):
    m = evaluate(lambda g: ds12.labels.astype(float), ds12)
    assert m.snr_accuracy == pytest.approx(1.0, rel=1e-12)
    assert m.rate_accuracy == pytest.approx(1.0, rel=1e-12)
    assert m.bitwise_accuracy == 1.0 and m.fallbacks == 0
    assert m.activation_ratio_model == m.activation_ratio_optimal


def test_accuracy_never_exceeds_one(ds12):
    rng = np.random.default_rng(0)
    for _ in range(5):
        m = evaluate_probs(ds12, rng.random(ds12.labels.shape))
        assert 0 < m.snr_accuracy <= 1 + 1e-12 and 0 < m.rate_accuracy <= 1 + 1e-12


def test_threshold_fallback():
    bits, empty = threshold_activation([[0.1, 0.4, 0.3], [0.6, 0.2, 0.9], [0.5, 0.5, 0.2]])
    np.testing.assert_array_equal(bits, [[0, 1, 0], [1, 0, 1], [1, 0, 0]])
    np.testing.assert_array_equal(empty, [True, False, True])


def test_all_zero_policy_counts_fallbacks(ds12):
    m = evaluate_probs(ds12, np.zeros(ds12.labels.shape))
    assert m.fallbacks == len(ds12)
    assert m.activation_ratio_model == pytest.approx(1 / 12)


def test_shape_mismatch(ds12):
    with pytest.raises(ValueError):
        evaluate_probs(ds12, np.zeros((50, 11)))


def test_snr_of():
    g = np.array([[1 + 0j, 1j, -1 + 0j]])
    np.testing.assert_allclose(snr_of(g, [[1, 1, 0]], 2.0), [2.0 * 2 / 2])
    with pytest.raises(ValueError):
        snr_of(g, [[0, 0, 0]], 1.0)


def test_dataset_rejects_wrong_width():
    rec = generate_dataset(CFG12, 1, 0).records
    with pytest.raises(ValueError):
        Dataset(SystemConfig(n_antennas=10), 0, rec)
