import json

import numpy as np
import pytest

from quenchlearn.dynamics import LindbladModel, TimeGrid
from quenchlearn.experiment import (
    MeasurementSetting,
    MissingDataError,
    ProductState,
    QuenchDataset,
    group_bases,
    random_bases,
    sample_probabilities,
    sample_setting,
    sample_words,
    simulate_dataset,
    simulate_dataset_factorized,
)
from quenchlearn.pauli import Operator, PauliString, string_expectation


def trivial_model(n):
    return LindbladModel(n, Operator.zero(n), [])


def test_all_up_z_basis_words_are_all_plus_one():
    model = trivial_model(3)
    setting = MeasurementSetting(0, "ZZZ", 0, 200)
    words = sample_setting(model, ProductState.all_up(3), setting, TimeGrid(1.0, 2), 7)
    assert words.shape == (200, 3)
    assert np.all(words == 1)


def test_plus_state_z_basis_binomial_concentration():
    state = ProductState(np.array([[1.0, 0.0, 0.0]]))
    setting = MeasurementSetting(0, "Z", 0, 10_000)
    words = sample_setting(trivial_model(1), state, setting, TimeGrid(1.0, 2), 11)
    assert abs(words.mean()) <= 4.0 / np.sqrt(10_000)


def test_sample_probabilities_match_born_rule():
    rng = np.random.default_rng(3)
    state = ProductState.haar_random(2, rng)
    rho = state.to_density_matrix().entries
    for basis in ["XY", "ZZ", "YX"]:
        p = sample_probabilities(rho, basis)
        assert p.shape == (4,)
        assert p.min() >= 0.0
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        # marginal single-site expectation from the distribution
        words = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]])
        for site in range(2):
            mean = float(p @ words[:, site])
            exact = state.pauli_expectation(PauliString.single(2, site, basis[site]))
            assert mean == pytest.approx(exact, abs=1e-12)


def test_product_state_pauli_expectation_matches_dense():
    state = ProductState.haar_random(3, np.random.default_rng(5))
    rho = state.to_density_matrix().entries
    for label in ["XIZ", "YYI", "ZXY", "III"]:
        p = PauliString.from_label(label)
        assert state.pauli_expectation(p) == pytest.approx(
            string_expectation(p, rho).real, abs=1e-12)


def test_shared_shots_give_correlated_overlapping_estimates():
    # Z0 and Z0Z1 extracted from the same bit-strings must covary.
    state = ProductState.haar_random(2, np.random.default_rng(8))
    rho = state.to_density_matrix().entries
    p = sample_probabilities(rho, "ZZ")
    z0 = PauliString.from_label("ZI")
    zz = PauliString.from_label("ZZ")
    rng = np.random.default_rng(42)
    a, b = [], []
    for _ in range(300):
        words = sample_words(p, 50, rng, 2)
        a.append(words[:, 0].mean())
        b.append(np.prod(words, axis=1).mean())
    cov = np.cov(a, b)[0, 1]
    assert abs(cov) > 1e-4


def build_small_dataset(shots=500, seed=1):
    n = 2
    h = 0.5 * Operator.from_label("ZZ") + 0.3 * (
        Operator.single(n, 0, "X") + Operator.single(n, 1, "X"))
    model = LindbladModel(n, h, [(Operator.single(n, i, "Z"),
                                  Operator.single(n, i, "Z"), 0.02) for i in range(n)])
    states = [ProductState.all_up(n), ProductState.haar_random(n, 123)]
    grid = TimeGrid(1.0, 10)
    return simulate_dataset(model, states, ["XX", "XZ", "ZZ"], grid, shots, seed)


def test_pooled_estimate_combines_compatible_settings():
    ds = build_small_dataset()
    x0 = PauliString.from_label("XI")
    mean, count = ds.estimate(x0, 0, 0)
    # X on site 0 is measured by both the XX and XZ settings.
    assert count == 1000
    exact = ds.initial_states[0].pauli_expectation(x0)
    assert abs(mean - exact) <= 5.0 / np.sqrt(count)


def test_missing_data_error_names_operator():
    ds = build_small_dataset(shots=10)
    with pytest.raises(MissingDataError, match="YI"):
        ds.estimate(PauliString.from_label("YI"), 0, 0)


def test_simulation_is_deterministic_per_seed():
    ds1 = build_small_dataset(shots=50, seed=9)
    ds2 = build_small_dataset(shots=50, seed=9)
    ds3 = build_small_dataset(shots=50, seed=10)
    assert all(np.array_equal(a, b) for a, b in zip(ds1.records, ds2.records))
    assert any(not np.array_equal(a, b) for a, b in zip(ds1.records, ds3.records))


def test_truncation_is_a_prefix_of_the_larger_budget():
    big = build_small_dataset(shots=400, seed=2)
    small = build_small_dataset(shots=100, seed=2)
    cut = big.truncated(100)
    assert all(np.array_equal(a, b) for a, b in zip(cut.records, small.records))
    assert cut.n_runs == small.n_runs


def test_json_round_trip():
    ds = build_small_dataset(shots=40)
    text = ds.to_json()
    back = QuenchDataset.from_json(text)
    assert back.n_sites == ds.n_sites
    assert back.grid == ds.grid
    assert back.settings == ds.settings
    assert all(np.array_equal(a, b) for a, b in zip(back.records, ds.records))
    assert np.allclose(back.initial_states[1].vectors, ds.initial_states[1].vectors)
    json.loads(text)  # stays valid JSON


def test_factorized_sampler_matches_full_distribution():
    n = 2
    h = 0.4 * Operator.from_label("ZZ") + 0.2 * Operator.single(n, 0, "X")
    block = LindbladModel(n, h, [(Operator.single(n, 0, "Z"),
                                  Operator.single(n, 0, "Z"), 0.05)])
    states = [ProductState.haar_random(n, s) for s in (21, 22)]
    grid = TimeGrid(1.0, 10)
    ds = simulate_dataset_factorized([block, block], states, ["ZXZX"], grid,
                                     20_000, 5, time_indices=[10])
    assert ds.n_sites == 4
    # block marginals agree with single-block exact evolution
    from quenchlearn.dynamics import evolve
    rho_t = evolve(block, states[0].to_density_matrix(), grid)[10].entries
    exact = string_expectation(PauliString.from_label("ZX"), rho_t).real
    mean, count = ds.estimate(PauliString.from_label("ZXII"), 0, 10)
    assert abs(mean - exact) <= 5.0 / np.sqrt(count)


def test_group_bases_singleton_and_commuting_sets():
    zz = [PauliString.from_label("ZZI"), PauliString.from_label("IZZ")]
    xs = [PauliString.single(3, i, "X") for i in range(3)]
    zs = [PauliString.single(3, i, "Z") for i in range(3)]
    bases = group_bases(zz + xs + zs)
    assert bases == ["XXX", "ZZZ"]
    assert group_bases([PauliString.from_label("XIY")]) == ["XXY"]


def test_group_bases_covers_nearest_neighbour_library():
    n = 5
    ops = []
    for a in "XYZ":
        for b in "XYZ":
            for i in range(n - 1):
                ops.append(PauliString.two_site(n, i, a, i + 1, b))
    bases = group_bases(ops)
    assert len(bases) == 9
    for op in ops:
        assert any(all(basis[i] == "IXYZ"[op.codes[i]] for i in op.support)
                   for basis in bases)


def test_random_bases_deterministic_and_uniform():
    bases = random_bases(2000, 10, 77)
    assert bases == random_bases(2000, 10, 77)
    flat = "".join(bases)
    for letter in "XYZ":
        freq = flat.count(letter) / len(flat)
        assert abs(freq - 1 / 3) <= 0.02
