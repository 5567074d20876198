import numpy as np
import pytest

from utils.physkit import thermal_energy
from utils.rotor import (
    ANGLE_KINDS,
    PRESETS,
    Basis,
    RotorParams,
    angle_operator,
    angular_momentum_y,
    asymmetric_levels,
    basis_energies,
    level_table,
    prolate_energy,
    quadrature_oracle,
    resonance_frequency,
    sphere_grid,
    spherical_harmonics,
    thermal_weights,
)


def test_presets(gas, droplet):
    assert set(PRESETS) == {"no-dimer-gas", "no-dimer-droplet"}
    assert gas.b_yz == pytest.approx(0.17)
    assert droplet.b_yz == pytest.approx(0.092)
    assert droplet.b_x == pytest.approx(0.86 / 1.9)
    assert droplet.delta_alpha == pytest.approx(gas.delta_alpha)


def test_invalid_params():
    with pytest.raises(ValueError):
        RotorParams(b_x=0.1, b_y=0.2, b_z=0.1)
    with pytest.raises(ValueError):
        RotorParams(b_x=0.3, b_y=0.2, b_z=0.1, temperature=-1.0)
    with pytest.raises(ValueError):
        RotorParams(b_x=0.3, b_y=0.2, b_z=0.1, environment="liquid")


def test_gas_j1_asymmetric_levels(gas):
    levels = asymmetric_levels(1, gas)
    assert levels == pytest.approx([0.34, 1.01, 1.05], abs=1e-5)
    assert asymmetric_levels(0, gas) == pytest.approx([0.0])


def test_symmetric_limit_matches_prolate(droplet):
    levels = asymmetric_levels(2, droplet)
    expected = sorted(prolate_energy(2, k, droplet) for k in range(-2, 3))
    assert levels == pytest.approx(expected, abs=1e-12)


def test_resonance_frequencies(gas, droplet):
    assert resonance_frequency(0, gas) == pytest.approx(15.29, abs=5e-3)
    assert resonance_frequency(1, gas) == pytest.approx(25.48, abs=5e-3)
    assert resonance_frequency(0, droplet) == pytest.approx(8.27, abs=5e-3)
    with pytest.raises(ValueError):
        resonance_frequency(1, gas, k=2)


def test_basis_ordering():
    basis = Basis(3)
    assert basis.size == 16
    assert basis.index(0, 0) == 0
    assert basis.index(1, -1) == 1
    assert basis.index(1, 1) == 3
    assert basis.index(2, -2) == 4
    assert basis.states[basis.index(3, 2)] == (3, 0, 2)
    with pytest.raises(ValueError):
        basis.index(4, 0)
    with pytest.raises(ValueError):
        basis.index(1, 2)
    assert Basis(1, "symmetric-top").size == 1 + 9
    assert [b.size for b in basis.parity_blocks()] == [1 + 5, 3 + 7]


def test_basis_energies_diagonal(droplet):
    basis = Basis(2)
    energies = basis_energies(basis, droplet)
    assert energies[basis.index(2, 1)] == pytest.approx(prolate_energy(2, 0, droplet))
    assert energies[0] == 0.0


def test_known_zz_elements():
    basis = Basis(4)
    zz = angle_operator("zz", basis)
    assert zz[0, 0] == pytest.approx(1.0 / 3.0)
    assert zz[basis.index(2, 0), 0] == pytest.approx(2.0 / (3.0 * np.sqrt(5.0)))
    assert zz[basis.index(1, 0), basis.index(1, 0)] == pytest.approx(3.0 / 5.0)


@pytest.mark.parametrize("kind", ANGLE_KINDS)
def test_operator_matches_quadrature(kind):
    basis = Basis(3)
    mat = angle_operator(kind, basis)
    for row, sp in enumerate(basis.states):
        for col, s in enumerate(basis.states):
            expected = quadrature_oracle(kind, sp.J, sp.M, s.J, s.M)
            assert mat[row, col] == pytest.approx(expected, abs=1e-12)


def test_operators_symmetric_and_complete():
    basis = Basis(5)
    total = sum(angle_operator(kind, basis) for kind in ("xx", "yy", "zz"))
    np.testing.assert_allclose(total, np.eye(basis.size), atol=1e-12)
    for kind in ANGLE_KINDS:
        mat = angle_operator(kind, basis)
        np.testing.assert_allclose(mat, mat.T, atol=1e-14)


def test_no_coupling_between_parity_blocks():
    basis = Basis(4)
    even, odd = basis.parity_blocks()
    for kind in ANGLE_KINDS:
        mat = angle_operator(kind, basis)
        assert np.all(mat[np.ix_(even, odd)] == 0.0)


def test_operator_is_read_only():
    mat = angle_operator("xx", Basis(2))
    with pytest.raises(ValueError):
        mat[0, 0] = 1.0


def test_symmetric_top_basis_rejected():
    with pytest.raises(ValueError):
        angle_operator("zz", Basis(2, "symmetric-top"))
    with pytest.raises(ValueError):
        angle_operator("yz", Basis(2))


def test_angular_momentum_y():
    basis = Basis(3)
    jy = angular_momentum_y(basis)
    np.testing.assert_allclose(jy, jy.conj().T, atol=1e-14)
    j = basis.j_values
    for jj in range(4):
        idx = np.flatnonzero(j == jj)
        block = jy[np.ix_(idx, idx)]
        eig = np.linalg.eigvalsh(block)
        np.testing.assert_allclose(eig, np.arange(-jj, jj + 1), atol=1e-12)
        np.testing.assert_allclose(
            np.trace(block @ block).real, jj * (jj + 1) * (2 * jj + 1) / 3.0
        )


def test_spherical_harmonics_orthonormal():
    basis = Basis(3)
    polar, azimuth, weights = sphere_grid(8, 16)
    assert weights.sum() == pytest.approx(4 * np.pi)
    ylm = spherical_harmonics(basis, polar, azimuth)
    gram = ylm.conj().T @ (weights[:, None] * ylm)
    np.testing.assert_allclose(gram, np.eye(basis.size), atol=1e-12)


def test_thermal_weights(droplet):
    basis = Basis(3)
    weights = thermal_weights(basis, droplet)
    assert weights.sum() == pytest.approx(1.0)
    gap = prolate_energy(1, 0, droplet)
    ratio = weights[basis.index(1, 0)] / weights[0]
    assert ratio == pytest.approx(np.exp(-gap / thermal_energy(0.4)))
    cold = thermal_weights(basis, RotorParams(b_x=0.5, b_y=0.1, b_z=0.1))
    assert cold[0] == 1.0
    assert cold[1:].sum() == 0.0


def test_level_table(droplet):
    table = level_table(droplet, 2)
    assert list(table.columns) == ["J", "K", "E_cm1", "f_res_GHz"]
    assert len(table) == 1 + 2 + 3
    row = table[(table.J == 0) & (table.K == 0)].iloc[0]
    assert row.f_res_GHz == pytest.approx(resonance_frequency(0, droplet))
