import numpy as np
import pytest

from hutamp.chains import GmChainParams
from hutamp.cube import Abundances, Endmembers, HsiCube
from hutamp.errors import InputError
from hutamp.io import (
    load_cube,
    load_matrix,
    load_result,
    load_truth_bundle,
    omega_from_dict,
    omega_to_dict,
    store_cube,
    store_matrix,
    store_result,
    store_truth_bundle,
)
from hutamp.mrf import MrfParams
from hutamp.priors import NngmParams
from hutamp.turbo import ModelParams, UnmixResult


def small_params(n=2, m=3):
    slab = NngmParams(np.array([0.4, 0.6]), np.array([0.2, 0.9]), np.array([0.01, 0.1]))
    return ModelParams(
        psi=np.full(m, 0.5),
        nngm=(slab,) * n,
        gm=tuple(GmChainParams(0.1 * j, 0.2 + j, 0.5) for j in range(n)),
        mrf=tuple(MrfParams(0.4, 0.3) for _ in range(n)),
    )


def test_cube_header_parsing(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("M=2,T1=1,T2=2\n1.0,2.0\n3.0,4.0\n")
    cube = load_cube(path)
    assert cube.m == 2 and cube.spatial == (1, 2)
    np.testing.assert_array_equal(cube.data, [[1.0, 2.0], [3.0, 4.0]])


def test_cube_round_trip_bit_exact(tmp_path, rng):
    cube = HsiCube(data=rng.standard_normal((5, 12)) * np.pi, spatial=(3, 4))
    store_cube(tmp_path / "c.csv", cube)
    back = load_cube(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.data, cube.data)
    assert back.spatial == cube.spatial


def test_cube_row_count_mismatch(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("M=3,T1=1,T2=2\n1.0,2.0\n3.0,4.0\n")
    with pytest.raises(InputError):
        load_cube(path)


def test_cube_bad_numeric(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("M=1,T1=1,T2=2\n1.0,xyz\n")
    with pytest.raises(InputError):
        load_cube(path)


def test_matrix_round_trip(tmp_path, rng):
    mat = rng.standard_normal((4, 7)) / 3.0
    store_matrix(tmp_path / "m.csv", mat)
    np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv"), mat)


def test_missing_file_error(tmp_path):
    with pytest.raises(InputError):
        load_matrix(tmp_path / "nope.csv")


def test_omega_round_trip():
    params = small_params()
    back = omega_from_dict(omega_to_dict(params))
    np.testing.assert_array_equal(back.psi, params.psi)
    for a, b in zip(back.nngm, params.nngm):
        np.testing.assert_array_equal(a.omega, b.omega)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.phi, b.phi)
    assert back.gm == params.gm
    assert back.mrf == params.mrf


def test_result_bundle_round_trip(tmp_path, rng):
    s = rng.uniform(0.2, 1, size=(3, 2))
    a = rng.dirichlet(np.ones(2), size=4).T
    result = UnmixResult(
        endmembers=Endmembers(s=s),
        abundances=Abundances(a=a),
        omega=small_params(n=2, m=3),
        diagnostics={"residuals": [2.0, 1.0], "turbo_iterations": 2},
    )
    store_result(tmp_path / "run", result)
    s2, a2, omega = load_result(tmp_path / "run")
    np.testing.assert_array_equal(s2.s, s)
    np.testing.assert_array_equal(a2.a, a)
    assert omega.gm == result.omega.gm
    log_lines = (tmp_path / "run" / "log.jsonl").read_text().splitlines()
    assert len(log_lines) == 2


def test_truth_bundle_round_trip(tmp_path, rng):
    cube = HsiCube(data=rng.uniform(0, 1, size=(4, 6)), spatial=(2, 3))
    s = Endmembers(s=rng.uniform(0.2, 1, size=(4, 2)))
    a = Abundances(a=rng.dirichlet(np.ones(2), size=6).T)
    store_truth_bundle(tmp_path / "truth", cube, s, a, {"seed": 5})
    cube2, s2, a2, meta = load_truth_bundle(tmp_path / "truth")
    np.testing.assert_array_equal(cube2.data, cube.data)
    np.testing.assert_array_equal(s2.s, s.s)
    np.testing.assert_array_equal(a2.a, a.a)
    assert meta["seed"] == 5
