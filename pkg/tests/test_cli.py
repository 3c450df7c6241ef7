import json

import numpy as np
import pytest

from bctopo import cli, formats
from bctopo.topo import make_sector_geometry, sectors_of

SMALL = """
[mesh]
n = 4
[problem]
reference = "three_material"
[optimizer]
kappa0 = 0.05
max_iter = 6
[output]
directory = "{out}"
snapshot_every = 2
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    path = root / "small.toml"
    path.write_text(SMALL.format(out=(root / "out").as_posix()))
    code = cli.main(["run", str(path)])
    return root / "out", code


def test_run_exit_and_outputs(run_dir):
    out, code = run_dir
    assert code == 0
    for name in ("history.csv", "summary.json", "config.toml", "cost_history.png",
                 "region_areas.png", "partition.png", "reference.png"):
        assert (out / name).is_file(), name
    assert sorted(out.glob("snapshots/iter_*.vtk"))


def test_history_and_summary(run_dir):
    out, _ = run_dir
    h = cli.read_history(out / "history.csv")
    J = h["J"][h["accepted"] == 1]
    assert np.all(np.diff(J) < 0)
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] in cli.CLEAN_STATUSES
    assert s["initial_J"] == J[0] and s["final_J"] == J[-1]
    assert s["accepted_steps"] == len(J) - 1
    assert sum(s["areas"]) == pytest.approx(sum(s["reference_areas"]))
    areas = np.array([h[f"area_{k}"] for k in (1, 2, 3)]).sum(axis=0)
    np.testing.assert_allclose(areas, areas[0])


def test_snapshots_consistent(run_dir):
    out, _ = run_dir
    g3 = make_sector_geometry(3)
    for snap in sorted(out.glob("snapshots/iter_*.vtk")):
        data = formats.read_vtk_cell_data(snap)
        psi = np.column_stack([data["psi_1"], data["psi_2"]])
        np.testing.assert_array_equal(sectors_of(g3, psi), data["label"])


def test_missing_config(tmp_path, capsys):
    code = cli.main(["run", str(tmp_path / "absent.toml")])
    assert code == 2
    assert "absent.toml" in capsys.readouterr().err


def test_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[mesh]\nn = 1\n")
    assert cli.main(["run", str(path)]) == 1
    assert "mesh.n" in capsys.readouterr().err


def test_mesh_info(tmp_path, capsys):
    path = tmp_path / "m.toml"
    path.write_text("[mesh]\nn = 4\n")
    assert cli.main(["mesh-info", str(path)]) == 0
    lines = dict(l.split(": ") for l in capsys.readouterr().out.splitlines())
    assert int(lines["boundary_faces"]) == 12 * 16
    assert float(lines["volume"]) == pytest.approx(float(lines["divergence_volume"]), rel=1e-10)


def test_fd_check(tmp_path, capsys):
    path = tmp_path / "m.toml"
    path.write_text("[mesh]\nn = 4\n")
    assert cli.main(["fd-check", str(path), "--faces", "4", "--flux", "consistent"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("face,i,j")
    assert len([l for l in out if l[0].isdigit()]) == 4
    assert any(l.startswith("sign_agreement") for l in out)
