import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from co2seq.config import (ConfigError, SimConfig, format_config, parse_config, parse_config_text,
                           preset, write_config)
from co2seq.driver import TimingRecord
from co2seq.fileio import (Snapshot, heatmap_pixels, list_snapshots, read_metadata, read_pnm,
                           read_snapshot, read_timings, render_heatmap, write_loss_history,
                           write_snapshot, write_timings)
from co2seq.reservoir import FluidParams, SourceDisk


# -- config ------------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = parse_config_text("")
    assert cfg.tau == 5000.0
    assert (cfg.steps, cfg.cadence, cfg.collocation_n, cfg.n_elements, cfg.degree) == (500, 10, 100, 100, 2)
    assert (cfg.lr, cfg.pretrain_epochs, cfg.update_epochs) == (1e-4, 20000, 100)
    assert cfg.sources == (SourceDisk((25.0, 25.0), 3.0, 1e-6),)
    assert cfg.fluids == FluidParams()


def test_negative_tau_names_key():
    with pytest.raises(ConfigError, match=r"<config>:3: tau"):
        parse_config_text("[time]\n\ntau = -5\n")


def test_nonuniform_preset():
    cfg = parse_config_text("[run]\npreset = nonuniform\n")
    assert cfg.tau == 1000.0
    assert cfg.sources[0].strength == 5e-6
    assert cfg.permeability == "builtin:K1" and cfg.porosity == "builtin:K1"


def test_unknown_key_line_number():
    with pytest.raises(ConfigError, match=r"<config>:4: unknown key 'elemnts'"):
        parse_config_text("# comment\n[mesh]\ndegree = 2\nelemnts = 3\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match=r":1: unknown section"):
        parse_config_text("[meshes]\n")


def test_bad_value_line_number():
    with pytest.raises(ConfigError, match=r":2: steps"):
        parse_config_text("[time]\nsteps = many\n")


def test_missing_map_file(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[maps]\npermeability = nowhere.csv\n")
    with pytest.raises(ConfigError, match=r"c.ini:2: permeability: map file not found"):
        parse_config(path)


def test_map_path_relative_to_config(tmp_path):
    (tmp_path / "k.csv").write_text("1,2\n3,4\n")
    path = tmp_path / "c.ini"
    path.write_text("[maps]\npermeability = k.csv\n")
    res = parse_config(path).build_reservoir()
    assert res.permeability.shape == (2, 2)


def test_source_outside_domain():
    with pytest.raises(ConfigError, match="leaves the domain"):
        parse_config_text("[sources]\nwell = 1.0, 25.0, 3.0, 1e-6\n")


def test_sources_section_replaces_preset():
    cfg = parse_config_text("[sources]\na = 10, 10, 2, 1e-6\nb = 40, 40, 2, 2e-6, water\n")
    assert [s.center for s in cfg.sources] == [(10.0, 10.0), (40.0, 40.0)]
    assert cfg.sources[1].phase == "water"


def test_zero_update_epochs_rejected():
    with pytest.raises(ConfigError, match="update_epochs"):
        parse_config_text("[training]\nupdate_epochs = 0\n")


def test_preset_unknown():
    with pytest.raises(ValueError):
        preset("lumpy")


def test_round_trip_defaults(tmp_path):
    for name in ("uniform", "nonuniform"):
        cfg = preset(name, output_dir="out")
        assert parse_config(write_config(cfg, tmp_path / f"{name}.ini")) == cfg


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), p=st.integers(1, 4), tau=st.floats(1e-3, 1e6),
       steps=st.integers(0, 10_000), cadence=st.integers(1, 50), lr=st.floats(1e-8, 1.0),
       hidden=st.lists(st.integers(1, 128), min_size=1, max_size=4),
       rho_g=st.floats(1.0, 900.0), seed=st.integers(0, 2 ** 31),
       strength=st.floats(1e-9, 1e-3), radius=st.floats(0.5, 10.0))
def test_round_trip_property(n, p, tau, steps, cadence, lr, hidden, rho_g, seed, strength, radius):
    cfg = SimConfig(n_elements=n, degree=p, tau=tau, steps=steps, cadence=cadence, lr=lr,
                    hidden=tuple(hidden), fluids=FluidParams(rho_g=rho_g), seed=seed,
                    sources=(SourceDisk((20.0, 30.0), radius, strength),
                             SourceDisk((30.0, 20.0), 1.0, strength, "water")),
                    permeability="builtin:K3", porosity="constant:0.25")
    assert parse_config_text(format_config(cfg)) == cfg


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.ini")):
        parse_config(path).build_reservoir()


# -- snapshots ---------------------------------------------------------------

def test_zero_snapshot(tmp_path):
    csv, meta = write_snapshot(Snapshot(0, 0.0, "pressure", np.zeros((3, 4)), (50.0, 50.0)), tmp_path)
    assert csv.name == "pressure_000000.csv" and meta.name == "pressure_000000.txt"
    assert csv.read_text() == "0,0,0,0\n" * 3
    m = read_metadata(meta)
    assert m["min"] == m["max"] == "0"
    assert (m["rows"], m["cols"], m["kind"]) == ("3", "4", "pressure")


def test_snapshot_round_trip_bitwise(tmp_path, rng):
    grid = rng.normal(size=(7, 5)) * 10.0 ** rng.integers(-300, 300, (7, 5))
    snap = Snapshot(1234, 5000.0 * 1234, "saturation", grid, (50.0, 25.0))
    csv, _ = write_snapshot(snap, tmp_path)
    back = read_snapshot(csv)
    assert back.grid.tobytes() == grid.tobytes()
    assert (back.step, back.time, back.kind, back.extent) == (1234, snap.time, "saturation", (50.0, 25.0))
    assert csv.name == "saturation_001234.csv"


def test_snapshot_files_stable(tmp_path, rng):
    grid = rng.random((4, 4))
    a, _ = write_snapshot(Snapshot(3, 1.0, "pressure", grid, (1.0, 1.0)), tmp_path / "a")
    b, _ = write_snapshot(Snapshot(3, 1.0, "pressure", grid, (1.0, 1.0)), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    assert list_snapshots(tmp_path / "a", "pressure") == [a]


def test_snapshot_rejects_kind():
    with pytest.raises(ValueError):
        Snapshot(0, 0.0, "temperature", np.zeros((2, 2)), (1.0, 1.0))


# -- heatmaps ----------------------------------------------------------------

def test_constant_field_uniform_image(tmp_path):
    snap = Snapshot(0, 0.0, "pressure", np.full((5, 6), 3.0), (1.0, 1.0))
    for color in (False, True):
        pix = read_pnm(render_heatmap(snap, tmp_path / f"c{int(color)}.pnm", color=color))
        assert np.all(pix == pix.reshape(-1, *pix.shape[2:])[0])


def test_ramp_monotone_and_dimensions(tmp_path):
    grid = np.tile(np.linspace(0, 1, 9), (4, 1))          # ramp along x (columns)
    snap = Snapshot(0, 0.0, "saturation", grid, (1.0, 1.0))
    pix = read_pnm(render_heatmap(snap, tmp_path / "r.pgm"))
    assert pix.shape == grid.shape
    assert np.all(np.diff(pix.astype(int), axis=1) > 0)
    assert pix.min() == 0 and pix.max() == 255
    rgb = read_pnm(render_heatmap(snap, tmp_path / "r.ppm", color=True))
    assert rgb.shape == grid.shape + (3,)
    # blue end to red end
    assert rgb[0, 0, 2] > rgb[0, 0, 0] and rgb[0, -1, 0] > rgb[0, -1, 2]


def test_image_top_row_is_max_y():
    grid = np.array([[0.0, 0.0], [1.0, 1.0]])            # row 1 is the larger y
    pix = heatmap_pixels(grid)
    assert np.all(pix[0] == 255) and np.all(pix[1] == 0)


# -- timings -----------------------------------------------------------------

def test_empty_timings_header_only(tmp_path):
    path = write_timings([], tmp_path / "t.csv")
    assert path.read_text() == "phase,step,seconds\n"
    assert read_timings(path) == ([], {})


def test_timings_sums_and_summary(tmp_path):
    recs = [TimingRecord("saturation-integration", 0, 0.5), TimingRecord("projection", 0, 0.25),
            TimingRecord("saturation-integration", 1, 0.125), TimingRecord("io", 1, 1.0)]
    records, summary = read_timings(write_timings(recs, tmp_path / "t.csv"))
    per_step = {}
    for phase, step, sec in records:
        per_step[step] = per_step.get(step, 0.0) + sec
    assert per_step == {0: 0.75, 1: 1.125}
    assert len(summary) == 3
    assert summary["saturation-integration"] == (2, 0.625)


def test_timing_record_rejects_negative():
    with pytest.raises(ValueError):
        TimingRecord("io", 0, -1.0)


def test_loss_history_file(tmp_path):
    path = write_loss_history(np.array([2.0, 1.0]), [np.array([0.5]), np.array([0.25, 0.125])],
                              tmp_path / "l.csv")
    assert path.read_text().splitlines() == [
        "phase,index,epoch,loss", "pretrain,0,0,2", "pretrain,0,1,1",
        "update,0,0,0.5", "update,1,0,0.25", "update,1,1,0.125"]
