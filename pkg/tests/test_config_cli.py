import math

import numpy as np
import pytest

from gcae import cli
from gcae import experiments as ex
from gcae.checkpoint import CheckpointError, read_checkpoint, restore, save_checkpoint
from gcae.config import ConfigError, ExperimentConfig, load_config, write_config
from gcae.model import GcaeTrainer


# -- config ------------------------------------------------------------------------

def test_defaults_resolve_per_dataset():
    w = ExperimentConfig().validate()
    assert (w.batch_size, w.iterations, w.k) == (64, 2000, 5)
    d = ExperimentConfig(dataset="dsprites", m=20).validate()
    assert (d.batch_size, d.k) == (256, 10)


def test_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nsigma = 0.3\nlambda = 0.1\n[train]\niters = 77\n")
    cfg = load_config(ini, preset="dsprites-smoke", overrides={"lam": 0.4, "seed": None})
    assert cfg.dataset == "dsprites" and cfg.subsample == 10000
    assert cfg.sigma == 0.3 and cfg.iterations == 77 and cfg.lam == 0.4 and cfg.seed == 0


def test_config_errors_list_every_field():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(dataset="mnist", sigma=-1, m=0, loss_mode="x").validate()
    text = str(info.value)
    for field in ("dataset", "sigma", "m:", "loss_mode"):
        assert field in text


def test_unknown_key_and_bad_value(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nbogus = 1\nsigma = abc\n")
    with pytest.raises(ConfigError) as info:
        load_config(ini)
    assert len(info.value.problems) == 2


def test_write_config_round_trip(tmp_path):
    cfg = ExperimentConfig(sigma=0.3, lam=0.25, seed=4)
    write_config(cfg, tmp_path / "c.ini")
    assert load_config(tmp_path / "c.ini") == cfg


# -- checkpoint ----------------------------------------------------------------------

def tiny_trainer(seed=0):
    return GcaeTrainer(n=8, m=3, sigma=0.2, seed=seed, disc_width=8, n_uniform=4,
                       encoder_hidden=(16,), decoder_hidden=(16,))


def test_checkpoint_round_trip_resumes_identically(tmp_path):
    rng = np.random.default_rng(0)
    pool = rng.standard_normal((64, 8)).astype(np.float32)
    stream = lambda: pool[rng.integers(0, 64, 8)]  # noqa: E731
    a = tiny_trainer()
    a.warmup(stream, 2)
    a.train_step(stream, 0.2, 2)
    save_checkpoint(tmp_path / "a.ckpt", a, {"note": "x"})
    header, arrays = read_checkpoint(tmp_path / "a.ckpt")
    b = tiny_trainer(seed=99)
    restore(b, header, arrays)
    assert header["config"] == {"note": "x"} and b.iteration == a.iteration
    batch = pool[:8]
    ra = a.train_step(lambda: batch, 0.2, 2)
    rb = b.train_step(lambda: batch, 0.2, 2)
    assert ra == rb
    for p, q in zip(a.model.params + a.bank.net.params, b.model.params + b.bank.net.params):
        np.testing.assert_array_equal(p.data, q.data)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(CheckpointError):
        read_checkpoint(path)


def test_checkpoint_shape_mismatch(tmp_path):
    save_checkpoint(tmp_path / "a.ckpt", tiny_trainer(), {})
    header, arrays = read_checkpoint(tmp_path / "a.ckpt")
    other = GcaeTrainer(n=8, m=4, sigma=0.2, seed=0, disc_width=8, encoder_hidden=(16,),
                        decoder_hidden=(16,))
    with pytest.raises(CheckpointError):
        restore(other, header, arrays)


# -- correlation ---------------------------------------------------------------------

def record(si, mig_value, **kw):
    return ex.SweepRecord({"lambda": 0.1, "sigma": 0.2}, 0.1, si,
                          math.log(si) if si > 0 else float("nan"), mig_value, 0, 0, 0, **kw)


def test_correlate_perfect_negative():
    recs = [record(math.exp(-k), 0.1 * k) for k in range(5)]
    assert ex.correlate(recs).r == pytest.approx(-1.0)


def test_correlate_excludes_nonpositive_information():
    recs = [record(math.exp(-k), 0.1 * k) for k in range(4)] + [record(-0.01, 0.9)]
    c = ex.correlate(recs)
    assert c.excluded == 1 and c.r == pytest.approx(-1.0)


def test_correlate_constant_mig_undefined():
    c = ex.correlate([record(s, 0.3) for s in (0.1, 0.2, 0.4)])
    assert c.r is None and not c.defined


def test_correlate_needs_three():
    with pytest.raises(ValueError):
        ex.correlate([record(0.1, 0.1), record(0.2, 0.2)])


def test_sweep_csv_round_trip(tmp_path):
    recs = [record(math.exp(-k), 0.1 * k) for k in range(3)]
    ex.write_records(tmp_path / "s.csv", recs)
    back = ex.read_records(tmp_path / "s.csv")
    assert [r.mig for r in back] == [r.mig for r in recs]
    assert [r.final_sigma_i for r in back] == [r.final_sigma_i for r in recs]


# -- CLI ---------------------------------------------------------------------------

def test_cli_config_error_exit_code(tmp_path):
    assert cli.main(["train", "--sigma", "-1", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_cli_missing_config_file_is_io_error(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "none.ini")]) == cli.EXIT_IO


def test_cli_missing_dsprites_is_io_error(tmp_path):
    code = cli.main(["train", "--preset", "dsprites-smoke", "--out", str(tmp_path)])
    # the archive is absent from this workspace unless GCAE_DATA_DIR points at it
    if not ex.ds.dsprites_path().exists():
        assert code == cli.EXIT_IO


def test_cli_correlate(tmp_path, capsys):
    recs = [record(math.exp(-k), 0.1 * k) for k in range(4)]
    ex.write_records(tmp_path / "s.csv", recs)
    assert cli.main(["correlate", str(tmp_path / "s.csv"), "--out", str(tmp_path / "c.csv")]) == 0
    assert "pearson_r -1.0" in capsys.readouterr().out
    assert cli.main(["correlate", str(tmp_path / "missing.csv")]) == cli.EXIT_IO


def test_cli_eval_bad_checkpoint(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"garbage")
    assert cli.main(["eval", str(path)]) == cli.EXIT_IO


def test_cli_density_demo_short(tmp_path):
    out = tmp_path / "demo"
    assert cli.main(["density-demo", "--mode", "conditional", "--m-list", "3", "--steps", "400",
                     "--out", str(out)]) == 0
    lines = (out / "kl_conditional.csv").read_text().splitlines()
    assert lines[0] == "m,step,kl" and len(lines) == 3
