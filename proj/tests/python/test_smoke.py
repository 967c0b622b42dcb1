import math
import os
import subprocess
import textwrap

import numpy as np
import pytest

import f2d2


def test_linear_oracle_fewstep_is_exact():
    x1 = f2d2.RngStream(1).normal_matrix(64, 2) * math.e
    truth = f2d2.linear_flow_logp1(x1)
    for k in (1, 2, 4, 8):
        rep = f2d2.likelihood_fewstep(f2d2.LinearFlowMap(), x1, k)
        assert rep["nfe"] == k
        assert np.max(np.abs(rep["log_density"] - truth)) < 1e-10


def test_reference_integration_converges():
    x1 = f2d2.RngStream(2).normal_matrix(256, 2) * math.e
    truth = f2d2.linear_flow_logp1(x1)
    err = [np.mean(np.abs(f2d2.likelihood_reference_linear(x1, n)["log_density"] - truth)) for n in (64, 128)]
    assert err[1] < 2e-2
    assert 1.8 < err[0] / err[1] < 2.2


def test_density_and_energy_distance():
    cb = f2d2.Density.checkerboard()
    pts = cb.sample(f2d2.RngStream.named(0, "py"), 500)
    assert pts.shape == (500, 2)
    assert np.allclose(cb.logpdf(pts), -math.log(32))
    assert f2d2.energy_distance(pts, pts) == pytest.approx(0.0, abs=1e-12)
    assert f2d2.energy_distance(pts[:250], pts[250:]) >= 0.0


def test_model_roundtrip_and_flow_identity(tmp_path):
    arch = f2d2.Architecture()
    arch.hidden_width = 16
    arch.hidden_layers = 2
    arch.zero_init_heads = False
    net = f2d2.JointFlowMapModel(arch, f2d2.RngStream(3))
    x = f2d2.RngStream(4).normal_matrix(8, 2)
    assert np.array_equal(net.flow(x, 0.3, 0.3), x)
    u, d = net.forward(x, 0.0, 1.0)
    assert u.shape == (8, 2) and d.shape == (8, 1)
    path = tmp_path / "m.ckpt"
    net.save(path)
    back = f2d2.load_model(path)
    assert np.array_equal(back.flat_parameters(), net.flat_parameters())
    lag, eul, sg = f2d2.flowmap_residuals(net, x, np.zeros((8, 1)), np.full((8, 1), 0.5))
    assert lag.shape == (8,) and np.all(np.isfinite(eul)) and np.all(sg >= 0)


def test_guidance_reduces_surrogate_on_linear_map():
    x0 = f2d2.RngStream(5).normal_matrix(32, 2)
    out = f2d2.guide(f2d2.LinearFlowMap(), x0, steps=3, lr=0.05)
    trace = out["surrogate_trace"]
    assert trace.shape == (32, 4)
    assert np.all(np.diff(trace, axis=1) < 0)
    assert np.allclose(out["samples"], out["x0"] * math.e)


TINY = textwrap.dedent(
    """\
    seed: 5
    model: {hidden_width: 16, hidden_layers: 2, div_head_hidden: [8]}
    stages:
      - {name: teacher, kind: flow_matching, steps: 20, batch_size: 32, log_every: 10}
      - {name: f2d2, kind: shortcut_f2d2, steps: 10, batch_size: 32, warm_start: teacher,
         teacher: teacher, velocity_target: teacher, log_every: 5}
    eval: {ks: [1, 2], n_samples: 64, grid_resolution: 4, reference_steps: 4}
    guidance: {n_samples: 8}
    """
)


def test_train_binding_and_cli(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY)
    code, log, err = f2d2.train(cfg, out=tmp_path / "py")
    assert code == 0, err
    assert "stage f2d2" in log
    model = f2d2.load_model(tmp_path / "py" / "f2d2.ckpt")
    assert model.divergence_trained

    cli = os.environ.get("F2D2_CLI")
    if not cli:
        pytest.skip("F2D2_CLI not set")
    run = subprocess.run([cli, "train", "--config", str(cfg), "--out", str(tmp_path / "cli")], capture_output=True)
    assert run.returncode == 0, run.stderr
    assert (tmp_path / "cli" / "metrics.csv").read_bytes() == (tmp_path / "py" / "metrics.csv").read_bytes()
    ev = subprocess.run(
        [cli, "eval", "--config", str(cfg), "--checkpoint", str(tmp_path / "cli" / "f2d2.ckpt"),
         "--out", str(tmp_path / "ev"), "--k", "1"], capture_output=True)
    assert ev.returncode == 0, ev.stderr
    assert (tmp_path / "ev" / "calibration_K1.json").exists()
    bad = subprocess.run([cli, "train", "--config", str(tmp_path / "missing.yaml")], capture_output=True)
    assert bad.returncode == 2
    usage = subprocess.run([cli, "eval"], capture_output=True)
    assert usage.returncode == 2
