"""Acceptance suite: every exit criterion, one pass/fail line each.

The desk-scale criteria train two models (full and ablated) on the default
synthetic environment inside a session fixture; expect the whole module to
take well under the 4-hour CPU budget.  Run with ``pytest
tests/test_acceptance.py -s`` to watch progress.
"""

import math
import time

import numpy as np
import pytest
import torch

from playgen.config import EnvSpec, LossWeights, TrainConfig
from playgen.distributions import DiagonalGaussian, action_direction, gumbel_softmax
from playgen.losses import (
    LossTerms,
    PerceptualExtractor,
    action_matching_loss,
    feature_recon_loss,
    joint_probability_matrix,
    kl_diag_gaussians,
    l1_loss,
    mutual_information_loss,
    perceptual_recon_loss,
    prior_kl_loss,
    total_loss,
)
from playgen.model import build_model
from playgen.synthenv import frames_tensor, generate_dataset, load_dataset, load_sprite
from playgen.train import Trainer

SAMPLES = 100_000


def criterion(name: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    print(f"[{tag}] {name}" + (f" — {detail}" if detail else ""), flush=True)
    assert ok, f"{name}: {detail}"


def random_gaussian(gen, dim, batch=()):
    mean = torch.randn(*batch, dim, generator=gen, dtype=torch.float64) * 2
    var = torch.empty(*batch, dim, dtype=torch.float64).uniform_(0.2, 3.0, generator=gen)
    return DiagonalGaussian(mean, var)


# ---------------------------------------------------------------------------
# closed-form Gaussian algebra vs Monte-Carlo oracles


def test_gaussian_algebra_monte_carlo():
    start = time.time()
    gen = torch.Generator().manual_seed(42)
    worst_dir = 0.0
    worst_kl = 0.0
    for _ in range(20):
        dim = int(torch.randint(1, 6, (1,), generator=gen))
        e_t = random_gaussian(gen, dim)
        e_t1 = random_gaussian(gen, dim)
        d = action_direction(e_t, e_t1)
        s_t = e_t.mean + e_t.variance.sqrt() * torch.randn(SAMPLES, dim, generator=gen, dtype=torch.float64)
        s_t1 = e_t1.mean + e_t1.variance.sqrt() * torch.randn(SAMPLES, dim, generator=gen, dtype=torch.float64)
        diff = s_t1 - s_t
        se_mean = d.variance.sqrt() / math.sqrt(SAMPLES)
        se_var = d.variance * math.sqrt(2.0 / (SAMPLES - 1))
        z_mean = ((diff.mean(0) - d.mean).abs() / se_mean).max().item()
        z_var = ((diff.var(0) - d.variance).abs() / se_var).max().item()
        worst_dir = max(worst_dir, z_mean, z_var)

        q = random_gaussian(gen, dim)
        p = random_gaussian(gen, dim)
        kl = kl_diag_gaussians(q, p)
        x = q.mean + q.variance.sqrt() * torch.randn(SAMPLES, dim, generator=gen, dtype=torch.float64)

        def log_prob(dist, x):
            return (
                -0.5 * (x - dist.mean) ** 2 / dist.variance
                - 0.5 * torch.log(2 * math.pi * dist.variance)
            ).sum(-1)

        sample_kl = log_prob(q, x) - log_prob(p, x)
        se = sample_kl.std() / math.sqrt(SAMPLES)
        worst_kl = max(worst_kl, abs((sample_kl.mean() - kl).item() / se.item()))
    elapsed = time.time() - start
    criterion(
        "gaussian-algebra-vs-monte-carlo",
        worst_dir <= 3.0 and worst_kl <= 3.0 and elapsed < 60,
        f"max |z| direction {worst_dir:.2f}, kl {worst_kl:.2f}, {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# mutual-information oracle


def test_mutual_information_oracle():
    worst_diag = 0.0
    for k in range(2, 9):
        loss = mutual_information_loss(torch.eye(k, dtype=torch.float64) / k)
        worst_diag = max(worst_diag, abs(loss.item() + math.log(k)))
    gen = torch.Generator().manual_seed(77)
    worst_indep = 0.0
    for _ in range(50):
        k = int(torch.randint(2, 9, (1,), generator=gen))
        a = torch.softmax(torch.randn(k, generator=gen, dtype=torch.float64), -1)
        b = torch.softmax(torch.randn(k, generator=gen, dtype=torch.float64), -1)
        worst_indep = max(worst_indep, abs(mutual_information_loss(torch.outer(a, b)).item()))
    criterion(
        "mutual-information-oracle",
        worst_diag <= 1e-9 and worst_indep <= 1e-9,
        f"diag err {worst_diag:.2e}, independent err {worst_indep:.2e}",
    )


# ---------------------------------------------------------------------------
# finite-difference gradient checks


def finite_difference_gradients(fn, params, h=1e-4):
    loss = fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.detach().reshape(-1)
        numeric = torch.zeros_like(flat)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * h)
        analytic = g.reshape(-1)
        scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-8)
        worst = max(worst, (analytic - numeric).abs().max().item() / scale)
    return worst


def leaf(values):
    return torch.as_tensor(values, dtype=torch.float64).clone().requires_grad_(True)


def test_gradient_checks():
    start = time.time()
    gen = torch.Generator().manual_seed(5)
    checks = {}

    recon = leaf(torch.rand(10, generator=gen, dtype=torch.float64) + 1.0)
    target = torch.rand(10, generator=gen, dtype=torch.float64) - 1.0
    checks["l1"] = finite_difference_gradients(
        lambda: l1_loss([recon.reshape(1, 1, 2, 5)], [target.reshape(1, 1, 2, 5)]),
        [recon],
    )

    ext = PerceptualExtractor(widths=(4, 8), seed=1).double()
    recon_img = leaf(torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64))
    target_img = torch.rand(1, 3, 4, 4, generator=gen, dtype=torch.float64)
    checks["perceptual"] = finite_difference_gradients(
        lambda: perceptual_recon_loss([recon_img], [target_img], ext), [recon_img]
    )

    f_hat = leaf(torch.randn(2, 5, generator=gen, dtype=torch.float64))
    f_real = torch.randn(2, 5, generator=gen, dtype=torch.float64)
    checks["features"] = finite_difference_gradients(
        lambda: feature_recon_loss(f_real, f_hat), [f_hat]
    )

    # action-information loss through soft Gumbel sampling with fixed noise
    logits = leaf(torch.randn(5, 2, generator=gen, dtype=torch.float64))
    logits_hat = leaf(torch.randn(5, 2, generator=gen, dtype=torch.float64))
    noise = torch.rand(5, 2, generator=gen, dtype=torch.float64)
    gumbel = -torch.log(-torch.log(noise))

    def mi_path():
        p = gumbel_softmax(logits, tau=0.8, gumbel_noise=gumbel, hard=False)
        p_hat = torch.softmax(logits_hat, -1)
        return mutual_information_loss(joint_probability_matrix(p, p_hat))

    checks["action-information"] = finite_difference_gradients(mi_path, [logits, logits_hat])

    q_mean = leaf(torch.randn(3, generator=gen, dtype=torch.float64))
    q_var = leaf(torch.rand(3, generator=gen, dtype=torch.float64) + 0.5)
    p_mean = leaf(torch.randn(3, generator=gen, dtype=torch.float64))
    p_var = leaf(torch.rand(3, generator=gen, dtype=torch.float64) + 0.5)
    checks["kl"] = finite_difference_gradients(
        lambda: kl_diag_gaussians(
            DiagonalGaussian(q_mean, q_var), DiagonalGaussian(p_mean, p_var)
        ),
        [q_mean, q_var, p_mean, p_var],
    )

    dm = leaf(torch.randn(2, 3, generator=gen, dtype=torch.float64))
    dv = leaf(torch.rand(2, 3, generator=gen, dtype=torch.float64) + 0.5)
    rm = leaf(torch.randn(2, 3, generator=gen, dtype=torch.float64))
    rv = leaf(torch.rand(2, 3, generator=gen, dtype=torch.float64) + 0.5)
    checks["action-matching"] = finite_difference_gradients(
        lambda: action_matching_loss(
            DiagonalGaussian(rm, rv), DiagonalGaussian(dm, dv)
        ),
        [rm, rv, dm, dv],
    )

    pm = leaf(torch.randn(5, generator=gen, dtype=torch.float64))
    pv = leaf(torch.rand(5, generator=gen, dtype=torch.float64) + 0.5)
    checks["prior-kl"] = finite_difference_gradients(
        lambda: prior_kl_loss(DiagonalGaussian(pm.reshape(1, 5), pv.reshape(1, 5))),
        [pm, pv],
    )

    comps = [leaf(torch.randn((), generator=gen, dtype=torch.float64)) for _ in range(6)]
    weights = LossWeights(0.7, 0.3, 0.2, 0.05)
    checks["total"] = finite_difference_gradients(
        lambda: total_loss(LossTerms(*comps), weights), comps
    )

    elapsed = time.time() - start
    worst = max(checks.values())
    criterion(
        "gradient-finite-difference",
        worst < 1e-3 and elapsed < 120,
        f"worst rel err {worst:.2e} ({max(checks, key=checks.get)}), {elapsed:.1f}s",
    )


# ---------------------------------------------------------------------------
# stop-gradient and test-time variability contracts


def test_stop_gradient_and_zero_variability():
    f = torch.randn(3, 4, requires_grad=True)
    f_hat = torch.randn(3, 4, requires_grad=True)
    feature_recon_loss(f, f_hat).backward()
    stop_grad_ok = f.grad is None and f_hat.grad is not None

    from conftest import tiny_model_config

    model = build_model(tiny_model_config(), seed=0)
    frame = torch.rand(1, 1, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    out = model.forward_sequence(frame, mode="play", actions_override=[0, 1, 2, 2, 1])
    v_zero = out.variability.abs().max().item() == 0.0
    state, last = model.start_play(frame[0])
    _, stepped = model.play_step(state, last, 0)
    play_frames_match = torch.equal(stepped, out.reconstructions[:, 0])

    criterion(
        "stop-gradient-and-test-time-variability",
        stop_grad_ok and v_zero and play_frames_match,
        f"stop-grad {stop_grad_ok}, v==0 {v_zero}, service-step parity {play_frames_match}",
    )


# ---------------------------------------------------------------------------
# desk-scale training, degeneracy, ablation, replay


DESK_SEED = 7
DESK_STEPS = 1200


def desk_train_config(total_steps=DESK_STEPS, seed=DESK_SEED) -> TrainConfig:
    return TrainConfig(
        total_steps=total_steps,
        seed=seed,
        weights=LossWeights(
            rec_features=1e-3, rec_actions=1.0, action_info=1.0, prior_kl=1e-3
        ),
    )


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    from playgen.evalsuite import evaluate_sequences

    root = tmp_path_factory.mktemp("desk")
    data_dir = root / "data"
    print("\n[desk] generating default environment dataset ...", flush=True)
    generate_dataset(EnvSpec(), data_dir)
    frames = frames_tensor(load_dataset(data_dir, "train"))
    test_seqs = load_dataset(data_dir, "test")
    sprite = load_sprite(data_dir)

    results = {}
    variants = {
        "full": {},
        "ablated": {"use_variability": False, "use_action_loss": False},
    }
    for name, switches in variants.items():
        cfg = desk_train_config()
        for key, value in switches.items():
            setattr(cfg.model, key, value)
        t0 = time.time()
        print(f"[desk] training {name} variant ({cfg.total_steps} steps) ...", flush=True)
        model = build_model(cfg.model, cfg.seed)
        trainer = Trainer(model, frames, cfg, root / name)
        ckpt = trainer.fit(progress=True)
        minutes = (time.time() - t0) / 60
        model.eval()
        report = evaluate_sequences(model, test_seqs, template=sprite)
        print(f"[desk] {name}: {minutes:.1f} min\n{report.to_text(name)}", flush=True)
        results[name] = {
            "checkpoint": ckpt,
            "report": report,
            "minutes": minutes,
        }
    results["data_dir"] = data_dir
    results["test_seqs"] = test_seqs
    return results


def test_desk_scale_learning(desk_runs):
    report = desk_runs["full"]["report"]
    minutes = desk_runs["full"]["minutes"]
    ok = (
        report.delta_mse is not None
        and report.delta_mse <= 40.0
        and report.delta_acc is not None
        and not report.delta_acc_degenerate
        and report.delta_acc >= 80.0
        and report.mdr is not None
        and report.mdr <= 5.0
        and report.add is not None
        and report.add <= 4.0
        and minutes <= 240.0
    )
    criterion(
        "desk-scale-learning",
        ok,
        f"Δ-MSE {report.delta_mse:.1f}% (≤40), Δ-Acc {report.delta_acc:.1f}% (≥80), "
        f"MDR {report.mdr:.2f}% (≤5), ADD {report.add:.2f}px (≤4), {minutes:.0f} min",
    )


def test_degeneracy_detector(desk_runs):
    from playgen.evalsuite import delta_acc, delta_mse

    test_seqs = desk_runs["test_seqs"]
    deltas = np.concatenate([s.deltas for s in test_seqs]).astype(np.float64)
    constant = np.zeros(len(deltas), dtype=np.int64)
    mse = delta_mse(constant, deltas)
    mask = np.zeros(len(deltas), dtype=bool)
    mask[: len(deltas) // 2] = True
    acc, degenerate = delta_acc(constant, deltas, mask)
    criterion(
        "degeneracy-detector",
        abs(mse - 100.0) <= 0.1 and degenerate,
        f"constant-action Δ-MSE {mse:.3f}% (100±0.1), degenerate flag {degenerate} "
        f"(majority acc {acc:.1f}%)",
    )


def test_ablation_direction(desk_runs):
    full = desk_runs["full"]["report"]
    ablated = desk_runs["ablated"]["report"]
    ok = (
        ablated.delta_acc is not None
        and full.delta_acc is not None
        and not full.delta_acc_degenerate
        and ablated.delta_acc < full.delta_acc
    )
    flag = " (degenerate)" if ablated.delta_acc_degenerate else ""
    criterion(
        "ablation-direction",
        ok,
        f"ablated Δ-Acc {ablated.delta_acc:.1f}%{flag} < full {full.delta_acc:.1f}%",
    )


def test_replay_determinism(desk_runs, tmp_path):
    from fastapi.testclient import TestClient

    from playgen.cli import main
    from playgen.imaging import frame_to_base64, load_frame_png
    from playgen.service import create_app

    ckpt = desk_runs["full"]["checkpoint"]
    seq = desk_runs["test_seqs"][0]
    init = tmp_path / "init.png"
    from playgen.imaging import save_frame_png

    save_frame_png(seq.frames[0], init)
    actions = [0, 1, 2, 3, 4, 1, 2]

    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(
            [
                "rollout",
                "--checkpoint", str(ckpt),
                "--actions", ",".join(map(str, actions)),
                "--out", str(out),
                "--frame", str(init),
            ]
        )
        assert rc == 0
        outs.append([
            (out / f"frame_{i:03d}.png").read_bytes() for i in range(1, len(actions) + 1)
        ])
    cli_match = outs[0] == outs[1]

    client = TestClient(create_app(ckpt.parent))
    sid = client.post(
        "/sessions",
        json={"checkpoint": ckpt.stem, "frame": frame_to_base64(seq.frames[0])},
    ).json()["session_id"]
    import base64

    served = [
        base64.b64decode(
            client.post(f"/sessions/{sid}/step", json={"action": a}).json()["frame"]
        )
        for a in actions
    ]
    service_match = served == outs[0]
    criterion(
        "replay-determinism",
        cli_match and service_match,
        f"cli bit-identical {cli_match}, service matches cli bytes {service_match}",
    )
