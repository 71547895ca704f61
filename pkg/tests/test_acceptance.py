"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary section
at the end lists every criterion in order.
"""
import json
import subprocess
import sys
import time

import mpmath as mp
import numpy as np
import pytest

from evisteer import harness
from evisteer.data import SyntheticTaskSpec, class_prompts, generate_eval, generate_task, sample_few_shot
from evisteer.encoder import load_checkpoint, save_checkpoint
from evisteer.steering import BeliefPair, SteeringConfig, count_parameters, ds_combine, evidential_state
from evisteer.steering import kl_gamma_regularizer
from evisteer import tensor as T
from evisteer.tensor import Tensor
from evisteer.train import TrainConfig, accuracy, train
from evisteer.verify import full_loss_grad_error, identity_deviation

mp.mp.dps = 30


def test_a1_parameter_budget(acceptance):
    n = count_parameters(768, 768, 4, 11)
    gap = abs(n - 221_000) / 221_000
    share = 100.0 * n / 196_000_000
    ok = n == 219_956 and gap < 0.01 and abs(share - 0.11) < 0.02
    acceptance("1", ok, f"parameter budget: {n:,} trainable, {100 * gap:.3f}% from 221K (tol 1%), "
                        f"{share:.4f}% of 196M (tol 0.11 +/- 0.02 pp)")


def test_a2_harmonic_mean(acceptance):
    hm = harness.harmonic_mean(79.79, 77.97)
    acceptance("2", round(hm, 2) == 78.87, f"HM(79.79, 77.97) = {hm:.6f} -> {round(hm, 2):.2f} (expect 78.87)")


def test_a3_identity_at_init(acceptance):
    t0 = time.perf_counter()
    dev = identity_deviation(n_configs=20)
    dt = time.perf_counter() - t0
    acceptance("3", dev == 0.0 and dt < 10, f"identity at init: max |steered - frozen| = {dev:g} over 20 configs "
                                           f"(tol 0, bit-exact), {dt:.1f}s")


def test_a4_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    err = full_loss_grad_error(seed=0, h=1e-5)
    dt = time.perf_counter() - t0
    acceptance("4", err < 1e-4 and dt < 60, f"grad check of CE + 1e-4 KL, d=2 r=2: max rel err {err:.3e} "
                                           f"(tol 1e-4, h=1e-5), {dt:.1f}s")


def _pair(b):
    b = Tensor(b)
    return BeliefPair(support=b, ignorance=T.add_scalar(T.neg(b), 1.0))


def test_a5_dempster_shafer_suite(acceptance):
    t0 = time.perf_counter()
    g = np.linspace(0.0, 1.0, 101)
    bt, bv = g[:, None], g[None, :]
    fused = ds_combine(_pair(bt), _pair(bv)).data
    comm = np.abs(fused - ds_combine(_pair(bv), _pair(bt)).data.T).max()
    # algebraic rule (stability constant off); total-conflict corners excluded where it is undefined
    inner = bt[1:-1]
    closed = inner * bv / (inner * bv + (1 - inner) * (1 - bv))
    ident = np.abs(ds_combine(_pair(inner), _pair(bv), 0.0).data - closed).max()
    neutral = np.abs(ds_combine(_pair([0.5]), _pair(g), 0.0).data - g).max()
    neutral_eps = np.abs(ds_combine(_pair([0.5]), _pair(g)).data - g).max()
    in_range = fused.min() >= 0.0 and fused.max() < 1.0
    mono = np.diff(fused, axis=0).min() >= 0 and np.diff(fused, axis=1).min() >= 0
    dt = time.perf_counter() - t0
    ok = comm < 1e-12 and neutral < 1e-8 and ident < 1e-12 and in_range and mono and dt < 5
    acceptance("5", ok, f"DS suite on 101x101: commutativity {comm:.1e} (<1e-12), neutral 0.5 {neutral:.1e} (<1e-8; "
                        f"{neutral_eps:.1e} with eps=1e-8), normalized product {ident:.1e} (<1e-12), "
                        f"range [0,1) {in_range}, monotone {mono}, {dt:.2f}s")


def test_a6_evidential_suite(acceptance):
    t0 = time.perf_counter()
    z = np.linspace(-100, 100, 20_001)
    u = evidential_state(Tensor(z)).u.data
    cap = 1.0 / (1.0 + np.log(2.0))
    u_ok = u.min() > 0 and u.max() <= cap and int(np.argmax(u)) == int(np.argmin(np.abs(z)))
    grid = np.logspace(-3, 3, 600_001)
    beta = Tensor(grid)
    kl = (T.add_scalar(beta, -1.0) * T.digamma(beta) - T.lgamma(beta)).data
    argmin = grid[int(np.argmin(kl))]
    kl2 = kl_gamma_regularizer(Tensor([2.0])).item()
    kl05 = kl_gamma_regularizer(Tensor([0.5])).item()
    ref2 = float(mp.digamma(2) - mp.loggamma(2))
    ref05 = float(-0.5 * mp.digamma(0.5) - mp.loggamma(0.5))
    dt = time.perf_counter() - t0
    ok = (u_ok and kl.min() >= -1e-13 and abs(argmin - 1) < 1e-6 and abs(kl2 - 0.42278434) < 1e-7
          and abs(kl2 - ref2) < 1e-7 and abs(kl05 - ref05) < 1e-6 and dt < 5)
    acceptance("6", ok, f"evidential suite: u in (0, {cap:.8f}] peak at Z=0 {u_ok}; min KL {kl.min():.1e} at beta "
                        f"{argmin:.8f}; KL(2)={kl2:.8f} (0.42278434 +/- 1e-7); KL(0.5)={kl05:.8f} vs closed form "
                        f"{ref05:.8f} (+/- 1e-6); {dt:.2f}s")


@pytest.mark.slow
def test_a7_few_shot_efficacy(acceptance, fewshot_records):
    means = {r.variant: r.accuracy_id for r in fewshot_records if r.seed is None}
    zero, k16 = means["zero_shot"], means["evi_steer_K16"]
    acceptance("7", k16 - zero >= 15.0, f"few-shot efficacy: 16-shot {k16:.2f}% vs zero-shot {zero:.2f}% "
                                        f"(gain {k16 - zero:+.2f}, need >= 15), seeds 0/1/2; "
                                        f"K4 {means['evi_steer_K4']:.2f}%, K8 {means['evi_steer_K8']:.2f}%")


@pytest.mark.slow
def test_a8_ablation_ordering(acceptance, default_config):
    t0 = time.perf_counter()
    records = harness.run_ablation(default_config)
    dt = time.perf_counter() - t0
    deltas = {r.variant: r.delta["hm"] for r in records if r.seed is None and r.variant != "full"}
    worst = min(deltas, key=deltas.get)
    table = ", ".join(f"{k} {v:+.2f}" for k, v in deltas.items())
    acceptance("8", worst == "no_visual" and dt < 1800, f"ablation HM deltas vs full (3-seed mean): {table}; "
                                                        f"most negative: {worst}; {dt:.0f}s")


QUICK = {"encoder": {"N": 2}, "steering": {"d": 2, "r": 2}, "train": {"epochs": 3}, "pretext": {"steps": 10},
         "seeds": [0, 1], "shots": [4], "eval_size": 90, "pool_per_class": 8}


def test_a9_determinism(acceptance, tmp_path):
    cfg = tmp_path / "quick.json"
    cfg.write_text(json.dumps(QUICK))
    commands = [
        ["count-params"],
        ["verify", "--suite", "ds", "--suite", "census"],
        ["fewshot"],
        ["domaingen", "--format", "json"],
        ["ablate", "--variants", "no_visual"],
        ["sweep", "--axis", "dimension", "--values", "1", "2"],
    ]
    mismatched = []
    for cmd in commands:
        blobs = []
        for run in ("first", "second"):
            out = tmp_path / run / cmd[0]
            args = [sys.executable, "-m", "evisteer.cli", *cmd, "--config", str(cfg), "--out", str(out)]
            proc = subprocess.run(args, capture_output=True)
            assert proc.returncode == 0, proc.stderr.decode()
            blobs.append(proc.stdout + b"".join(p.read_bytes() for p in sorted(out.iterdir())))
        if blobs[0] != blobs[1]:
            mismatched.append(cmd[0])
    acceptance("9", not mismatched, f"determinism: {len(commands)} commands run twice in fresh processes, "
                                    f"stdout and output files byte-identical; mismatches: {mismatched or 'none'}")


def test_a10_checkpoint_round_trip(acceptance, tmp_path, aligned_backbone):
    t0 = time.perf_counter()
    spec = SyntheticTaskSpec()
    prompts = class_prompts(spec)
    model = aligned_backbone.attach_adapters(4, 4, 0)
    support = sample_few_shot(generate_task(spec, 4, 3), 4, 0)
    steering = SteeringConfig(r=4, d=4)
    model, _ = train(model, support, TrainConfig(epochs=3), steering, prompts)
    path = tmp_path / "model.evst"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    a, b = model.state_dict(), back.state_dict()
    exact = sorted(a) == sorted(b) and all(a[k].tobytes() == b[k].tobytes() for k in a)
    X, y = generate_eval(spec, 500, 99)
    acc_a, acc_b = accuracy(model, X, y, prompts, steering), accuracy(back, X, y, prompts, steering)
    dt = time.perf_counter() - t0
    acceptance("10", exact and acc_a == acc_b and dt < 10, f"checkpoint round trip: {len(a)} tensors bit-exact "
                                                          f"{exact}; accuracy {acc_a!r} vs {acc_b!r}; {dt:.1f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-rA"]))
