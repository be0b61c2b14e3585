"""Acceptance gate: one test per criterion, each printing a single verdict line."""

import importlib.util
import json
import math
import time
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from hirescascade import rng
from hirescascade.analysis import hf_energy_ratio, repetition_score
from hirescascade.cascade import CascadeConfig, StageConfig, build_region_alpha, direct_sample, generate_base, run_cascade
from hirescascade.cli.config import parse_config
from hirescascade.cli.imageio import encode_ppm, read_ppm
from hirescascade.cli.main import main
from hirescascade.cli.report import REPORT_SCHEMA
from hirescascade.dit_scale import RopeConfig, apply_rope, ntk_lambda, rope_angles
from hirescascade.models import PeriodicBiasUNet
from hirescascade.models.codec import default_codec
from hirescascade.models.dit import DiTConfig, TinyDiT
from hirescascade.models.lora import LoraAdapter, TrainBatch, create_adapters, lora_loss_and_grads, lora_train_step
from hirescascade.models.training import SCENE_PROMPT
from hirescascade.models.unet import TinyUNet
from hirescascade.schedule import (
    DetailControl,
    blend_factor,
    detail_blend,
    forward_noise,
    make_schedule,
    renoise_to,
    reverse_step_ddim,
    shift_timesteps,
)
from hirescascade.tensor_ops import conv2d_dilated, gaussian_lowpass, softmax_scaled
from hirescascade.unet_scale import DilationPolicy, FusionConfig, ScaleHooks, scale_fuse

TESTS = Path(__file__).parent
CONFIGS = sorted((TESTS.parent / "configs").glob("*.json"))
SEEDS = range(8)


def load_oracle():
    spec = importlib.util.spec_from_file_location("golden_oracle", TESTS / "oracle" / "make_goldens.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


@pytest.fixture(scope="module")
def oracle():
    return load_oracle()


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[acceptance {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def small_dit(depth: int = 2, seed: int = 5) -> TinyDiT:
    return TinyDiT(DiTConfig(dim=16, heads=2, axis_dims=(2, 2, 4), depth=depth, mlp_dim=32, time_dim=8, train_size=(4, 4)), seed=seed)


# -- 1 -------------------------------------------------------------------------
def test_criterion_1_identity_collapse(verdict):
    start = time.perf_counter()
    r = np.random.default_rng(1)
    checks = {}

    unet = TinyUNet(seed=2)
    z = r.normal(size=(12, 16, 16))
    cond = unet.prompt_tokens("p")
    plain = unet.predict(z, 400, cond)
    identity = ScaleHooks(DilationPolicy(1))
    identity.set_step(0, 10)
    checks["unet d=1 global attention"] = np.array_equal(unet.predict(z, 400, cond, identity), plain)
    checks["unet default hooks"] = np.array_equal(unet.predict(z, 400, cond, ScaleHooks()), plain)

    dit = TinyDiT(seed=3)
    zd = r.normal(size=(12, 2, 16, 16))
    cd = dit.prompt_tokens("p")
    base = dit.predict(zd, 300, cd)
    checks["dit lambda=1 t=1"] = np.array_equal(dit.predict(zd, 300, cd, RopeConfig(dit.config.axis_dims, 10000.0, (1.0, 1.0, 1.0)), 1.0), base)
    checks["dit zero-init lora"] = np.array_equal(dit.predict(zd, 300, cd, adapters=create_adapters(dit, 4, seed=9)), base)

    sched = make_schedule(1000, 0.00085, 0.012, "scaled_linear")
    checks["shift=1"] = shift_timesteps(sched, 1.0) is sched

    cfg = CascadeConfig(backbone="unet", num_steps=4, seed=6)
    checks["empty stage list"] = np.array_equal(run_cascade(cfg, unet).rgb, default_codec().decode(generate_base(cfg, unet).data))
    cfg_d = CascadeConfig(num_steps=3, seed=6, task="t2v", frames=2)
    checks["empty stage list (dit)"] = np.array_equal(run_cascade(cfg_d, dit).rgb, default_codec().decode(generate_base(cfg_d, dit).data))

    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    verdict("1", not failed and elapsed < 10, f"{len(checks) - len(failed)}/{len(checks)} bitwise identities in {elapsed:.1f}s {failed or ''}")


# -- 2 -------------------------------------------------------------------------
def test_criterion_2_equation_oracles(oracle, verdict):
    start = time.perf_counter()
    r = np.random.default_rng(2)
    n = 50
    worst = {}

    def record(name, got, want):
        err = float(np.max(np.abs(np.asarray(got, dtype=np.float64) - np.asarray(want, dtype=np.float64))))
        worst[name] = max(worst.get(name, 0.0), err)

    sched = make_schedule(1000, 0.00085, 0.012, "scaled_linear")
    abar = oracle.alpha_bars(1000, 0.00085, 0.012, "scaled_linear")
    ab = lambda t: 1.0 if t == 0 else abar[t - 1]  # noqa: E731

    for _ in range(n):
        # forward noising
        z0, eps = r.normal(size=(2, 2, 3, 3))
        t = int(r.integers(1, 1001))
        want = [math.sqrt(ab(t)) * a + math.sqrt(1 - ab(t)) * e for a, e in zip(z0.ravel(), eps.ravel())]
        record("forward_noise", forward_noise(z0, t, eps, sched).ravel(), want)

        # deterministic reverse step
        t_prev = int(r.integers(0, t))
        want = [
            math.sqrt(ab(t_prev)) * (a - math.sqrt(1 - ab(t)) * e) / math.sqrt(ab(t)) + math.sqrt(1 - ab(t_prev)) * e
            for a, e in zip(z0.ravel(), eps.ravel())
        ]
        record("reverse_step_ddim", reverse_step_ddim(z0, eps, t, t_prev, sched).ravel(), want)

        # re-noising the upsampled anchor
        seed, stream, K = int(r.integers(0, 2**40)), int(r.integers(0, 8)), int(r.integers(1, 1001))
        noise = oracle.gaussian(seed, z0.size, stream)
        want = [math.sqrt(ab(K)) * a + math.sqrt(1 - ab(K)) * e for a, e in zip(z0.ravel(), noise)]
        record("renoise_to", renoise_to(z0, K, sched, seed, stream).ravel(), want)

        # scaled cosine blend with a per-cell exponent map
        T = int(r.integers(1, 1001))
        tb = int(r.integers(0, T + 1))
        amap = r.uniform(0.25, 4.0, size=(3, 3))
        out = detail_blend(z0, eps, tb, T, DetailControl(amap))
        base_c = (1 + math.cos((T - tb) / T * math.pi)) / 2
        want = [
            [[base_c ** amap[y, x] * z0[c, y, x] + (1 - base_c ** amap[y, x]) * eps[c, y, x] for x in range(3)] for y in range(3)]
            for c in range(2)
        ]
        record("detail_blend", out, want)

        # dilated convolution
        cin, cout, k, d = int(r.integers(1, 3)), int(r.integers(1, 3)), int(r.choice([1, 3, 5])), int(r.integers(1, 4))
        x = r.normal(size=(cin, 7, 8))
        kern = r.normal(size=(cout, cin, k, k))
        bias = r.normal(size=cout)
        want = []
        for o in range(cout):
            acc = np.full((7, 8), bias[o])
            for c in range(cin):
                acc += np.array(oracle.dilated_conv_bruteforce(x[c].tolist(), kern[o, c].tolist(), d))
            want.append(acc)
        record("conv2d_dilated", conv2d_dilated(x, kern, d, bias), want)

        # scale fusion
        sigma = float(r.uniform(0.5, 2.0))
        g, loc = r.normal(size=(2, 2, 10, 11))
        want = [
            np.array(g[c]) - np.array(oracle.blur2d(g[c].tolist(), sigma)) + np.array(oracle.blur2d(loc[c].tolist(), sigma))
            for c in range(2)
        ]
        record("scale_fuse", scale_fuse(g, loc, sigma), want)

        # stretched rotary angles and rotation
        dim = 2 * int(r.integers(2, 17))
        pos, lam = int(r.integers(0, 1000)), float(r.uniform(1, 8))
        theta = [pos / (lam * 10000.0) ** (2 * j / dim) for j in range(dim // 2)]
        record("rope_angles", rope_angles(pos, 10000.0, lam, dim), theta)
        v = r.normal(size=dim)
        rot = []
        for j, th in enumerate(theta):
            rot += [v[2 * j] * math.cos(th) - v[2 * j + 1] * math.sin(th), v[2 * j] * math.sin(th) + v[2 * j + 1] * math.cos(th)]
        record("apply_rope", apply_rope(v, rope_angles(pos, 10000.0, lam, dim)), rot)

        # temperature-scaled softmax
        logits = r.normal(scale=3.0, size=int(r.integers(2, 40)))
        temp, dk = float(r.uniform(1.0, 2.0)), int(r.integers(1, 64))
        record("softmax_scaled", softmax_scaled(logits, temp, dk), oracle.softmax([s / (temp * math.sqrt(dk)) for s in logits]))

    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v <= 1e-10}
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict("2", not bad and elapsed < 60, f"{n} comparisons per equation, max |err| {detail}; {elapsed:.1f}s")


# -- 3 -------------------------------------------------------------------------
def test_criterion_3_ddim_round_trip(verdict):
    r = np.random.default_rng(3)
    sched = make_schedule(1000, 0.00085, 0.012, "scaled_linear")
    worst = 0.0
    for _ in range(100):
        z0 = r.normal(size=(12, 4, 4))
        eps = r.normal(size=z0.shape)
        t = int(r.integers(1, 1001))
        worst = max(worst, float(np.max(np.abs(reverse_step_ddim(forward_noise(z0, t, eps, sched), eps, t, 0, sched) - z0))))
    verdict("3", worst <= 1e-10, f"100 instances, max |z0 error| {worst:.2e}")


# -- 4 -------------------------------------------------------------------------
def test_criterion_4_blend_endpoints(goldens, verdict):
    checks = {
        "c(T)=1": float(blend_factor(1000, 1000, 3.0)) == 1.0,
        "c(0)=0": float(blend_factor(0, 1000, 0.7)) == 0.0,
        "c(T/2, 1)=0.5": float(blend_factor(500, 1000, 1.0)) == 0.5,
    }
    top = np.zeros((4, 4), int)
    top[:2] = 1
    bottom_right = np.zeros((4, 4), int)
    bottom_right[2:, 2:] = 1
    amap = build_region_alpha([top, bottom_right], [1.0, 3.0], 2.0).alpha_map
    checks["4x4 region map"] = amap.tolist() == goldens["region_alpha_4x4"]
    z_a, z_b = np.random.default_rng(4).normal(size=(2, 1, 4, 4))
    out = detail_blend(z_a, z_b, 500, 1000, DetailControl(amap))
    checks["map drives blend"] = np.array_equal(out, 0.5**amap * z_a + (1 - 0.5**amap) * z_b)
    failed = [k for k, v in checks.items() if not v]
    verdict("4", not failed, f"{len(checks) - len(failed)}/{len(checks)} exact {failed or ''}")


# -- 5 -------------------------------------------------------------------------
def test_criterion_5_rotary(verdict):
    r = np.random.default_rng(5)
    norm_err = 0.0
    for _ in range(1000):
        d = 2 * int(r.integers(1, 33))
        v = r.normal(size=d)
        ang = r.uniform(-1e3, 1e3, size=d // 2)
        norm_err = max(norm_err, abs(np.linalg.norm(apply_rope(v, ang)) - np.linalg.norm(v)) / np.linalg.norm(v))

    dit = TinyDiT(seed=7)
    z = r.normal(size=(12, 2, 12, 12))
    cond = dit.prompt_tokens("p")
    rope = RopeConfig(dit.config.axis_dims, 10000.0, (1.0, ntk_lambda(8, 6, 14) + 1.5, 2.0))
    base = dit.predict(z, 500, cond, rope, 1.1)
    shift_err = max(
        float(np.max(np.abs(dit.predict(z, 500, cond, rope, 1.1, pos_offset=off) - base)))
        for off in [(1, 0, 0), (0, 7, 3), (3, 40, 100)]
    )

    n = np.arange(50)
    plain = np.multiply.outer(n, 1.0 / 10000.0 ** (np.arange(8) * 2 / 16))
    lam_one = np.array_equal(rope_angles(n, 10000.0, 1.0, 16), plain) and np.array_equal(
        dit.predict(z, 500, cond, RopeConfig.ntk(dit.config.axis_dims, (2, 8, 8), (2, 6, 6))), dit.predict(z, 500, cond)
    )
    ok = norm_err <= 1e-12 and shift_err <= 1e-8 and lam_one
    verdict("5", ok, f"norm {norm_err:.1e}, predict shift {shift_err:.1e}, lambda=1 bitwise {lam_one}")


# -- 6 -------------------------------------------------------------------------
def test_criterion_6_lora_gradients(verdict):
    start = time.perf_counter()
    r = np.random.default_rng(6)
    model = small_dit(depth=2)
    sched = make_schedule(1000, 0.00085, 0.012, "scaled_linear")
    z0 = r.normal(size=(2, 12, 1, 4, 4))
    batch = TrainBatch(z0, np.array([150, 650]), r.normal(size=z0.shape), model.prompt_tokens("toy"))
    ads = [LoraAdapter(a.target, a.A, r.normal(scale=0.1, size=a.B.shape)) for a in create_adapters(model, rank=2, seed=1)]
    _, grads = lora_loss_and_grads(model, ads, batch, sched)

    worst, checked = 0.0, 0
    for i, ad in enumerate(ads):
        for which in (0, 1):
            arr = (ad.A, ad.B)[which]
            idx = tuple(int(r.integers(0, s)) for s in arr.shape)
            vals = []
            for sgn in (1, -1):
                pert = arr.copy()
                pert[idx] += sgn * 1e-5
                trial = list(ads)
                trial[i] = LoraAdapter(ad.target, pert if which == 0 else ad.A, pert if which == 1 else ad.B, ad.scale)
                vals.append(lora_loss_and_grads(model, trial, batch, sched)[0])
            fd = (vals[0] - vals[1]) / 2e-5
            g = grads[ad.target][which][idx]
            worst = max(worst, abs(g - fd) / max(abs(fd), 1e-8))
            checked += 1

    fresh = create_adapters(model, rank=2, seed=2)
    losses = []
    for _ in range(200):
        fresh, loss = lora_train_step(model, fresh, batch, 1e-2, sched)
        losses.append(loss)
    final = lora_loss_and_grads(model, fresh, batch, sched)[0]
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and final < losses[0] and elapsed < 300
    verdict("6", ok, f"{checked} entries, max rel err {worst:.1e}; fixed-batch loss {losses[0]:.4f} -> {final:.4f}; {elapsed:.1f}s")


# -- 7 -------------------------------------------------------------------------
def test_criterion_7a_blur_gap(trained_dit, verdict):
    start = time.perf_counter()
    codec = default_codec()
    direct, cascade = [], []
    for seed in SEEDS:
        cfg = CascadeConfig(prompt=SCENE_PROMPT, seed=seed, stages=[StageConfig(level=2, upsample_mode="rgb")])
        direct.append(hf_energy_ratio(codec.decode(direct_sample(cfg, trained_dit, 2).data)))
        cascade.append(hf_energy_ratio(run_cascade(cfg, trained_dit).rgb))
    d, c = float(np.mean(direct)), float(np.mean(cascade))
    verdict("7a", d < c, f"mean hf_energy_ratio direct {d:.4f} vs cascade {c:.4f} over {len(SEEDS)} seeds; {time.perf_counter() - start:.0f}s")


def test_criterion_7b_repetition_gap(schedule, verdict):
    start = time.perf_counter()
    model = PeriodicBiasUNet(schedule)
    codec = default_codec()
    direct, cascade = [], []
    for seed in SEEDS:
        cfg = CascadeConfig(
            backbone="unet",
            num_steps=20,
            seed=seed,
            stages=[
                StageConfig(level=2, dilation=DilationPolicy(2), fusion=FusionConfig()),
                StageConfig(level=4, dilation=DilationPolicy(4), fusion=FusionConfig()),
            ],
        )
        direct.append(repetition_score(codec.decode(direct_sample(cfg, model, 4).data), 32))
        cascade.append(repetition_score(run_cascade(cfg, model).rgb, 32))
    ok = min(direct) >= 0.8 and max(cascade) <= 0.5
    verdict("7b", ok, f"repetition direct min {min(direct):.3f}, cascade max {max(cascade):.3f}; {time.perf_counter() - start:.0f}s")


# -- 8 -------------------------------------------------------------------------
def test_criterion_8_anchoring(trained_dit, verdict):
    def corr(a, b):
        return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])

    means = {}
    for alpha in (0.5, 1.0, 2.0, 4.0):
        vals = []
        for seed in SEEDS:
            cfg = CascadeConfig(prompt=SCENE_PROMPT, seed=seed, stages=[StageConfig(level=2, upsample_mode="rgb", alpha=alpha)])
            st = run_cascade(cfg, trained_dit).stages[1]
            vals.append(corr(gaussian_lowpass(st.latent.data, 2.0), gaussian_lowpass(st.anchor, 2.0)))
        means[alpha] = float(np.mean(vals))
    seq = [means[a] for a in sorted(means)]
    ok = means[1.0] >= 0.9 and all(b < a for a, b in zip(seq, seq[1:]))
    verdict("8", ok, "mean corr " + ", ".join(f"alpha {a:g}: {v:.3f}" for a, v in means.items()))


# -- 9 -------------------------------------------------------------------------
DETERMINISM_CONFIGS = {
    "unet": {
        "backbone": "unet",
        "seed": 11,
        "base": {"height": 8, "width": 8, "num_steps": 4},
        "stages": [
            {"level": 2, "dilation": {}, "fusion": {"mode": "fused"}},
            {"level": 4, "k_fraction": 0.5, "dilation": {}, "fusion": {"mode": "fused"}},
        ],
    },
    "dit": {
        "task": "t2v",
        "seed": 12,
        "base": {"height": 8, "width": 8, "frames": 2, "num_steps": 4},
        "stages": [{"level": 2, "shift": 2.0}],
    },
}


def run_generate(tmp_path: Path, name: str, config: Path, threads: int, monkeypatch) -> dict[str, bytes]:
    work = tmp_path / name
    work.mkdir()
    monkeypatch.chdir(work)
    code = main(["generate", "--config", str(config), "--out", "run", "--no-timestamp", "--threads", str(threads)])
    assert code == 0
    return {p.name: p.read_bytes() for p in sorted((work / "run").iterdir())}


def test_criterion_9_determinism(tmp_path, monkeypatch, verdict):
    mismatches = []
    for key, data in DETERMINISM_CONFIGS.items():
        config = tmp_path / f"{key}.json"
        config.write_text(json.dumps(data))
        runs = {
            (threads, rep): run_generate(tmp_path, f"{key}_{threads}_{rep}", config, threads, monkeypatch)
            for threads in (1, 4)
            for rep in (0, 1)
        }
        ref = runs[(1, 0)]
        assert "report.json" in ref and any(n.endswith(".ppm") for n in ref)
        for run_key, files in runs.items():
            if files != ref:
                mismatches.append((key, run_key))
    verdict("9", not mismatches, f"{len(DETERMINISM_CONFIGS)} configs x threads 1,4 x 2 runs byte-identical {mismatches or ''}")


# -- 10 ------------------------------------------------------------------------
def test_criterion_10_formats(tmp_path, monkeypatch, data_dir, verdict):
    pixels = np.array(
        [[[255, 0, 0], [0, 255, 0], [0, 0, 255]], [[255, 255, 255], [128, 128, 128], [0, 0, 0]]], dtype=np.uint8
    )
    golden = (data_dir / "fixture_3x2.ppm").read_bytes()
    ppm_ok = encode_ppm(pixels) == golden and np.array_equal(read_ppm(data_dir / "fixture_3x2.ppm"), pixels)

    round_trip = all(parse_config(parse_config(p.read_text()).dumps()).to_dict() == parse_config(p.read_text()).to_dict() for p in CONFIGS)

    schema_errors = []
    for p in CONFIGS:
        data = json.loads(p.read_text())
        data["base"] = {**data.get("base", {}), "num_steps": 2}
        cfg = tmp_path / p.name
        cfg.write_text(json.dumps(data))
        monkeypatch.chdir(tmp_path)
        assert main(["generate", "--config", str(cfg), "--out", p.stem]) == 0
        report = json.loads((tmp_path / p.stem / "report.json").read_text())
        try:
            jsonschema.validate(report, REPORT_SCHEMA)
        except jsonschema.ValidationError as exc:
            schema_errors.append(f"{p.stem}: {exc.message}")
        for stage in report["stages"]:
            for frame in stage["frames"]:
                for name in frame["files"]:
                    raw = (tmp_path / p.stem / name).read_bytes()
                    h, w = stage["rgb_shape"][-2:]
                    if not raw.startswith(b"P6\n%d %d\n255\n" % (w, h)) or len(raw) != len(b"P6\n%d %d\n255\n" % (w, h)) + 3 * w * h:
                        schema_errors.append(f"{p.stem}/{name}: bad PPM layout")
    ok = ppm_ok and round_trip and not schema_errors
    verdict("10", ok, f"ppm fixture {ppm_ok}, config round trip {round_trip} ({len(CONFIGS)} files), report schema {schema_errors or 'valid'}")
