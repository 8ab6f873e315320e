"""Acceptance suite: one test per shipped-quality criterion.

Each test prints a single pass/fail line (visible with ``pytest -s`` or
on failure). Tolerances are pinned here, not configurable.
"""

import time
from contextlib import contextmanager
import numpy as np

from vapsr import analysis, autograd as ag, metrics
from vapsr.archive import from_bytes, to_bytes
from vapsr.autograd import (
    GradTape,
    Param,
    l1_loss,
    make_overfit_patch,
    train_toy,
)
from vapsr.errors import ArchiveError
from vapsr.model import PRESETS, ModelConfig, build
from vapsr.nn_ops import ConvSpec, PixelNormParams, conv2d, pixel_norm
from vapsr.tensor import Tensor

from conftest import gradcheck_op, rng
from oracles import conv2d_direct, psnr_loops, ssim_windows


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except Exception:
        print(f"[criterion {number}] FAIL: {description}")
        raise
    print(f"[criterion {number}] PASS: {description}")


# ---------------------------------------------------------------------------


def test_criterion_1_parameter_counts(tmp_path):
    with criterion(1, "parameter counts reproduce the published totals"):
        start = time.perf_counter()
        checks = [
            ("vapsr_x4", 342_000, 0.02), ("vapsr_x3", 337_000, 0.02),
            ("vapsr_x2", 329_000, 0.02), ("vapsr_s", 155_000, 0.02),
            ("roadmap_vi", 241_100, 0.03), ("roadmap_vi_plus", 222_700, 0.03),
            ("roadmap_vi_pp", 152_200, 0.03), ("roadmap_vii", 156_000, 0.03),
            ("rf_k5_b11", 152_000, 0.03), ("rf_k5_b12", 164_000, 0.03),
            ("rf_k9_b9", 161_000, 0.03), ("rf_k11_b8", 166_000, 0.03),
        ]
        for name, target, tol in checks:
            got = analysis.param_count(PRESETS[name])
            dev = abs(got - target) / target
            assert dev <= tol, f"{name}: {got} params vs target {target} ({100*dev:.2f}%)"
        assert time.perf_counter() - start < 1.0, "parameter accounting exceeded 1 s"

        # the same totals must surface through the analyze CLI report path
        import contextlib
        import csv
        import io

        from vapsr.cli import main

        with contextlib.redirect_stdout(io.StringIO()):
            assert main(["analyze", "--preset", "vapsr_x4", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "report.csv") as fh:
            total = [r for r in csv.reader(fh) if r and r[0] == "TOTAL"][0]
        assert abs(int(total[1]) - 342_000) / 342_000 <= 0.02


def test_criterion_2_multi_adds():
    with criterion(2, "Multi-Adds reproduce the published totals at 1280x720 GT"):
        start = time.perf_counter()
        checks = [
            ("vapsr_x4", 19.5e9), ("vapsr_s", 9.0e9),
            ("vapsr_x3", 33.6e9), ("vapsr_x2", 74.0e9),
        ]
        for name, target in checks:
            got = analysis.multi_adds(PRESETS[name])
            dev = abs(got - target) / target
            assert dev <= 0.05, f"{name}: {got/1e9:.3f}G vs target {target/1e9}G ({100*dev:.2f}%)"
        assert time.perf_counter() - start < 1.0, "Multi-Adds accounting exceeded 1 s"


def test_criterion_3_receptive_fields():
    with criterion(3, "receptive-field arithmetic exact + gradient-support probe"):
        assert analysis.receptive_field([(5, 1), (3, 3)]) == 11
        assert analysis.receptive_field([(5, 1), (5, 3)]) == 17
        assert analysis.receptive_field([(7, 3)]) == 19

        # empirical probe: with positive attention weights, the input
        # pixels influencing one output pixel span exactly rf x rf
        cfg = ModelConfig(
            scale=4, n_blocks=1, width=3, expand_width=3,
            attention_order="1-5-7", attn_kernel=5, attn_dilation=3,
            tail_groups=1, up_layers=((48, 4),), variant_tag="probe",
        )
        rf = analysis.attention_receptive_field(cfg)
        assert rf == 17
        net = build(cfg, seed=0)
        gen = rng(0)
        params = dict(net.params)
        for name in list(params):
            if ".attn" in name and name.endswith(".w"):
                pos = np.abs(gen.normal(size=params[name].shape)) + 0.1
                pos.flags.writeable = False
                params[name] = pos.astype(np.float64)
            else:
                params[name] = params[name].astype(np.float64)
        net.set_params(params)

        side = 23
        x = Tensor(gen.uniform(0.5, 1.0, (1, 3, side, side)), copy=False)
        tape = GradTape()
        net.forward_attention_branch(0, x, tape)
        upstream = np.zeros((1, 3, side, side))
        upstream[0, :, side // 2, side // 2] = 1.0
        _, input_grad = tape.backward(Tensor(upstream, copy=False))
        support = np.abs(input_grad.data[0]).sum(axis=0) > 0.0
        rows = np.flatnonzero(support.any(axis=1))
        cols = np.flatnonzero(support.any(axis=0))
        assert rows.size == rf and cols.size == rf, (rows.size, cols.size)
        assert support.sum() == rf * rf  # a full square, no holes


def _conv_case(spec):
    def apply(tape, v, params):
        bias = Param("b", params["b"]) if spec.has_bias else None
        return ag.conv2d(tape, v, spec, Param("w", params["w"]), bias, "conv")
    return apply


def test_criterion_4_gradients_match_finite_differences():
    with criterion(4, "analytic gradients match central differences (rel <= 1e-4)"):
        start = time.perf_counter()
        seeds = range(10)

        conv_kinds = {
            "dense": ConvSpec(4, 6, 3),
            "grouped": ConvSpec(4, 6, 3, groups=2),
            "depthwise": ConvSpec(4, 4, 5, groups=4),
            "dilated_depthwise": ConvSpec(4, 4, 5, dilation=3, groups=4),
        }
        for kind, spec in conv_kinds.items():
            for seed in seeds:
                gen = rng(1000 + seed)
                x = gen.normal(size=(1, spec.in_channels, 6, 6))
                params = {"w": gen.normal(size=spec.weight_shape),
                          "b": gen.normal(size=spec.out_channels)}
                gradcheck_op(_conv_case(spec), x, params, seed=seed)

        for seed in seeds:  # gelu
            x = rng(2000 + seed).normal(size=(1, 4, 6, 6))
            gradcheck_op(lambda t, v, p: ag.gelu(t, v, "g"), x, {}, seed=seed)

        for seed in seeds:  # pixel shuffle
            x = rng(3000 + seed).normal(size=(1, 8, 4, 4))
            gradcheck_op(lambda t, v, p: ag.pixel_shuffle(t, v, 2, "s"), x, {}, seed=seed)

        for seed in seeds:  # pixel norm
            gen = rng(4000 + seed)
            x = gen.normal(size=(1, 6, 4, 4))
            params = {"gamma": gen.normal(size=6), "beta": gen.normal(size=6)}
            gradcheck_op(
                lambda t, v, p: ag.pixel_norm(t, v, Param("gamma", p["gamma"]),
                                              Param("beta", p["beta"]), 1e-6, "n"),
                x, params, seed=seed)

        for seed in seeds:  # attention product, both operands from the input
            x = rng(5000 + seed).normal(size=(1, 4, 5, 5))
            gradcheck_op(
                lambda t, v, p: ag.mul(t, ag.gelu(t, v, "b"), v, "gate"),
                x, {}, seed=seed)

        for seed in seeds:  # L1 loss (inputs kept away from the |.| kink)
            gen = rng(6000 + seed)
            pred = gen.normal(size=(1, 3, 5, 5))
            target = pred + gen.choice([-1.0, 1.0], size=pred.shape) \
                * gen.uniform(0.05, 1.0, size=pred.shape)

            def loss_of(arr):
                return l1_loss(Tensor(arr, copy=False), Tensor(target, copy=False))[0]

            _, grad = l1_loss(Tensor(pred, copy=False), Tensor(target, copy=False))
            fd = ag.finite_difference_gradient(loss_of, pred, step=1e-4)
            assert ag.relative_error(grad.data, fd) <= 1e-4

        # full block on a 1x8x6x6 input: every parameter and the input
        cfg = ModelConfig(
            scale=4, n_blocks=1, width=8, expand_width=8,
            attention_order="1-5-7", attn_kernel=5, attn_dilation=3,
            tail_groups=1, up_layers=((48, 4),), variant_tag="gradcheck",
        )
        for seed in seeds:
            gen = rng(7000 + seed)
            net = build(cfg, seed=seed)
            params = {k: gen.normal(size=v.shape) * 0.5
                      for k, v in net.params.items() if k.startswith("block00")}
            x = gen.normal(size=(1, 8, 6, 6))
            probe = gen.normal(size=(1, 8, 6, 6))

            def run_block(x_arr, p_arrs):
                trial = {k: np.asarray(v, dtype=np.float64) for k, v in net.params.items()}
                trial.update({k: np.asarray(a, dtype=np.float64) for k, a in p_arrs.items()})
                n = build(cfg, params=trial)
                return float((n.forward_block(0, Tensor(x_arr, copy=False)).data * probe).sum())

            trial = {k: np.asarray(v, dtype=np.float64) for k, v in net.params.items()}
            trial.update({k: np.asarray(a, dtype=np.float64) for k, a in params.items()})
            net64 = build(cfg, params=trial)
            tape = GradTape()
            net64.forward_block(0, Tensor(x, copy=False), tape)
            pgrads, xgrad = tape.backward(Tensor(probe, copy=False))

            fd_x = ag.finite_difference_gradient(lambda a: run_block(a, params), x)
            assert ag.relative_error(xgrad.data, fd_x) <= 1e-4, "block input grad"
            for name in params:
                fd = ag.finite_difference_gradient(
                    lambda a, n=name: run_block(x, {**params, n: a}), params[name])
                assert ag.relative_error(pgrads[name], fd) <= 1e-4, f"block {name}"

        elapsed = time.perf_counter() - start
        assert elapsed < 120.0, f"gradient checks took {elapsed:.1f}s (> 2 min)"


def test_criterion_5_pixel_norm_statistics():
    with criterion(5, "pixel norm output is standardized per pixel"):
        for seed in range(5):
            gen = rng(seed)
            c = int(gen.integers(4, 33))
            x = Tensor(gen.normal(0.0, 1.5, size=(2, c, 7, 7)).astype(np.float32),
                       copy=False)
            out = pixel_norm(x, PixelNormParams(np.ones(c), np.zeros(c), 1e-6))
            data = out.data.astype(np.float64)
            mean = data.mean(axis=1)
            var = data.var(axis=1)
            assert np.abs(mean).max() <= 1e-6
            assert np.abs(var - 1.0).max() <= 1e-4


def test_criterion_6_toy_overfit():
    with criterion(6, "2-block/8-channel x4 single-patch overfit + EMA PSNR"):
        cfg = PRESETS["toy_x4"]
        assert cfg.n_blocks == 2 and cfg.width == 8 and cfg.scale == 4
        lr_t, hr_t = make_overfit_patch(cfg.scale, 16, seed=0)
        assert lr_t.shape == (1, 3, 16, 16) and hr_t.shape == (1, 3, 64, 64)

        result = train_toy(cfg, lr_t, hr_t, 2000, lr=1e-3, seed=0)
        first = result.history[0][1]
        last = result.history[-1][1]
        assert last <= 0.1 * first, f"L1 {first:.4f} -> {last:.4f} misses the 10x drop"

        ema_net = build(cfg, params=result.ema_params)
        pred = ema_net.forward(lr_t)
        y_pred = metrics.rgb_to_y(np.clip(pred.data[0], 0.0, 1.0))
        y_ref = metrics.rgb_to_y(hr_t.data[0])
        psnr_db = metrics.psnr(y_pred, y_ref, border_crop=cfg.scale)
        assert psnr_db > 30.0, f"EMA Y-PSNR {psnr_db:.2f} dB <= 30 dB"


def test_criterion_7_oracle_equivalence():
    with criterion(7, "independent oracles agree (conv, PSNR, SSIM, 1/255 fixture)"):
        gen = rng(99)
        cases = 0
        for _ in range(24):
            g = int(gen.choice([1, 2, 4]))
            cg_in = int(gen.integers(1, 4))
            cg_out = int(gen.integers(1, 4))
            cin, cout = g * cg_in, g * cg_out
            k = int(gen.choice([1, 3, 5]))
            d = int(gen.choice([1, 2, 3])) if k > 1 else 1
            spec = ConvSpec(cin, cout, k, dilation=d, groups=g)
            x = gen.normal(size=(int(gen.integers(1, 3)), cin, 6, 6))
            w = gen.normal(size=spec.weight_shape)
            b = gen.normal(size=cout)
            out = conv2d(Tensor(x.astype(np.float32), copy=False), spec,
                         Tensor(w.astype(np.float32), copy=False), b.astype(np.float32))
            ref = conv2d_direct(x.astype(np.float32).astype(np.float64),
                                w.astype(np.float32).astype(np.float64),
                                b.astype(np.float32).astype(np.float64),
                                dilation=d, groups=g)
            assert np.abs(out.data - ref).max() <= 1e-5
            cases += 1
        assert cases >= 20

        a = gen.uniform(0, 1, (13, 14))
        b2 = gen.uniform(0, 1, (13, 14))
        assert abs(metrics.psnr(a, b2) - psnr_loops(a, b2)) <= 1e-6
        close = np.clip(a + gen.normal(0, 0.03, a.shape), 0, 1)
        assert abs(metrics.ssim(a, close) - ssim_windows(a, close)) <= 1e-6

        base = np.full((16, 16), 0.5)
        assert abs(metrics.psnr(base, base + 1.0 / 255.0) - 48.13) <= 0.01


def test_criterion_8_archive_robustness():
    with criterion(8, "archive round trip bitwise + 10^4 fuzz without crashes"):
        net = build(PRESETS["toy_x4"], seed=0)
        blob = to_bytes(net)
        loaded = from_bytes(blob)
        for name in net.params:
            assert loaded.params[name].tobytes() == net.params[name].tobytes()
        assert to_bytes(loaded) == blob

        gen = rng(2024)
        structured = 0
        for _ in range(10_000):
            data = bytearray(blob)
            kind = gen.integers(0, 4)
            if kind == 0:
                data[int(gen.integers(0, len(data)))] ^= int(gen.integers(1, 256))
            elif kind == 1:
                data = data[: int(gen.integers(0, len(data)))]
            elif kind == 2:
                data += bytes(gen.integers(0, 256, size=int(gen.integers(1, 32)),
                                           dtype=np.uint8))
            else:
                pos = int(gen.integers(0, len(data)))
                run = int(gen.integers(1, 16))
                data[pos : pos + run] = b"\x00" * min(run, len(data) - pos)
                if bytes(data) == blob:  # zero run hit an all-zero region
                    data[pos] ^= 0xFF
            try:
                from_bytes(bytes(data))
            except ArchiveError:
                structured += 1
            # anything else (or a successful load of damaged bytes) fails
        assert structured == 10_000


def test_criterion_9_cli_determinism(tmp_path):
    with criterion(9, "every CLI subcommand is byte-identical across re-runs"):
        from vapsr.cli import main
        from vapsr.png_io import save_image
        import contextlib
        import io

        lr_path = tmp_path / "lr.png"
        save_image(lr_path, rng(0).uniform(0, 1, (3, 12, 12)))

        def run_twice(argv_fn, capture_stdout=False):
            outputs = []
            for tag in ("a", "b"):
                run_dir = tmp_path / f"{argv_fn.__name__}_{tag}"
                run_dir.mkdir(exist_ok=True)
                buf = io.StringIO()
                with contextlib.redirect_stdout(buf):
                    assert main(argv_fn(run_dir)) == 0
                files = {p.name: p.read_bytes()
                         for p in sorted(run_dir.rglob("*")) if p.is_file()}
                outputs.append((files, buf.getvalue() if capture_stdout else None))
            assert outputs[0] == outputs[1], f"{argv_fn.__name__} not deterministic"

        def init_weights(d):
            return ["init-weights", "--preset", "toy_x4", "--seed", "7",
                    "--output", str(d / "w.vapw")]

        run_twice(init_weights)

        weights = tmp_path / "shared.vapw"
        with contextlib.redirect_stdout(io.StringIO()):
            main(["init-weights", "--preset", "toy_x4", "--seed", "1",
                  "--output", str(weights)])

        def upscale(d):
            return ["upscale", "--input", str(lr_path), "--weights", str(weights),
                    "--output", str(d / "sr.png")]

        def analyze(d):
            return ["analyze", "--catalog", "roadmap", "--out", str(d)]

        def analyze_preset(d):
            return ["analyze", "--preset", "vapsr_x4", "--out", str(d)]

        def train(d):
            return ["train-toy", "--out", str(d), "--iterations", "6",
                    "--seed", "11", "--patch", "8"]

        def calibrate(d):
            return ["calibrate", "--out", str(d)]

        for fn in (upscale, analyze, analyze_preset, train, calibrate):
            run_twice(fn)

        def compare(d):
            return ["compare", str(lr_path), str(lr_path)]

        run_twice(compare, capture_stdout=True)
