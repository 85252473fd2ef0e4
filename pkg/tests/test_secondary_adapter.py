"""Integration with the reference adapter over a real socket.

These tests need node and the built adapter (adapter/dist); they skip
cleanly when either is missing, and the primary suite never depends on
them.
"""

import shutil
import socket
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from diffaudit import protocol
from diffaudit.config import load_config
from diffaudit.frequency import PatchGrid, mask_from_image
from diffaudit.predictors import ConstantPredictor, ExternalPredictor
from diffaudit.diffusion import reconstruct_at_step, traverse_to_step
from diffaudit.similarity import mia_score

ADAPTER_MAIN = Path(__file__).resolve().parent.parent / "adapter" / "dist" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not ADAPTER_MAIN.exists(),
    reason="node or built adapter not available")


class AdapterProcess:
    def __init__(self, model: str):
        self.proc = subprocess.Popen(
            ["node", str(ADAPTER_MAIN), "--model", model, "--port", "0"],
            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
        line = self.proc.stdout.readline().strip()
        if not line.startswith("listening on "):
            self.stop()
            raise RuntimeError(f"unexpected adapter banner: {line!r}")
        self.endpoint = line.split()[2]

    def alive(self) -> bool:
        return self.proc.poll() is None

    def stop(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


@pytest.fixture()
def adapter():
    procs = []

    def start(model: str) -> AdapterProcess:
        proc = AdapterProcess(model)
        procs.append(proc)
        return proc

    yield start
    for proc in procs:
        proc.stop()


class TestAdapterScores:
    def test_constant_model_reproduces_in_process_scores(self, adapter, rng):
        server = adapter("constant:0.3")
        config = load_config(None, predictor=f"external:{server.endpoint}",
                             total_steps=100, sampling_steps=10, attack_step=20)
        schedule = config.schedule()
        local = ConstantPredictor(0.3)
        grid = PatchGrid(8)
        with ExternalPredictor.from_endpoint(server.endpoint) as remote:
            for i in range(5):
                x0 = rng.uniform(-1, 1, (16, 16, 1))
                mask = mask_from_image(x0, config.band(), grid)
                records = []
                for predictor in (local, remote):
                    x_t = traverse_to_step(x0, 20, 10, predictor, schedule)
                    x_tilde = reconstruct_at_step(x_t, 20, 10, predictor, schedule)
                    records.append(mia_score(x_t, x_tilde, mask,
                                             config.ssim_params(),
                                             image_id=f"img{i}"))
                assert abs(records[0].mia_score - records[1].mia_score) <= 1e-6
                assert abs(records[0].ssim_term - records[1].ssim_term) <= 1e-6
                assert abs(records[0].l2_term - records[1].l2_term) <= 1e-6

    def test_batch_roundtrip_equals_per_image(self, adapter, rng):
        server = adapter("scale:0.5")
        schedule = load_config(None, predictor="constant:0",
                               total_steps=100, sampling_steps=10,
                               attack_step=20).schedule()
        xs = [rng.uniform(-1, 1, (8, 8, 2)) for _ in range(100)]
        with ExternalPredictor.from_endpoint(server.endpoint) as remote:
            batched = remote.predict_batch(xs, 5, schedule)
            singles = [remote.predict(x, 5, schedule) for x in xs]
        for b, s in zip(batched, singles):
            assert np.array_equal(b, s)


class TestAdapterRobustness:
    def test_fuzzed_frames_never_crash(self, adapter, rng):
        server = adapter("zero")
        host, port = server.endpoint.rsplit(":", 1)
        for trial in range(30):
            with socket.create_connection((host, int(port)), timeout=5) as sock:
                length = int(rng.integers(1, 120))
                garbage = rng.integers(0, 256, length, dtype=np.int64) \
                    .astype(np.uint8).tobytes()
                sock.sendall(length.to_bytes(4, "little") + garbage)
                body = protocol.read_frame(sock)
                with pytest.raises(protocol.RemoteStatusError):
                    protocol.decode_response(body, (1, 1, 2, 2))
        assert server.alive()
        # Still serves real traffic afterwards.
        with ExternalPredictor.from_endpoint(server.endpoint) as remote:
            out = remote.roundtrip(1, np.zeros((1, 1, 4, 4)))
        assert np.array_equal(out, np.zeros((1, 1, 4, 4)))

    def test_truncated_then_valid_on_same_connection(self, adapter):
        server = adapter("zero")
        host, port = server.endpoint.rsplit(":", 1)
        with socket.create_connection((host, int(port)), timeout=5) as sock:
            bad = b"FCRE" + (1).to_bytes(2, "little") + b"\x00\x00"
            sock.sendall(len(bad).to_bytes(4, "little") + bad)
            with pytest.raises(protocol.RemoteStatusError):
                protocol.decode_response(protocol.read_frame(sock), (1,))
            good = protocol.encode_request(3, np.zeros((1, 1, 2, 2)))
            sock.sendall(good)
            out = protocol.decode_response(protocol.read_frame(sock), (1, 1, 2, 2))
            assert np.array_equal(out, np.zeros((1, 1, 2, 2)))
        assert server.alive()

    def test_verify_protocol_cli_against_adapter(self, adapter):
        from click.testing import CliRunner

        from diffaudit.cli import main

        server = adapter("constant:0.1")
        result = CliRunner().invoke(main, [
            "verify-protocol", "--endpoint", server.endpoint, "--shape", "1,8,8"])
        assert result.exit_code == 0, result.output
        assert "ok:" in result.output


class TestSecondaryAcceptance:
    def test_secondary_acceptance_criterion(self, adapter, rng):
        # Constant adapter matches in-process within the 32-bit wire budget;
        # malformed frames answered without crashing; batch == singles.
        server = adapter("constant:0.25")
        schedule = load_config(None, predictor="constant:0",
                               total_steps=100, sampling_steps=10,
                               attack_step=20).schedule()
        local = ConstantPredictor(0.25)
        with ExternalPredictor.from_endpoint(server.endpoint) as remote:
            x = rng.uniform(-1, 1, (16, 16, 1))
            a = local.predict(x, 10, schedule)
            b = remote.predict(x, 10, schedule)
            assert np.abs(a - b).max() <= 1e-6
            xs = [rng.uniform(-1, 1, (8, 8, 1)) for _ in range(16)]
            batched = remote.predict_batch(xs, 7, schedule)
            singles = [remote.predict(img, 7, schedule) for img in xs]
            for u, v in zip(batched, singles):
                assert np.array_equal(u, v)

        host, port = server.endpoint.rsplit(":", 1)
        with socket.create_connection((host, int(port)), timeout=5) as sock:
            sock.sendall((12).to_bytes(4, "little") + b"x" * 12)
            with pytest.raises(protocol.RemoteStatusError):
                protocol.decode_response(protocol.read_frame(sock), (1,))
        assert server.alive()
        print("ACCEPTANCE secondary-protocol-conformance: PASS")
