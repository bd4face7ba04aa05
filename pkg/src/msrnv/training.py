"""Two-phase GAN training over the rate ladder, at configurable scale.

Phase one optimizes generators alone on the spectral objective; phase two
alternates one generator and one discriminator update per step (the
discriminator trains on the fakes produced before that step's generator
update). The learning rate halves once, after ``decay_step`` steps.

Corpus items whose native rate sits below the top ladder rate contribute
loss terms only for the stages they can supply targets for; parameters of
higher stages are untouched by such items, bit for bit. Items of different
usable depth coexist in one batch (rows are ordered so each stage sees a
prefix of the batch).

Reproducibility: every random draw derives from (seed, step, slot), so a
run is a pure function of its config; resuming from a checkpoint at step k
reproduces the uninterrupted run exactly. One optimizer step is a serial
critical section; batch assembly is deterministic for a fixed worker
layout (this implementation assembles in-line).
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .adversarial import (
    DiscriminatorSpec,
    STFTResolutionSet,
    StageLossRecord,
    build_discriminators,
    discriminator_loss,
    generator_loss,
    stft_loss_terms,
)
from .audio import Waveform, read_wav, write_wav
from .autograd import Tensor
from .cascade import GeneratorCascade, GeneratorSpec, build_cascade
from .errors import CheckpointError, TrainingDiverged
from .features import (
    FeatureConfig,
    MelSpectrogram,
    apply_stats,
    extract_logmel,
    fit_stats,
    read_features,
    upsample_features,
    write_features,
    write_stats,
)
from .nn import RAdam
from .resample import RateLadder, resample_array

CHECKPOINT_MAGIC = b"MSRNV"
CHECKPOINT_VERSION = 1
TELEMETRY_HEADER = "step,lr,stage,loss_aux,loss_adv,loss_dis"


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run depends on; two presets cover full and desk scale."""

    ladder: tuple[int, ...] = (1000, 2000, 4000, 8000, 16000, 24000, 48000)
    # generator / discriminator shapes
    gen_layers: int = 10
    gen_cycle: int = 10
    gen_channels: int = 64
    disc_layers: int = 10
    disc_channels: int = 64
    kernel: int = 3
    # conditioning features
    sample_rate: int = 48000
    n_mels: int = 80
    mel_fmin: float = 80.0
    mel_fmax: float = 7600.0
    mel_fft: int = 2048
    mel_win: int = 2048
    mel_hop: int = 240
    # spectral-loss resolutions (defined at stft_reference_rate, scaled per stage)
    stft_base: tuple[tuple[int, int, int], ...] = (
        (2048, 1200, 240),
        (4096, 2400, 480),
        (1024, 480, 100),
    )
    stft_reference_rate: int = 48000
    # optimization
    lambda_adv: float = 1.0
    batch_size: int = 8
    clip_seconds: float = 0.5
    total_steps: int = 400_000
    generator_only_steps: int = 200_000
    decay_step: int = 300_000
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-6
    seed: int = 0
    telemetry_every: int = 10
    checkpoint_every: int = 0  # 0: only the final checkpoint
    manifest: str | None = None

    def __post_init__(self) -> None:
        RateLadder(self.ladder)  # validates ordering/ratios
        if self.sample_rate != self.ladder[-1]:
            raise ValueError("sample_rate must equal the top ladder rate")
        if not 0 <= self.generator_only_steps <= self.total_steps:
            raise ValueError("generator_only_steps must be within total_steps")
        if not 0 <= self.decay_step <= self.total_steps:
            raise ValueError("decay_step must be within total_steps")
        if self.lambda_adv < 0:
            raise ValueError("lambda_adv must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        grid = self.grid_rate
        if abs(self.clip_seconds * grid - round(self.clip_seconds * grid)) > 1e-9:
            raise ValueError(
                f"clip_seconds={self.clip_seconds} is not aligned to the "
                f"ladder grid ({grid} Hz)"
            )
        for rate in self.ladder:
            n = self.clip_seconds * rate
            if abs(n - round(n)) > 1e-9:
                raise ValueError(f"clip length not integral at {rate} Hz")
        if self.sample_rate % self.mel_hop != 0:
            raise ValueError("mel_hop must divide sample_rate (integer frame rate)")

    @property
    def grid_rate(self) -> int:
        return math.gcd(*self.ladder)

    def mel_config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self.sample_rate,
            fft_size=self.mel_fft,
            win_length=self.mel_win,
            hop=self.mel_hop,
            n_mels=self.n_mels,
            fmin=self.mel_fmin,
            fmax=self.mel_fmax,
        )

    def generator_spec(self) -> GeneratorSpec:
        return GeneratorSpec(
            layers=self.gen_layers,
            cycle=self.gen_cycle,
            residual_channels=self.gen_channels,
            kernel=self.kernel,
        )

    def discriminator_spec(self) -> DiscriminatorSpec:
        return DiscriminatorSpec(
            layers=self.disc_layers, channels=self.disc_channels, kernel=self.kernel
        )

    def resolution_set(self) -> STFTResolutionSet:
        return STFTResolutionSet(self.stft_base, self.stft_reference_rate)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["ladder"] = tuple(d["ladder"])
        d["betas"] = tuple(d["betas"])
        d["stft_base"] = tuple(tuple(t) for t in d["stft_base"])
        return TrainConfig(**d)


def paper_config(**overrides) -> TrainConfig:
    """Full-scale defaults: 7-rate ladder to 48 kHz, 400k steps."""
    return replace(TrainConfig(), **overrides) if overrides else TrainConfig()


def desk_config(**overrides) -> TrainConfig:
    """Desktop-scale defaults: 4-rate ladder to 8 kHz, small stacks, 3k steps."""
    cfg = TrainConfig(
        ladder=(1000, 2000, 4000, 8000),
        gen_layers=5,
        gen_cycle=5,
        gen_channels=16,
        disc_layers=5,
        disc_channels=16,
        sample_rate=8000,
        mel_fmax=3800.0,
        mel_fft=342,
        mel_win=342,
        mel_hop=40,
        batch_size=4,
        clip_seconds=0.25,
        total_steps=3000,
        generator_only_steps=2000,
        decay_step=2250,
        telemetry_every=10,
    )
    return replace(cfg, **overrides) if overrides else cfg


PRESETS = {"paper": paper_config, "desk": desk_config}


# -- dataset ------------------------------------------------------------------------


@dataclass
class DatasetEntry:
    """One utterance: audio at its native rate plus its conditioning features."""

    uid: str
    waveform: np.ndarray  # float32, native rate
    native_rate: int
    mel: MelSpectrogram
    targets: list[np.ndarray] = field(default_factory=list, repr=False)
    conds: list[np.ndarray] = field(default_factory=list, repr=False)
    n_grid: int = 0
    max_stage: int = 0  # set when attached to a Dataset

    @property
    def duration_seconds(self) -> float:
        return len(self.waveform) / self.native_rate


class Dataset:
    def __init__(self, entries: Sequence[DatasetEntry], ladder: RateLadder):
        if not entries:
            raise ValueError("dataset is empty")
        self.entries = list(entries)
        self.ladder = ladder
        for e in self.entries:
            e.max_stage = ladder.max_stage_for(e.native_rate)

    def __len__(self) -> int:
        return len(self.entries)


def load_manifest(path: str | Path) -> list[tuple[Path, int, Path]]:
    """Manifest rows: audio path, native rate, feature path (tab-separated)."""
    rows = []
    base = Path(path).parent
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields")
        audio, rate, feats = parts
        rows.append((base / audio, int(rate), base / feats))
    return rows


def load_dataset(manifest_path: str | Path, cfg: TrainConfig) -> Dataset:
    entries = []
    for audio_path, native_rate, feats_path in load_manifest(manifest_path):
        w = read_wav(audio_path)
        if w.rate != native_rate:
            raise ValueError(
                f"{audio_path}: header rate {w.rate} != manifest rate {native_rate}"
            )
        mel = read_features(feats_path)
        entries.append(
            DatasetEntry(Path(audio_path).stem, w.samples, native_rate, mel)
        )
    return Dataset(entries, RateLadder(cfg.ladder))


def _ensure_entry_cache(entry: DatasetEntry, cfg: TrainConfig, ladder: RateLadder) -> None:
    """Per-rate targets and conditioning series for the full utterance."""
    if entry.targets:
        return
    grid = cfg.grid_rate
    duration = entry.duration_seconds
    clip_grid = round(cfg.clip_seconds * grid)
    entry.n_grid = max(clip_grid, math.floor(duration * grid))
    max_stage = ladder.max_stage_for(entry.native_rate)
    x64 = entry.waveform.astype(np.float64)
    for i, rate in enumerate(ladder):
        if i >= max_stage:
            break
        natural = round(duration * rate)
        # zero-pad utterances shorter than one clip up to the clip length
        length = max(natural, entry.n_grid * (rate // grid))
        target = resample_array(x64, entry.native_rate, rate, out_len=length)
        entry.targets.append(target.astype(np.float32))
        cond = upsample_features(entry.mel, rate, natural).values
        if length > natural:
            pad = np.repeat(cond[:, -1:], length - natural, axis=1)
            cond = np.concatenate([cond, pad], axis=1)
        entry.conds.append(cond)


# -- synthetic corpus -----------------------------------------------------------------


def make_synthetic_corpus(
    out_dir: str | Path,
    n_utts: int = 20,
    duration_s: float = 2.0,
    f0_range_hz: tuple[float, float] = (120.0, 300.0),
    seed: int = 0,
    cfg: TrainConfig | None = None,
    native_rates: Sequence[int] | None = None,
) -> Path:
    """Generate harmonic test utterances plus features and a manifest.

    Each utterance is a sum of harmonics of a slowly wandering fundamental
    (kept inside ``f0_range_hz``, which should sit below half the lowest
    ladder rate), with per-harmonic decaying amplitudes, an amplitude
    envelope, and a low noise floor. Harmonics stop at 45% of the top rate
    so the construction grid carries no content above Nyquist. Deterministic
    for a fixed seed. Returns the manifest path.
    """
    cfg = cfg or desk_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    top = cfg.ladder[-1]
    f0_lo, f0_hi = f0_range_hz
    if not 0.0 < f0_lo < f0_hi <= cfg.ladder[0] / 2:
        raise ValueError(
            f"f0 range {f0_range_hz} must sit inside (0, {cfg.ladder[0] / 2}] Hz"
        )
    records = []
    for u in range(n_utts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, u]))
        n = round(duration_s * top)
        t = np.arange(n) / top
        wobble = 0.6 * np.sin(
            2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi)
        ) + 0.4 * np.sin(
            2 * np.pi * rng.uniform(1.2, 2.5) * t + rng.uniform(0, 2 * np.pi)
        )
        f0 = np.clip(
            f0_lo + (f0_hi - f0_lo) * (0.5 + 0.5 * wobble), f0_lo, f0_hi
        )
        phase = 2 * np.pi * np.cumsum(f0) / top
        n_harm = max(1, int(math.floor(0.45 * top / f0_hi)))
        decay = rng.uniform(0.8, 1.4)
        x = np.zeros(n)
        for k in range(1, n_harm + 1):
            amp = k ** (-decay) * rng.uniform(0.7, 1.0)
            x += amp * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        ramp = min(n // 4, round(0.1 * top))
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        env[-ramp:] = env[:ramp][::-1]
        env *= 0.85 + 0.15 * np.sin(
            2 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi)
        )
        x *= env
        x += 10 ** (-45 / 20) * rng.standard_normal(n)
        x *= rng.uniform(0.6, 0.75) / np.abs(x).max()
        native = top if native_rates is None else int(native_rates[u % len(native_rates)])
        if native != top:
            x = resample_array(x, top, native)
        wav_path = out / f"utt{u:03d}.wav"
        write_wav(Waveform(x.astype(np.float32), native), wav_path)
        records.append((wav_path, native))
    # features from the files as written, normalized with corpus-wide stats
    mel_cfg = cfg.mel_config()
    mels = []
    for wav_path, native in records:
        w = read_wav(wav_path)
        mels.append(extract_logmel(w, mel_cfg.for_rate(native)))
    stats = fit_stats(mels)
    write_stats(stats, out / "feature_stats.json")
    lines = []
    for (wav_path, native), mel in zip(records, mels):
        feat_path = wav_path.with_suffix(".melf")
        write_features(apply_stats(mel, stats), feat_path)
        lines.append(f"{wav_path.name}\t{native}\t{feat_path.name}")
    manifest = out / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# -- checkpoints -----------------------------------------------------------------------


@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    arrays: dict[str, np.ndarray]
    opt_steps: dict[str, int]
    rng: dict


def save_checkpoint_file(
    path: str | Path,
    config: TrainConfig,
    step: int,
    arrays: dict[str, np.ndarray],
    opt_steps: dict[str, int],
    rng: dict,
) -> None:
    """Versioned little-endian container with a SHA-256 trailer.

    Layout: magic, version (u16), header length (u64), JSON header (sorted
    keys; array name/dtype/shape index), raw array bytes in index order,
    32-byte digest of everything before it. Saving a loaded checkpoint
    reproduces the file byte for byte.
    """
    names = sorted(arrays)
    index = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        index.append([name, arr.dtype.str, list(arr.shape)])
        blobs.append(arr.tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step": step,
        "config": config.to_dict(),
        "opt_steps": opt_steps,
        "rng": rng,
        "arrays": index,
    }
    hjson = json.dumps(header, sort_keys=True).encode()
    payload = (
        CHECKPOINT_MAGIC
        + struct.pack("<HQ", CHECKPOINT_VERSION, len(hjson))
        + hjson
        + b"".join(blobs)
    )
    digest = hashlib.sha256(payload).digest()
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(payload + digest)


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 10 + 32:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    payload, digest = raw[:-32], raw[-32:]
    if payload[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt file)")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<HQ", payload, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    off += 10
    header = json.loads(payload[off : off + hlen].decode())
    off += hlen
    arrays = {}
    for name, dtype_str, shape in header["arrays"]:
        dtype = np.dtype(dtype_str)
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = dtype.itemsize * count
        arrays[name] = (
            np.frombuffer(payload, dtype=dtype, count=count, offset=off)
            .reshape(shape)
            .copy()
        )
        off += nbytes
    if off != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after array data")
    return Checkpoint(
        config=TrainConfig.from_dict(header["config"]),
        step=int(header["step"]),
        arrays=arrays,
        opt_steps={k: int(v) for k, v in header["opt_steps"].items()},
        rng=header["rng"],
    )


# -- train state -------------------------------------------------------------------------


class TrainState:
    """Networks and optimizers for one run; serializable to a checkpoint."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.ladder = RateLadder(cfg.ladder)
        self.cascade: GeneratorCascade = build_cascade(
            self.ladder, cfg.n_mels, cfg.generator_spec(), seed=cfg.seed
        )
        self.discriminators = build_discriminators(
            self.ladder, cfg.discriminator_spec(), seed=cfg.seed
        )
        self.g_opts = [
            RAdam(dict(s.named_parameters()), cfg.lr, cfg.betas, cfg.eps)
            for s in self.cascade.stages
        ]
        self.d_opts = [
            RAdam(dict(d.named_parameters()), cfg.lr, cfg.betas, cfg.eps)
            for d in self.discriminators
        ]
        self.step = 0

    def collect_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, int]]:
        arrays: dict[str, np.ndarray] = {}
        for name, p in self.cascade.named_parameters():
            arrays[f"gen.{name}"] = p.data
        for i, d in enumerate(self.discriminators):
            for name, p in d.named_parameters():
                arrays[f"disc{i + 1}.{name}"] = p.data
        opt_steps: dict[str, int] = {}
        for i, opt in enumerate(self.g_opts):
            arrays.update(opt.state_arrays(f"opt.gen{i + 1}."))
            opt_steps[f"gen{i + 1}"] = opt.step_count
        for i, opt in enumerate(self.d_opts):
            arrays.update(opt.state_arrays(f"opt.disc{i + 1}."))
            opt_steps[f"disc{i + 1}"] = opt.step_count
        return arrays, opt_steps

    def save(self, path: str | Path) -> None:
        arrays, opt_steps = self.collect_arrays()
        save_checkpoint_file(
            path,
            self.cfg,
            self.step,
            arrays,
            opt_steps,
            rng={"seed": self.cfg.seed, "scheme": "per-step seed derivation"},
        )

    @staticmethod
    def from_checkpoint(ckpt: Checkpoint) -> "TrainState":
        state = TrainState(ckpt.config)
        state.cascade.load_arrays(ckpt.arrays, prefix="gen.")
        for i, d in enumerate(state.discriminators):
            d.load_arrays(ckpt.arrays, prefix=f"disc{i + 1}.")
        for i, opt in enumerate(state.g_opts):
            opt.load_arrays(ckpt.arrays, f"opt.gen{i + 1}.")
            opt.step_count = ckpt.opt_steps[f"gen{i + 1}"]
        for i, opt in enumerate(state.d_opts):
            opt.load_arrays(ckpt.arrays, f"opt.disc{i + 1}.")
            opt.step_count = ckpt.opt_steps[f"disc{i + 1}"]
        state.step = ckpt.step
        return state


def load_cascade(checkpoint_path: str | Path) -> tuple[GeneratorCascade, TrainConfig]:
    """Generator-only load for synthesis and benchmarking."""
    ckpt = load_checkpoint(checkpoint_path)
    state = TrainState.from_checkpoint(ckpt)
    return state.cascade, ckpt.config


# -- training loop ----------------------------------------------------------------------


@dataclass
class _Slot:
    entry: DatasetEntry
    offset_grid: int
    noise: np.ndarray
    max_stage: int


class Trainer:
    def __init__(self, state: TrainState, dataset: Dataset, out_dir: str | Path):
        if tuple(dataset.ladder.rates) != tuple(state.cfg.ladder):
            raise ValueError("dataset ladder does not match config ladder")
        self.state = state
        self.cfg = state.cfg
        self.dataset = dataset
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        res = self.cfg.resolution_set()
        self.stage_resolutions = [res.for_rate(r) for r in self.cfg.ladder]
        self.clip_grid = round(self.cfg.clip_seconds * self.cfg.grid_rate)
        self.clip_lens = [round(self.cfg.clip_seconds * r) for r in self.cfg.ladder]

    # one slot = one clip drawn for one batch row
    def _draw_slots(self, step: int) -> list[_Slot]:
        cfg = self.cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, step, 0]))
        picks = rng.integers(0, len(self.dataset), size=cfg.batch_size)
        slots = []
        for slot_idx, entry_idx in enumerate(picks):
            entry = self.dataset.entries[int(entry_idx)]
            _ensure_entry_cache(entry, cfg, self.dataset.ladder)
            item_rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, step, slot_idx + 1])
            )
            offset = int(
                item_rng.integers(0, entry.n_grid - self.clip_grid + 1)
            )
            noise = item_rng.standard_normal(self.clip_lens[0], dtype=np.float32)
            slots.append(_Slot(entry, offset, noise, entry.max_stage))  # type: ignore[attr-defined]
        slots.sort(key=lambda s: -s.max_stage)  # stable: ties keep draw order
        return slots

    def _stage_batches(
        self, slots: list[_Slot]
    ) -> tuple[list[int], list[np.ndarray], list[Tensor]]:
        grid = self.cfg.grid_rate
        max_stage = slots[0].max_stage
        counts = [sum(1 for s in slots if s.max_stage > i) for i in range(max_stage)]
        targets, conds = [], []
        for i in range(max_stage):
            rate = self.cfg.ladder[i]
            length = self.clip_lens[i]
            scale = rate // grid
            tgt = np.stack(
                [
                    s.entry.targets[i][s.offset_grid * scale :][:length]
                    for s in slots[: counts[i]]
                ]
            )
            cnd = np.stack(
                [
                    s.entry.conds[i][:, s.offset_grid * scale :][:, :length]
                    for s in slots[: counts[i]]
                ]
            )
            targets.append(tgt)
            conds.append(Tensor(cnd))
        return counts, targets, conds

    def _train_step(self, step: int) -> list[StageLossRecord]:
        cfg = self.cfg
        joint = step > cfg.generator_only_steps
        slots = self._draw_slots(step)
        counts, targets, conds = self._stage_batches(slots)
        noise = Tensor(np.stack([s.noise for s in slots])[:, None, :])

        self.state.cascade.zero_grad()
        for d in self.state.discriminators:
            d.zero_grad()
        outputs = self.state.cascade.forward_stages(noise, conds, counts)
        loss_g, records = generator_loss(
            outputs,
            targets,
            self.stage_resolutions,
            self.state.discriminators if joint else None,
            cfg.lambda_adv if joint else 0.0,
        )
        loss_g.backward()
        for i in range(len(outputs)):
            self.state.g_opts[i].step()

        if joint:
            for d in self.state.discriminators:
                d.zero_grad()
            loss_d, d_values = discriminator_loss(
                targets, outputs, self.state.discriminators
            )
            loss_d.backward()
            for i in range(len(outputs)):
                self.state.d_opts[i].step()
            for rec, dv in zip(records, d_values):
                rec.dis = dv
        return records

    def run(self) -> Path:
        cfg = self.cfg
        telemetry_path = self.out_dir / "telemetry.csv"
        mode = "a" if (self.state.step > 0 and telemetry_path.exists()) else "w"
        with open(telemetry_path, mode) as telemetry:
            if mode == "w":
                telemetry.write(TELEMETRY_HEADER + "\n")
            for step in range(self.state.step + 1, cfg.total_steps + 1):
                lr = cfg.lr * (0.5 if step > cfg.decay_step else 1.0)
                for opt in self.state.g_opts + self.state.d_opts:
                    opt.lr = lr
                try:
                    records = self._train_step(step)
                except TrainingDiverged as exc:
                    self.state.step = step
                    abort = self.out_dir / "checkpoint_abort.ckpt"
                    self.state.save(abort)
                    raise TrainingDiverged(
                        f"step {step}: {exc} (state saved to {abort})"
                    ) from exc
                self.state.step = step
                if step % cfg.telemetry_every == 0 or step == cfg.total_steps:
                    for i, rec in enumerate(records):
                        adv = "" if rec.adv is None else f"{rec.adv:.9g}"
                        dis = "" if rec.dis is None else f"{rec.dis:.9g}"
                        telemetry.write(
                            f"{step},{lr:.9g},{i + 1},{rec.aux:.9g},{adv},{dis}\n"
                        )
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    self.state.save(self.out_dir / f"checkpoint_{step:08d}.ckpt")
        final = self.out_dir / "checkpoint_final.ckpt"
        self.state.save(final)
        return final


def train(
    cfg: TrainConfig,
    dataset: Dataset,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
) -> Path:
    """Run (or resume) training; returns the final checkpoint path."""
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config != cfg:
            raise ValueError("resume checkpoint was produced with a different config")
        state = TrainState.from_checkpoint(ckpt)
    else:
        state = TrainState(cfg)
    return Trainer(state, dataset, out_dir).run()


def heldout_spectral_loss(
    cascade: GeneratorCascade,
    cfg: TrainConfig,
    entries: Sequence[DatasetEntry],
    noise_seed: int = 900,
) -> dict:
    """Spectral loss on full held-out utterances (no clipping, seeded noise).

    Returns per-stage means over the entries and their sum.
    """
    ladder = RateLadder(cfg.ladder)
    res = cfg.resolution_set()
    stage_res = [res.for_rate(r) for r in ladder]
    sums: list[float] = [0.0] * len(ladder)
    counts: list[int] = [0] * len(ladder)
    for k, entry in enumerate(entries):
        _ensure_entry_cache(entry, cfg, ladder)
        max_stage = ladder.max_stage_for(entry.native_rate)
        rng = np.random.default_rng(np.random.SeedSequence([noise_seed, k]))
        n1 = len(entry.targets[0])
        noise = Tensor(rng.standard_normal(n1, dtype=np.float32)[None, None, :])
        conds = [Tensor(entry.conds[i][None]) for i in range(max_stage)]
        outputs = cascade.forward_stages(noise, conds)
        for i in range(max_stage):
            x = ag.reshape(outputs[i], (-1,))
            sc, mag = stft_loss_terms(x, entry.targets[i], stage_res[i])
            sums[i] += sc.item() + mag.item()
            counts[i] += 1
    per_stage = [s / c if c else float("nan") for s, c in zip(sums, counts)]
    return {"per_stage": per_stage, "total": float(np.nansum(per_stage))}
