"""End-to-end separation pipelines: training, inference, evaluation.

Three routes share one separator and differ only in what the codec hands
it: the magnitude route masks |Y| and reuses the mixture phase for
synthesis; the complex route masks the stacked [re; im] planes (so the
phase updates too); the waveform route masks the trainable encoder's
latent.  Masks always have the width of the representation they multiply.

Training draws fixed-length chunks, minimizes a uPIT loss with Adam, and
checkpoints parameters, optimizer state, and BN statistics in float64 so
a reload reproduces forward passes bit-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import codec as codec_mod
from . import schemas, simulate, spatial
from .autodiff import Tensor
from .errors import ConfigError, InputError, ManifestError, MetricError
from .objectives import MSE_MASK, NEG_SISNR, sdr, sisnr, upit
from .separator import TcnConfig, TcnSeparator, apply_masks

PIPELINES = ("magnitude", "complex", "waveform")
LOSSES = ("upit_mse", "upit_sisnr")


@dataclass
class ExperimentConfig:
    pipeline: str = "magnitude"
    channels: int = 1
    pairs: tuple = ()
    codec: codec_mod.CodecConfig = field(default_factory=codec_mod.CodecConfig)
    B: int = 257
    H: int = 512
    P: int = 3
    X: int = 8
    R: int = 4
    norm: str = "gLN"
    causality: str = "non_causal"
    S: int = 2
    mask_activation: str = "relu"
    loss: str = "upit_sisnr"
    chunk_s: float = 4.0
    chunk_hop_s: float | None = None
    lr: float = 1e-3
    max_epochs: int = 10
    max_steps: int | None = None
    seed: int = 0
    manifest: str = ""
    val_manifest: str | None = None
    val_fraction: float = 0.2
    out_dir: str = "runs/exp"

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.pipeline in ("magnitude", "complex") and self.codec.domain != "spectrogram":
            raise ConfigError(f"{self.pipeline} pipeline needs a spectrogram codec")
        if self.pipeline == "waveform" and self.codec.domain != "waveform":
            raise ConfigError("waveform pipeline needs a waveform codec")
        if self.channels > 1 and not self.pairs:
            raise ConfigError("multi-channel runs need a microphone pair set")
        if self.pairs and self.channels == 1:
            raise ConfigError("pair set given but channels = 1")

    @property
    def pair_set(self) -> spatial.PairSet | None:
        return spatial.PairSet(tuple(self.pairs)) if self.pairs else None

    def representation_width(self) -> int:
        if self.pipeline == "complex":
            return 2 * self.codec.N
        return self.codec.N

    def ipd_bins(self) -> int:
        # IPD analysis matches the encoder's window/stride; spectrogram
        # routes reuse the encoder bank itself
        if self.codec.domain == "spectrogram":
            return self.codec.N
        if self.codec.L % 2 != 0:
            raise ConfigError("matched IPD analysis needs an even encoder length")
        return self.codec.L // 2 + 1

    def input_width(self) -> int:
        width = self.representation_width()
        if self.pairs:
            width += 2 * len(self.pairs) * self.ipd_bins()
        return width

    def tcn_config(self) -> TcnConfig:
        return TcnConfig(
            N=self.representation_width(),
            L=self.codec.L,
            B=self.B,
            H=self.H,
            P=self.P,
            X=self.X,
            R=self.R,
            norm=self.norm,
            causality=self.causality,
            S=self.S,
            input_width=self.input_width(),
            mask_activation=self.mask_activation,
        )

    def to_dict(self) -> dict:
        d = {
            "pipeline": self.pipeline,
            "channels": self.channels,
            "pairs": [list(p) for p in self.pairs],
            "codec": {
                "domain": self.codec.domain,
                "L": self.codec.L,
                "hop": self.codec.hop,
                "N": self.codec.N,
                "window": self.codec.window,
                "fs": self.codec.fs,
            },
            "tcn": {
                "B": self.B,
                "H": self.H,
                "P": self.P,
                "X": self.X,
                "R": self.R,
                "norm": self.norm,
                "causality": self.causality,
                "S": self.S,
                "mask_activation": self.mask_activation,
            },
            "loss": self.loss,
            "chunk_s": self.chunk_s,
            "lr": self.lr,
            "seed": self.seed,
        }
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_PAIR_PRESETS = {"wsj0": spatial.WSJ0_PAIRS, "ls": spatial.LS_PAIRS, "none": ()}


def config_from_dict(obj: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a (schema-validated) JSON object."""
    schemas.validate_experiment(obj)
    codec_kwargs = dict(obj.get("codec", {}))
    pipeline = obj["pipeline"]
    codec_kwargs.setdefault("domain", "waveform" if pipeline == "waveform" else "spectrogram")
    if codec_kwargs["domain"] == "waveform":
        codec_kwargs.setdefault("L", 40)
        codec_kwargs.setdefault("hop", codec_kwargs["L"] // 2)
        codec_kwargs.setdefault("N", 256)
    else:
        codec_kwargs.setdefault("L", 512)
        codec_kwargs.setdefault("hop", 160)
        codec_kwargs.setdefault("N", codec_kwargs["L"] // 2 + 1)
    pairs = obj.get("pairs", "none")
    if isinstance(pairs, str):
        pairs = _PAIR_PRESETS[pairs]
    tcn = obj.get("tcn", {})
    kwargs = dict(
        pipeline=pipeline,
        channels=obj.get("channels", 1),
        pairs=tuple(tuple(p) for p in pairs),
        codec=codec_mod.CodecConfig(**codec_kwargs),
        loss=obj.get("loss", "upit_sisnr"),
        chunk_s=obj.get("chunk_s", 4.0),
        chunk_hop_s=obj.get("chunk_hop_s"),
        lr=obj.get("lr", 1e-3),
        max_epochs=obj.get("max_epochs", 10),
        max_steps=obj.get("max_steps"),
        seed=obj.get("seed", 0),
        manifest=obj.get("manifest", ""),
        val_manifest=obj.get("val_manifest"),
        val_fraction=obj.get("val_fraction", 0.2),
        out_dir=obj.get("out_dir", "runs/exp"),
    )
    for key in ("B", "H", "P", "X", "R", "norm", "causality", "S", "mask_activation"):
        if key in tcn:
            kwargs[key] = tcn[key]
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


class SeparationModel:
    """Codec bank(s) plus separator, with named parameters for training."""

    def __init__(self, config: ExperimentConfig, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.config = config
        self.bank = codec_mod.KernelBank(config.codec, rng=rng)
        if config.pairs and config.codec.domain == "waveform":
            self.ipd_config = codec_mod.CodecConfig(
                domain="spectrogram",
                L=config.codec.L,
                hop=config.codec.hop,
                N=config.ipd_bins(),
                fs=config.codec.fs,
            )
            self.ipd_bank = codec_mod.KernelBank(self.ipd_config)
        else:
            self.ipd_config = config.codec
            self.ipd_bank = self.bank
        self.separator = TcnSeparator(config.tcn_config(), rng=rng)

    def parameters(self) -> dict:
        named = dict(self.separator.parameters())
        named.update(self.bank.parameters())
        return named

    def norm_states(self) -> dict:
        return self.separator.norm_states()

    # ----- forward pieces -------------------------------------------------

    def _analysis(self, channels, training: bool):
        """Returns (features, context) for a [C x T] float array."""
        cfg = self.config
        ch0 = Tensor(np.asarray(channels[0], dtype=np.float64))
        ctx = {"out_len": int(np.asarray(channels[0]).shape[-1])}
        if cfg.pipeline == "magnitude":
            frames = codec_mod.encode(ch0, self.bank, cfg.codec)
            mag, phase = codec_mod.magnitude_phase(frames)
            ctx["phase"] = phase
            rep = mag
        elif cfg.pipeline == "complex":
            frames = codec_mod.encode(ch0, self.bank, cfg.codec)
            rep = ad.concat([frames.re, frames.im], axis=0)
        else:
            rep = codec_mod.encode(ch0, self.bank, cfg.codec)
        ctx["rep"] = rep
        features = rep
        if cfg.pairs:
            used = [np.asarray(c, dtype=np.float64) for c in channels[: cfg.channels]]
            if len(used) < cfg.channels:
                raise InputError(f"need {cfg.channels} channels, got {len(used)}")
            feats = spatial.ipd_from_waveform(used, self.ipd_bank, self.ipd_config, cfg.pair_set)
            features = spatial.assemble_features(rep, feats)
        return features, ctx

    def _decode_sources(self, masked, ctx):
        cfg = self.config
        out_len = ctx["out_len"]
        outs = []
        for rep in masked:
            if cfg.pipeline == "magnitude":
                frames = codec_mod.reconstruct_complex(rep, ctx["phase"])
                outs.append(codec_mod.decode(frames, self.bank, cfg.codec, out_len))
            elif cfg.pipeline == "complex":
                n = cfg.codec.N
                frames = codec_mod.ComplexFrames(
                    re=ad.narrow(rep, 0, 0, n), im=ad.narrow(rep, 0, n, n)
                )
                outs.append(codec_mod.decode(frames, self.bank, cfg.codec, out_len))
            else:
                outs.append(codec_mod.decode(rep, self.bank, cfg.codec, out_len))
        return outs

    def estimates(self, channels, training: bool = False):
        """Full separation: [C x T] mixture -> list of S time-domain Tensors."""
        features, ctx = self._analysis(channels, training)
        masks = self.separator.forward(features, training=training)
        masked = apply_masks(masks, ctx["rep"])
        return self._decode_sources(masked, ctx)

    def reference_representation(self, ref_signal) -> Tensor:
        """Per-source target representation for the masked-MSE loss."""
        cfg = self.config
        sig = Tensor(np.asarray(ref_signal, dtype=np.float64))
        if cfg.pipeline == "magnitude":
            mag, _ = codec_mod.magnitude_phase(codec_mod.encode(sig, self.bank, cfg.codec))
            return mag
        if cfg.pipeline == "complex":
            frames = codec_mod.encode(sig, self.bank, cfg.codec)
            return ad.concat([frames.re, frames.im], axis=0)
        return codec_mod.encode(sig, self.bank, cfg.codec)

    def loss(self, channels, references, training: bool = True):
        """uPIT loss of one chunk; returns (loss Tensor, PermutationAssignment)."""
        cfg = self.config
        features, ctx = self._analysis(channels, training)
        masks = self.separator.forward(features, training=training)
        masked = apply_masks(masks, ctx["rep"])
        if cfg.loss == "upit_sisnr":
            ests = self._decode_sources(masked, ctx)
            refs = [Tensor(np.asarray(r, dtype=np.float64)) for r in references]
            pa = upit(ests, refs, NEG_SISNR)
        else:
            refs = [self.reference_representation(r) for r in references]
            pa = upit(masked, refs, MSE_MASK)
        return pa.loss, pa


def separate(channels, config: ExperimentConfig, model: SeparationModel):
    """Inference helper: numpy waveforms for each estimated source."""
    if np.asarray(channels[0]).shape[-1] < config.codec.L:
        raise InputError("mixture shorter than one analysis window")
    outs = model.estimates(channels, training=False)
    return [o.data.copy() for o in outs]


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------


@dataclass
class Chunk:
    scene_id: str
    index: int
    mixture: np.ndarray  # [C x T]
    references: np.ndarray  # [S x T]
    padded: bool


def chunk(mixture: np.ndarray, references: np.ndarray, chunk_s: float, hop_s: float | None, fs: int,
          scene_id: str = "") -> list:
    """Aligned fixed-length slices; the final partial chunk is zero-padded
    and flagged."""
    if chunk_s <= 0:
        raise InputError("chunk length must be positive")
    size = int(round(chunk_s * fs))
    hop = int(round((hop_s if hop_s is not None else chunk_s) * fs))
    t = mixture.shape[1]
    if references.shape[1] != t:
        raise InputError("mixture/reference lengths differ")
    chunks = []
    start, index = 0, 0
    while start < t:
        end = start + size
        mix = mixture[:, start:end]
        ref = references[:, start:end]
        padded = mix.shape[1] < size
        if padded:
            mix = np.pad(mix, ((0, 0), (0, size - mix.shape[1])))
            ref = np.pad(ref, ((0, 0), (0, size - ref.shape[1])))
        chunks.append(Chunk(scene_id, index, mix, ref, padded))
        index += 1
        if end >= t:
            break
        start += hop
    return chunks


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    epoch: int = 0
    best_val: float = float("inf")
    lr: float = 1e-3
    stagnant: int = 0
    steps: int = 0


LR_PATIENCE = 3  # halve after this many non-improving validation epochs


def _load_chunks(config: ExperimentConfig, manifest: dict, records) -> list:
    out = []
    for rec in records:
        mixture, refs = simulate.load_scene_audio(manifest, rec)
        if mixture.shape[0] < config.channels:
            raise ManifestError(
                f"scene {rec['id']} has {mixture.shape[0]} channels, config wants {config.channels}"
            )
        out.extend(
            chunk(mixture[: max(config.channels, 1)], refs, config.chunk_s, config.chunk_hop_s,
                  manifest["fs"], scene_id=rec["id"])
        )
    return out


def _split_records(config: ExperimentConfig, manifest: dict):
    records = manifest["scenes"]
    if config.val_manifest:
        val_manifest = simulate.load_manifest(config.val_manifest)
        return records, manifest, val_manifest["scenes"], val_manifest
    if config.val_fraction <= 0 or len(records) < 2:
        return records, manifest, [], manifest
    n_val = max(1, int(round(len(records) * config.val_fraction)))
    # deterministic: highest seeds become validation
    ordered = sorted(records, key=lambda r: r["seed"])
    return ordered[:-n_val], manifest, ordered[-n_val:], manifest


def _checkpoint_payload(model: SeparationModel, state: TrainState, config: ExperimentConfig):
    tensors = {}
    for name, p in sorted(model.parameters().items()):
        tensors[f"param/{name}"] = p.value.data
        tensors[f"adam_m/{name}"] = p.m
        tensors[f"adam_v/{name}"] = p.v
        tensors[f"adam_t/{name}"] = np.array(float(p.step))
    for name, st in sorted(model.norm_states().items()):
        tensors[f"bn_mean/{name}"] = st.running_mean
        tensors[f"bn_var/{name}"] = st.running_var
    meta = {
        "config_hash": config.config_hash(),
        "epoch": state.epoch,
        "best_val": state.best_val,
        "lr": state.lr,
        "stagnant": state.stagnant,
        "steps": state.steps,
    }
    return tensors, meta


def save_checkpoint(path, model: SeparationModel, state: TrainState, config: ExperimentConfig):
    tensors, meta = _checkpoint_payload(model, state, config)
    ckpt.save_tensors(path, tensors, meta=meta)


def load_checkpoint(path, model: SeparationModel, config: ExperimentConfig | None = None,
                    strict_hash: bool = True) -> TrainState:
    tensors, meta = ckpt.load_tensors(path)
    if config is not None and strict_hash and meta.get("config_hash") != config.config_hash():
        raise ConfigError("checkpoint was written for a different configuration")
    for name, p in model.parameters().items():
        key = f"param/{name}"
        if key not in tensors:
            raise InputError(f"checkpoint missing tensor {key}")
        if tensors[key].shape != p.value.data.shape:
            raise ConfigError(f"checkpoint tensor {key} has shape {tensors[key].shape}, "
                              f"model expects {p.value.data.shape}")
        p.value.data[...] = tensors[key]
        p.m = tensors.get(f"adam_m/{name}", np.zeros_like(p.m)).copy()
        p.v = tensors.get(f"adam_v/{name}", np.zeros_like(p.v)).copy()
        p.step = int(tensors.get(f"adam_t/{name}", np.array(0.0)).reshape(-1)[0])
    for name, st in model.norm_states().items():
        if f"bn_mean/{name}" in tensors:
            st.running_mean = tensors[f"bn_mean/{name}"].copy()
            st.running_var = tensors[f"bn_var/{name}"].copy()
    return TrainState(
        epoch=int(meta.get("epoch", 0)),
        best_val=float(meta.get("best_val", float("inf"))),
        lr=float(meta.get("lr", 1e-3)),
        stagnant=int(meta.get("stagnant", 0)),
        steps=int(meta.get("steps", 0)),
    )


def _chunk_ok(c: Chunk) -> bool:
    # a reference with no variance makes Si-SNR undefined
    return all(np.ptp(r) > 0 for r in c.references)


def _eval_loss(model: SeparationModel, chunks) -> float:
    losses = []
    for c in chunks:
        if not _chunk_ok(c):
            continue
        loss, _ = model.loss(c.mixture, list(c.references), training=False)
        losses.append(loss.item())
    return float(np.mean(losses)) if losses else float("nan")


def train(config: ExperimentConfig, model: SeparationModel | None = None,
          resume_from=None, callback=None):
    """Adam/uPIT training loop over simulated scenes.

    Returns (model, history) and writes best/last checkpoints plus a
    per-epoch loss CSV in ``config.out_dir``.  Deterministic per seed:
    chunk order is derived from (seed, epoch); resuming from a checkpoint
    at an epoch boundary reproduces the uninterrupted run bit-for-bit.
    """
    manifest = simulate.load_manifest(config.manifest)
    train_records, train_manifest, val_records, val_manifest = _split_records(config, manifest)
    train_chunks = _load_chunks(config, train_manifest, train_records)
    val_chunks = _load_chunks(config, val_manifest, val_records) if val_records else []
    if not train_chunks:
        raise InputError("no training chunks; manifest is empty")

    if model is None:
        model = SeparationModel(config, rng=np.random.default_rng([config.seed, 0xA1]))
    state = TrainState(lr=config.lr)
    if resume_from is not None:
        state = load_checkpoint(resume_from, model, config)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = [p for _, p in sorted(model.parameters().items())]
    history = []

    while state.epoch < config.max_epochs:
        epoch = state.epoch
        order = np.random.default_rng([config.seed, epoch, 0xC0]).permutation(len(train_chunks))
        epoch_losses = []
        for idx in order:
            c = train_chunks[idx]
            if not _chunk_ok(c):
                continue
            for p in params:
                p.zero_grad()
            try:
                with ad.Tape() as tape:
                    loss, _ = model.loss(c.mixture, list(c.references), training=True)
                    tape.backward(loss)
            except ad.NumericError as exc:
                raise ad.NumericError(
                    f"non-finite loss at epoch {epoch}, chunk {c.scene_id}#{c.index}: {exc}"
                ) from exc
            value = loss.item()
            if not np.isfinite(value):
                raise ad.NumericError(f"NaN loss at epoch {epoch}, chunk {c.scene_id}#{c.index}")
            ad.adam_step(params, lr=state.lr)
            epoch_losses.append(value)
            state.steps += 1
            if callback is not None:
                callback(state, value)
            if config.max_steps is not None and state.steps >= config.max_steps:
                break
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        val_loss = _eval_loss(model, val_chunks) if val_chunks else train_loss
        state.epoch = epoch + 1
        improved = val_loss < state.best_val - 1e-12
        if improved:
            state.best_val = val_loss
            state.stagnant = 0
            save_checkpoint(out_dir / "best.skpt", model, state, config)
        else:
            state.stagnant += 1
            if state.stagnant >= LR_PATIENCE:
                state.lr *= 0.5
                state.stagnant = 0
        save_checkpoint(out_dir / "last.skpt", model, state, config)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": state.lr})
        if config.max_steps is not None and state.steps >= config.max_steps:
            break
    return model, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def score_estimates(estimates, references):
    """uPIT-aligned per-utterance Si-SNR/SDR means and the permutation."""
    ests = [np.asarray(e, dtype=np.float64) for e in estimates]
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    n = min(min(len(e) for e in ests), min(len(r) for r in refs))
    ests = [e[:n] for e in ests]
    refs = [r[:n] for r in refs]
    pa = upit(ests, refs, NEG_SISNR)
    si = float(np.mean([sisnr(ests[s], refs[pa.mapping[s]]).item() for s in range(len(ests))]))
    sd = float(np.mean([sdr(ests[s], refs[pa.mapping[s]]).item() for s in range(len(ests))]))
    return si, sd, pa.mapping


def evaluate(manifest: dict, config: ExperimentConfig, model: SeparationModel,
             estimates_dir=None, threads: int = 1) -> list:
    """Per-scene metric rows: (scene id, bucket, sisnr, sdr, permutation).

    With ``estimates_dir`` the separator is bypassed and pre-computed
    estimate WAVs (<dir>/<scene id>/est_<s>.wav) are scored instead.
    Scenes are independent; ``threads`` > 1 scores them in parallel with
    read-only shared weights.
    """
    from . import audio_io

    def one(rec):
        mixture, refs = simulate.load_scene_audio(manifest, rec)
        if estimates_dir is not None:
            est_dir = Path(estimates_dir) / rec["id"]
            ests = []
            for s in range(refs.shape[0]):
                path = est_dir / f"est_{s}.wav"
                if not path.exists():
                    raise ManifestError(f"missing estimate file {path}")
                ests.append(audio_io.read_wav(path)[1][0])
        else:
            ests = separate(mixture, config, model)
        try:
            si, sd, mapping = score_estimates(ests, list(refs))
        except MetricError as exc:
            raise MetricError(f"scene {rec['id']}: {exc}") from exc
        return {
            "scene": rec["id"],
            "bucket": rec["bucket"],
            "sisnr": si,
            "sdr": sd,
            "permutation": "-".join(str(m) for m in mapping),
        }

    records = manifest["scenes"]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, records))
    return [one(rec) for rec in records]


def aggregate_rows(rows) -> dict:
    """Mean Si-SNR/SDR per angle bucket plus the AVG column."""
    out = {}
    for bucket in simulate.BUCKET_NAMES + ("AVG",):
        sel = [r for r in rows if bucket == "AVG" or r["bucket"] == bucket]
        if sel:
            out[bucket] = {
                "count": len(sel),
                "sisnr": float(np.mean([r["sisnr"] for r in sel])),
                "sdr": float(np.mean([r["sdr"] for r in sel])),
            }
    return out


# ---------------------------------------------------------------------------
# ideal-mask (oracle) evaluation
# ---------------------------------------------------------------------------

ORACLE_MASKS = ("iam", "ibm", "irm", "ipsm")


def oracle_scene_estimates(mixture, references, bank, stft_cfg, kinds=ORACLE_MASKS) -> dict:
    """Ground-truth-mask reconstructions of one scene's sources.

    Masks multiply the complex planes of the mixture (equivalent to
    magnitude masking with the mixture phase, and well defined for the
    signed phase-sensitive mask).  Returns {mask kind: [S waveforms]}.
    """
    from .objectives import ideal_masks

    mix = np.asarray(mixture[0], dtype=np.float64)
    frames = codec_mod.encode(Tensor(mix), bank, stft_cfg)
    mix_mag, mix_phase = codec_mod.magnitude_phase(frames)
    mags, phases = [], []
    for ref in references:
        m, p = codec_mod.magnitude_phase(codec_mod.encode(Tensor(np.asarray(ref)), bank, stft_cfg))
        mags.append(m.data)
        phases.append(p.data)
    masks = ideal_masks(np.stack(mags), np.stack(phases), mix_mag.data, mix_phase.data)
    out = {}
    for kind in kinds:
        estimates = []
        for s in range(len(references)):
            masked = codec_mod.ComplexFrames(
                re=Tensor(masks[kind][s] * frames.re.data),
                im=Tensor(masks[kind][s] * frames.im.data),
            )
            estimates.append(codec_mod.decode(masked, bank, stft_cfg, out_len=len(mix)).data.copy())
        out[kind] = estimates
    return out


def oracle_report(manifest: dict, kinds=ORACLE_MASKS, stft_cfg: codec_mod.CodecConfig | None = None,
                  dump_dir=None) -> list:
    """Score every ideal mask on every manifest scene.

    Rows: (mask, scene, bucket, sisnr, sdr).  With ``dump_dir`` the
    estimates are also written as 64-bit WAVs under
    <dump_dir>/<mask>/<scene>/est_<s>.wav for external re-scoring.
    """
    from . import audio_io

    if stft_cfg is None:
        stft_cfg = codec_mod.CodecConfig(domain="spectrogram", L=512, hop=160, N=257)
    bank = codec_mod.KernelBank(stft_cfg)
    rows = []
    for rec in manifest["scenes"]:
        mixture, refs = simulate.load_scene_audio(manifest, rec)
        per_kind = oracle_scene_estimates(mixture, refs, bank, stft_cfg, kinds=kinds)
        for kind, ests in per_kind.items():
            si, sd, mapping = score_estimates(ests, list(refs))
            rows.append({
                "mask": kind,
                "scene": rec["id"],
                "bucket": rec["bucket"],
                "sisnr": si,
                "sdr": sd,
                "permutation": "-".join(str(m) for m in mapping),
            })
            if dump_dir is not None:
                scene_dir = Path(dump_dir) / kind / rec["id"]
                scene_dir.mkdir(parents=True, exist_ok=True)
                for s, est in enumerate(ests):
                    audio_io.write_wav(scene_dir / f"est_{s}.wav", manifest["fs"], est, bits=64)
    return rows


def oracle_summary(rows) -> dict:
    out = {}
    for kind in ORACLE_MASKS:
        sel = [r for r in rows if r["mask"] == kind]
        if sel:
            out[kind] = {
                "count": len(sel),
                "sisnr": float(np.mean([r["sisnr"] for r in sel])),
                "sdr": float(np.mean([r["sdr"] for r in sel])),
            }
    return out


# ---------------------------------------------------------------------------
# finite-difference audit of the end-to-end gradients
# ---------------------------------------------------------------------------


def gradcheck_model(config: ExperimentConfig, n_params_per_group: int = 4, eps: float = 1e-5,
                    seed: int = 0) -> dict:
    """Compare backward gradients against central differences.

    Builds the model, runs one chunk loss, then perturbs a deterministic
    sample of coordinates in every parameter group.  A coordinate whose
    difference quotient straddles a ReLU/PReLU kink is a false alarm, so
    failing coordinates are re-checked at eps/8 and eps/64 and the best
    agreement is kept.  Returns {group name: max relative error}.
    """
    rng = np.random.default_rng([seed, 0xFD])
    model = SeparationModel(config, rng=np.random.default_rng([seed, 0xA1]))
    fs = config.codec.fs
    t = int(round(config.chunk_s * fs))
    channels = rng.standard_normal((max(config.channels, 1), t)) * 0.3
    refs = [rng.standard_normal(t) * 0.3 for _ in range(config.S)]

    params = model.parameters()
    for p in params.values():
        p.zero_grad()
    with ad.Tape() as tape:
        loss, _ = model.loss(channels, refs, training=False)
        tape.backward(loss)
    grads = {name: (p.value.grad.copy() if p.value.grad is not None else np.zeros_like(p.value.data))
             for name, p in params.items()}

    def loss_value():
        value, _ = model.loss(channels, refs, training=False)
        return value.item()

    def coord_error(flat, i, analytic, step):
        orig = flat[i]
        flat[i] = orig + step
        hi = loss_value()
        flat[i] = orig - step
        lo = loss_value()
        flat[i] = orig
        fd = (hi - lo) / (2 * step)
        scale = max(abs(fd), abs(analytic), 1e-8)
        return abs(analytic - fd) / scale

    report = {}
    for name, p in params.items():
        flat = p.value.data.reshape(-1)
        gflat = grads[name].reshape(-1)
        idx = rng.permutation(flat.size)[: min(n_params_per_group, flat.size)]
        worst = 0.0
        for i in idx:
            err = coord_error(flat, i, gflat[i], eps)
            for shrink in (8.0, 64.0):
                if err < 1e-4:
                    break
                err = min(err, coord_error(flat, i, gflat[i], eps / shrink))
            worst = max(worst, err)
        report[name] = worst
    return report
