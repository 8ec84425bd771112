"""System model of the reciprocal AF two-way relay network.

Terminal T1 receives, in the relay's broadcast phase,

    z_i = A a t1_i + A b t2_i + A h n_i + eta_i,   a = h^2,  b = g h,

with M-PSK symbols t1, t2, relay noise n and terminal noise eta, both
CN(0, sigma^2). T1 knows t1 and wants a (and, with a few pilots, angle(b)).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "SystemConfig",
    "ChannelState",
    "ObservationBatch",
    "STREAM_ROLES",
    "make_stream",
    "psk_phases",
    "draw_mpsk_symbols",
    "draw_channel",
    "simulate_batch",
    "write_batch",
    "read_batch",
]

# Distinct integer tags keep the channel, data and CRB streams of one trial
# statistically independent of each other.
STREAM_ROLES = {"channel": 1, "batch": 2, "crb": 3, "probe": 4}


def make_stream(master_seed: int, *keys: int, role: str = "batch") -> np.random.Generator:
    """Independent, replayable generator for ``(master_seed, role, *keys)``."""
    entropy = [int(master_seed), STREAM_ROLES[role], *(int(k) for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class SystemConfig:
    p1: float = 1.0
    p2: float = 1.0
    pr: float = 1.0
    sigma2: float = 0.1
    m: int = 4
    n: int = 100

    def __post_init__(self):
        for name in ("p1", "p2", "pr", "sigma2"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number, got {value!r}")
        if self.m < 2 or self.m % 2:
            raise ValueError(f"modulation order must be an even integer >= 2, got {self.m!r}")
        if self.n < 2:
            raise ValueError(f"sample count must be >= 2, got {self.n!r}")

    def amplification(self) -> float:
        """Relay gain sqrt(Pr / (P1 + P2 + sigma^2))."""
        return math.sqrt(self.pr / (self.p1 + self.p2 + self.sigma2))

    def snr(self) -> float:
        """Transmit SNR P2 / sigma^2 (linear)."""
        return self.p2 / self.sigma2

    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr())

    def replace(self, **changes) -> "SystemConfig":
        return SystemConfig(**{**asdict(self), **changes})

    def with_snr_db(self, snr_db: float) -> "SystemConfig":
        """Same powers, noise variance set so that P2/sigma^2 hits ``snr_db``."""
        return self.replace(sigma2=self.p2 / 10.0 ** (snr_db / 10.0))

    def effective_noise(self, a: complex) -> float:
        """Variance sigma^2 (A^2 |a| + 1) of the compound noise A h n + eta."""
        return self.sigma2 * (self.amplification() ** 2 * abs(a) + 1.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        """Missing keys take their defaults; unknown keys are rejected."""
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown system keys: {sorted(unknown)}")
        values = {**asdict(cls()), **data}
        return cls(
            p1=float(values["p1"]),
            p2=float(values["p2"]),
            pr=float(values["pr"]),
            sigma2=float(values["sigma2"]),
            m=int(values["m"]),
            n=int(values["n"]),
        )


@dataclass(frozen=True)
class ChannelState:
    """Reciprocal channel pair; ``a`` and ``b`` are always derived from h, g."""

    h: complex
    g: complex

    @property
    def a(self) -> complex:
        return self.h * self.h

    @property
    def b(self) -> complex:
        return self.g * self.h

    @property
    def phi_b(self) -> float:
        return math.atan2(self.b.imag, self.b.real)

    def to_dict(self) -> dict:
        return {
            "h": [self.h.real, self.h.imag],
            "g": [self.g.real, self.g.imag],
            "a": [self.a.real, self.a.imag],
            "b": [self.b.real, self.b.imag],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelState":
        h, g = data["h"], data["g"]
        return cls(h=complex(h[0], h[1]), g=complex(g[0], g[1]))


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ObservationBatch:
    t1: np.ndarray
    t2: np.ndarray
    z: np.ndarray
    config: SystemConfig
    pilot_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.z)
        mask = np.zeros(n, dtype=bool) if self.pilot_mask is None else self.pilot_mask
        object.__setattr__(self, "t1", _frozen(self.t1, complex))
        object.__setattr__(self, "t2", _frozen(self.t2, complex))
        object.__setattr__(self, "z", _frozen(self.z, complex))
        object.__setattr__(self, "pilot_mask", _frozen(mask, bool))
        if not (len(self.t1) == len(self.t2) == len(self.pilot_mask) == n):
            raise ValueError("t1, t2, z and pilot_mask must have equal length")

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def amplification(self) -> float:
        return self.config.amplification()

    @property
    def pilot_count(self) -> int:
        return int(self.pilot_mask.sum())

    def transformed(self, z=None, t1=None, t2=None) -> "ObservationBatch":
        return ObservationBatch(
            t1=self.t1 if t1 is None else t1,
            t2=self.t2 if t2 is None else t2,
            z=self.z if z is None else z,
            config=self.config,
            pilot_mask=self.pilot_mask,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "re_t1", "im_t1", "re_t2", "im_t2", "re_z", "im_z", "is_pilot"])
        for i in range(self.n):
            writer.writerow([
                i,
                repr(float(self.t1[i].real)), repr(float(self.t1[i].imag)),
                repr(float(self.t2[i].real)), repr(float(self.t2[i].imag)),
                repr(float(self.z[i].real)), repr(float(self.z[i].imag)),
                int(self.pilot_mask[i]),
            ])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, config: SystemConfig) -> "ObservationBatch":
        rows = list(csv.DictReader(io.StringIO(text)))
        rows.sort(key=lambda r: int(r["index"]))

        def col(re_key, im_key):
            return np.array([complex(float(r[re_key]), float(r[im_key])) for r in rows])

        return cls(
            t1=col("re_t1", "im_t1"),
            t2=col("re_t2", "im_t2"),
            z=col("re_z", "im_z"),
            config=config,
            pilot_mask=np.array([bool(int(r["is_pilot"])) for r in rows]),
        )


def psk_phases(m: int) -> np.ndarray:
    """The M-PSK phase set {(2l - 1) pi / M, l = 1..M}."""
    return (2.0 * np.arange(1, m + 1) - 1.0) * np.pi / m


def draw_mpsk_symbols(m: int, n: int, power: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform M-PSK symbols of modulus sqrt(power)."""
    if m < 2 or n < 1 or not power > 0:
        raise ValueError(f"invalid symbol request m={m}, n={n}, power={power}")
    phases = psk_phases(m)[rng.integers(0, m, size=n)]
    return math.sqrt(power) * np.exp(1j * phases)


def _cn(rng: np.random.Generator, size, variance: float) -> np.ndarray:
    # CN(0, v): independent real/imaginary parts with variance v/2 each.
    return math.sqrt(variance / 2.0) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def draw_channel(rng: np.random.Generator) -> ChannelState:
    """h, g independent CN(0, 1)."""
    h, g = _cn(rng, 2, 1.0)
    return ChannelState(h=complex(h), g=complex(g))


def simulate_batch(
    config: SystemConfig,
    channel: ChannelState,
    rng: np.random.Generator,
    pilot_count: int = 0,
    noiseless: bool = False,
) -> ObservationBatch:
    """Draw one quasi-static block of N received samples at T1.

    Pilots occupy the first ``pilot_count`` positions. With ``noiseless`` the
    noise terms are drawn (keeping the stream aligned) but not added.
    """
    n = config.n
    if not 0 <= pilot_count <= n:
        raise ValueError(f"pilot_count must lie in [0, {n}], got {pilot_count}")
    amp = config.amplification()
    t1 = draw_mpsk_symbols(config.m, n, config.p1, rng)
    t2 = draw_mpsk_symbols(config.m, n, config.p2, rng)
    relay_noise = _cn(rng, n, config.sigma2)
    terminal_noise = _cn(rng, n, config.sigma2)
    z = amp * channel.a * t1 + amp * channel.b * t2
    if not noiseless:
        z = z + amp * channel.h * relay_noise + terminal_noise
    mask = np.zeros(n, dtype=bool)
    mask[:pilot_count] = True
    return ObservationBatch(t1=t1, t2=t2, z=z, config=config, pilot_mask=mask)


def write_batch(batch: ObservationBatch, channel: ChannelState | None, path, metadata: dict | None = None):
    """Write ``<path>.csv`` with the samples and ``<path>.json`` with config and ground truth."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    csv_path.write_text(batch.to_csv())
    envelope = {
        "config": batch.config.to_dict(),
        "channel": None if channel is None else channel.to_dict(),
        "data": csv_path.name,
        "metadata": metadata or {},
    }
    json_path.write_text(json.dumps(envelope, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def read_batch(path) -> tuple[ObservationBatch, ChannelState | None]:
    path = Path(path)
    envelope = json.loads(path.with_suffix(".json").read_text())
    config = SystemConfig.from_dict(envelope["config"])
    batch = ObservationBatch.from_csv(path.with_suffix(".csv").read_text(), config)
    channel = envelope.get("channel")
    return batch, (ChannelState.from_dict(channel) if channel else None)
