"""Scenario files: one YAML document drives every harness command.

A scenario names the medium, the surface forcing, the cascade order, the
eps family, the grids, and the verdict thresholds.  The checked-in
scenario_defaults.yaml is the schema: unknown keys are rejected, known
keys merge recursively over the defaults, so a scenario file states only
what it changes.  The accessors here hand back ready-made library objects
(RayleighData, SlowGrid, TractionForcing, ...) so the command layer never
touches raw mappings.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .amplitude import Kernel, ModalForcing, SpectralGrid, ZeroForcing
from .amplitude import reference_kernel, zero_kernel
from .cascade import CascadeBuilder, CascadeSet, TractionForcing
from .dispersion import DomainError, ElasticMedium, RayleighData, rayleigh_data
from .slowgrid import SlowGrid

__all__ = [
    "ConfigError",
    "Scenario",
    "default_scenario",
    "load_scenario",
]


class ConfigError(ValueError):
    """A scenario file that cannot drive a run."""


def _defaults() -> dict:
    text = resources.files("svkwave").joinpath("scenario_defaults.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base, over, path=""):
    """Recursive override of base by over; unknown keys are config errors."""
    if not isinstance(over, dict):
        return copy.deepcopy(over)
    if not isinstance(base, dict):
        raise ConfigError(f"{path or 'top level'}: expected a scalar, got a mapping")
    out = copy.deepcopy(base)
    open_mapping = path.endswith("modes")
    for key, val in over.items():
        where = f"{path}.{key}" if path else str(key)
        if key not in base and not open_mapping and not _alt_key(path, key):
            raise ConfigError(f"unknown scenario key {where!r}")
        if key in base and isinstance(base[key], dict):
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _alt_key(path: str, key: str) -> bool:
    # the medium block accepts Lame constants instead of the ratio
    return path == "medium" and key in ("lame_lambda", "lame_mu")


def _mode_pair(n, val, where):
    """One forcing mode entry -> (complex, complex)."""

    def one(v):
        if isinstance(v, (list, tuple)):
            if len(v) != 2:
                raise ConfigError(f"{where}: complex entries are [re, im] pairs")
            return complex(float(v[0]), float(v[1]))
        return complex(float(v))

    if not isinstance(val, (list, tuple)) or len(val) != 2:
        raise ConfigError(f"{where}: mode {n} needs a [f, g] pair")
    return one(val[0]), one(val[1])


def _int_modes(raw, where, minimum=1):
    out = {}
    for key, val in raw.items():
        try:
            n = int(key)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: mode keys are integers, got {key!r}")
        if n < minimum:
            raise ConfigError(
                f"{where}: mode {n} below {minimum}; the construction "
                "assumes zero theta-mean data"
            )
        out[n] = val
    return out


@dataclass(frozen=True)
class Scenario:
    """A validated scenario: raw mapping plus typed accessors."""

    data: dict
    source: str | None = None
    _ray_cache: list = field(default_factory=list, repr=False)

    # -- plain fields -------------------------------------------------------

    @property
    def title(self) -> str:
        return str(self.data["title"])

    @property
    def medium(self) -> ElasticMedium:
        med = self.data["medium"]
        has_lame = "lame_lambda" in med or "lame_mu" in med
        try:
            if has_lame:
                if "r" in med:
                    raise ConfigError("medium: give r or the Lame pair, not both")
                return ElasticMedium(
                    float(med["lame_lambda"]), float(med["lame_mu"])
                )
            return ElasticMedium.from_ratio(float(med["r"]))
        except DomainError as exc:
            raise ConfigError(f"medium: {exc}") from exc

    @property
    def eps_values(self) -> list[float]:
        return [float(e) for e in self.data["eps"]["values"]]

    @property
    def N(self) -> int:
        return int(self.data["cascade"]["N"])

    @property
    def outdir(self) -> str:
        return str(self.data["output"]["dir"])

    def section(self, name: str) -> dict:
        return self.data[name]

    def threshold(self, group: str, key: str):
        return self.data["thresholds"][group][key]

    # -- library objects ----------------------------------------------------

    def ray(self) -> RayleighData:
        if not self._ray_cache:
            self._ray_cache.append(rayleigh_data(self.medium.r))
        return self._ray_cache[0]

    def spectral_grid(self) -> SpectralGrid:
        g = self.data["grids"]
        return SpectralGrid(
            L_x=float(g["L_x"]), N_x=int(g["N_x"]), n_max=int(g["n_max"])
        )

    def slow_grid(self) -> SlowGrid:
        g = self.data["grids"]
        return SlowGrid(
            self.spectral_grid(), T=float(g["T_run"]), N_t=int(g["N_t"])
        )

    def traction_forcing(self) -> TractionForcing:
        f = self.data["forcing"]
        modes = {
            n: _mode_pair(n, v, "forcing.modes")
            for n, v in _int_modes(f["modes"], "forcing.modes").items()
        }
        return TractionForcing(
            modes,
            x0=None if f["x0"] is None else float(f["x0"]),
            width=float(f["width"]),
            t0=float(f["t0"]),
            amplitude=float(f["amplitude"]),
        )

    def forcing_is_zero(self) -> bool:
        f = self.data["forcing"]
        return not f["modes"] or float(f["amplitude"]) == 0.0

    def build_cascade(self) -> CascadeSet:
        c = self.data["cascade"]
        return CascadeBuilder(
            self.ray(),
            self.slow_grid(),
            self.traction_forcing(),
            N=self.N,
            rtol=float(c["rtol"]),
        ).build()

    def amplitude_grid(self) -> SpectralGrid:
        a = self.data["amplitude"]
        return SpectralGrid(
            L_x=float(a["L_x"]), N_x=int(a["N_x"]), n_max=int(a["n_max"])
        )

    def amplitude_kernel(self) -> Kernel:
        k = self.data["kernel"]
        if k["kind"] == "zero":
            return zero_kernel()
        if k["kind"] == "bump":
            return reference_kernel(kappa=float(k["kappa"]), c0=float(k["c0"]))
        raise ConfigError(f"kernel.kind: unknown kind {k['kind']!r}")

    def amplitude_forcing(self, grid: SpectralGrid):
        a = self.data["amplitude"]
        minimum = 0 if a["allow_mean"] else 1
        raw = _int_modes(a["modes"], "amplitude.modes", minimum=minimum)
        if not raw or float(a["amplitude"]) == 0.0:
            return ZeroForcing(grid)
        modes = {}
        for n, v in raw.items():
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise ConfigError(f"amplitude.modes: mode {n} needs [re, im]")
            modes[n] = complex(float(v[0]), float(v[1]))
        return ModalForcing(
            grid,
            modes,
            x0=None if a["x0"] is None else float(a["x0"]),
            width=float(a["width"]),
            t0=float(a["t0"]),
            amplitude=float(a["amplitude"]),
            allow_mean=bool(a["allow_mean"]),
        )


def _validate(data: dict, source) -> Scenario:
    scn = Scenario(data, source)
    scn.medium  # raises on a bad medium block

    eps = scn.eps_values
    if len(eps) < 3:
        raise ConfigError(
            f"eps.values: need at least 3 entries for slope fits, got {len(eps)}"
        )
    if any(e <= 0.0 for e in eps):
        raise ConfigError("eps.values: entries must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("eps.values: entries must be strictly decreasing")

    if scn.N < 2:
        raise ConfigError(f"cascade.N: the expansion starts at 2, got {scn.N}")

    g = data["grids"]
    if int(g["N_t"]) < 4:
        raise ConfigError("grids.N_t: need at least 4 levels for time stencils")
    if int(g["n_max"]) < 1 or int(g["N_x"]) < 8:
        raise ConfigError("grids: need n_max >= 1 and N_x >= 8")
    if float(g["T_run"]) <= 0.0:
        raise ConfigError("grids.T_run: must be positive")

    _int_modes(data["forcing"]["modes"], "forcing.modes")
    for n, v in data["forcing"]["modes"].items():
        _mode_pair(n, v, "forcing.modes")
    if data["kernel"]["kind"] not in ("bump", "zero"):
        raise ConfigError(f"kernel.kind: unknown kind {data['kernel']['kind']!r}")
    return scn


def default_scenario() -> Scenario:
    return _validate(_defaults(), None)


def load_scenario(path) -> Scenario:
    """Read one YAML scenario file, merge over the defaults, validate."""
    with open(path, "r") as fh:
        try:
            user = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if user is None:
        user = {}
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    data = _merge(_defaults(), user)
    return _validate(data, str(path))
