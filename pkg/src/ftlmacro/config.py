"""Scenario configuration files: TOML schema, strict validation, builders.

One TOML file drives every CLI command. Sections (all physical quantities
in meters / seconds / m/s):

    [[types]]        id, family, h0 (m), v_max (m/s), family params
                     (lam per meter; sigma per second; breakpoints [[m, m/s]])
    [distribution]   probabilities = [...]          (aligned with [[types]])
    [initial]        family = affine|smooth_ramp|piecewise_linear + params
    [micro]          mode = linear|corrector|profile, n_vehicles, horizon (s),
                     dt_factor or dt (s), leader_closure, sample_every, seed,
                     headway (m) / theta (m/s) / epsilon per mode, ghost_gap (m)
    [flux]           p_max (m), grid_points, tol (m)
    [macro]          x_min, x_max (m), nx, t_final (s), dt (s, optional),
                     boundary, store_every, solve = hj|lwr|both
    [study]          epsilons, seeds, eval_nx, eval_nt, threshold (m), slack,
                     dt_factor
    [fd]             p_values (m), seeds, horizon (s), n_vehicles, dt (s)
    [output]         directory, formats = [csv|json|gnuplot]

Unknown keys anywhere are rejected with their path. Sections needed only
by other commands may be omitted; present sections are always validated.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .convergence_harness import (AffineProfile, PiecewiseLinearProfile,
                                  Scenario, SmoothRampProfile)
from .errors import ConfigFileError
from .io_utils import canonical_hash
from .micro_sim import FreeFlow, GhostHeadway
from .velocity_models import (FAMILY_NEWELL, FAMILY_TABLE,
                              FAMILY_TRUNCATED_LINEAR, TypeDistribution,
                              VehicleTypeSpec)

_TYPE_KEYS = {
    "id": str, "family": str, "h0": (int, float), "v_max": (int, float),
    "lam": (int, float), "sigma": (int, float), "breakpoints": list,
}
_SECTION_KEYS = {
    "distribution": {"probabilities": list},
    "initial": {
        "family": str, "gradient": (int, float), "offset": (int, float),
        "gradient_left": (int, float), "gradient_right": (int, float),
        "x0": (int, float), "width": (int, float), "breakpoints": list,
    },
    "micro": {
        "mode": str, "n_vehicles": int, "horizon": (int, float),
        "dt_factor": (int, float), "dt": (int, float), "leader_closure": str,
        "ghost_gap": (int, float), "sample_every": int, "seed": int,
        "headway": (int, float), "theta": (int, float), "epsilon": (int, float),
    },
    "flux": {"p_max": (int, float), "grid_points": int, "tol": (int, float)},
    "macro": {
        "x_min": (int, float), "x_max": (int, float), "nx": int,
        "t_final": (int, float), "dt": (int, float), "boundary": str,
        "store_every": int, "solve": str,
    },
    "study": {
        "epsilons": list, "seeds": list, "eval_nx": int, "eval_nt": int,
        "threshold": (int, float), "slack": (int, float),
        "dt_factor": (int, float),
    },
    "fd": {
        "p_values": list, "seeds": list, "horizon": (int, float),
        "n_vehicles": int, "dt": (int, float),
    },
    "output": {"directory": str, "formats": list},
}

_FAMILY_ALIASES = {
    "newell_exponential": FAMILY_NEWELL,
    "truncated_linear": FAMILY_TRUNCATED_LINEAR,
    "piecewise_linear_table": FAMILY_TABLE,
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed + validated configuration with derived objects on demand."""

    raw: dict
    path: str
    scenario_hash: str

    def section(self, name, required=False) -> dict:
        sec = self.raw.get(name)
        if sec is None:
            if required:
                raise ConfigFileError(f"missing required section [{name}]")
            return {}
        return sec

    # -- builders ----------------------------------------------------------

    def distribution(self) -> TypeDistribution:
        types_raw = self.raw.get("types")
        if not types_raw:
            raise ConfigFileError("missing required [[types]] entries")
        dist_sec = self.section("distribution", required=True)
        probs = dist_sec.get("probabilities")
        if probs is None or len(probs) != len(types_raw):
            raise ConfigFileError(
                "[distribution].probabilities must list one value per [[types]] entry")
        specs = []
        for k, traw in enumerate(types_raw):
            family = _FAMILY_ALIASES.get(traw.get("family", ""))
            if family is None:
                raise ConfigFileError(
                    f"types[{k}].family must be one of {sorted(_FAMILY_ALIASES)}")
            params = {}
            if family == FAMILY_NEWELL:
                params["lam"] = float(traw.get("lam", 0.0))
            elif family == FAMILY_TRUNCATED_LINEAR:
                params["sigma"] = float(traw.get("sigma", 0.0))
            else:
                bps = traw.get("breakpoints")
                if bps is None:
                    raise ConfigFileError(f"types[{k}] needs breakpoints")
                params["breakpoints"] = tuple((float(p), float(v)) for p, v in bps)
            try:
                specs.append(VehicleTypeSpec(
                    id=str(traw.get("id", f"type{k}")), family=family,
                    h0=float(traw["h0"]), v_max=float(traw["v_max"]),
                    params=params))
            except KeyError as exc:
                raise ConfigFileError(f"types[{k}] missing key {exc}") from exc
        return TypeDistribution(tuple(zip(specs, (float(p) for p in probs))))

    def initial_profile(self):
        sec = self.section("initial", required=True)
        family = sec.get("family")
        if family == "affine":
            return AffineProfile(gradient=float(sec["gradient"]),
                                 offset=float(sec.get("offset", 0.0)))
        if family == "smooth_ramp":
            return SmoothRampProfile(
                gradient_left=float(sec["gradient_left"]),
                gradient_right=float(sec["gradient_right"]),
                x0=float(sec["x0"]), width=float(sec["width"]),
                offset=float(sec.get("offset", 0.0)))
        if family == "piecewise_linear":
            return PiecewiseLinearProfile(
                tuple((float(x), float(u)) for x, u in sec["breakpoints"]))
        raise ConfigFileError(
            "[initial].family must be affine, smooth_ramp, or piecewise_linear")

    def leader_closure(self):
        sec = self.section("micro")
        name = sec.get("leader_closure", "free_flow")
        if name == "free_flow":
            return FreeFlow()
        if name == "ghost_headway":
            if "ghost_gap" not in sec:
                raise ConfigFileError("ghost_headway closure needs [micro].ghost_gap")
            return GhostHeadway(gap=float(sec["ghost_gap"]))
        raise ConfigFileError(
            "[micro].leader_closure must be free_flow or ghost_headway")

    def scenario(self, dist=None) -> Scenario:
        study = self.section("study", required=True)
        micro = self.section("micro")
        macro = self.section("macro", required=True)
        flux = self.section("flux", required=True)
        return Scenario(
            dist=dist if dist is not None else self.distribution(),
            u0=self.initial_profile(),
            x_window=(float(macro["x_min"]), float(macro["x_max"])),
            t_macro=float(macro["t_final"]),
            epsilons=tuple(float(e) for e in study["epsilons"]),
            seeds=tuple(int(s) for s in study["seeds"]),
            dt_factor=float(study.get("dt_factor", micro.get("dt_factor", 0.5))),
            eval_nx=int(study.get("eval_nx", 21)),
            eval_nt=int(study.get("eval_nt", 11)),
            error_threshold=float(study.get("threshold", 0.25)),
            slack=float(study.get("slack", 0.10)),
            flux_p_max=float(flux["p_max"]),
            flux_grid_points=int(flux["grid_points"]),
            flux_tol=float(flux["tol"]),
        )

    def output_directory(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        return Path(self.section("output").get("directory", "out"))


def _check_keys(section_name, mapping, allowed):
    for key, val in mapping.items():
        if key not in allowed:
            raise ConfigFileError(
                f"unknown key '{section_name}.{key}' "
                f"(allowed: {', '.join(sorted(allowed))})")
        expected = allowed[key]
        if not isinstance(val, expected):
            raise ConfigFileError(
                f"'{section_name}.{key}' has wrong type {type(val).__name__}")


def load_config(path) -> ScenarioConfig:
    """Parse and schema-validate a scenario TOML file."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigFileError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFileError(f"TOML parse error in {path}: {exc}") from exc

    for key in raw:
        if key not in _SECTION_KEYS and key != "types":
            raise ConfigFileError(f"unknown section [{key}]")
    for k, traw in enumerate(raw.get("types", [])):
        if not isinstance(traw, dict):
            raise ConfigFileError("[[types]] entries must be tables")
        _check_keys(f"types[{k}]", traw, _TYPE_KEYS)
    for name, allowed in _SECTION_KEYS.items():
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigFileError(f"[{name}] must be a table")
            _check_keys(name, raw[name], allowed)

    return ScenarioConfig(raw=raw, path=str(path), scenario_hash=canonical_hash(raw))
