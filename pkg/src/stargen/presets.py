"""Named example systems at desk scale.

uhf2 is the pure-AF smoke case (single-point grid, one block, multiplicity
2 throughout, so D reduces to scalars). goodearl exercises c = 1 with a
real sample grid. villadsen-small is the two-step c = 2 tower whose grids
grow as g^(2^i); its second evaluation set has two points so that later
corner constructions find enough multiplicity.
"""

from __future__ import annotations

from .spaces import base_interval_grid
from .system import VilladsenParams

__all__ = ["PRESET_NAMES", "preset_params", "preset_run_defaults"]

PRESET_NAMES = ("uhf2", "goodearl", "villadsen-small")

_DEFAULTS = {
    "uhf2": {"depth": 4, "truncate": 3, "grid": 1},
    "goodearl": {"depth": 3, "truncate": 2, "grid": 3},
    "villadsen-small": {"depth": 3, "truncate": 2, "grid": 3},
}


def preset_run_defaults(name: str) -> dict:
    if name not in _DEFAULTS:
        raise KeyError(f"unknown preset {name!r}; expected one of "
                       f"{', '.join(PRESET_NAMES)}")
    return dict(_DEFAULTS[name])


def preset_params(name: str, grid: int = None) -> VilladsenParams:
    """Parameters of a named preset; ``grid`` overrides the sample count
    of the base interval where the preset has one.
    """
    if name == "uhf2":
        # grid is irrelevant over a point; six steps leave depth headroom
        steps = 6
        return VilladsenParams(
            base=base_interval_grid(1),
            c=(1,) * steps,
            s_multiplicities=((1,),) * steps,
            eval_points=((0,),) * steps,
            n0=2,
        )
    g = _DEFAULTS.get(name, {}).get("grid", 3) if grid is None else grid
    if name == "goodearl":
        steps = 4
        return VilladsenParams(
            base=base_interval_grid(g),
            c=(1,) * steps,
            s_multiplicities=((1,),) * steps,
            eval_points=((0,),) * steps,
            n0=2,
        )
    if name == "villadsen-small":
        return VilladsenParams(
            base=base_interval_grid(g),
            c=(2, 2),
            s_multiplicities=((1, 1), (1, 1)),
            eval_points=((0,), (0, (g * g - 1) // 2)),
            n0=2,
        )
    raise KeyError(f"unknown preset {name!r}; expected one of "
                   f"{', '.join(PRESET_NAMES)}")
