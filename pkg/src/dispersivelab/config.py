"""Flat key = value configuration with dotted sections.

The format is deliberately diff-friendly: one assignment per line,
``section.key = value``, ``#`` comments.  Lists are comma separated.
Every strict ordering the experiments rely on is validated here before any
computation starts; violations raise ConfigInvalid naming the ordering.
"""

import os

import numpy as np

from .errors import ConfigInvalid
from .geometry import metric_from_dict
from .grids import GridSpec
from .windows import SpectralWindow

__all__ = ["parse_config_text", "load_config", "LabConfig"]


def _coerce(value):
    value = value.strip()
    if "," in value:
        return [_coerce(v) for v in value.split(",") if v.strip()]
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def parse_config_text(text):
    tree = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigInvalid(f"line {lineno}: '{key}' collides with a scalar")
        node[parts[-1]] = _coerce(value)
    return tree


class LabConfig:
    """Validated experiment configuration.

    Sections: metric, grid, semiclassical, region, experiment, output.
    """

    def __init__(self, tree, base_dir="."):
        self.tree = tree
        self.base_dir = base_dir
        self._validate()

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_path(cls, path):
        with open(path) as fh:
            text = fh.read()
        cfg = cls(parse_config_text(text), base_dir=os.path.dirname(os.path.abspath(path)))
        cfg.raw_text = text
        return cfg

    # -- accessors ----------------------------------------------------------

    def section(self, name, default=None):
        return self.tree.get(name, default if default is not None else {})

    def metric(self):
        block = dict(self.section("metric"))
        if "table_path" in block and not os.path.isabs(str(block["table_path"])):
            block["table_path"] = os.path.join(self.base_dir, str(block["table_path"]))
        return metric_from_dict(block)

    def grid(self):
        g = self.section("grid")
        return GridSpec(int(g.get("dim", 1)), float(g.get("box_half_width", 96.0)),
                        int(g.get("n_points", 1024)))

    def window(self):
        s = self.section("semiclassical")
        return SpectralWindow(float(s.get("window_lo", 0.09)),
                              float(s.get("window_hi", 0.36)),
                              float(s.get("margin_frac", 0.25)))

    def h_list(self):
        s = self.section("semiclassical")
        hs = s.get("h_list", [0.2, 0.1])
        if not isinstance(hs, list):
            hs = [hs]
        return [float(h) for h in hs]

    def sigmas(self):
        r = self.section("region")
        return tuple(float(r.get(f"sigma{i}", v)) for i, v in
                     ((1, -0.8), (2, -0.7), (3, -0.6), (4, -0.5)))

    def region_radius(self):
        return float(self.section("region").get("R", 5.0))

    def intervals(self):
        """Nested energy intervals I4 inside I3 inside I2 inside I1."""
        s = self.section("semiclassical")
        lo = float(s.get("window_lo", 0.09))
        hi = float(s.get("window_hi", 0.36))
        inflate = float(self.section("region").get("inflation", 1.1))
        out = []
        width_lo, width_hi = lo, hi
        for k in range(4):
            factor = inflate ** k
            center_lo = lo / factor
            center_hi = hi * factor
            out.append((center_lo, center_hi))
        # out[0] = I4 (innermost), out[3] = I1 (outermost)
        return out[::-1]  # [I1, I2, I3, I4]

    def seed(self):
        return int(self.section("experiment").get("seed", 0))

    def experiment_ids(self):
        ids = self.section("experiment").get("ids", ["certify"])
        if not isinstance(ids, list):
            ids = [ids]
        return [str(i) for i in ids]

    def output_dir(self, override=None):
        if override:
            return override
        env = os.environ.get("DISPERSIVE_LAB_OUT")
        out = self.section("output").get("directory") or env or "./dispersivelab_out"
        return str(out)

    # -- validation ----------------------------------------------------------

    def _validate(self):
        s1, s2, s3, s4 = self.sigmas()
        if not (-1.0 < s1 < s2 < s3 < s4 < 1.0):
            for a, b, name in ((s1, s2, "sigma1 < sigma2"),
                               (s2, s3, "sigma2 < sigma3"),
                               (s3, s4, "sigma3 < sigma4")):
                if not a < b:
                    raise ConfigInvalid(f"{name} violated ({a} >= {b})")
            raise ConfigInvalid("sigma thresholds must lie in (-1, 1)")
        I1, I2, I3, I4 = self.intervals()
        for inner, outer, name in ((I4, I3, "I4 inside I3"), (I3, I2, "I3 inside I2"),
                                   (I2, I1, "I2 inside I1")):
            if not (outer[0] < inner[0] and inner[1] < outer[1]):
                raise ConfigInvalid(f"interval nesting {name} violated")
        grid = self.grid()
        sup_xi = np.sqrt(I1[1])
        for h in self.h_list():
            if sup_xi / h > 0.6 * grid.nyquist:
                raise ConfigInvalid(
                    f"h-grid coupling violated at h = {h}: sup|xi|/h = "
                    f"{sup_xi / h:.2f} exceeds 0.6 * Nyquist = {0.6 * grid.nyquist:.2f}")

    def echo(self):
        """Verbatim nested-tree echo embedded into reports."""
        return self.tree


def load_config(path):
    return LabConfig.from_path(path)
