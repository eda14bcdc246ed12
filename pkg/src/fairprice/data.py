"""Portfolio container, synthetic scenario generators, CSV ingestion, splits.

A portfolio keeps its features in three named blocks -- policyholder,
geographic, car -- next to (but never mixed with) the sensitive attribute
column(s), the target, and an optional exposure. Models only ever see the
feature blocks; the sensitive block exists for measurement and penalties.
"""

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numkit import Rng

__all__ = [
    "Portfolio",
    "SchemaConfig",
    "ColumnEncoder",
    "generate_synthetic",
    "generate_frequency_synthetic",
    "split",
    "save_csv",
    "load_csv",
    "read_table",
]

ROLES = ("policy", "geo", "car", "sensitive", "target", "exposure", "ignore")

SCHEMA_FORMAT = "fairprice-schema"
SCHEMA_VERSION = 1


@dataclass
class Portfolio:
    """Columnar dataset split into feature blocks plus sensitive/target."""

    x_p: np.ndarray
    x_g: np.ndarray
    x_c: np.ndarray
    s: np.ndarray
    y: np.ndarray
    exposure: np.ndarray = None
    names_p: list = field(default_factory=list)
    names_g: list = field(default_factory=list)
    names_c: list = field(default_factory=list)
    names_s: list = field(default_factory=list)
    target_name: str = "y"
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_p = _as_block(self.x_p)
        self.x_g = _as_block(self.x_g)
        self.x_c = _as_block(self.x_c)
        self.s = _as_block(self.s)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.exposure is not None:
            self.exposure = np.asarray(self.exposure, dtype=float).ravel()
        n = self.y.size
        for name, block in (("x_p", self.x_p), ("x_g", self.x_g), ("x_c", self.x_c), ("s", self.s)):
            if block.shape[0] != n:
                raise ValueError(f"{name} has {block.shape[0]} rows, target has {n}")
        if self.exposure is not None and self.exposure.size != n:
            raise ValueError("exposure length mismatch")
        feature_names = list(self.names_p) + list(self.names_g) + list(self.names_c)
        overlap = set(self.names_s) & set(feature_names)
        if overlap:
            raise ValueError(f"sensitive columns leaked into feature blocks: {sorted(overlap)}")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("target contains non-finite values")

    @property
    def n(self):
        return self.y.size

    def take(self, idx):
        idx = np.asarray(idx)
        return Portfolio(
            x_p=self.x_p[idx],
            x_g=self.x_g[idx],
            x_c=self.x_c[idx],
            s=self.s[idx],
            y=self.y[idx],
            exposure=None if self.exposure is None else self.exposure[idx],
            names_p=list(self.names_p),
            names_g=list(self.names_g),
            names_c=list(self.names_c),
            names_s=list(self.names_s),
            target_name=self.target_name,
            aux={k: v[idx] for k, v in self.aux.items()},
        )

    def sensitive_column(self, index=0):
        return self.s[:, index]


def _as_block(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    return a


@dataclass
class SchemaConfig:
    """Column-role map for CSV ingestion."""

    roles: dict
    task: str = "binary"
    geo_coords: list = field(default_factory=list)
    standardize_numeric: bool = False

    def __post_init__(self):
        unknown = {r for r in self.roles.values() if r not in ROLES}
        if unknown:
            raise ValueError(f"unknown roles {sorted(unknown)}; valid roles: {ROLES}")
        targets = [c for c, r in self.roles.items() if r == "target"]
        if len(targets) != 1:
            raise ValueError(f"schema needs exactly one target column, found {targets}")
        if not any(r == "sensitive" for r in self.roles.values()):
            raise ValueError("schema needs at least one sensitive column")

    def columns(self, role):
        return [c for c, r in self.roles.items() if r == role]

    def to_json(self):
        return {
            "format": SCHEMA_FORMAT,
            "version": SCHEMA_VERSION,
            "task": self.task,
            "roles": dict(self.roles),
            "geo_coords": list(self.geo_coords),
            "standardize_numeric": self.standardize_numeric,
        }

    @classmethod
    def from_json(cls, doc):
        if doc.get("format") != SCHEMA_FORMAT:
            raise ValueError("not a schema document")
        return cls(
            roles=dict(doc["roles"]),
            task=doc.get("task", "binary"),
            geo_coords=list(doc.get("geo_coords", [])),
            standardize_numeric=bool(doc.get("standardize_numeric", False)),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# synthetic scenarios
# ---------------------------------------------------------------------------

# geographic anchor of the salary bowl (a metropolitan center)
_CENTER_LON = 2.3482669
_CENTER_LAT = 48.8601267


def generate_synthetic(n, seed, spatial_sensitive=False):
    """Binary claim scenario with planted gender proxies.

    The label depends only on aggressiveness and inattention, both independent
    of gender; color, top speed and area salary are gender-caused proxies, and
    age tracks inattention. With ``spatial_sensitive`` the sensitive block is
    the (latitude, longitude) pair instead of gender.
    """
    if n < 100:
        raise ValueError("generator needs n >= 100")
    rng = Rng(seed)
    gender = rng.binomial(1, 0.5, n).astype(float)
    inattention_age = rng.multivariate_normal([0.0, 40.0], [[1.0, 4.0], [4.0, 20.0]], size=n)
    inattention = inattention_age[:, 0]
    age = inattention_age[:, 1]
    aggressiveness = rng.normal(0.0, 1.0, n)
    color = (1.5 * gender + aggressiveness > 1.0).astype(float)
    speed = 150.0 + 20.0 * gender + 15.0 * aggressiveness + rng.normal(0.0, 5.0, n)

    longitude = rng.normal(_CENTER_LON, 0.17, n)
    latitude = rng.normal(_CENTER_LAT, 0.07, n)
    bowl = 0.2 * (longitude - _CENTER_LON) ** 2 + (latitude - _CENTER_LAT) ** 2
    salary = 1246.0 - 50000.0 * bowl
    shifted = 1.0851 * salary - 185.112
    salary = np.where(gender == 1.0, salary, shifted)

    noise = rng.normal(0.0, np.sqrt(0.1), n)
    logits = aggressiveness + inattention + noise
    claim = (1.0 / (1.0 + np.exp(-logits)) > 0.5).astype(float)

    # ground-truth drivers ride along for diagnostics; never used as features
    latents = {"inattention": inattention, "aggressiveness": aggressiveness}
    if spatial_sensitive:
        s = np.column_stack([latitude, longitude])
        names_s = ["latitude", "longitude"]
        aux = {"gender": gender, **latents}
    else:
        s = gender[:, None]
        names_s = ["gender"]
        aux = {"latitude": latitude, "longitude": longitude, **latents}
    return Portfolio(
        x_p=age[:, None],
        x_g=salary[:, None],
        x_c=np.column_stack([color, speed]),
        s=s,
        y=claim,
        names_p=["age"],
        names_g=["salary"],
        names_c=["color", "speed"],
        names_s=names_s,
        target_name="claim",
        aux=aux,
    )


def synthetic_schema(spatial_sensitive=False):
    """Schema matching the CSV written for the binary claim scenario."""
    roles = {
        "age": "policy",
        "salary": "geo",
        "color": "car",
        "speed": "car",
        "gender": "sensitive" if not spatial_sensitive else "ignore",
        "latitude": "sensitive" if spatial_sensitive else "ignore",
        "longitude": "sensitive" if spatial_sensitive else "ignore",
        "inattention": "ignore",
        "aggressiveness": "ignore",
        "claim": "target",
    }
    return SchemaConfig(roles=roles, task="binary", geo_coords=["salary"])


def generate_frequency_synthetic(n, seed):
    """Claim-count scenario with a planted class-conditional gender proxy.

    The Poisson rate loads heavily on ``engine_power`` (a direct gender
    proxy) and only mildly on the fair driver ``experience``, so an
    unconstrained model is gender-dependent within every claim-count class.
    """
    if n < 100:
        raise ValueError("generator needs n >= 100")
    rng = Rng(seed)
    gender = rng.binomial(1, 0.5, n).astype(float)
    experience = rng.normal(0.0, 1.0, n)
    engine_power = 1.5 * gender + rng.normal(0.0, 0.5, n)
    region_wealth = rng.normal(0.0, 1.0, n)
    rate = np.exp(-1.78 + 0.15 * experience + 0.7 * engine_power)
    counts = rng.poisson(rate).astype(float)
    return Portfolio(
        x_p=experience[:, None],
        x_g=region_wealth[:, None],
        x_c=engine_power[:, None],
        s=gender[:, None],
        y=counts,
        names_p=["experience"],
        names_g=["region_wealth"],
        names_c=["engine_power"],
        names_s=["gender"],
        target_name="claim_count",
    )


def split(portfolio: Portfolio, train_frac, seed):
    """Seeded uniform shuffle into disjoint, exhaustive (train, test)."""
    if not (0.0 < train_frac < 1.0):
        raise ValueError("train_frac must be in (0, 1)")
    order = Rng(seed).permutation(portfolio.n)
    n_train = int(round(portfolio.n * train_frac))
    return portfolio.take(order[:n_train]), portfolio.take(order[n_train:])


# ---------------------------------------------------------------------------
# CSV in/out
# ---------------------------------------------------------------------------


def _format_value(v):
    return repr(float(v))


def save_csv(portfolio: Portfolio, path):
    """Write the portfolio (blocks, aux, sensitive, target, exposure) as CSV."""
    header = (
        list(portfolio.names_p)
        + list(portfolio.names_g)
        + list(portfolio.names_c)
        + list(portfolio.aux.keys())
        + list(portfolio.names_s)
        + [portfolio.target_name]
    )
    columns = (
        [portfolio.x_p[:, i] for i in range(portfolio.x_p.shape[1])]
        + [portfolio.x_g[:, i] for i in range(portfolio.x_g.shape[1])]
        + [portfolio.x_c[:, i] for i in range(portfolio.x_c.shape[1])]
        + list(portfolio.aux.values())
        + [portfolio.s[:, i] for i in range(portfolio.s.shape[1])]
        + [portfolio.y]
    )
    if portfolio.exposure is not None:
        header.append("exposure")
        columns.append(portfolio.exposure)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_format_value(v) for v in row])


def read_table(path):
    """Raw CSV columns as lists of strings, keyed by header name."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header row required")
        columns = {name: [] for name in header}
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}: row {reader.line_num} has {len(row)} cells, expected {len(header)}")
            for name, cell in zip(header, row):
                columns[name].append(cell)
    return columns


def _try_float(cell):
    try:
        return float(cell)
    except ValueError:
        return None


class ColumnEncoder:
    """Fit-once feature encoding: one-hot categories, median imputation,
    optional numeric standardization.

    Statistics are computed from the rows given to :meth:`fit` (the training
    rows) and reused verbatim on any later transform, so evaluation data never
    contaminates them.
    """

    def __init__(self, schema: SchemaConfig):
        self.schema = schema
        self.numeric_stats = {}  # col -> (median, mean, std, has_missing)
        self.categories = {}  # col -> sorted list
        self.fitted = False

    @staticmethod
    def _is_numeric(values):
        return all(_try_float(c) is not None for c in values if c != "")

    def fit(self, table, rows=None):
        feature_cols = [
            c for c in table
            if self.schema.roles.get(c) in ("policy", "geo", "car")
        ]
        for col in feature_cols:
            cells = table[col] if rows is None else [table[col][i] for i in rows]
            if self._is_numeric(cells):
                values = np.array([_try_float(c) for c in cells if c != ""], dtype=float)
                if values.size == 0:
                    raise ValueError(f"column {col!r} has no observed values")
                has_missing = any(c == "" for c in cells)
                std = values.std()
                self.numeric_stats[col] = (
                    float(np.median(values)),
                    float(values.mean()),
                    float(std if std > 0 else 1.0),
                    has_missing,
                )
            else:
                self.categories[col] = sorted({c for c in cells if c != ""})
        self.fitted = True
        return self

    def encode_column(self, col, cells):
        """Encoded column block and its output names."""
        if col in self.numeric_stats:
            median, mean, std, had_missing = self.numeric_stats[col]
            raw = np.array([_try_float(c) if c != "" else np.nan for c in cells])
            for i, c in enumerate(cells):
                if c != "" and _try_float(c) is None:
                    raise ValueError(f"unparseable numeric cell at row {i + 2}, column {col!r}: {c!r}")
            missing = np.isnan(raw)
            filled = np.where(missing, median, raw)
            if self.schema.standardize_numeric:
                filled = (filled - mean) / std
            block = [filled]
            names = [col]
            if had_missing or missing.any():
                block.append(missing.astype(float))
                names.append(f"{col}__missing")
            return np.column_stack(block), names
        cats = self.categories[col]
        index = {c: i for i, c in enumerate(cats)}
        out = np.zeros((len(cells), len(cats)))
        unseen = set()
        for i, c in enumerate(cells):
            if c == "":
                continue
            j = index.get(c)
            if j is None:
                unseen.add(c)
            else:
                out[i, j] = 1.0
        if unseen:
            warnings.warn(
                f"column {col!r}: unseen categories {sorted(unseen)} mapped to all-zeros",
                RuntimeWarning,
            )
        return out, [f"{col}={c}" for c in cats]


def _parse_required_numeric(table, col, path):
    cells = table[col]
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        v = _try_float(c)
        if v is None:
            raise ValueError(f"{path}: unparseable cell at row {i + 2}, column {col!r}: {c!r}")
        out[i] = v
    return out


def load_csv(path, schema: SchemaConfig, encoder: ColumnEncoder = None, rows=None):
    """Load a CSV into a Portfolio under the given column-role schema.

    Pass a fitted ``encoder`` to reuse training-set statistics; otherwise one
    is fit on the rows being loaded. ``rows`` restricts to a row subset
    (after the encoder's own fit rows, this is how train/test splits avoid
    leaking evaluation data into the stored statistics).
    """
    table = read_table(path)
    missing_cols = [c for c in schema.roles if c not in table]
    if missing_cols:
        raise ValueError(f"{path}: schema columns not in file: {missing_cols}")
    unmapped = [c for c in table if c not in schema.roles]
    if unmapped:
        raise ValueError(f"{path}: file columns without a schema role: {unmapped}")

    if encoder is None:
        encoder = ColumnEncoder(schema).fit(table, rows)
    elif not encoder.fitted:
        raise ValueError("encoder passed to load_csv must be fitted")

    if rows is not None:
        table = {c: [cells[i] for i in rows] for c, cells in table.items()}

    blocks = {"policy": ([], []), "geo": ([], []), "car": ([], [])}
    for col in table:
        role = schema.roles[col]
        if role in blocks:
            block, names = encoder.encode_column(col, table[col])
            blocks[role][0].append(block)
            blocks[role][1].extend(names)

    def assemble(role):
        parts, names = blocks[role]
        if not parts:
            n_rows = len(next(iter(table.values())))
            return np.zeros((n_rows, 0)), []
        return np.column_stack(parts), names

    x_p, names_p = assemble("policy")
    x_g, names_g = assemble("geo")
    x_c, names_c = assemble("car")

    s_cols = schema.columns("sensitive")
    s = np.column_stack([_parse_required_numeric(table, c, path) for c in s_cols])
    target_col = schema.columns("target")[0]
    y = _parse_required_numeric(table, target_col, path)
    exposure_cols = schema.columns("exposure")
    exposure = _parse_required_numeric(table, exposure_cols[0], path) if exposure_cols else None

    pf = Portfolio(
        x_p=x_p, x_g=x_g, x_c=x_c, s=s, y=y, exposure=exposure,
        names_p=names_p, names_g=names_g, names_c=names_c,
        names_s=list(s_cols), target_name=target_col,
    )
    pf.encoder = encoder
    return pf
