import math
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

logger = logging.getLogger(__name__)

# Contracted index order used throughout: 11, 22, 33, 23, 13, 12
VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
VOIGT_INDEX = np.array([[0, 5, 4],
                        [5, 1, 3],
                        [4, 3, 2]])

SYMMETRY_CLASSES = ('isotropic', 'transversely_isotropic', 'orthotropic')
MATERIAL_KINDS = ('metal', 'composite', 'polymer', '')

DEFAULT_STEEL_DENSITY = 7900.0
DEFAULT_CFRP_DENSITY = 1580.0
DEFAULT_STEEL_THICKNESS = 0.12
DEFAULT_PLY_THICKNESS = 0.13


class MaterialError(ValueError):
    """Invalid material constants, stiffness tensor or layup."""


def _close(a, b, rtol=1e-9):
    return abs(a - b) <= rtol * max(abs(a), abs(b), 1e-300)


def to_full(c):
    """Expand a 6x6 contracted stiffness into the 3x3x3x3 tensor."""
    c = np.asarray(c)
    return c[VOIGT_INDEX[:, :, None, None], VOIGT_INDEX[None, None, :, :]]


def from_full(C):
    c = np.empty((6, 6), dtype=np.asarray(C).dtype)
    for a, (i, j) in enumerate(VOIGT_PAIRS):
        for b, (k, l) in enumerate(VOIGT_PAIRS):
            c[a, b] = C[i, j, k, l]
    return c


def detect_symmetry(c, rtol=1e-9):
    """Classify a contracted stiffness by the identities it satisfies."""
    c = np.asarray(c, dtype=float)
    if (_close(c[0, 0], c[1, 1], rtol) and _close(c[1, 1], c[2, 2], rtol)
            and _close(c[0, 1], c[0, 2], rtol) and _close(c[0, 1], c[1, 2], rtol)
            and _close(c[3, 3], c[4, 4], rtol) and _close(c[4, 4], c[5, 5], rtol)
            and _close(c[3, 3], 0.5 * (c[0, 0] - c[0, 1]), rtol)):
        return 'isotropic'
    if (_close(c[1, 1], c[2, 2], rtol) and _close(c[4, 4], c[5, 5], rtol)
            and _close(c[0, 1], c[0, 2], rtol)
            and _close(c[3, 3], 0.5 * (c[1, 1] - c[1, 2]), rtol)):
        return 'transversely_isotropic'
    return 'orthotropic'


@dataclass(frozen=True, eq=False)
class ElasticityTensor:
    """6x6 stiffness in contracted notation, GPa."""
    c: np.ndarray
    symmetry: str = 'orthotropic'

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.shape != (6, 6):
            raise MaterialError(f"Stiffness must be 6x6, got {c.shape}")
        if self.symmetry not in SYMMETRY_CLASSES:
            raise MaterialError(f"Unknown symmetry class '{self.symmetry}'")
        c.setflags(write=False)
        object.__setattr__(self, 'c', c)

    @property
    def pascal(self):
        return self.c * 1e9

    def full(self):
        return to_full(self.c)

    def allclose(self, other, rtol=1e-12, atol=0.0):
        return np.allclose(self.c, other.c, rtol=rtol, atol=atol)

    def compliance(self):
        return np.linalg.inv(self.c)


def validate_tensor(t, rtol=1e-9):
    """Return a list of violated ElasticityTensor invariants (empty when valid)."""
    problems = []
    c = t.c
    scale = np.abs(c).max()
    if not np.allclose(c, c.T, rtol=0.0, atol=rtol * scale):
        problems.append('matrix is not symmetric')
    eig = np.linalg.eigvalsh(0.5 * (c + c.T))
    if eig.min() <= 0:
        problems.append(f'not positive definite (min eigenvalue {eig.min():.3g})')
    if t.symmetry == 'isotropic' and not _close(c[3, 3], 0.5 * (c[0, 0] - c[0, 1]), rtol):
        problems.append('isotropic identity c44 == (c11 - c12)/2 violated')
    if t.symmetry == 'transversely_isotropic':
        if not (_close(c[1, 1], c[2, 2], rtol) and _close(c[4, 4], c[5, 5], rtol)):
            problems.append('transverse isotropy requires c22 == c33 and c55 == c66')
        if not _close(c[3, 3], 0.5 * (c[1, 1] - c[1, 2]), rtol):
            problems.append('transverse isotropy identity c44 == (c22 - c23)/2 violated')
    return problems


@dataclass(frozen=True)
class MaterialRecord:
    """Engineering constants of one material. Moduli in GPa, density kg/m^3, thickness mm."""
    name: str
    E1: float
    E2: float
    E3: float
    G12: float
    G13: float
    G23: float
    nu12: float
    nu13: float
    nu23: float
    density: float
    ply_thickness: float
    notes: str = field(default='', compare=False)
    kind: str = ''  # metal, composite, polymer; '' when unspecified

    def __post_init__(self):
        if self.kind not in MATERIAL_KINDS:
            raise MaterialError(f"{self.name}: unknown material kind '{self.kind}'. Known: {', '.join(MATERIAL_KINDS[:-1])}")
        for key in ('E1', 'E2', 'E3', 'G12', 'G13', 'G23', 'density', 'ply_thickness'):
            if not getattr(self, key) > 0:
                raise MaterialError(f"{self.name}: {key} must be > 0, got {getattr(self, key)}")
        for key in ('nu12', 'nu13', 'nu23'):
            val = getattr(self, key)
            if not 0 < val < 0.5:
                raise MaterialError(f"{self.name}: {key} must lie in (0, 0.5), got {val}")

    @property
    def is_isotropic(self):
        return (_close(self.E1, self.E2) and _close(self.E2, self.E3)
                and _close(self.nu12, self.nu13) and _close(self.nu13, self.nu23)
                and _close(self.G12, self.G13) and _close(self.G13, self.G23)
                and _close(self.G12, self.E1 / (2 * (1 + self.nu12))))

    def symmetry_class(self):
        if self.is_isotropic:
            return 'isotropic'
        if (_close(self.E2, self.E3) and _close(self.nu12, self.nu13) and _close(self.G12, self.G13)
                and _close(self.G23, self.E2 / (2 * (1 + self.nu23)))):
            return 'transversely_isotropic'
        return 'orthotropic'

    def compliance(self):
        """Compliance in 1/GPa with the major-Poisson convention (nu21 = nu12*E2/E1)."""
        S = np.zeros((6, 6))
        S[0, 0] = 1.0 / self.E1
        S[1, 1] = 1.0 / self.E2
        S[2, 2] = 1.0 / self.E3
        S[0, 1] = S[1, 0] = -self.nu12 / self.E1
        S[0, 2] = S[2, 0] = -self.nu13 / self.E1
        S[1, 2] = S[2, 1] = -self.nu23 / self.E2
        S[3, 3] = 1.0 / self.G23
        S[4, 4] = 1.0 / self.G13
        S[5, 5] = 1.0 / self.G12
        return S


def isotropic_record(name, E, nu, density=DEFAULT_STEEL_DENSITY, ply_thickness=DEFAULT_STEEL_THICKNESS, notes='',
                     kind=''):
    if not E > 0:
        raise MaterialError(f"{name}: E must be > 0, got {E}")
    if not 0 < nu < 0.5:
        raise MaterialError(f"{name}: nu must lie in (0, 0.5), got {nu}")
    G = E / (2 * (1 + nu))
    return MaterialRecord(name, E, E, E, G, G, G, nu, nu, nu, density, ply_thickness, notes, kind)


def transversely_isotropic_record(name, E1, E2, G12, nu12, nu23, density=DEFAULT_CFRP_DENSITY,
                                  ply_thickness=DEFAULT_PLY_THICKNESS, notes='', kind='composite'):
    """Record with fibres along axis 1 and G23 taken from the isotropy of the 2-3 plane."""
    G23 = E2 / (2 * (1 + nu23))
    return MaterialRecord(name, E1, E2, E2, G12, G12, G23, nu12, nu12, nu23, density, ply_thickness, notes, kind)


def stiffness_from_isotropic(E, nu):
    if not E > 0:
        raise MaterialError(f"Young's modulus must be > 0, got {E}")
    if not 0 <= nu < 0.5:
        raise MaterialError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    lam_factor = E / ((1 + nu) * (1 - 2 * nu))
    c11 = lam_factor * (1 - nu)
    c12 = lam_factor * nu
    c44 = E / (2 * (1 + nu))
    c = np.zeros((6, 6))
    c[:3, :3] = c12
    np.fill_diagonal(c[:3, :3], c11)
    c[3, 3] = c[4, 4] = c[5, 5] = c44
    return ElasticityTensor(c, 'isotropic')


@lru_cache(maxsize=128)
def stiffness_from_engineering(rec):
    """Invert the compliance assembled from a MaterialRecord."""
    S = rec.compliance()
    eig = np.linalg.eigvalsh(S)
    if eig.min() <= 0 or np.linalg.cond(S) > 1e12:
        raise MaterialError(
            f"{rec.name}: compliance is singular or not positive definite "
            f"(min eigenvalue {eig.min():.3g}); constants are not thermodynamically admissible")
    c = np.linalg.inv(S)
    c = 0.5 * (c + c.T)
    return ElasticityTensor(c, rec.symmetry_class())


def engineering_constants(t):
    """Re-extract (E1, E2, E3, G12, G13, G23, nu12, nu13, nu23) from a stiffness tensor."""
    S = np.linalg.inv(t.c)
    E1, E2, E3 = 1 / S[0, 0], 1 / S[1, 1], 1 / S[2, 2]
    nu12 = -S[1, 0] / S[0, 0]
    nu13 = -S[2, 0] / S[0, 0]
    nu23 = -S[1, 2] / S[1, 1]
    G23, G13, G12 = 1 / S[3, 3], 1 / S[4, 4], 1 / S[5, 5]
    return E1, E2, E3, G12, G13, G23, nu12, nu13, nu23


def _in_plane_transform(theta_deg):
    m = math.cos(math.radians(theta_deg))
    n = math.sin(math.radians(theta_deg))
    return np.array([
        (m ** 2, n ** 2, 0.0, 0.0, 0.0, 2 * m * n),
        (n ** 2, m ** 2, 0.0, 0.0, 0.0, -2 * m * n),
        (0.0, 0.0, 1.0, 0.0, 0.0, 0.0),
        (0.0, 0.0, 0.0, m, -n, 0.0),
        (0.0, 0.0, 0.0, n, m, 0.0),
        (-m * n, m * n, 0.0, 0.0, 0.0, m ** 2 - n ** 2)])


_REUTER = np.diag([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
_REUTER_INV = np.diag([1.0, 1.0, 1.0, 0.5, 0.5, 0.5])


def rotate_in_plane(t, theta_deg):
    """Stiffness of a layer whose material axes are turned by theta about the thickness axis."""
    if theta_deg % 360.0 == 0.0:
        return t
    T = _in_plane_transform(theta_deg)
    c = np.linalg.inv(T) @ t.c @ _REUTER @ T @ _REUTER_INV
    c = 0.5 * (c + c.T)
    symmetry = t.symmetry if t.symmetry == 'isotropic' else 'orthotropic'
    return ElasticityTensor(c, symmetry)


@dataclass(frozen=True)
class Layer:
    material: MaterialRecord
    thickness: float  # mm
    theta: float = 0.0  # deg

    def __post_init__(self):
        if not self.thickness > 0:
            raise MaterialError(f"Layer of {self.material.name}: thickness must be > 0, got {self.thickness}")

    def stiffness(self):
        return rotate_in_plane(stiffness_from_engineering(self.material), self.theta)


@dataclass(frozen=True)
class Laminate:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise MaterialError("Laminate needs at least one layer")
        object.__setattr__(self, 'layers', layers)

    def __len__(self):
        return len(self.layers)

    @property
    def total_thickness(self):
        return math.fsum(layer.thickness for layer in self.layers)

    @property
    def metal_volume_fraction(self):
        """Thickness share of layers whose record is of kind 'metal'."""
        metal = math.fsum(layer.thickness for layer in self.layers if layer.material.kind == 'metal')
        return metal / self.total_thickness

    @property
    def is_symmetric(self):
        return all(a == b for a, b in zip(self.layers, reversed(self.layers)))

    def split_layers(self, parts=2):
        """Same stack with every layer cut into equal sublayers."""
        return Laminate(tuple(
            Layer(layer.material, layer.thickness / parts, layer.theta)
            for layer in self.layers for _ in range(parts)))

    def rotated(self, direction_deg):
        """Stack seen from a propagation direction turned by direction_deg in-plane."""
        if direction_deg == 0:
            return self
        return Laminate(tuple(replace(layer, theta=layer.theta - direction_deg) for layer in self.layers))

    def describe(self):
        names = '/'.join(f"{layer.material.name}@{layer.theta:g}" for layer in self.layers)
        return f"{len(self.layers)} layers, d={self.total_thickness:.4g} mm [{names}]"

    def to_json(self):
        materials = {}
        for layer in self.layers:
            materials.setdefault(layer.material.name, layer.material)
        return {
            'materials': [
                {key: getattr(rec, key) for key in (
                    'name', 'E1', 'E2', 'E3', 'G12', 'G13', 'G23', 'nu12', 'nu13', 'nu23')}
                | {'density': rec.density, 't_mm': rec.ply_thickness, 'kind': rec.kind}
                for rec in materials.values()],
            'layup': [{'material': layer.material.name, 't_mm': layer.thickness, 'theta_deg': layer.theta}
                      for layer in self.layers],
        }


MATERIAL_CATALOG = {
    'steel_din': isotropic_record(
        'steel_din', 179.0, 0.3, notes='DIN EN 10151 values for alloy 1.4310', kind='metal'),
    'steel_pretest': isotropic_record(
        'steel_pretest', 191.0, 0.3, notes='own tensile pretests of the 0.12 mm foil', kind='metal'),
    'ncamp': transversely_isotropic_record(
        'ncamp', 132.0, 9.2, 4.8, 0.3, 0.45, ply_thickness=0.19,
        notes='nu23 not reported; 0.45 borrowed, G23 from transverse isotropy'),
    'garstka': MaterialRecord(
        'garstka', 135.0, 9.5, 9.5, 4.9, 4.9, 4.9, 0.3, 0.3, 0.45, DEFAULT_CFRP_DENSITY,
        DEFAULT_PLY_THICKNESS, notes='G23 equal to G12 breaks transverse isotropy; kept as published',
        kind='composite'),
    'horberg': MaterialRecord(
        'horberg', 135.0, 9.5, 9.5, 4.9, 4.9, 3.3, 0.3, 0.3, 0.45, DEFAULT_CFRP_DENSITY, 0.13,
        kind='composite'),
    'johnston': MaterialRecord(
        'johnston', 122.0, 9.9, 9.9, 5.2, 5.2, 3.4, 0.27, 0.27, 0.47, DEFAULT_CFRP_DENSITY,
        DEFAULT_PLY_THICKNESS, notes='ply thickness from the data sheet', kind='composite'),
    'datasheet': transversely_isotropic_record(
        'datasheet', 141.0, 10.0, 4.8, 0.3, 0.45, ply_thickness=0.13,
        notes='only E1 and E2 published; shear and Poisson values borrowed'),
}

DEFAULT_STEEL = 'steel_pretest'
DEFAULT_CFRP = 'johnston'


def material_from_catalog(name, /, **overrides):
    try:
        rec = MATERIAL_CATALOG[name.lower()]
    except KeyError:
        raise MaterialError(f"Unknown catalog material '{name}'. Known: {', '.join(sorted(MATERIAL_CATALOG))}")
    return replace(rec, **overrides) if overrides else rec


def build_fml_layup(steel=None, cfrp=None, steel_thickness=DEFAULT_STEEL_THICKNESS,
                    ply_thickness=DEFAULT_PLY_THICKNESS):
    """The [St/0_4/St/0_2]_S stack: 4 steel foils and 12 unidirectional plies."""
    steel = steel or MATERIAL_CATALOG[DEFAULT_STEEL]
    cfrp = cfrp or MATERIAL_CATALOG[DEFAULT_CFRP]
    st = Layer(steel, steel_thickness, 0.0)
    ply = Layer(cfrp, ply_thickness, 0.0)
    half = [st, ply, ply, ply, ply, st, ply, ply]
    return Laminate(tuple(half + half[::-1]))


def _record_from_config(entry):
    entry = dict(entry)
    if 'catalog' in entry:
        base = entry.pop('catalog')
        name = entry.pop('name', base)
        overrides = {'name': name}
        if 'density' in entry:
            overrides['density'] = float(entry.pop('density'))
        if 't_mm' in entry:
            overrides['ply_thickness'] = float(entry.pop('t_mm'))
        if 'kind' in entry:
            overrides['kind'] = str(entry.pop('kind'))
        for key in ('E1', 'E2', 'E3', 'G12', 'G13', 'G23', 'nu12', 'nu13', 'nu23'):
            if key in entry:
                overrides[key] = float(entry.pop(key))
        return material_from_catalog(base, **overrides)
    name = entry['name']
    density = float(entry.get('density', DEFAULT_STEEL_DENSITY if 'E' in entry else DEFAULT_CFRP_DENSITY))
    kind = str(entry.get('kind', ''))
    if 'E' in entry:
        return isotropic_record(name, float(entry['E']), float(entry['nu']), density,
                                float(entry.get('t_mm', DEFAULT_STEEL_THICKNESS)), kind=kind)
    return MaterialRecord(
        name, *(float(entry[key]) for key in ('E1', 'E2', 'E3', 'G12', 'G13', 'G23', 'nu12', 'nu13', 'nu23')),
        density, float(entry.get('t_mm', DEFAULT_PLY_THICKNESS)), kind=kind)


def laminate_from_config(data):
    """Build a Laminate from the JSON run-config blocks 'materials' and 'layup'."""
    try:
        records = {}
        for entry in data.get('materials', []):
            rec = _record_from_config(entry)
            records[rec.name] = rec

        def lookup(name):
            if name in records:
                return records[name]
            return material_from_catalog(name)

        layup = data.get('layup', 'fml')
        if layup == 'fml':
            fml = data.get('fml', {})
            return build_fml_layup(lookup(fml.get('steel', DEFAULT_STEEL)), lookup(fml.get('cfrp', DEFAULT_CFRP)),
                                   float(fml.get('steel_t_mm', DEFAULT_STEEL_THICKNESS)),
                                   float(fml.get('ply_t_mm', DEFAULT_PLY_THICKNESS)))
        layers = []
        for entry in layup:
            rec = lookup(entry['material'])
            layers.append(Layer(rec, float(entry.get('t_mm', rec.ply_thickness)), float(entry.get('theta_deg', 0.0))))
        return Laminate(tuple(layers))
    except KeyError as e:
        raise MaterialError(f"Laminate config is missing key {e}")
    except (TypeError, ValueError) as e:
        if isinstance(e, MaterialError):
            raise
        raise MaterialError(f"Laminate config is malformed: {e}")
