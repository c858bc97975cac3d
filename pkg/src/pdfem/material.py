"""Linear-elastic material with fracture toughness and derived constants."""

from dataclasses import dataclass

_MODES = ("plane_stress", "plane_strain", "3d")


@dataclass(frozen=True)
class Material:
    """Isotropic material. `mode` selects plane stress, plane strain, or 3-D.

    K_Ic is the mode-I fracture toughness in consistent units (e.g. Pa*sqrt(m)
    when lengths are metres and moduli Pascals); it is only consulted by the
    propagation driver.
    """

    E: float
    nu: float
    K_Ic: float = 0.0
    mode: str = "plane_stress"

    def __post_init__(self):
        if self.E <= 0.0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.nu}")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")

    @property
    def shear_modulus(self):
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def lame_lambda(self):
        """First Lame parameter of the governing continuum.

        Under plane stress the bond-stiffness kernel uses the reduced
        combination E/(2(1-nu)) for (lambda + G); that special case lives with
        the kernel, not here.
        """
        return self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    @property
    def kappa(self):
        """Kolosov constant for the near-tip displacement field."""
        if self.mode == "plane_stress":
            return (3.0 - self.nu) / (1.0 + self.nu)
        return 3.0 - 4.0 * self.nu

    @property
    def E_eff(self):
        """Effective modulus relating the interaction integral to K: E' in
        K = E'/2 * I per unit auxiliary factor; E for plane stress,
        E/(1-nu^2) otherwise."""
        if self.mode == "plane_stress":
            return self.E
        return self.E / (1.0 - self.nu * self.nu)
