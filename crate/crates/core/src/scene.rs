//! Environment and antenna description: reflectors, materials, arrays and
//! element patterns, plus the two built-in site presets.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    /// Reflection coefficient magnitude in `[0, 1]`.
    pub gamma: f64,
}

/// Axis-aligned rectangle. The extent along the normal axis is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    pub corner: Vec3,
    pub extents: Vec3,
    pub normal: Vec3,
    pub material: usize,
}

impl Reflector {
    /// Index of the coordinate axis the normal points along.
    pub fn axis(&self) -> usize {
        let n = self.normal;
        if n.x.abs() > 0.5 {
            0
        } else if n.y.abs() > 0.5 {
            1
        } else {
            2
        }
    }

    /// Coordinate of the plane along [`Reflector::axis`].
    pub fn plane(&self) -> f64 {
        self.corner.get(self.axis())
    }

    /// Mirror image of `p` across the reflector plane.
    pub fn mirror(&self, p: Vec3) -> Vec3 {
        let a = self.axis();
        p.with(a, 2.0 * self.plane() - p.get(a))
    }

    /// Whether an in-plane point lies within the rectangle (closed, with `eps` slack).
    pub fn contains(&self, p: Vec3, eps: f64) -> bool {
        let a = self.axis();
        (0..3).filter(|&k| k != a).all(|k| {
            let lo = self.corner.get(k);
            let hi = lo + self.extents.get(k);
            p.get(k) >= lo - eps && p.get(k) <= hi + eps
        })
    }

    fn validate(&self, n_materials: usize) -> Result<()> {
        let n = self.normal;
        let axis_aligned = [n.x, n.y, n.z].iter().filter(|c| c.abs() == 1.0).count() == 1
            && [n.x, n.y, n.z].iter().filter(|c| **c == 0.0).count() == 2;
        if !axis_aligned {
            return Err(Error::Parse(format!("reflector normal {n:?} is not an axis-aligned unit vector")));
        }
        let a = self.axis();
        if self.extents.get(a) != 0.0 {
            return Err(Error::Parse("reflector has thickness along its normal".into()));
        }
        for k in (0..3).filter(|&k| k != a) {
            if !(self.extents.get(k) > 0.0) {
                return Err(Error::Parse("reflector extents must be positive in-plane".into()));
            }
        }
        if self.material >= n_materials {
            return Err(Error::Parse(format!("unknown material id {}", self.material)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p.get(k) >= self.min.get(k) && p.get(k) <= self.max.get(k))
    }

    pub fn size(&self) -> Vec3 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub name: String,
    pub bounds: Bounds,
    #[serde(default)]
    pub materials: Vec<Material>,
    #[serde(default)]
    pub reflectors: Vec<Reflector>,
}

impl Scene {
    pub fn empty(name: &str, bounds: Bounds) -> Self {
        Self { name: name.into(), bounds, materials: Vec::new(), reflectors: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.materials {
            if !(0.0..=1.0).contains(&m.gamma) {
                return Err(Error::Parse(format!("material {} has gamma {} outside [0,1]", m.name, m.gamma)));
            }
        }
        for r in &self.reflectors {
            r.validate(self.materials.len())?;
        }
        let s = self.bounds.size();
        if !(s.x >= 0.0 && s.y >= 0.0 && s.z >= 0.0) {
            return Err(Error::Parse("inverted bounds".into()));
        }
        Ok(())
    }

    pub fn gamma(&self, reflector: usize) -> f64 {
        self.materials[self.reflectors[reflector].material].gamma
    }

    /// Parses the text scene format and validates it.
    pub fn from_text(text: &str) -> Result<Self> {
        let scene: Scene = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Same geometry with every reflection coefficient forced to zero.
    pub fn absorbing(&self) -> Self {
        let mut s = self.clone();
        for m in &mut s.materials {
            m.gamma = 0.0;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatternFamily {
    Isotropic,
    /// `max(cos ψ, 0)^q`
    Patch { q: f64 },
    /// `|sin ψ|`, with the boresight taken as the dipole axis.
    Dipole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternText", into = "PatternText")]
pub struct PatternSpec {
    pub family: PatternFamily,
    pub peak_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyTag {
    Isotropic,
    Patch,
    Dipole,
}

/// Text form: `{ family = "patch", q = 2.0, peak_gain = 1.0 }`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternText {
    family: FamilyTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default = "one")]
    peak_gain: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<PatternText> for PatternSpec {
    type Error = String;

    fn try_from(t: PatternText) -> std::result::Result<Self, String> {
        let family = match (t.family, t.q) {
            (FamilyTag::Patch, Some(q)) => PatternFamily::Patch { q },
            (FamilyTag::Patch, None) => return Err("patch pattern needs q".into()),
            (_, Some(_)) => return Err("only patch patterns take q".into()),
            (FamilyTag::Isotropic, None) => PatternFamily::Isotropic,
            (FamilyTag::Dipole, None) => PatternFamily::Dipole,
        };
        Ok(PatternSpec { family, peak_gain: t.peak_gain })
    }
}

impl From<PatternSpec> for PatternText {
    fn from(p: PatternSpec) -> Self {
        let (family, q) = match p.family {
            PatternFamily::Isotropic => (FamilyTag::Isotropic, None),
            PatternFamily::Patch { q } => (FamilyTag::Patch, Some(q)),
            PatternFamily::Dipole => (FamilyTag::Dipole, None),
        };
        PatternText { family, q, peak_gain: p.peak_gain }
    }
}

impl PatternSpec {
    pub const ISOTROPIC: PatternSpec = PatternSpec { family: PatternFamily::Isotropic, peak_gain: 1.0 };

    pub fn patch(q: f64) -> Self {
        Self { family: PatternFamily::Patch { q }, peak_gain: 1.0 }
    }

    pub fn dipole() -> Self {
        Self { family: PatternFamily::Dipole, peak_gain: 1.0 }
    }
}

impl fmt::Display for PatternSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            PatternFamily::Isotropic => write!(f, "isotropic"),
            PatternFamily::Patch { q } => write!(f, "patch(q={q})"),
            PatternFamily::Dipole => write!(f, "dipole"),
        }
    }
}

/// Amplitude gain of an element pattern towards `direction`.
pub fn pattern_gain(p: &PatternSpec, boresight: Vec3, direction: Vec3) -> Result<f64> {
    if !boresight.is_unit(UNIT_TOL) || !direction.is_unit(UNIT_TOL) {
        return Err(Error::InvalidArgument("pattern_gain expects unit vectors".into()));
    }
    Ok(pattern_gain_unchecked(p, boresight, direction))
}

pub(crate) fn pattern_gain_unchecked(p: &PatternSpec, boresight: Vec3, direction: Vec3) -> f64 {
    let cos_psi = boresight.dot(direction).clamp(-1.0, 1.0);
    match p.family {
        PatternFamily::Isotropic => 1.0,
        PatternFamily::Patch { q } => cos_psi.max(0.0).powf(q) * p.peak_gain,
        PatternFamily::Dipole => (1.0 - cos_psi * cos_psi).max(0.0).sqrt() * p.peak_gain,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntennaArray {
    /// Element offsets in carrier wavelengths.
    pub elements: Vec<Vec3>,
    pub pattern: PatternSpec,
    /// Unit boresight.
    pub orientation: Vec3,
    pub position: Vec3,
}

impl AntennaArray {
    /// Uniform linear array of `n` elements at half-wavelength spacing along
    /// `axis`, centred on `position`.
    pub fn ula(n: usize, position: Vec3, orientation: Vec3, axis: Vec3, pattern: PatternSpec) -> Self {
        let axis = axis.normalized();
        let mid = (n as f64 - 1.0) / 2.0;
        let elements = (0..n).map(|k| axis * (0.5 * (k as f64 - mid))).collect();
        Self { elements, pattern, orientation: orientation.normalized(), position }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Horizontal ULA facing azimuth `theta`, elements along the in-plane perpendicular.
    pub fn horizontal_ula(n: usize, position: Vec3, theta: f64, pattern: PatternSpec) -> Self {
        let boresight = Vec3::new(theta.cos(), theta.sin(), 0.0);
        let axis = Vec3::new(-theta.sin(), theta.cos(), 0.0);
        Self::ula(n, position, boresight, axis, pattern)
    }

    /// Copy re-pointed to a new boresight; the array axis is rotated with it
    /// about the vertical.
    pub fn reoriented(&self, boresight: Vec3) -> Self {
        let old = self.orientation;
        let (a0, _) = old.to_angles();
        let (a1, _) = boresight.to_angles();
        let d = a1 - a0;
        let (s, c) = d.sin_cos();
        let rot = |v: Vec3| Vec3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z);
        Self {
            elements: self.elements.iter().map(|&e| rot(e)).collect(),
            pattern: self.pattern,
            orientation: boresight.normalized(),
            position: self.position,
        }
    }

    pub fn gain(&self, direction: Vec3) -> f64 {
        pattern_gain_unchecked(&self.pattern, self.orientation, direction)
    }
}

/// Array response `(1/√N)·exp(+j2π⟨d_k, u⟩/λ)` towards unit direction `u`.
pub fn steering_vector(array: &AntennaArray, direction: Vec3, wavelength: f64) -> Result<Vec<Complex64>> {
    if !(wavelength > 0.0) || !wavelength.is_finite() {
        return Err(Error::InvalidArgument(format!("wavelength {wavelength}")));
    }
    if array.is_empty() {
        return Err(Error::Empty("antenna array"));
    }
    Ok(steering_unchecked(array, direction, wavelength))
}

pub(crate) fn steering_unchecked(array: &AntennaArray, direction: Vec3, wavelength: f64) -> Vec<Complex64> {
    let amp = 1.0 / (array.len() as f64).sqrt();
    array
        .elements
        .iter()
        .map(|&d| {
            let offset = d * wavelength;
            Complex64::from_polar(amp, 2.0 * PI * offset.dot(direction) / wavelength)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Corridor,
    CampusSquare,
}

impl PresetName {
    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Corridor => "corridor",
            PresetName::CampusSquare => "campus_square",
        }
    }
}

impl std::str::FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(PresetName::Corridor),
            "campus_square" => Ok(PresetName::CampusSquare),
            other => Err(Error::UnknownPreset(other.into())),
        }
    }
}

/// Tunable preset knobs; defaults reproduce the built-in sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PresetOptions {
    pub n_tx: usize,
    pub n_rx: usize,
    pub bs_pattern: PatternSpec,
    pub ue_pattern: PatternSpec,
    /// Overrides the preset BS mounting height when set.
    pub bs_height: Option<f64>,
    pub ue_height: Option<f64>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            n_tx: 8,
            n_rx: 8,
            bs_pattern: PatternSpec::patch(1.0),
            ue_pattern: PatternSpec::patch(1.0),
            bs_height: None,
            ue_height: None,
        }
    }
}

/// A scene with its default BS placement, UE grid and orientation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub scene: Scene,
    pub bs: AntennaArray,
    /// UE array at the origin facing +x; placed and rotated per grid point.
    pub ue: AntennaArray,
    pub ue_positions: Vec<Vec3>,
    pub grid_pitch: f64,
    pub orientations: Vec<Vec3>,
    pub max_order: usize,
}

impl Preset {
    pub fn ue_at(&self, position: usize, orientation: usize) -> AntennaArray {
        let mut ue = self.ue.reoriented(self.orientations[orientation]);
        ue.position = self.ue_positions[position];
        ue
    }
}

pub const N_ORIENTATIONS: usize = 100;

/// `N_ORIENTATIONS` boresights evenly spaced on the horizontal circle.
pub fn orientation_set() -> Vec<Vec3> {
    (0..N_ORIENTATIONS)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / N_ORIENTATIONS as f64;
            Vec3::new(t.cos(), t.sin(), 0.0)
        })
        .collect()
}

pub const CORRIDOR_SIZE: Vec3 = Vec3::new(19.7, 5.93, 2.8);
pub const CORRIDOR_PITCH: f64 = 0.5;
pub const CAMPUS_PITCH: f64 = 2.0;

pub fn preset_scene(name: &str) -> Result<Preset> {
    preset_with(name.parse()?, &PresetOptions::default())
}

pub fn preset_with(name: PresetName, opts: &PresetOptions) -> Result<Preset> {
    if opts.n_tx == 0 || opts.n_rx == 0 {
        return Err(Error::InvalidArgument("arrays need at least one element".into()));
    }
    let preset = match name {
        PresetName::Corridor => corridor(opts),
        PresetName::CampusSquare => campus_square(opts),
    };
    preset.scene.validate()?;
    Ok(preset)
}

fn rect(corner: Vec3, extents: Vec3, normal: Vec3, material: usize) -> Reflector {
    Reflector { corner, extents, normal, material }
}

fn corridor(opts: &PresetOptions) -> Preset {
    let Vec3 { x: lx, y: ly, z: lz } = CORRIDOR_SIZE;
    let materials = vec![
        Material { name: "concrete".into(), gamma: 0.7 },
        Material { name: "ceiling".into(), gamma: 0.5 },
    ];
    let reflectors = vec![
        rect(Vec3::ZERO, Vec3::new(lx, ly, 0.0), Vec3::Z, 0),
        rect(Vec3::new(0.0, 0.0, lz), Vec3::new(lx, ly, 0.0), -Vec3::Z, 1),
        rect(Vec3::ZERO, Vec3::new(lx, 0.0, lz), Vec3::Y, 0),
        rect(Vec3::new(0.0, ly, 0.0), Vec3::new(lx, 0.0, lz), -Vec3::Y, 0),
        rect(Vec3::ZERO, Vec3::new(0.0, ly, lz), Vec3::X, 0),
        rect(Vec3::new(lx, 0.0, 0.0), Vec3::new(0.0, ly, lz), -Vec3::X, 0),
    ];
    let scene = Scene {
        name: "corridor".into(),
        bounds: Bounds { min: Vec3::ZERO, max: CORRIDOR_SIZE },
        materials,
        reflectors,
    };
    let bs_pos = Vec3::new(1.0, ly / 2.0, opts.bs_height.unwrap_or(2.0));
    let bs = AntennaArray::horizontal_ula(opts.n_tx, bs_pos, 0.0, opts.bs_pattern);
    let ue_z = opts.ue_height.unwrap_or(1.2);
    let ue_positions = corridor_grid(ue_z, bs_pos);
    Preset {
        scene,
        bs,
        ue: AntennaArray::horizontal_ula(opts.n_rx, Vec3::ZERO, 0.0, opts.ue_pattern),
        ue_positions,
        grid_pitch: CORRIDOR_PITCH,
        orientations: orientation_set(),
        max_order: 2,
    }
}

/// Walkable grid: 0.5 m margin from the walls, 1 m keep-out around the BS.
pub fn corridor_grid(z: f64, bs: Vec3) -> Vec<Vec3> {
    let margin = 0.5;
    let nx = ((CORRIDOR_SIZE.x - 2.0 * margin) / CORRIDOR_PITCH + 1e-9).floor() as usize + 1;
    let ny = ((CORRIDOR_SIZE.y - 2.0 * margin) / CORRIDOR_PITCH + 1e-9).floor() as usize + 1;
    let mut out = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let p = Vec3::new(margin + CORRIDOR_PITCH * i as f64, margin + CORRIDOR_PITCH * j as f64, z);
            let dx = p.x - bs.x;
            let dy = p.y - bs.y;
            if dx * dx + dy * dy >= 1.0 {
                out.push(p);
            }
        }
    }
    out
}

pub const CAMPUS_SQUARE: (f64, f64) = (60.0, 40.0);

fn campus_square(opts: &PresetOptions) -> Preset {
    let (sx, sy) = CAMPUS_SQUARE;
    let pad = 10.0;
    let facade_h = 20.0;
    let materials = vec![
        Material { name: "ground".into(), gamma: 0.6 },
        Material { name: "facade".into(), gamma: 0.7 },
    ];
    let (x0, x1, y0, y1) = (-pad, sx + pad, -pad, sy + pad);
    let reflectors = vec![
        rect(Vec3::new(x0, y0, 0.0), Vec3::new(x1 - x0, y1 - y0, 0.0), Vec3::Z, 0),
        rect(Vec3::new(x0, y0, 0.0), Vec3::new(0.0, y1 - y0, facade_h), Vec3::X, 1),
        rect(Vec3::new(x1, y0, 0.0), Vec3::new(0.0, y1 - y0, facade_h), -Vec3::X, 1),
        rect(Vec3::new(x0, y0, 0.0), Vec3::new(x1 - x0, 0.0, facade_h), Vec3::Y, 1),
        rect(Vec3::new(x0, y1, 0.0), Vec3::new(x1 - x0, 0.0, facade_h), -Vec3::Y, 1),
    ];
    let scene = Scene {
        name: "campus_square".into(),
        bounds: Bounds { min: Vec3::new(x0, y0, 0.0), max: Vec3::new(x1, y1, 60.0) },
        materials,
        reflectors,
    };
    // rooftop site at the south-west corner, looking at the square's centre
    let bs_pos = Vec3::new(-5.0, -5.0, opts.bs_height.unwrap_or(50.0));
    let ue_z = opts.ue_height.unwrap_or(1.5);
    let centre = Vec3::new(sx / 2.0, sy / 2.0, ue_z);
    let boresight = (centre - bs_pos).normalized();
    let axis = Vec3::Z.cross(boresight).normalized();
    let bs = AntennaArray::ula(opts.n_tx, bs_pos, boresight, axis, opts.bs_pattern);
    let n = (sx / CAMPUS_PITCH) as usize - 1;
    let m = (sy / CAMPUS_PITCH) as usize - 1;
    let mut ue_positions = Vec::with_capacity(n * m);
    for i in 1..=n {
        for j in 1..=m {
            ue_positions.push(Vec3::new(CAMPUS_PITCH * i as f64, CAMPUS_PITCH * j as f64, ue_z));
        }
    }
    Preset {
        scene,
        bs,
        ue: AntennaArray::horizontal_ula(opts.n_rx, Vec3::ZERO, 0.0, opts.ue_pattern),
        ue_positions,
        grid_pitch: CAMPUS_PITCH,
        orientations: orientation_set(),
        max_order: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_examples() {
        let b = Vec3::X;
        assert_eq!(pattern_gain(&PatternSpec::ISOTROPIC, b, Vec3::Y).unwrap(), 1.0);
        let mut p = PatternSpec::patch(1.0);
        p.peak_gain = 2.5;
        assert_eq!(pattern_gain(&p, b, b).unwrap(), 2.5);
        let d = Vec3::from_angles(60f64.to_radians(), 0.0);
        let g = pattern_gain(&PatternSpec::patch(2.0), b, d).unwrap();
        assert!((g - 0.25).abs() < 1e-12);
        assert_eq!(pattern_gain(&PatternSpec::patch(1.0), b, -b).unwrap(), 0.0);
        assert!((pattern_gain(&PatternSpec::dipole(), Vec3::Z, Vec3::X).unwrap() - 1.0).abs() < 1e-15);
        assert!(pattern_gain(&PatternSpec::ISOTROPIC, Vec3::new(1.0, 1.0, 0.0), b).is_err());
    }

    #[test]
    fn pattern_continuity() {
        let step = 1e-4;
        for p in [PatternSpec::patch(1.0), PatternSpec::patch(2.0), PatternSpec::dipole()] {
            let mut prev = pattern_gain(&p, Vec3::X, Vec3::X).unwrap();
            let mut psi = step;
            while psi <= PI {
                let g = pattern_gain(&p, Vec3::X, Vec3::from_angles(psi, 0.0)).unwrap();
                assert!(g >= 0.0);
                assert!((g - prev).abs() < 1e-3, "{p} jumps at {psi}");
                prev = g;
                psi += step;
            }
        }
    }

    #[test]
    fn steering_examples() {
        let arr = AntennaArray::ula(2, Vec3::ZERO, Vec3::X, Vec3::Y, PatternSpec::ISOTROPIC);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = steering_vector(&arr, Vec3::X, 0.1).unwrap();
        assert!(a.iter().all(|z| (z - Complex64::new(h, 0.0)).norm() < 1e-15));
        let a = steering_vector(&arr, Vec3::Y, 0.1).unwrap();
        // relative phase e^{jπ}
        let ratio = a[1] / a[0];
        assert!((ratio - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        let arr8 = AntennaArray::horizontal_ula(8, Vec3::ZERO, 0.3, PatternSpec::ISOTROPIC);
        let a = steering_vector(&arr8, Vec3::from_angles(1.1, 0.2), 0.08).unwrap();
        let n: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        assert!((n - 1.0).abs() < 1e-14);
        assert!(steering_vector(&arr8, Vec3::X, 0.0).is_err());
    }

    #[test]
    fn corridor_preset() {
        let p = preset_scene("corridor").unwrap();
        assert_eq!(p.scene.reflectors.len(), 6);
        assert_eq!(p.scene.bounds.size(), Vec3::new(19.7, 5.93, 2.8));
        assert_eq!(p.grid_pitch, 0.5);
        assert_eq!(p.orientations.len(), 100);
        assert!(p.ue_positions.iter().all(|&u| p.scene.bounds.contains(u)));
        for r in &p.scene.reflectors {
            assert!(r.normal.is_unit(0.0));
        }
    }

    #[test]
    fn corridor_grid_count() {
        // 0.5..=19.0 in x (38 values), 0.5..=5.0 in y (10 values), minus the BS keep-out
        let p = preset_scene("corridor").unwrap();
        let bs = p.bs.position;
        let mut n = 0;
        for i in 0..38 {
            for j in 0..10 {
                let x = 0.5 + 0.5 * i as f64;
                let y = 0.5 + 0.5 * j as f64;
                if (x - bs.x).powi(2) + (y - bs.y).powi(2) >= 1.0 {
                    n += 1;
                }
            }
        }
        assert_eq!(p.ue_positions.len(), n);
    }

    #[test]
    fn campus_preset() {
        let p = preset_scene("campus_square").unwrap();
        assert_eq!(p.grid_pitch, 2.0);
        assert_eq!(p.bs.position.z, 50.0);
        let d = p.ue_positions[1] - p.ue_positions[0];
        assert_eq!(d.norm(), 2.0);
        assert_eq!(p.max_order, 1);
        assert!(matches!(preset_scene("moon"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn scene_text_round_trip() {
        for name in ["corridor", "campus_square"] {
            let s = preset_scene(name).unwrap().scene;
            let text = s.to_text().unwrap();
            let back = Scene::from_text(&text).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.to_text().unwrap(), text);
        }
    }

    #[test]
    fn scene_text_rejects_unknown_keys() {
        let text = "name = \"x\"\ncolour = 3\n[bounds]\nmin = [0.0, 0.0, 0.0]\nmax = [1.0, 1.0, 1.0]\n";
        assert!(matches!(Scene::from_text(text), Err(Error::Parse(_))));
    }

    #[test]
    fn pattern_text() {
        #[derive(Deserialize)]
        struct W {
            p: PatternSpec,
        }
        let w: W = toml::from_str("p = { family = \"patch\", q = 2.0 }").unwrap();
        assert_eq!(w.p, PatternSpec::patch(2.0));
        let w: W = toml::from_str("p = { family = \"dipole\", peak_gain = 2.0 }").unwrap();
        assert_eq!(w.p.peak_gain, 2.0);
        assert!(toml::from_str::<W>("p = { family = \"dipole\", tilt = 2.0 }").is_err());
        assert!(toml::from_str::<W>("p = { family = \"horn\" }").is_err());
        assert!(toml::from_str::<W>("p = { family = \"patch\" }").is_err());
    }

    #[test]
    fn reoriented_ula_keeps_axis_perpendicular() {
        let ue = AntennaArray::horizontal_ula(4, Vec3::ZERO, 0.0, PatternSpec::ISOTROPIC);
        let r = ue.reoriented(Vec3::from_angles(1.0, 0.0));
        let axis = (r.elements[1] - r.elements[0]).normalized();
        assert!(axis.dot(r.orientation).abs() < 1e-12);
        assert!(((r.elements[1] - r.elements[0]).norm() - 0.5).abs() < 1e-12);
    }
}
