//! Image-source ray tracing of specular reflection paths.
//!
//! For every sequence of up to `max_order` reflectors (no immediate repeats)
//! the transmitter is mirrored through each plane in turn; the reflection points
//! are recovered by walking back from the receiver towards the images. A
//! candidate survives only if every reflection point lies on the front face of
//! its rectangle and no leg is blocked by another reflector.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::CMatrix;
use crate::scene::{steering_unchecked, AntennaArray, Scene};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const MAX_SUPPORTED_ORDER: usize = 3;
pub const DEFAULT_MAX_PATHS: usize = 64;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Spreading loss, reflection losses and propagation phase; no antenna pattern.
    pub gain: Complex64,
    pub delay_s: f64,
    /// Unit departure direction at the transmitter.
    pub aod: Vec3,
    /// Unit vector from the receiver back along the arriving ray.
    pub aoa: Vec3,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    /// Sorted by descending `|gain|`.
    pub paths: Vec<Path>,
    pub tx: Vec3,
    pub rx: Vec3,
    pub carrier_hz: f64,
}

impl PathSet {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Dumps the paths as CSV: order, delay, complex gain, AoD and AoA vectors.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "order,delay_s,gain_re,gain_im,aod_x,aod_y,aod_z,aoa_x,aoa_y,aoa_z")?;
        for p in &self.paths {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                p.order, p.delay_s, p.gain.re, p.gain.im, p.aod.x, p.aod.y, p.aod.z, p.aoa.x, p.aoa.y, p.aoa.z
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub max_order: usize,
    pub max_paths: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { max_order: 2, max_paths: DEFAULT_MAX_PATHS }
    }
}

/// Specular paths from `tx` to `rx` with at most `max_order` reflections.
pub fn trace_paths(scene: &Scene, tx: Vec3, rx: Vec3, max_order: usize, carrier_hz: f64) -> Result<PathSet> {
    trace_with(scene, tx, rx, carrier_hz, TraceOptions { max_order, ..TraceOptions::default() })
}

pub fn trace_with(scene: &Scene, tx: Vec3, rx: Vec3, carrier_hz: f64, opts: TraceOptions) -> Result<PathSet> {
    if !tx.is_finite() || !rx.is_finite() || (tx - rx).norm() <= EPS {
        return Err(Error::Degenerate("transmitter and receiver coincide".into()));
    }
    if !scene.bounds.contains(tx) || !scene.bounds.contains(rx) {
        return Err(Error::Degenerate("endpoint outside scene bounds".into()));
    }
    if opts.max_order > MAX_SUPPORTED_ORDER {
        return Err(Error::InvalidArgument(format!(
            "reflection order {} exceeds {MAX_SUPPORTED_ORDER}",
            opts.max_order
        )));
    }
    if !(carrier_hz > 0.0) {
        return Err(Error::InvalidArgument(format!("carrier {carrier_hz} Hz")));
    }
    scene.validate().map_err(|e| Error::Degenerate(e.to_string()))?;

    let wavelength = SPEED_OF_LIGHT / carrier_hz;
    let mut paths = Vec::new();
    let mut seq = Vec::with_capacity(opts.max_order);
    enumerate(scene, tx, rx, wavelength, opts.max_order, &mut seq, &mut paths);

    paths.sort_by(|a, b| {
        b.gain
            .norm()
            .total_cmp(&a.gain.norm())
            .then(a.delay_s.total_cmp(&b.delay_s))
            .then(a.order.cmp(&b.order))
    });
    paths.truncate(opts.max_paths);
    Ok(PathSet { paths, tx, rx, carrier_hz })
}

fn enumerate(
    scene: &Scene,
    tx: Vec3,
    rx: Vec3,
    wavelength: f64,
    max_order: usize,
    seq: &mut Vec<usize>,
    out: &mut Vec<Path>,
) {
    if let Some(p) = resolve(scene, tx, rx, wavelength, seq) {
        out.push(p);
    }
    if seq.len() == max_order {
        return;
    }
    for r in 0..scene.reflectors.len() {
        if seq.last() == Some(&r) {
            continue;
        }
        seq.push(r);
        enumerate(scene, tx, rx, wavelength, max_order, seq, out);
        seq.pop();
    }
}

/// Builds the path for one reflector sequence, or `None` if it is invalid.
fn resolve(scene: &Scene, tx: Vec3, rx: Vec3, wavelength: f64, seq: &[usize]) -> Option<Path> {
    let mut amplitude = 1.0;
    for &r in seq {
        amplitude *= scene.gamma(r);
    }
    if amplitude == 0.0 {
        return None;
    }

    // images[i] is tx mirrored through seq[0..i]
    let mut images = Vec::with_capacity(seq.len() + 1);
    images.push(tx);
    for &r in seq {
        let prev = *images.last().unwrap();
        images.push(scene.reflectors[r].mirror(prev));
    }

    // walk back from rx: points[k] = rx, points[i] = reflection on seq[i]
    let k = seq.len();
    let mut points = vec![Vec3::ZERO; k + 1];
    points[k] = rx;
    for i in (0..k).rev() {
        let refl = &scene.reflectors[seq[i]];
        let axis = refl.axis();
        let plane = refl.plane();
        let next = points[i + 1];
        let image = images[i + 1];
        // next point must be in front of the reflector
        let side_next = (next.get(axis) - plane) * refl.normal.get(axis);
        let side_image = (image.get(axis) - plane) * refl.normal.get(axis);
        if side_next <= EPS || side_image >= -EPS {
            return None;
        }
        let t = (plane - next.get(axis)) / (image.get(axis) - next.get(axis));
        let hit = next + (image - next) * t;
        let hit = hit.with(axis, plane);
        if !refl.contains(hit, 0.0) {
            return None;
        }
        points[i] = hit;
    }

    // legs: tx -> points[0] -> ... -> points[k] (= rx)
    let mut from = tx;
    let mut from_refl: Option<usize> = None;
    for i in 0..=k {
        let to = points[i];
        let to_refl = seq.get(i).copied();
        if (to - from).norm() <= EPS {
            return None;
        }
        if blocked(scene, from, to, from_refl, to_refl) {
            return None;
        }
        from = to;
        from_refl = to_refl;
    }

    let dist = (images[k] - rx).norm();
    let first = if k == 0 { rx } else { points[0] };
    let last = if k == 0 { tx } else { points[k - 1] };
    let amp = amplitude * wavelength / (4.0 * PI * dist);
    Some(Path {
        gain: Complex64::from_polar(amp, -2.0 * PI * dist / wavelength),
        delay_s: dist / SPEED_OF_LIGHT,
        aod: (first - tx).normalized(),
        aoa: (last - rx).normalized(),
        order: k,
    })
}

/// Segment–rectangle occlusion against every reflector other than the
/// segment's own endpoint surfaces. Grazing contact counts as a block.
fn blocked(scene: &Scene, a: Vec3, b: Vec3, skip_a: Option<usize>, skip_b: Option<usize>) -> bool {
    for (idx, r) in scene.reflectors.iter().enumerate() {
        if Some(idx) == skip_a || Some(idx) == skip_b {
            continue;
        }
        let axis = r.axis();
        let plane = r.plane();
        let da = a.get(axis) - plane;
        let db = b.get(axis) - plane;
        if (da > EPS && db > EPS) || (da < -EPS && db < -EPS) {
            continue;
        }
        if da.abs() <= EPS && db.abs() <= EPS {
            // segment lies in the plane
            if r.contains(a, EPS) || r.contains(b, EPS) {
                return true;
            }
            continue;
        }
        let t = da / (da - db);
        let p = a + (b - a) * t;
        if r.contains(p, EPS) {
            return true;
        }
    }
    false
}

/// `G = gain · g_rx(aoa) · g_tx(aod) · a_rx(aoa) a_tx(aod)ᴴ · √(N_r N_t)`.
pub fn path_channel_gain(path: &Path, bs: &AntennaArray, ue: &AntennaArray, wavelength: f64) -> Result<CMatrix> {
    if bs.is_empty() || ue.is_empty() {
        return Err(Error::Empty("antenna array"));
    }
    if !(wavelength > 0.0) {
        return Err(Error::InvalidArgument(format!("wavelength {wavelength}")));
    }
    let (a_rx, a_tx, scale) = path_factors(path, bs, ue, wavelength);
    let mut g = CMatrix::outer(&a_rx, &a_tx);
    for z in g.data_mut() {
        *z *= scale;
    }
    Ok(g)
}

/// Steering vectors and the complex scalar of [`path_channel_gain`].
pub(crate) fn path_factors(
    path: &Path,
    bs: &AntennaArray,
    ue: &AntennaArray,
    wavelength: f64,
) -> (Vec<Complex64>, Vec<Complex64>, Complex64) {
    let a_rx = steering_unchecked(ue, path.aoa, wavelength);
    let a_tx = steering_unchecked(bs, path.aod, wavelength);
    let norm = ((ue.len() * bs.len()) as f64).sqrt();
    let scale = path.gain * (ue.gain(path.aoa) * bs.gain(path.aod) * norm);
    (a_rx, a_tx, scale)
}
