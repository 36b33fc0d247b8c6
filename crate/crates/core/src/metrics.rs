//! Evaluation quantities: precoder cosine similarity, AoA similarity, pairwise
//! similarity heatmaps and an MMSE Shannon-rate proxy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelTensor, OfdmGrid};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::linalg::{inner, CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoForm {
    /// `|⟨w, ŵ⟩|`
    #[default]
    Abs,
    /// `|⟨w, ŵ⟩|²`, for sensitivity checks.
    Squared,
}

/// Per-stream `|⟨w_s, ŵ_s⟩|`, streams matched by column index.
pub fn rho_per_stream(w: &CMatrix, w_hat: &CMatrix) -> Result<Vec<f64>> {
    if w.shape() != w_hat.shape() {
        return Err(Error::DimensionMismatch(format!(
            "precoder {}x{} vs reconstruction {}x{}",
            w.rows(),
            w.cols(),
            w_hat.rows(),
            w_hat.cols()
        )));
    }
    Ok((0..w.cols()).map(|s| inner(&w.column(s), &w_hat.column(s)).norm().min(1.0)).collect())
}

pub fn rho(w: &CMatrix, w_hat: &CMatrix) -> Result<f64> {
    rho_with(w, w_hat, RhoForm::Abs)
}

pub fn rho_with(w: &CMatrix, w_hat: &CMatrix, form: RhoForm) -> Result<f64> {
    let per = rho_per_stream(w, w_hat)?;
    let n = per.len().max(1) as f64;
    Ok(match form {
        RhoForm::Abs => per.iter().sum::<f64>() / n,
        RhoForm::Squared => per.iter().map(|x| x * x).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionAngles {
    /// θ ∈ (−π, π]
    pub azimuth: f64,
    /// φ ∈ [−π/2, π/2]
    pub elevation: f64,
}

impl DirectionAngles {
    pub fn from_vector(v: Vec3) -> Self {
        let (azimuth, elevation) = v.to_angles();
        Self { azimuth, elevation }
    }

    pub fn unit(&self) -> Vec3 {
        Vec3::from_angles(self.azimuth, self.elevation)
    }
}

/// `η = ⟨u(a), u(b)⟩` with `u = [cosφ cosθ, cosφ sinθ, sinφ]`.
pub fn aoa_similarity(a: DirectionAngles, b: DirectionAngles) -> f64 {
    a.unit().dot(b.unit()).clamp(-1.0, 1.0)
}

/// Symmetric matrix of pairwise ρ between precoders (one per position).
pub fn similarity_heatmap(precoders: &[&CMatrix]) -> Result<Vec<Vec<f64>>> {
    if precoders.len() < 2 {
        return Err(Error::InvalidArgument("heatmap needs at least two positions".into()));
    }
    let n = precoders.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        for j in i + 1..n {
            let r = rho(precoders[i], precoders[j])?;
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}

pub fn write_matrix_csv<W: Write>(mut w: W, labels: &[String], m: &[Vec<f64>]) -> Result<()> {
    write!(w, "position")?;
    for l in labels {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for (l, row) in labels.iter().zip(m) {
        write!(w, "{l}")?;
        for v in row {
            write!(w, ",{v:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

const RATE_EPS: f64 = 1e-12;

/// Mean over the tensor's subcarriers of `Σ_s log₂(1 + SINR_s)` for a linear
/// MMSE receiver on `A = H_n ŵ`, per-stream power `snr / N_s`. `precoders`
/// holds one reconstruction per subband of `grid`.
pub fn rate_proxy(ch: &ChannelTensor, grid: &OfdmGrid, precoders: &[CMatrix], snr: f64) -> Result<f64> {
    if precoders.len() != grid.n_subbands {
        return Err(Error::DimensionMismatch(format!(
            "{} precoders for {} subbands",
            precoders.len(),
            grid.n_subbands
        )));
    }
    if ch.matrices.is_empty() {
        return Err(Error::Empty("channel tensor"));
    }
    let k = grid.subband_size();
    let mut total = 0.0;
    for (&n, h) in ch.subcarriers.iter().zip(&ch.matrices) {
        let band = (n as usize - 1) / k;
        let w = precoders
            .get(band)
            .ok_or_else(|| Error::DimensionMismatch(format!("subcarrier {n} outside grid")))?;
        total += mmse_sum_rate(h, w, snr)?;
    }
    Ok(total / ch.matrices.len() as f64)
}

/// Sum rate of one subcarrier with an MMSE receiver.
pub fn mmse_sum_rate(h: &CMatrix, w: &CMatrix, snr: f64) -> Result<f64> {
    if snr <= 0.0 {
        return Ok(0.0);
    }
    let a = h.matmul(w)?;
    let ns = w.cols();
    let p = snr / ns as f64;
    let mut m = a.adjoint().matmul(&a)?.scale(C64::new(p, 0.0));
    for s in 0..ns {
        m[(s, s)] += 1.0 + RATE_EPS;
    }
    let inv = invert(&m)?;
    let mut rate = 0.0;
    for s in 0..ns {
        let d = inv[(s, s)].re.max(RATE_EPS);
        let sinr = (1.0 / d - 1.0).max(0.0);
        rate += (1.0 + sinr).log2();
    }
    Ok(rate)
}

/// Gauss–Jordan inverse with partial pivoting.
fn invert(m: &CMatrix) -> Result<CMatrix> {
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = CMatrix::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].norm().total_cmp(&a[(j, col)].norm()))
            .unwrap();
        if a[(pivot, col)].norm() < RATE_EPS {
            return Err(Error::NonFinite("singular matrix in MMSE receiver".into()));
        }
        if pivot != col {
            for j in 0..n {
                let t = a[(col, j)];
                a[(col, j)] = a[(pivot, j)];
                a[(pivot, j)] = t;
                let t = inv[(col, j)];
                inv[(col, j)] = inv[(pivot, j)];
                inv[(pivot, j)] = t;
            }
        }
        let d = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                if f != C64::new(0.0, 0.0) {
                    for j in 0..n {
                        let (x, y) = (a[(col, j)], inv[(col, j)]);
                        a[(i, j)] -= f * x;
                        inv[(i, j)] -= f * y;
                    }
                }
            }
        }
    }
    Ok(inv)
}
