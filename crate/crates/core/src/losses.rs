//! Contour-regression losses: L1, L2, dynamic time warping, its smooth
//! relaxation, and the deep-supervision aggregate.
//!
//! The differentiable entry points build nodes on a [`Tape`]; the plain
//! functions here evaluate the same recurrences without a graph and back the
//! tape ops. All warping costs are squared Euclidean vertex distances.

use crate::error::{Error, Result};
use crate::geometry::Polyline;
use crate::tensor::{Tape, Var};

/// Which contour loss to train with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    L1,
    L2,
    Dtw,
    SoftDtw,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
            LossKind::Dtw => "dtw",
            LossKind::SoftDtw => "softdtw",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" => Ok(LossKind::L2),
            "dtw" => Ok(LossKind::Dtw),
            "softdtw" => Ok(LossKind::SoftDtw),
            other => Err(Error::parse(
                "loss kind",
                format!("unknown loss `{other}` (expected l1, l2, dtw, or softdtw)"),
            )),
        }
    }
}

/// Loss selection plus the softmin temperature used by [`LossKind::SoftDtw`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::SoftDtw,
            gamma: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == LossKind::SoftDtw && self.gamma <= 0.0 {
            return Err(Error::invalid(format!(
                "softdtw needs gamma > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// A monotone, boundary-complete alignment between two vertex sequences,
/// as 0-based index pairs. Consecutive pairs differ by (1,0), (0,1), or (1,1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    /// Checks the three alignment conditions against the sequence lengths.
    pub fn is_valid(&self, i_n: usize, j_n: usize) -> bool {
        if self.pairs.is_empty() {
            return false;
        }
        if *self.pairs.first().unwrap() != (0, 0) {
            return false;
        }
        if *self.pairs.last().unwrap() != (i_n - 1, j_n - 1) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let (di, dj) = (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize);
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

/// Soft minimum: -gamma * ln(sum_k exp(-x_k / gamma)), computed with a
/// max-shift so large magnitudes cannot overflow. Always <= min(xs).
pub fn softmin(xs: &[f64], gamma: f64) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::invalid("softmin of an empty list"));
    }
    if gamma <= 0.0 {
        return Err(Error::invalid(format!("softmin needs gamma > 0, got {gamma}")));
    }
    Ok(softmin_unchecked(xs, gamma))
}

pub(crate) fn softmin_unchecked(xs: &[f64], gamma: f64) -> f64 {
    let m = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (-(x - m) / gamma).exp()).sum();
    m - gamma * s.ln()
}

pub(crate) fn sq_cost(p: &[[f64; 2]], t: &[[f64; 2]], i: usize, j: usize) -> f64 {
    let dx = p[i][0] - t[j][0];
    let dy = p[i][1] - t[j][1];
    dx * dx + dy * dy
}

/// Hard-DTW dynamic-programming table, (I+1) x (J+1) row-major with an
/// infinite border; entry [I][J] is the DTW value.
pub(crate) fn dtw_table(p: &[[f64; 2]], t: &[[f64; 2]]) -> Vec<f64> {
    let (i_n, j_n) = (p.len(), t.len());
    let cols = j_n + 1;
    let mut d = vec![f64::INFINITY; (i_n + 1) * cols];
    d[0] = 0.0;
    for i in 1..=i_n {
        for j in 1..=j_n {
            let c = sq_cost(p, t, i - 1, j - 1);
            let best = d[(i - 1) * cols + (j - 1)]
                .min(d[(i - 1) * cols + j])
                .min(d[i * cols + (j - 1)]);
            d[i * cols + j] = c + best;
        }
    }
    d
}

/// Backtracks one minimizing alignment through a hard-DTW table, preferring
/// the diagonal step on ties. Pairs are 0-based and ordered from (0,0).
pub(crate) fn dtw_best_path(d: &[f64], i_n: usize, j_n: usize) -> Vec<(usize, usize)> {
    let cols = j_n + 1;
    let mut path = Vec::with_capacity(i_n + j_n);
    let (mut i, mut j) = (i_n, j_n);
    loop {
        path.push((i - 1, j - 1));
        if i == 1 && j == 1 {
            break;
        }
        let diag = d[(i - 1) * cols + (j - 1)];
        let up = d[(i - 1) * cols + j];
        let left = d[i * cols + (j - 1)];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    path.reverse();
    path
}

/// SoftDTW table: the DTW recurrence with min replaced by softmin_gamma.
pub(crate) fn softdtw_table(p: &[[f64; 2]], t: &[[f64; 2]], gamma: f64) -> Vec<f64> {
    let (i_n, j_n) = (p.len(), t.len());
    let cols = j_n + 1;
    let mut r = vec![f64::INFINITY; (i_n + 1) * cols];
    r[0] = 0.0;
    for i in 1..=i_n {
        for j in 1..=j_n {
            let c = sq_cost(p, t, i - 1, j - 1);
            let prev = [
                r[(i - 1) * cols + (j - 1)],
                r[(i - 1) * cols + j],
                r[i * cols + (j - 1)],
            ];
            r[i * cols + j] = c + softmin_unchecked(&prev, gamma);
        }
    }
    r
}

/// Reverse pass over soft alignment weights. Returns the expectation matrix E
/// with shape (I+2) x (J+2); E[i][j] (1-based interior) is d(softdtw)/d(cost
/// at cell (i,j)).
pub(crate) fn softdtw_alignment(
    p: &[[f64; 2]],
    t: &[[f64; 2]],
    gamma: f64,
    r: &[f64],
) -> Vec<f64> {
    let (i_n, j_n) = (p.len(), t.len());
    let rcols = j_n + 1;
    let ecols = j_n + 2;
    let mut e = vec![0.0; (i_n + 2) * ecols];
    e[(i_n + 1) * ecols + (j_n + 1)] = 1.0;
    let r_ext = |i: usize, j: usize| -> f64 {
        if i == i_n + 1 && j == j_n + 1 {
            r[i_n * rcols + j_n]
        } else if i == i_n + 1 || j == j_n + 1 {
            f64::NEG_INFINITY
        } else {
            r[i * rcols + j]
        }
    };
    let cost_ext = |i: usize, j: usize| -> f64 {
        if (1..=i_n).contains(&i) && (1..=j_n).contains(&j) {
            sq_cost(p, t, i - 1, j - 1)
        } else {
            0.0
        }
    };
    for i in (1..=i_n).rev() {
        for j in (1..=j_n).rev() {
            let rij = r[i * rcols + j];
            let a = ((r_ext(i + 1, j) - rij - cost_ext(i + 1, j)) / gamma).exp();
            let b = ((r_ext(i, j + 1) - rij - cost_ext(i, j + 1)) / gamma).exp();
            let c = ((r_ext(i + 1, j + 1) - rij - cost_ext(i + 1, j + 1)) / gamma).exp();
            e[i * ecols + j] = a * e[(i + 1) * ecols + j]
                + b * e[i * ecols + (j + 1)]
                + c * e[(i + 1) * ecols + (j + 1)];
        }
    }
    e
}

/// Plain (graph-free) DTW value plus one minimizing alignment.
pub fn dtw(p: &Polyline, t: &Polyline) -> (f64, AlignmentPath) {
    let pv: Vec<[f64; 2]> = p.vertices().to_vec();
    let tv: Vec<[f64; 2]> = t.vertices().to_vec();
    let table = dtw_table(&pv, &tv);
    let value = table[pv.len() * (tv.len() + 1) + tv.len()];
    let pairs = dtw_best_path(&table, pv.len(), tv.len());
    (value, AlignmentPath { pairs })
}

/// Plain SoftDTW value.
pub fn softdtw(p: &Polyline, t: &Polyline, gamma: f64) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(Error::invalid(format!("softdtw needs gamma > 0, got {gamma}")));
    }
    let pv: Vec<[f64; 2]> = p.vertices().to_vec();
    let tv: Vec<[f64; 2]> = t.vertices().to_vec();
    let r = softdtw_table(&pv, &tv, gamma);
    Ok(r[pv.len() * (tv.len() + 1) + tv.len()])
}

/// Builds the configured loss between a predicted contour node and the truth.
pub fn contour_loss(tape: &Tape, p: Var, t: &Polyline, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    match cfg.kind {
        LossKind::L1 => tape.loss_l1(p, t),
        LossKind::L2 => tape.loss_l2(p, t),
        LossKind::Dtw => tape.loss_dtw(p, t),
        LossKind::SoftDtw => tape.loss_softdtw(p, t, cfg.gamma),
    }
}

/// Unweighted sum of the configured loss over every iteration's contour.
pub fn deep_supervision_loss(
    tape: &Tape,
    contours: &[Var],
    t: &Polyline,
    cfg: &LossConfig,
) -> Result<Var> {
    let Some((&first, rest)) = contours.split_first() else {
        return Err(Error::invalid("deep supervision needs at least one contour"));
    };
    let mut total = contour_loss(tape, first, t, cfg)?;
    for &c in rest {
        let l = contour_loss(tape, c, t, cfg)?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}
