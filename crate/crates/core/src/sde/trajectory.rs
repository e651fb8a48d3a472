//! Recorded solution paths, CSV export, and the binary snapshot format.
//!
//! Snapshot layout, all little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `SCBF` |
//! | 4     | version `u32` (currently 1) |
//! | 4     | max wavenumber `N` as `u32` |
//! | 4     | mode count as `u32` |
//! | 16 per mode | `psi_k` as `(re: f64, im: f64)` in basis order |

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{BasisSet, Norms, SpectralField};
use crate::util::fmt_g17;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SCBF";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Time integrals entering the energy equality, accumulated by the
/// trapezoid rule on the step grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct EnergyBudget {
    pub initial_h_sq: f64,
    pub final_h_sq: f64,
    pub int_v_sq: f64,
    pub int_h_sq: f64,
    pub int_lr1_pow: f64,
    /// `integral (F + sigma1 Q1^(1/2) h, X)`.
    pub int_forcing: f64,
    pub sup_v_sq: f64,
}

impl EnergyBudget {
    /// `|X_T|^2 + 2 mu int|X|_V^2 + 2 alpha int|X|^2 + 2 beta int|X|^{r+1}
    ///  - |x|^2 - 2 int (forcing, X)`.
    pub fn residual(&self, mu: f64, alpha: f64, beta: f64) -> f64 {
        (self.final_h_sq + 2.0 * mu * self.int_v_sq + 2.0 * alpha * self.int_h_sq
            + 2.0 * beta * self.int_lr1_pow
            - self.initial_h_sq
            - 2.0 * self.int_forcing)
            .abs()
    }

    /// Acceptance bound `10 dt (1 + sup |X|_V^2)`.
    pub fn tolerance(&self, dt: f64) -> f64 {
        10.0 * dt * (1.0 + self.sup_v_sq)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub slow: Vec<SpectralField>,
    pub fast: Vec<SpectralField>,
    /// Norms of the primary component (slow, or fast for fast-only runs).
    pub norms: Vec<Norms>,
    /// `|Y|_H` per snapshot when a fast component exists.
    pub fast_norm_h: Vec<f64>,
    pub stopped_at: Option<f64>,
    pub path_index: u64,
    pub energy: Option<EnergyBudget>,
}

impl Trajectory {
    pub(crate) fn new(path_index: u64) -> Self {
        Self {
            times: Vec::new(),
            slow: Vec::new(),
            fast: Vec::new(),
            norms: Vec::new(),
            fast_norm_h: Vec::new(),
            stopped_at: None,
            path_index,
            energy: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The primary component: slow if recorded, otherwise fast.
    pub fn states(&self) -> &[SpectralField] {
        if self.slow.is_empty() {
            &self.fast
        } else {
            &self.slow
        }
    }

    pub fn last_state(&self) -> Option<&SpectralField> {
        self.states().last()
    }

    /// `sup_t |self_t - other_t|_H` over the shared time grid.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        let (a, b) = (self.states(), other.states());
        if a.len() != b.len() {
            return Err(Error::invalid("trajectories have different lengths"));
        }
        let mut sup = 0.0f64;
        for (x, y) in a.iter().zip(b) {
            x.check_compatible(y)?;
            sup = sup.max((x - y).norm_h());
        }
        Ok(sup)
    }

    /// CSV with columns `time,norm_H_slow,norm_V_slow,norm_Lr1_slow,norm_H_fast`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,norm_H_slow,norm_V_slow,norm_Lr1_slow,norm_H_fast")?;
        let slow_present = !self.slow.is_empty();
        for i in 0..self.times.len() {
            let fast = if !self.fast_norm_h.is_empty() {
                fmt_g17(self.fast_norm_h[i])
            } else {
                String::new()
            };
            if slow_present {
                let n = self.norms[i];
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt_g17(self.times[i]),
                    fmt_g17(n.h),
                    fmt_g17(n.v),
                    fmt_g17(n.lr1),
                    fast
                )?;
            } else {
                writeln!(w, "{},,,,{}", fmt_g17(self.times[i]), fast)?;
            }
        }
        Ok(())
    }
}

pub fn write_snapshot<W: Write>(field: &SpectralField, mut w: W) -> Result<()> {
    let b = field.basis();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(b.max_wavenumber() as u32).to_le_bytes())?;
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    for c in field.psi() {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a snapshot into `basis`, which must match the stored `N`.
pub fn read_snapshot<R: Read>(basis: &Arc<BasisSet>, mut r: R) -> Result<SpectralField> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[0..4] != SNAPSHOT_MAGIC {
        return Err(Error::invalid("not an SCBF snapshot"));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != SNAPSHOT_VERSION {
        return Err(Error::invalid(format!("unsupported snapshot version {version}")));
    }
    let n = word(8) as usize;
    let count = word(12) as usize;
    if n != basis.max_wavenumber() || count != basis.len() {
        return Err(Error::invalid(format!(
            "snapshot basis N={n} with {count} modes does not match N={} with {} modes",
            basis.max_wavenumber(),
            basis.len()
        )));
    }
    let mut psi = Vec::with_capacity(count);
    let mut buf = [0u8; 16];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf[0..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(buf[8..16].try_into().expect("8 bytes"));
        psi.push(Complex64::new(re, im));
    }
    SpectralField::from_psi(basis, psi)
}
