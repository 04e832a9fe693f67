use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_POINTS: usize = 200;
/// Half-width added to a zero-extent axis.
pub const DEGENERATE_PAD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub n: usize,
}

impl Grid {
    /// `n` evenly spaced values per axis, endpoints included.
    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let lin = |lo: f64, hi: f64| -> Vec<f64> {
            (0..self.n)
                .map(|i| lo + (hi - lo) * i as f64 / (self.n - 1) as f64)
                .collect()
        };
        (lin(self.xmin, self.xmax), lin(self.ymin, self.ymax))
    }
}

/// Per-epoch trajectory of two tracked weights with the matching losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeExport {
    pub w: Vec<[f64; 2]>,
    pub loss: Vec<f64>,
    pub grid: Grid,
}

pub fn landscape_export(w: Vec<[f64; 2]>, loss: Vec<f64>) -> Result<LandscapeExport> {
    if w.len() != loss.len() {
        return Err(Error::dim(format!("{} trajectory points for {} losses", w.len(), loss.len())));
    }
    if w.len() < 2 {
        return Err(Error::invalid("landscape export needs at least two recorded epochs"));
    }
    if w.iter().flatten().chain(&loss).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("landscape trajectory"));
    }
    let bounds = |axis: usize| {
        let lo = w.iter().map(|p| p[axis]).fold(f64::INFINITY, f64::min);
        let hi = w.iter().map(|p| p[axis]).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - DEGENERATE_PAD, hi + DEGENERATE_PAD)
        }
    };
    let (xmin, xmax) = bounds(0);
    let (ymin, ymax) = bounds(1);
    Ok(LandscapeExport {
        w,
        loss,
        grid: Grid {
            xmin,
            xmax,
            ymin,
            ymax,
            n: GRID_POINTS,
        },
    })
}
