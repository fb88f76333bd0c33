//! Synthetic radar sequences with a known rainfall function.
//!
//! Each record holds a few Gaussian storm cells drifting across the grid.
//! Cells grow or decay linearly over the sequence, weaken with altitude
//! and lean sideways from one altitude channel to the next. The label is a
//! closed-form function of the frames:
//!
//! ```text
//! m     = mean of channel 0 / 255 over the central ⌊H/2⌋ × ⌊W/2⌋ crop
//!         of the last min(5, T) frames
//! label = max(0, a·m + b·m² + noise·N(0, 1))
//! ```

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::split::seeded_rng;
use super::{DataError, Dims, RadarRecord};

/// Number of trailing frames the label looks at.
pub const LABEL_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub dims: Dims,
    /// Standard deviation of the additive label noise.
    pub noise: f64,
    pub a: f64,
    pub b: f64,
    pub seed: u64,
    /// Storm cells per record are drawn uniformly from `0..=max_cells`.
    pub max_cells: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { count: 1000, dims: Dims::new(5, 2, 8, 8), noise: 0.02, a: 0.5, b: 2.0, seed: 42, max_cells: 3 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        self.dims.validate()?;
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(DataError::Config {
                line: 0,
                message: format!("noise must be finite and >= 0, got {}", self.noise),
            });
        }
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(DataError::Config { line: 0, message: "label coefficients must be finite".into() });
        }
        Ok(())
    }

    /// Parses `key=value` lines (`count t c h w noise a b seed max_cells`).
    /// Missing keys keep their defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut cfg = SynthConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| DataError::Config { line: line_no, message };
            let (key, value) =
                line.split_once('=').ok_or_else(|| err(format!("expected key=value, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || value.parse::<usize>().map_err(|e| err(format!("{key}: {e}")));
            let real = || value.parse::<f64>().map_err(|e| err(format!("{key}: {e}")));
            match key {
                "count" => cfg.count = int()?,
                "t" => cfg.dims.t = int()?,
                "c" => cfg.dims.c = int()?,
                "h" => cfg.dims.h = int()?,
                "w" => cfg.dims.w = int()?,
                "noise" => cfg.noise = real()?,
                "a" => cfg.a = real()?,
                "b" => cfg.b = real()?,
                "seed" => cfg.seed = value.parse().map_err(|e| err(format!("seed: {e}")))?,
                "max_cells" => cfg.max_cells = int()?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "count={}\nt={}\nc={}\nh={}\nw={}\nnoise={}\na={}\nb={}\nseed={}\nmax_cells={}\n",
            self.count,
            self.dims.t,
            self.dims.c,
            self.dims.h,
            self.dims.w,
            self.noise,
            self.a,
            self.b,
            self.seed,
            self.max_cells
        )
    }
}

/// Row/column ranges of the central `⌊H/2⌋ × ⌊W/2⌋` crop.
pub fn central_crop(dims: Dims) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let (ch, cw) = ((dims.h / 2).max(1), (dims.w / 2).max(1));
    let (y0, x0) = ((dims.h - ch) / 2, (dims.w - cw) / 2);
    (y0..y0 + ch, x0..x0 + cw)
}

/// Mean normalized channel-0 reflectivity over the central crop of the
/// last [`LABEL_WINDOW`] frames.
pub fn central_mean(dims: Dims, frames: &[u8]) -> f64 {
    let (ys, xs) = central_crop(dims);
    let first = dims.t.saturating_sub(LABEL_WINDOW);
    let mut sum = 0u64;
    let mut n = 0u64;
    for t in first..dims.t {
        let base = t * dims.frame_len();
        for y in ys.clone() {
            for x in xs.clone() {
                sum += u64::from(frames[base + y * dims.w + x]);
                n += 1;
            }
        }
    }
    sum as f64 / n as f64 / 255.0
}

/// Noise-free label `a·m + b·m²`.
pub fn synth_label(m: f64, a: f64, b: f64) -> f64 {
    a * m + b * m * m
}

struct Cell {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    amp: f64,
    growth: f64,
    sigma: f64,
    lean: f64,
}

fn generate_one(cfg: &SynthConfig, index: usize) -> RadarRecord {
    let d = cfg.dims;
    let mut rng = seeded_rng(cfg.seed, index as u64);
    let (h, w) = (d.h as f64, d.w as f64);
    let scale = h.min(w);
    let n_cells = rng.random_range(0..=cfg.max_cells);
    let cells: Vec<Cell> = (0..n_cells)
        .map(|_| Cell {
            x: rng.random_range(-0.2..1.2) * w,
            y: rng.random_range(-0.2..1.2) * h,
            vx: rng.random_range(-0.12..0.12) * scale,
            vy: rng.random_range(-0.12..0.12) * scale,
            amp: rng.random_range(0.25..1.0),
            growth: rng.random_range(-0.8..0.8),
            sigma: rng.random_range(0.3..0.6) * scale,
            lean: rng.random_range(-0.1..0.1) * scale,
        })
        .collect();
    let mut frames = vec![0u8; d.values()];
    let span = (d.t.max(2) - 1) as f64;
    for t in 0..d.t {
        let tt = t as f64;
        for c in 0..d.c {
            let falloff = 1.0 - 0.15 * c as f64;
            let plane = &mut frames[(t * d.c + c) * d.h * d.w..][..d.h * d.w];
            for (yi, row) in plane.chunks_exact_mut(d.w).enumerate() {
                for (xi, px) in row.iter_mut().enumerate() {
                    let mut v = 0.0;
                    for cell in &cells {
                        let amp = cell.amp * falloff * (1.0 + cell.growth * (tt / span - 0.5));
                        let cx = cell.x + cell.vx * tt + cell.lean * c as f64;
                        let cy = cell.y + cell.vy * tt;
                        let d2 = (xi as f64 - cx).powi(2) + (yi as f64 - cy).powi(2);
                        v += amp.max(0.0) * (-d2 / (2.0 * cell.sigma * cell.sigma)).exp();
                    }
                    *px = (v.min(1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    let m = central_mean(d, &frames);
    let eps: f64 = StandardNormal.sample(&mut rng);
    let label = (synth_label(m, cfg.a, cfg.b) + cfg.noise * eps).max(0.0);
    RadarRecord::new(d, label, frames).expect("generator respects dims")
}

/// Generates `cfg.count` records. Record `i` depends only on `(seed, i)`,
/// so output order is independent of the worker count.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<RadarRecord>, DataError> {
    cfg.validate()?;
    Ok((0..cfg.count).into_par_iter().map(|i| generate_one(cfg, i)).collect())
}
