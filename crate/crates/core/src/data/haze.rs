//! Synthetic haze from the atmospheric scattering model:
//! `hazy = clean * t + A * (1 - t)` with transmission `t = exp(-beta * depth)`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthKind {
    /// The same depth everywhere, in `[0, 1]`.
    Constant(f64),
    /// Linear across the width, near on one side and far on the other.
    Ramp,
    /// Farthest at a centre point, falling off with distance.
    Radial,
}

impl fmt::Display for DepthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthKind::Constant(d) => write!(f, "constant({d})"),
            DepthKind::Ramp => f.write_str("ramp"),
            DepthKind::Radial => f.write_str("radial"),
        }
    }
}

/// Scattering coefficient ranges named after the thin, moderate and thick
/// subsets of common remote sensing haze benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HazePreset {
    Thin,
    Moderate,
    Thick,
}

impl HazePreset {
    pub const ALL: [HazePreset; 3] = [HazePreset::Thin, HazePreset::Moderate, HazePreset::Thick];

    pub fn beta_range(self) -> (f64, f64) {
        match self {
            HazePreset::Thin => (0.5, 1.0),
            HazePreset::Moderate => (1.0, 2.0),
            HazePreset::Thick => (2.0, 4.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HazePreset::Thin => "thin",
            HazePreset::Moderate => "moderate",
            HazePreset::Thick => "thick",
        }
    }
}

impl std::str::FromStr for HazePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thin" => Ok(HazePreset::Thin),
            "moderate" => Ok(HazePreset::Moderate),
            "thick" => Ok(HazePreset::Thick),
            other => Err(Error::Config(format!("unknown haze preset `{other}`"))),
        }
    }
}

pub const AIRLIGHT_RANGE: (f64, f64) = (0.7, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazeParams {
    pub beta: f64,
    pub airlight: f64,
    pub depth: DepthKind,
}

impl HazeParams {
    /// Draws beta from the preset, the airlight from [`AIRLIGHT_RANGE`] and
    /// one of the three depth kinds.
    pub fn sample(preset: HazePreset, rng: &mut impl Rng) -> Self {
        let (lo, hi) = preset.beta_range();
        let beta = rng.gen_range(lo..=hi);
        let airlight = rng.gen_range(AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1);
        let depth = match rng.gen_range(0..3) {
            0 => DepthKind::Constant(rng.gen_range(0.3..=1.0)),
            1 => DepthKind::Ramp,
            _ => DepthKind::Radial,
        };
        HazeParams { beta, airlight, depth }
    }
}

/// A `h x w` depth map in `[0, 1]`. The ramp direction and radial centre
/// are drawn from `rng`.
pub fn depth_map(kind: DepthKind, h: usize, w: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    Ok(match kind {
        DepthKind::Constant(d) => {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::invalid(
                    "depth_map",
                    format!("constant depth {d} outside [0, 1]"),
                ));
            }
            vec![d; h * w]
        }
        DepthKind::Ramp => {
            let flip = rng.gen_bool(0.5);
            let span = (w.max(2) - 1) as f64;
            (0..h * w)
                .map(|i| {
                    let t = (i % w) as f64 / span;
                    if flip {
                        1.0 - t
                    } else {
                        t
                    }
                })
                .collect()
        }
        DepthKind::Radial => {
            let cy = rng.gen_range(0.25..=0.75) * (h - 1) as f64;
            let cx = rng.gen_range(0.25..=0.75) * (w - 1) as f64;
            let far = [
                (0.0, 0.0),
                (0.0, w as f64 - 1.0),
                (h as f64 - 1.0, 0.0),
                (h as f64 - 1.0, w as f64 - 1.0),
            ]
            .iter()
            .map(|&(y, x)| ((y - cy).powi(2) + (x - cx).powi(2)).sqrt())
            .fold(0.0, f64::max)
            .max(1.0);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    1.0 - ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() / far
                })
                .collect()
        }
    })
}

/// Applies haze to a `(1, 3, h, w)` clean image.
pub fn synthesize_haze<T: Element>(clean: &Tensor<T>, params: &HazeParams, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let HazeParams { beta, airlight, depth } = *params;
    if !(beta >= 0.0) {
        return Err(Error::invalid(
            "synthesize_haze",
            format!("beta must be >= 0, got {beta}"),
        ));
    }
    if !(AIRLIGHT_RANGE.0..=AIRLIGHT_RANGE.1).contains(&airlight) {
        return Err(Error::invalid(
            "synthesize_haze",
            format!(
                "airlight {airlight} outside [{}, {}]",
                AIRLIGHT_RANGE.0, AIRLIGHT_RANGE.1
            ),
        ));
    }
    let s = clean.shape();
    if s.c != 3 {
        return Err(Error::invalid("synthesize_haze", format!("expected RGB, got {s}")));
    }
    let depth = depth_map(depth, s.h, s.w, rng)?;
    let trans: Vec<f64> = depth.iter().map(|d| (-beta * d).exp()).collect();
    Ok(Tensor::from_fn(s, |[n, c, y, x]| {
        let t = trans[y * s.w + x];
        let j = clean.at(n, c, y, x).to_f64_lossy();
        T::lit((j * t + airlight * (1.0 - t)).clamp(0.0, 1.0))
    }))
}

/// A smooth random scene: a colour gradient, a few soft blobs and a faint
/// texture, all in `[0, 1]`.
pub fn synthetic_clean<T: Element>(h: usize, w: usize, rng: &mut impl Rng) -> Tensor<T> {
    let base: [[f64; 3]; 2] = [[rng.gen(), rng.gen(), rng.gen()], [rng.gen(), rng.gen(), rng.gen()]];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.08..0.3),
                [
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ],
            )
        })
        .collect();
    let freq = [rng.gen_range(4.0..12.0), rng.gen_range(4.0..12.0)];
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (hf, wf) = (h.max(2) as f64 - 1.0, w.max(2) as f64 - 1.0);
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        let (v, u) = (y as f64 / hf, x as f64 / wf);
        let g = ((u - 0.5) * dx + (v - 0.5) * dy + 0.5).clamp(0.0, 1.0);
        let mut p = base[0][c] * (1.0 - g) + base[1][c] * g;
        for &(by, bx, r, col) in &blobs {
            let d2 = (v - by).powi(2) + (u - bx).powi(2);
            p += col[c] * (-d2 / (2.0 * r * r)).exp();
        }
        p += 0.05 * (freq[0] * u * std::f64::consts::TAU + phase).sin() * (freq[1] * v * std::f64::consts::TAU).cos();
        T::lit(p.clamp(0.0, 1.0))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_maps_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [DepthKind::Constant(0.4), DepthKind::Ramp, DepthKind::Radial] {
            let d = depth_map(kind, 7, 9, &mut rng).unwrap();
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
        }
        let ramp = depth_map(DepthKind::Ramp, 2, 5, &mut rng).unwrap();
        assert_eq!(ramp[0].min(ramp[4]), 0.0);
        assert_eq!(ramp[0].max(ramp[4]), 1.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clean = Tensor::<f32>::zeros([1, 3, 4, 4]);
        let p = |beta, airlight| HazeParams {
            beta,
            airlight,
            depth: DepthKind::Ramp,
        };
        assert!(synthesize_haze(&clean, &p(-1.0, 0.8), &mut rng).is_err());
        assert!(synthesize_haze(&clean, &p(1.0, 0.5), &mut rng).is_err());
        assert!(synthesize_haze(&clean, &p(f64::NAN, 0.8), &mut rng).is_err());
    }
}
