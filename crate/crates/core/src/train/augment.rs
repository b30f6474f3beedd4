//! Paired geometric augmentation: horizontal flip and quarter turns.

use rand::Rng;

use crate::data::ImagePair;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Transform {
    pub flip: bool,
    /// Counter-clockwise quarter turns, `0..4`.
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip: false,
        quarter_turns: 0,
    };

    /// Flip with probability 1/2 and a uniform number of quarter turns,
    /// each only if enabled.
    pub fn sample(rng: &mut impl Rng, flip: bool, rotate: bool) -> Self {
        Transform {
            flip: flip && rng.gen_bool(0.5),
            quarter_turns: if rotate { rng.gen_range(0..4) } else { 0 },
        }
    }

    /// Flips first, then rotates.
    pub fn apply<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = if self.flip { hflip(x) } else { x.clone() };
        for _ in 0..self.quarter_turns % 4 {
            out = rot90(&out);
        }
        out
    }
}

pub fn hflip<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(s, |[n, c, y, xx]| x.at(n, c, y, s.w - 1 - xx))
}

/// One counter-clockwise quarter turn; `(h, w)` becomes `(w, h)`.
pub fn rot90<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |[n, c, y, xx]| {
        x.at(n, c, xx, s.w - 1 - y)
    })
}

/// Draws one transform and applies it to both images.
pub fn augment(pair: &ImagePair, rng: &mut impl Rng) -> ImagePair {
    let t = Transform::sample(rng, true, true);
    ImagePair {
        hazy: t.apply(&pair.hazy),
        clean: t.apply(&pair.clean),
        ..pair.clone()
    }
}
