//! The full dehazing network.
//!
//! Level `l` (1-based) runs at `1/2^(l-1)` resolution with `c * 2^(l-1)`
//! channels. The encoder is a stem conv followed by stride-2 downsampling
//! convs; the decoder is pointwise conv + pixel shuffle upsampling, each
//! followed by a fusion with the skip feature of that level. All learning
//! blocks sit on the skip paths and the bottleneck.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::config::{parse_bool, parse_list, KeyValues};
use crate::error::{Error, Result};
use crate::nn::{Activation, Block, BlockKind, Builder, Cmim, Conv, Init, Itfm, LayerReport};
use crate::ops::ConvSpec;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionKind {
    #[default]
    Itfm,
    /// `dec + conv1x1(concat(skip, dec))`.
    Conv,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Itfm => "itfm",
            FusionKind::Conv => "conv",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "itfm" => Ok(FusionKind::Itfm),
            "conv" => Ok(FusionKind::Conv),
            other => Err(Error::Config(format!("unknown fusion kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub base_channels: usize,
    /// Blocks per level, finest first; the last entry is the bottleneck.
    pub depths: Vec<usize>,
    pub block: BlockKind,
    pub fusion: FusionKind,
    pub cmim: bool,
    pub src: bool,
    /// Pooled size of the fusion queries and keys.
    pub pool: (usize, usize),
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 24,
            depths: vec![2, 2, 4],
            block: BlockKind::Mpeb,
            fusion: FusionKind::Itfm,
            cmim: true,
            src: true,
            pool: (1, 1),
            activation: Activation::Gelu,
        }
    }
}

impl NetConfig {
    pub const KEYS: [&'static str; 8] = [
        "channels",
        "depths",
        "block",
        "fusion",
        "cmim",
        "src",
        "pool",
        "activation",
    ];

    /// A small full model for tests.
    pub fn tiny() -> Self {
        NetConfig {
            base_channels: 8,
            depths: vec![1, 1, 1],
            ..Self::default()
        }
    }

    /// Conv fusion, FNB blocks, no CMIM, no SRC.
    pub fn baseline(base_channels: usize, depths: Vec<usize>) -> Self {
        NetConfig {
            base_channels,
            depths,
            block: BlockKind::Fnb,
            fusion: FusionKind::Conv,
            cmim: false,
            src: false,
            ..Self::default()
        }
    }

    pub fn levels(&self) -> usize {
        self.depths.len()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Spatial dims are padded up to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.base_channels;
        if c == 0 || !c.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "channels must be a positive multiple of 4, got {c}"
            )));
        }
        if self.levels() < 2 {
            return Err(Error::Config(format!("need at least 2 levels, got {}", self.levels())));
        }
        if self.levels() > 8 {
            return Err(Error::Config(format!(
                "at most 8 levels supported, got {}",
                self.levels()
            )));
        }
        if self.pool.0 == 0 || self.pool.1 == 0 {
            return Err(Error::Config("pool size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("channels", self.base_channels);
        let depths: Vec<String> = self.depths.iter().map(|d| d.to_string()).collect();
        kv.set("depths", depths.join(","));
        kv.set("block", self.block.name());
        kv.set("fusion", self.fusion.name());
        kv.set("cmim", self.cmim);
        kv.set("src", self.src);
        kv.set("pool", format!("{}x{}", self.pool.0, self.pool.1));
        kv.set("activation", self.activation.name());
        kv
    }

    /// Applies the recognized keys of `kv` on top of `self`; other keys are
    /// left for the caller.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(v) = kv.parse_opt("channels")? {
            self.base_channels = v;
        }
        if let Some(v) = kv.get("depths") {
            self.depths = parse_list(v)?;
        }
        if let Some(v) = kv.parse_opt("block")? {
            self.block = v;
        }
        if let Some(v) = kv.parse_opt("fusion")? {
            self.fusion = v;
        }
        if let Some(v) = kv.get("cmim") {
            self.cmim = parse_bool(v)?;
        }
        if let Some(v) = kv.get("src") {
            self.src = parse_bool(v)?;
        }
        if let Some(v) = kv.get("pool") {
            self.pool = parse_pool(v)?;
        }
        if let Some(v) = kv.parse_opt("activation")? {
            self.activation = v;
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&Self::KEYS)?;
        let mut cfg = Self::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for NetConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kv = self.to_key_values();
        let parts: Vec<String> = kv.keys().map(|k| format!("{k}={}", kv.get(k).unwrap_or(""))).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Parses `"1x1"` or `"2"` (square).
pub fn parse_pool(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad pool size `{s}`"));
    match s.split_once('x') {
        Some((h, w)) => Ok((
            h.trim().parse().map_err(|_| bad())?,
            w.trim().parse().map_err(|_| bad())?,
        )),
        None => {
            let v = s.trim().parse().map_err(|_| bad())?;
            Ok((v, v))
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Itfm(Itfm),
    Conv(Conv),
}

impl Fusion {
    fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        skip: Var<'t, T>,
        dec: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match self {
            Fusion::Itfm(m) => m.forward(tape, store, skip, dec),
            Fusion::Conv(c) => c.forward(tape, store, tape.concat(&[skip, dec])?),
        }
    }

    fn describe(&self, input: Shape, report: &mut Vec<LayerReport>) -> Result<Shape> {
        match self {
            Fusion::Itfm(m) => m.describe(input, report),
            Fusion::Conv(c) => c.describe(input.with_c(2 * input.c), report),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Net {
    pub config: NetConfig,
    pub stem: Conv,
    /// `downs[i]` maps level `i` to level `i + 1`.
    pub downs: Vec<Conv>,
    pub paths: Vec<Vec<Block>>,
    /// `cmims[i]` couples levels `i` and `i + 1`.
    pub cmims: Vec<Cmim>,
    /// `ups[i]` maps level `i + 1` to level `i`.
    pub ups: Vec<Conv>,
    pub fusions: Vec<Fusion>,
    pub head: Conv,
}

impl Net {
    /// Registers all parameters with a deterministic initialization.
    pub fn build<T: Element>(config: &NetConfig, seed: u64) -> Result<(ParamStore<T>, Net)> {
        config.validate()?;
        let cfg = config;
        let levels = cfg.levels();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let ch = |l: usize| cfg.channels(l);

        let stem = b.conv("enc.stem", ConvSpec::new(3, ch(0), 3), Init::Kaiming)?;
        let downs = (1..levels)
            .map(|l| {
                b.conv(
                    &format!("enc.down{}", l + 1),
                    ConvSpec::new(ch(l - 1), ch(l), 3).stride(2).padding(1),
                    Init::Kaiming,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut paths = Vec::with_capacity(levels);
        for (l, &depth) in cfg.depths.iter().enumerate() {
            let blocks = b.scope(&format!("skip{}", l + 1), |b| {
                (0..depth)
                    .map(|i| Block::new(b, cfg.block, &format!("block{}", i + 1), ch(l), cfg.activation))
                    .collect::<Result<Vec<_>>>()
            })?;
            paths.push(blocks);
        }
        let cmims = if cfg.cmim {
            (0..levels - 1)
                .map(|l| Cmim::new(&mut b, &format!("cmim{}", l + 1), ch(l), ch(l + 1), ch(l)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let mut ups = Vec::with_capacity(levels - 1);
        let mut fusions = Vec::with_capacity(levels - 1);
        for l in (0..levels - 1).rev() {
            let c = ch(l);
            let up = b.conv(
                &format!("dec.up{}", l + 1),
                ConvSpec::pointwise(ch(l + 1), 4 * c),
                Init::Kaiming,
            )?;
            let name = format!("dec.fuse{}", l + 1);
            let fusion = match cfg.fusion {
                FusionKind::Itfm => Fusion::Itfm(Itfm::new(&mut b, &name, c, cfg.pool)?),
                FusionKind::Conv => Fusion::Conv(b.conv(&name, ConvSpec::pointwise(2 * c, c), Init::Zero)?),
            };
            ups.push(up);
            fusions.push(fusion);
        }
        ups.reverse();
        fusions.reverse();
        let head_out = if cfg.src { 4 } else { 3 };
        let head = b.conv("head", ConvSpec::new(ch(0), head_out, 3), Init::Zero)?;

        let net = Net {
            config: cfg.clone(),
            stem,
            downs,
            paths,
            cmims,
            ups,
            fusions,
            head,
        };
        Ok((store, net))
    }

    /// `hazy` is `(n, 3, h, w)` in `[0, 1]`; any `h, w` are accepted.
    pub fn forward<'t, T: Element>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        hazy: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = hazy.shape();
        if s.c != 3 {
            return Err(Error::invalid("net", format!("expected RGB input, got {s}")));
        }
        let m = self.config.size_multiple();
        let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
        let x = if (ph, pw) == (s.h, s.w) {
            hazy
        } else {
            hazy.reflect_pad(ph - s.h, pw - s.w)?
        };

        let mut feats = Vec::with_capacity(self.paths.len());
        let mut e = self.stem.forward(tape, store, x)?;
        for (l, path) in self.paths.iter().enumerate() {
            if l > 0 {
                e = self.downs[l - 1].forward(tape, store, e)?;
            }
            let mut f = e;
            for block in path {
                f = block.forward(tape, store, f)?;
            }
            feats.push(f);
        }
        for (l, cmim) in self.cmims.iter().enumerate() {
            let (hi, lo) = cmim.forward(tape, store, feats[l], feats[l + 1])?;
            feats[l] = hi;
            feats[l + 1] = lo;
        }

        let mut dec = feats[feats.len() - 1];
        for l in (0..self.ups.len()).rev() {
            let up = self.ups[l].forward(tape, store, dec)?.pixel_shuffle(2)?;
            dec = up.add(self.fusions[l].forward(tape, store, feats[l], up)?)?;
        }
        let mut head = self.head.forward(tape, store, dec)?;
        if (ph, pw) != (s.h, s.w) {
            head = head.crop(s.h, s.w)?;
        }
        if self.config.src {
            head.soft_residual(hazy)
        } else {
            hazy.add(head)
        }
    }

    /// Untaped-style convenience: runs one forward pass and returns the value.
    pub fn infer<T: Element>(&self, store: &ParamStore<T>, hazy: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let x = tape.constant(hazy.clone());
        let out = self.forward(&tape, store, x)?;
        Ok((*out.value()).clone())
    }

    /// Per-layer params and FLOPs for an `(n, 3, h, w)` input.
    pub fn describe(&self, n: usize, h: usize, w: usize) -> Result<Vec<LayerReport>> {
        let m = self.config.size_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let mut report = Vec::new();
        let mut shapes = Vec::with_capacity(self.paths.len());
        let mut e = self.stem.describe(Shape::new(n, 3, ph, pw), &mut report)?;
        for (l, path) in self.paths.iter().enumerate() {
            if l > 0 {
                e = self.downs[l - 1].describe(e, &mut report)?;
            }
            for block in path {
                e = block.describe(e, &mut report)?;
            }
            shapes.push(e);
        }
        for (l, cmim) in self.cmims.iter().enumerate() {
            cmim.describe(shapes[l], shapes[l + 1], &mut report)?;
        }
        let mut dec = shapes[shapes.len() - 1];
        for l in (0..self.ups.len()).rev() {
            let up = self.ups[l].describe(dec, &mut report)?;
            dec = Shape::new(up.n, up.c / 4, up.h * 2, up.w * 2);
            self.fusions[l].describe(dec, &mut report)?;
        }
        self.head.describe(dec, &mut report)?;
        Ok(report)
    }

    /// Total forward FLOPs at an `(n, 3, h, w)` input.
    pub fn count_flops(&self, n: usize, h: usize, w: usize) -> Result<u64> {
        Ok(self.describe(n, h, w)?.iter().map(|r| r.flops).sum())
    }
}

/// Exact number of trainable scalars.
pub fn count_params<T: Element>(store: &ParamStore<T>) -> usize {
    store.num_scalars()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = NetConfig {
            pool: (2, 3),
            activation: Activation::Relu,
            ..NetConfig::baseline(16, vec![1, 2, 3, 4])
        };
        let text = cfg.to_key_values().to_text();
        let back = NetConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(parse_pool("4").unwrap(), (4, 4));
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut NetConfig)| {
            let mut cfg = NetConfig::tiny();
            f(&mut cfg);
            cfg.validate().is_err()
        };
        assert!(bad(|c| c.base_channels = 6));
        assert!(bad(|c| c.depths = vec![1]));
        assert!(bad(|c| c.pool = (0, 1)));
        assert!(KeyValues::parse("colour = red")
            .and_then(|kv| NetConfig::from_key_values(&kv))
            .is_err());
    }

    #[test]
    fn parameter_names() {
        let (store, _) = Net::build::<f32>(&NetConfig::tiny(), 0).unwrap();
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names[0], "enc.stem.weight");
        assert!(names.contains(&"skip3.block1.mlp.project.bias"));
        assert!(names.contains(&"cmim2.alpha"));
        assert!(names.contains(&"dec.fuse1.qk_proj.weight"));
        assert_eq!(*names.last().unwrap(), "head.bias");
    }

    #[test]
    fn non_rgb_rejected() {
        let (store, net) = Net::build::<f64>(&NetConfig::tiny(), 0).unwrap();
        assert!(net.infer(&store, &Tensor::zeros([1, 4, 8, 8])).is_err());
    }
}
