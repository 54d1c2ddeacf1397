//! Progressive Locality Decoder.
//!
//! Every pyramid level is locally emphasized (two 3×3 conv + relu, then
//! bilinear upsampling to stage-1 resolution) and the emphasized maps are
//! fused top-down, deepest first. The first fused map goes through a
//! one-channel linear prediction and a ×4 bilinear upsample to input size.

use std::fmt;
use std::str::FromStr;

use crate::encoder::{min_max_normalize, PyramidFeatures};
use crate::error::{Error, Result};
use crate::nn::{bilinear_upsample, relu, Conv2d, ConvSpec, Init, Initializer, Linear};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FusionMode {
    #[default]
    Cat,
    Add,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Cat => "cat",
            FusionMode::Add => "add",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cat" => Ok(FusionMode::Cat),
            "add" => Ok(FusionMode::Add),
            other => Err(Error::InvalidShape(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PldConfig {
    pub unified_dim: usize,
    pub fusion: FusionMode,
    pub le_enabled: bool,
    pub sfa_enabled: bool,
}

impl Default for PldConfig {
    fn default() -> Self {
        Self {
            unified_dim: 64,
            fusion: FusionMode::Cat,
            le_enabled: true,
            sfa_enabled: true,
        }
    }
}

impl PldConfig {
    /// The four ablation rows: without PLD, LE only, SFA only, LE+SFA.
    pub fn ablations(base: &PldConfig) -> [PldConfig; 4] {
        let with = |le, sfa| PldConfig {
            le_enabled: le,
            sfa_enabled: sfa,
            ..*base
        };
        [with(false, false), with(true, false), with(false, true), with(true, true)]
    }

    pub fn variant_name(&self) -> &'static str {
        match (self.le_enabled, self.sfa_enabled) {
            (false, false) => "without-pld",
            (true, false) => "le",
            (false, true) => "sfa",
            (true, true) => "le+sfa",
        }
    }
}

/// Per-stage channel alignment: the two-conv emphasis block, or a bare
/// 1×1 conv when emphasis is ablated.
#[derive(Clone, Debug)]
pub enum LocalEmphasis {
    Emphasis { conv1: Conv2d, conv2: Conv2d },
    Align { conv: Conv2d },
}

impl LocalEmphasis {
    pub(crate) fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Initializer,
        name: &str,
        c_in: usize,
        c: usize,
        enabled: bool,
    ) -> Self {
        if enabled {
            let spec = ConvSpec::new(1, 1);
            LocalEmphasis::Emphasis {
                conv1: Conv2d::new(store, init, &format!("{name}.conv1"), c_in, c, 3, spec, Init::HeNormal),
                conv2: Conv2d::new(store, init, &format!("{name}.conv2"), c, c, 3, spec, Init::HeNormal),
            }
        } else {
            LocalEmphasis::Align {
                conv: Conv2d::new(store, init, &format!("{name}.align"), c_in, c, 1, ConvSpec::new(1, 0), Init::XavierNormal),
            }
        }
    }

    /// `f: [N, C_i, h, w]` to `[N, C, target.0, target.1]`.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, f: Var, target: (usize, usize)) -> Result<Var> {
        let y = match self {
            LocalEmphasis::Emphasis { conv1, conv2 } => {
                let a = relu(tape, conv1.forward(tape, p, f)?);
                relu(tape, conv2.forward(tape, p, a)?)
            }
            LocalEmphasis::Align { conv } => conv.forward(tape, p, f)?,
        };
        bilinear_upsample(tape, y, target.0, target.1)
    }
}

/// One fusion unit followed by its linear fusion layer.
#[derive(Clone, Debug)]
pub struct FuseStep {
    pub mode: FusionMode,
    pub fuse: Linear,
    pub post: Linear,
}

impl FuseStep {
    fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Initializer, name: &str, c: usize, mode: FusionMode) -> Self {
        let c_in = match mode {
            FusionMode::Cat => 2 * c,
            FusionMode::Add => c,
        };
        Self {
            mode,
            fuse: Linear::new(store, init, &format!("{name}.fuse"), c_in, c, Init::XavierNormal),
            post: Linear::new(store, init, &format!("{name}.post"), c, c, Init::HeNormal),
        }
    }

    /// Fuses the running deeper map with the next shallower emphasized map.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, g_deeper: Var, f_shallower: Var) -> Result<Var> {
        let (a, b) = (tape.shape(g_deeper), tape.shape(f_shallower));
        if a != b {
            return Err(Error::ShapeMismatch(format!("fusing {a:?} with {b:?}")));
        }
        let joined = match self.mode {
            FusionMode::Cat => tape.concat_channels(f_shallower, g_deeper)?,
            FusionMode::Add => tape.add(f_shallower, g_deeper)?,
        };
        let fused = self.fuse.forward(tape, p, joined)?;
        Ok(relu(tape, self.post.forward(tape, p, fused)?))
    }
}

#[derive(Clone, Debug)]
pub enum Aggregation {
    /// `steps[0]` fuses level 3 into level 4, `steps[2]` produces level 1.
    Stepwise { steps: Vec<FuseStep> },
    /// Sum of the four aligned maps and one linear layer.
    Parallel { linear: Linear },
}

/// Decoder intermediates; index 0 is the shallowest level.
pub struct PldOutput {
    pub logits: Var,
    pub emphasized: [Var; 4],
    /// `fused[3]` is the deepest emphasized map itself. In parallel mode
    /// every entry is the single fused map.
    pub fused: [Var; 4],
}

#[derive(Clone, Debug)]
pub struct Pld {
    pub config: PldConfig,
    pub stage_dims: [usize; 4],
    pub emphasis: Vec<LocalEmphasis>,
    pub aggregation: Aggregation,
    pub predict: Linear,
}

impl Pld {
    pub fn new<T: Scalar>(
        config: &PldConfig,
        stage_dims: [usize; 4],
        store: &mut ParamStore<T>,
        init: &mut Initializer,
    ) -> Result<Self> {
        let c = config.unified_dim;
        if c == 0 {
            return Err(Error::InvalidShape("unified_dim must be positive".into()));
        }
        let emphasis = (0..4)
            .map(|i| LocalEmphasis::new(store, init, &format!("pld.le{}", i + 1), stage_dims[i], c, config.le_enabled))
            .collect();
        let aggregation = if config.sfa_enabled {
            Aggregation::Stepwise {
                steps: (1..=3)
                    .rev()
                    .map(|lvl| FuseStep::new(store, init, &format!("pld.sfa{lvl}"), c, config.fusion))
                    .collect(),
            }
        } else {
            Aggregation::Parallel {
                linear: Linear::new(store, init, "pld.parallel", c, c, Init::XavierNormal),
            }
        };
        let predict = Linear::new(store, init, "pld.predict", c, 1, Init::XavierNormal);
        Ok(Self {
            config: *config,
            stage_dims,
            emphasis,
            aggregation,
            predict,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, pyr: &PyramidFeatures) -> Result<PldOutput> {
        let s1 = tape.shape(pyr.maps[0]);
        if s1.len() != 4 {
            return Err(Error::ShapeMismatch(format!("level 1 map has shape {s1:?}")));
        }
        let target = (s1[2], s1[3]);
        for (i, &m) in pyr.maps.iter().enumerate() {
            let s = tape.shape(m);
            let k = 1 << i;
            if s.len() != 4 || s[0] != s1[0] || s[1] != self.stage_dims[i] || s[2] * k != target.0 || s[3] * k != target.1 {
                return Err(Error::ShapeMismatch(format!(
                    "level {} map {s:?} is inconsistent with level 1 {s1:?}",
                    i + 1
                )));
            }
        }
        let le = |i: usize| self.emphasis[i].forward(tape, p, pyr.maps[i], target);
        let (emphasized, fused) = match &self.aggregation {
            Aggregation::Stepwise { steps } => {
                let e4 = le(3)?;
                let (mut em, mut fu) = (vec![e4], vec![e4]);
                for (step, lvl) in steps.iter().zip((0..3).rev()) {
                    let e = le(lvl)?;
                    let g = step.forward(tape, p, fu[fu.len() - 1], e)?;
                    em.push(e);
                    fu.push(g);
                }
                ([em[3], em[2], em[1], em[0]], [fu[3], fu[2], fu[1], fu[0]])
            }
            Aggregation::Parallel { linear } => {
                let em = [le(0)?, le(1)?, le(2)?, le(3)?];
                let g = linear.forward(tape, p, parallel_sum(tape, &em)?)?;
                (em, [g; 4])
            }
        };
        let low = self.predict.forward(tape, p, fused[0])?;
        let logits = bilinear_upsample(tape, low, target.0 * 4, target.1 * 4)?;
        Ok(PldOutput {
            logits,
            emphasized,
            fused,
        })
    }
}

/// Elementwise sum of aligned maps.
pub fn parallel_sum<T: Scalar>(tape: &Tape<T>, maps: &[Var]) -> Result<Var> {
    let (&first, rest) = maps
        .split_first()
        .ok_or_else(|| Error::InvalidShape("nothing to sum".into()))?;
    rest.iter().try_fold(first, |acc, &m| tape.add(acc, m))
}

/// Channel-wise L2 magnitude of the first batch item, min-max normalized to
/// `[0, 1]`. A constant magnitude map gives all zeros.
pub fn feature_heatmap<T: Scalar>(g: &Tensor<T>) -> Result<Tensor<T>> {
    let s = g.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape(format!("feature heatmap needs [N,C,h,w], got {s:?}")));
    }
    let (c, hw) = (s[1], s[2] * s[3]);
    let data = g.data();
    let mag = (0..hw)
        .map(|i| (0..c).map(|ch| data[ch * hw + i] * data[ch * hw + i]).fold(T::zero(), |a, b| a + b).sqrt())
        .collect();
    Ok(min_max_normalize(&Tensor::from_vec(&[s[2], s[3]], mag)?))
}
