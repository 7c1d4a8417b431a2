//! End-to-end classifier: backbone → MLFE → embedding → LLFE → head.

use crate::dropout::Mode;
use crate::error::{MafError, Result};
use crate::llfe::{llfe_forward, AttentionHeadParams, CoderParams, HeadProj, UnitParams};
use crate::mlfe::{mlfe_forward, AttentionStack, LaNetParams, MlfeParams};
use crate::ops::{chw, conv2d, linear};
use crate::params::{bind_frozen, param_tree, ParamTree};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Number of strided convolution blocks in the backbone.
pub const BACKBONE_BLOCKS: usize = 3;

/// Architectural hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MafConfig {
    /// `(height, width)` of the grayscale input.
    pub image_size: (usize, usize),
    /// Backbone output channels `C`.
    pub channels: usize,
    /// Parallel LANets, and also the number of learnable patches.
    pub num_lanets: usize,
    /// LANet channel compression rate `r`.
    pub reduction: usize,
    pub p_map: f64,
    pub p_head: f64,
    pub heads: usize,
    /// Stacked encoder/decoder units `I`.
    pub units: usize,
    pub num_classes: usize,
    pub use_mlfe: bool,
    pub use_llfe: bool,
}

impl Default for MafConfig {
    fn default() -> Self {
        Self::paper_analog()
    }
}

impl MafConfig {
    /// 48×48 input, `C = 32` (6×6 grid), two LANets, two units.
    pub fn paper_analog() -> Self {
        MafConfig {
            image_size: (48, 48),
            channels: 32,
            num_lanets: 2,
            reduction: 4,
            p_map: 0.6,
            p_head: 0.4,
            heads: 2,
            units: 2,
            num_classes: 2,
            use_mlfe: true,
            use_llfe: true,
        }
    }

    /// 12×12 input, `C = 8` (2×2 grid), one unit. Small enough for
    /// exhaustive finite-difference checks.
    pub fn toy() -> Self {
        MafConfig {
            image_size: (12, 12),
            channels: 8,
            num_lanets: 2,
            reduction: 4,
            p_map: 0.6,
            p_head: 0.4,
            heads: 2,
            units: 1,
            num_classes: 2,
            use_mlfe: true,
            use_llfe: true,
        }
    }

    /// Channel counts through the backbone: `1 → C/4 → C/2 → C`.
    pub fn backbone_channels(&self) -> [usize; BACKBONE_BLOCKS + 1] {
        [1, self.channels / 4, self.channels / 2, self.channels]
    }

    /// Spatial size of the backbone output.
    pub fn feature_grid(&self) -> (usize, usize) {
        let halve = |mut s: usize| {
            for _ in 0..BACKBONE_BLOCKS {
                s = (s - 1) / 2 + 1;
            }
            s
        };
        (halve(self.image_size.0), halve(self.image_size.1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(MafError::Config(msg));
        let c = self.channels;
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return fail(format!("image_size must be positive, got {:?}", self.image_size));
        }
        if c == 0 || !c.is_multiple_of(4) {
            return fail(format!("channels ({c}) must be a positive multiple of 4"));
        }
        if self.num_lanets < 1 {
            return fail("num_lanets (N) must be >= 1".into());
        }
        if self.units < 1 {
            return fail("units (I) must be >= 1".into());
        }
        if self.reduction == 0 || !c.is_multiple_of(self.reduction) {
            return fail(format!("channels ({c}) must be divisible by reduction ({})", self.reduction));
        }
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return fail(format!("heads ({}) must divide channels ({c})", self.heads));
        }
        for (name, p) in [("p_map", self.p_map), ("p_head", self.p_head)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes ({}) must be >= 2", self.num_classes));
        }
        Ok(())
    }

    /// Closed-form count of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let c = self.channels;
        let ch = self.backbone_channels();
        let backbone: usize = ch.windows(2).map(|w| w[1] * w[0] * 9 + w[1]).sum();
        let mlfe = if self.use_mlfe {
            let cr = c / self.reduction;
            self.num_lanets * (cr * c + cr + cr + 1)
        } else {
            0
        };
        let llfe = if self.use_llfe {
            // attention: 3·C·d per head plus W_o (C×C) = 4C²; two norms 4C;
            // FFN 8C² + 5C
            let coder = 12 * c * c + 9 * c;
            c * c + c + self.num_lanets * c + self.units * 2 * coder
        } else {
            0
        };
        backbone + mlfe + llfe + c * self.num_classes + self.num_classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    /// `C_out×C_in×3×3`
    pub w: T,
    pub b: T,
}
param_tree!(ConvParams { leaves: [w, b], nested: [] });

/// Row-wise `x·w + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    pub w: T,
    pub b: T,
}
param_tree!(LinearParams { leaves: [w, b], nested: [] });

#[derive(Clone, Debug, PartialEq)]
pub struct LlfeParams<T> {
    pub embed: LinearParams<T>,
    /// Learnable patches `N×C`.
    pub patches: T,
    pub units: Vec<UnitParams<T>>,
}
param_tree!(LlfeParams { leaves: [patches], nested: [embed, units] });

#[derive(Clone, Debug, PartialEq)]
pub struct MafParams<T = Tensor> {
    pub backbone: Vec<ConvParams<T>>,
    pub mlfe: Option<MlfeParams<T>>,
    pub llfe: Option<LlfeParams<T>>,
    pub head: LinearParams<T>,
}
param_tree!(MafParams { leaves: [], nested: [backbone, mlfe, llfe, head] });

impl MafParams<Tensor> {
    /// Checks that every leaf has the shape `config` implies.
    pub fn check_shapes(&self, config: &MafConfig) -> Result<()> {
        let template = init_params(config, 0)?;
        let expected = template.map_named("", &mut |n, t| (n.to_string(), t.shape().to_vec()));
        let mut exp = Vec::new();
        expected.for_each_named("", &mut |_, e| exp.push(e.clone()));
        let mut got = Vec::new();
        self.for_each_named("", &mut |n, t| got.push((n.to_string(), t.shape().to_vec())));
        if exp != got {
            let first = exp
                .iter()
                .zip(&got)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {a:?}, found {b:?}"))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", exp.len(), got.len()));
            return Err(MafError::Config(format!("parameters do not match config: {first}")));
        }
        Ok(())
    }
}

/// Attention maps captured during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// Post-drop LANet maps.
    pub stack: Option<AttentionStack>,
    /// Channel-max fused map `1×H×W`.
    pub fused: Option<Tensor>,
    pub dropped_map: Option<usize>,
}

/// Three stride-2 3×3 convolutions with ReLU.
pub fn backbone_forward(tape: &mut Tape, image: Var, convs: &[ConvParams<Var>]) -> Result<Var> {
    let mut x = image;
    for conv in convs {
        let y = conv2d(tape, x, conv.w, conv.b, 2, 1)?;
        x = tape.relu(y);
    }
    Ok(x)
}

/// `C×H×W → HW×C` (row `h·W + w` is pixel `(h, w)`), then a per-row linear map.
pub fn embed(tape: &mut Tape, x: Var, p: &LinearParams<Var>) -> Result<Var> {
    let rows = pixel_rows(tape, x)?;
    linear(tape, rows, p.w, p.b)
}

fn pixel_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let (c, h, w) = chw(tape, x, "embed")?;
    let flat = tape.reshape(x, &[c, h * w])?;
    tape.transpose(flat)
}

/// Mean over pixel rows followed by the linear head.
pub fn classify(tape: &mut Tape, x_out: Var, head: &LinearParams<Var>) -> Result<Var> {
    let pooled = tape.mean_rows(x_out)?;
    let logits = linear(tape, pooled, head.w, head.b)?;
    let n = tape.value(logits).numel();
    tape.reshape(logits, &[n])
}

/// Output of [`maf_forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[num_classes]`
    pub logits: Var,
    pub diagnostics: Diagnostics,
}

pub fn maf_forward(
    tape: &mut Tape,
    image: Var,
    params: &MafParams<Var>,
    config: &MafConfig,
    rng: &mut Rng,
    mode: Mode,
) -> Result<ForwardOutput> {
    let (h, w) = config.image_size;
    if tape.shape(image) != [1, h, w] {
        return Err(MafError::dim("maf_forward", tape.shape(image), &[1, h, w]));
    }
    let centred = {
        let shift = tape.constant(Tensor::full(&[1, h, w], -0.5));
        let x = tape.add(image, shift)?;
        tape.scale(x, 2.0)
    };
    let mut x = backbone_forward(tape, centred, &params.backbone)?;
    let mut diagnostics = Diagnostics::default();
    if let Some(mlfe) = &params.mlfe {
        let out = mlfe_forward(tape, x, mlfe, config.p_map, rng, mode)?;
        diagnostics.stack = Some(AttentionStack {
            maps: tape.value(out.maps).clone(),
            dropped: out.dropped,
        });
        diagnostics.fused = Some(tape.value(out.fused).clone());
        diagnostics.dropped_map = out.dropped;
        x = out.gated;
    }
    let x_out = match &params.llfe {
        Some(llfe) => {
            let rows = embed(tape, x, &llfe.embed)?;
            llfe_forward(tape, rows, llfe.patches, &llfe.units, config.p_head, rng, mode)?
        }
        None => pixel_rows(tape, x)?,
    };
    let logits = classify(tape, x_out, &params.head)?;
    Ok(ForwardOutput {
        logits,
        diagnostics,
    })
}

/// Eval-mode logits without recording gradients.
pub fn infer(params: &MafParams, config: &MafConfig, image: &Tensor) -> Result<(Tensor, Diagnostics)> {
    let mut tape = Tape::new();
    let bound = bind_frozen(params, &mut tape);
    let img = tape.constant(image.clone());
    // Eval mode never draws from the stream.
    let mut rng = Rng::new(0);
    let out = maf_forward(&mut tape, img, &bound, config, &mut rng, Mode::Eval)?;
    Ok((tape.value(out.logits).clone(), out.diagnostics))
}

/// Index of the largest logit; ties go to the lowest class.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

struct Initializer {
    rng: Rng,
}

impl Initializer {
    fn he(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.normal(shape, (2.0 / fan_in as f64).sqrt())
    }

    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.normal(0.0, std)).collect();
        Tensor::new(shape, data).expect("positive shape")
    }

    fn coder(&mut self, c: usize, heads: usize) -> CoderParams<Tensor> {
        let d = c / heads;
        CoderParams {
            attn: AttentionHeadParams {
                heads: (0..heads)
                    .map(|_| HeadProj {
                        w_q: self.he(&[c, d], c),
                        w_k: self.he(&[c, d], c),
                        w_v: self.he(&[c, d], c),
                    })
                    .collect(),
                w_o: self.he(&[heads * d, c], heads * d),
            },
            norm1_gamma: Tensor::ones(&[c]),
            norm1_beta: Tensor::zeros(&[c]),
            norm2_gamma: Tensor::ones(&[c]),
            norm2_beta: Tensor::zeros(&[c]),
            ffn_w1: self.he(&[c, 4 * c], c),
            ffn_b1: Tensor::zeros(&[4 * c]),
            ffn_w2: self.he(&[4 * c, c], 4 * c),
            ffn_b2: Tensor::zeros(&[c]),
        }
    }
}

const HEAD_INIT_STD: f64 = 0.01;

/// Deterministic initialisation: He-normal weights (`std = √(2/fan_in)`),
/// zero biases, `N(0, 0.02)` patches, unit layer-norm gains.
pub fn init_params(config: &MafConfig, seed: u64) -> Result<MafParams> {
    config.validate()?;
    let mut init = Initializer { rng: Rng::new(seed) };
    let c = config.channels;
    let ch = config.backbone_channels();
    let backbone = ch
        .windows(2)
        .map(|w| ConvParams {
            w: init.he(&[w[1], w[0], 3, 3], w[0] * 9),
            b: Tensor::zeros(&[w[1]]),
        })
        .collect();
    let mlfe = config.use_mlfe.then(|| {
        let cr = c / config.reduction;
        MlfeParams {
            lanets: (0..config.num_lanets)
                .map(|_| LaNetParams {
                    w1: init.he(&[cr, c], c),
                    b1: Tensor::zeros(&[cr]),
                    w2: init.he(&[1, cr], cr),
                    b2: Tensor::zeros(&[1]),
                })
                .collect(),
        }
    });
    let llfe = config.use_llfe.then(|| LlfeParams {
        embed: LinearParams {
            w: init.he(&[c, c], c),
            b: Tensor::zeros(&[c]),
        },
        patches: init.normal(&[config.num_lanets, c], 0.02),
        units: (0..config.units)
            .map(|_| UnitParams {
                encoder: init.coder(c, config.heads),
                decoder: init.coder(c, config.heads),
            })
            .collect(),
    });
    let head = LinearParams {
        w: init.normal(&[c, config.num_classes], HEAD_INIT_STD),
        b: Tensor::zeros(&[config.num_classes]),
    };
    Ok(MafParams {
        backbone,
        mlfe,
        llfe,
        head,
    })
}
