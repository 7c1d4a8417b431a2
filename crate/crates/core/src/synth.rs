//! Synthetic face-like images with planted drowsiness cues.
//!
//! Each image has an eye band (upper third) and a mouth band (lower third).
//! Drowsy samples (label 1) carry closed eyes, drawn as faint horizontal
//! bars, and a yawn, drawn as a bright disc. Alert samples (label 0) carry
//! open eyes, drawn as dark pupils, and a closed mouth, drawn as a thin dark
//! line. Either band alone determines the label, so masking one band with a
//! flat occluder still leaves a usable cue.
//!
//! Per-sample illumination varies, which keeps the global pixel mean close
//! to uninformative.

use crate::error::{MafError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Flat grey used for occluders.
pub const OCCLUDER_VALUE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaceRegion {
    Eyes,
    Mouth,
}

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    fn bottom(&self) -> usize {
        self.top + self.height
    }

    fn right(&self) -> usize {
        self.left + self.width
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.top < other.bottom()
            && other.top < self.bottom()
            && self.left < other.right()
            && other.left < self.right()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `1×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    /// 0 = alert, 1 = drowsy.
    pub label: usize,
    pub occluded: bool,
    pub occluded_region: Option<FaceRegion>,
}

/// Intensities of the planted patterns, relative to the sample's skin tone.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternStyle {
    /// Mean skin tone; each sample draws its own tone within `± tone_spread`.
    pub tone: f64,
    pub tone_spread: f64,
    /// Darkening of a closed-eye bar (low contrast).
    pub closed_eye_contrast: f64,
    /// Darkening of an open-eye pupil (high contrast).
    pub open_eye_contrast: f64,
    /// Brightening of the yawn disc.
    pub yawn_contrast: f64,
    /// Darkening of the closed-mouth line.
    pub mouth_line_contrast: f64,
    /// Maximum pattern displacement in pixels at 48×48, scaled with size.
    pub jitter: f64,
}

impl Default for PatternStyle {
    fn default() -> Self {
        PatternStyle {
            tone: 0.5,
            tone_spread: 0.1,
            closed_eye_contrast: 0.15,
            open_eye_contrast: 0.4,
            yawn_contrast: 0.35,
            mouth_line_contrast: 0.3,
            jitter: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// `(height, width)`
    pub image_size: (usize, usize),
    pub eye_region: Rect,
    pub mouth_region: Rect,
    pub style: PatternStyle,
    pub occlusion: f64,
    pub noise_std: f64,
    pub count: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Eye band = upper third, mouth band = lower third.
    pub fn new(image_size: (usize, usize), count: usize, seed: u64) -> Self {
        let (h, w) = image_size;
        let third = h / 3;
        SynthSpec {
            image_size,
            eye_region: Rect {
                top: 0,
                left: 0,
                height: third,
                width: w,
            },
            mouth_region: Rect {
                top: h - third,
                left: 0,
                height: third,
                width: w,
            },
            style: PatternStyle::default(),
            occlusion: 0.0,
            noise_std: DEFAULT_NOISE_STD,
            count,
            seed,
        }
    }

    pub fn with_occlusion(mut self, p: f64) -> Self {
        self.occlusion = p;
        self
    }

    pub fn with_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn region(&self, r: FaceRegion) -> Rect {
        match r {
            FaceRegion::Eyes => self.eye_region,
            FaceRegion::Mouth => self.mouth_region,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 12 || w < 12 {
            return Err(MafError::Spec(format!("image size {h}×{w} is below 12×12")));
        }
        for (name, r) in [("eye", self.eye_region), ("mouth", self.mouth_region)] {
            if r.height == 0 || r.width == 0 || r.bottom() > h || r.right() > w {
                return Err(MafError::Spec(format!(
                    "{name} region {r:?} does not fit inside {h}×{w}"
                )));
            }
        }
        if self.eye_region.overlaps(&self.mouth_region) {
            return Err(MafError::Spec("eye and mouth regions overlap".into()));
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return Err(MafError::Spec(format!("occlusion {} outside [0, 1]", self.occlusion)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(MafError::Spec(format!("noise std {} must be >= 0", self.noise_std)));
        }
        Ok(())
    }
}

pub const DEFAULT_NOISE_STD: f64 = 0.1;

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn fill_rect(&mut self, r: Rect, value: f64) {
        for y in r.top..r.bottom() {
            self.px[y * self.w + r.left..y * self.w + r.right()].fill(value);
        }
    }

    /// Adds `delta` inside an axis-aligned box centred at `(cy, cx)`.
    fn shade_box(&mut self, cy: f64, cx: f64, half_h: f64, half_w: f64, delta: f64) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                if (py - cy).abs() <= half_h && (px - cx).abs() <= half_w {
                    self.px[y * self.w + x] += delta;
                }
            }
        }
    }

    fn shade_disc(&mut self, cy: f64, cx: f64, radius: f64, delta: f64) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                if (py - cy).powi(2) + (px - cx).powi(2) <= radius * radius {
                    self.px[y * self.w + x] += delta;
                }
            }
        }
    }
}

fn render(spec: &SynthSpec, label: usize, rng: &mut Rng) -> Sample {
    let (h, w) = spec.image_size;
    let st = &spec.style;
    let scale = h.min(w) as f64 / 48.0;
    let tone = st.tone + st.tone_spread * (2.0 * rng.uniform() - 1.0);
    let mut c = Canvas {
        h,
        w,
        px: vec![tone; h * w],
    };
    let mut jitter = || st.jitter * scale * (2.0 * rng.uniform() - 1.0);

    let eyes = spec.eye_region;
    let eye_y = eyes.top as f64 + eyes.height as f64 / 2.0 + jitter();
    let eye_dx = jitter();
    for frac in [1.0 / 3.0, 2.0 / 3.0] {
        let cx = eyes.left as f64 + eyes.width as f64 * frac + eye_dx;
        if label == 1 {
            c.shade_box(eye_y, cx, 1.0 * scale, 5.0 * scale, -st.closed_eye_contrast);
        } else {
            c.shade_disc(eye_y, cx, 3.0 * scale, -st.open_eye_contrast);
        }
    }

    let mouth = spec.mouth_region;
    let my = mouth.top as f64 + mouth.height as f64 / 2.0 + jitter();
    let mx = mouth.left as f64 + mouth.width as f64 / 2.0 + jitter();
    if label == 1 {
        c.shade_disc(my, mx, 6.0 * scale, st.yawn_contrast);
    } else {
        c.shade_box(my, mx, 0.5 * scale, 8.0 * scale, -st.mouth_line_contrast);
    }

    if spec.noise_std > 0.0 {
        for p in c.px.iter_mut() {
            *p += rng.normal(0.0, spec.noise_std);
        }
    }
    c.px.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));

    let occluded_region = rng.bernoulli(spec.occlusion).then(|| {
        if rng.below(2) == 0 {
            FaceRegion::Eyes
        } else {
            FaceRegion::Mouth
        }
    });
    if let Some(r) = occluded_region {
        c.fill_rect(spec.region(r), OCCLUDER_VALUE);
    }

    Sample {
        image: Tensor::new(&[1, h, w], c.px).expect("image shape"),
        label,
        occluded: occluded_region.is_some(),
        occluded_region,
    }
}

/// Renders `spec.count` samples with alternating labels. Sample `i` depends
/// only on `(spec, i)`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    Ok((0..spec.count)
        .map(|i| render(spec, i % 2, &mut root.split(i as u64)))
        .collect())
}

/// Best accuracy of any single threshold on the global pixel mean, in
/// either direction.
pub fn mean_threshold_accuracy(samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut scored: Vec<(f64, usize)> = samples
        .iter()
        .map(|s| (s.image.sum() / s.image.numel() as f64, s.label))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = scored.len();
    let total_pos = scored.iter().filter(|s| s.1 == 1).count();
    // Predict 1 above the cut: correct = negatives below + positives above.
    let mut neg_below = 0;
    let mut pos_below = 0;
    let mut best = 0usize;
    for cut in 0..=n {
        if cut > 0 {
            if scored[cut - 1].1 == 1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
        }
        let above = neg_below + (total_pos - pos_below);
        best = best.max(above).max(n - above);
    }
    best as f64 / n as f64
}
