//! Deterministic synthetic slide corpus with known latent classes.
//!
//! Every case draws from its own RNG stream derived from (seed, case index),
//! so generating n cases and truncating to k equals generating k cases.
//! Slides are white canvases with Gaussian-blob tissue regions filled with
//! class-colored band-limited noise; classes are separable by mean color.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{ReportDocument, SlideRecord};
use crate::util::seeded_rng_indexed;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureParams {
    pub base_rgb: [u8; 3],
    /// Peak amplitude of the band-limited luminance noise, in channel units.
    pub noise_amplitude: f64,
    /// Spatial wavelength of the lowest noise band, in pixels.
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: String,
    pub organ: String,
    pub finding_templates: Vec<String>,
    /// Distinctive phrase expected to appear in generated text for the class.
    pub keyword: String,
    /// 1 = benign, 2 = pre-cancerous, 3 = cancerous.
    pub severity: u8,
    pub texture: TextureParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryProbs {
    pub cat1: f64,
    pub cat2: f64,
    pub cat3: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_cases: usize,
    pub classes: Vec<ClassSpec>,
    pub category_probs: CategoryProbs,
    pub image_size: (u32, u32),
    pub seed: u64,
    /// Maximum parts per case; each case draws 1..=max parts.
    pub max_parts_per_case: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthPart {
    pub part_index: usize,
    pub class_id: String,
    pub template_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthCase {
    pub document: ReportDocument,
    pub slides: Vec<SlideRecord>,
    pub parts: Vec<SynthPart>,
}

/// Per-slide ground truth emitted alongside the corpus manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideTruth {
    pub slide_id: String,
    pub case_id: String,
    pub part_index: usize,
    pub class_id: String,
    pub severity: u8,
    pub keyword: String,
    pub text: String,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let p = self.category_probs;
        let sum = p.cat1 + p.cat2 + p.cat3;
        if (sum - 1.0).abs() > 1e-9 || p.cat1 < 0.0 || p.cat2 < 0.0 || p.cat3 < 0.0 {
            return Err(SynthError::InvalidSpec(format!(
                "category probabilities must be nonnegative and sum to 1 (got {sum})"
            )));
        }
        if self.image_size.0 < 448 || self.image_size.1 < 448 {
            return Err(SynthError::InvalidSpec(
                "image dimensions must be >= 448 px for a 2x2 patch grid at stride 192".into(),
            ));
        }
        if self.n_cases == 0 || self.classes.is_empty() || self.max_parts_per_case == 0 {
            return Err(SynthError::InvalidSpec("empty corpus".into()));
        }
        for c in &self.classes {
            if c.finding_templates.is_empty() {
                return Err(SynthError::InvalidSpec(format!(
                    "class {} has no finding templates",
                    c.class_id
                )));
            }
            if !(1..=3).contains(&c.severity) {
                return Err(SynthError::InvalidSpec(format!(
                    "class {} severity must be in 1..=3",
                    c.class_id
                )));
            }
        }
        Ok(())
    }
}

/// The default eight-class corpus. Hues are grouped by severity (cool hues
/// benign, warm hues pre-cancerous, red/magenta cancerous) and each class has
/// two templates that differ only in a trailing plural, so the pair scores
/// above the false-negative masking threshold under the n-gram oracle while
/// cross-class texts stay far below it.
pub fn default_spec(n_cases: usize, seed: u64) -> SynthSpec {
    let mk = |class_id: &str,
              organ: &str,
              keyword: &str,
              severity: u8,
              hue: f64,
              templates: &[&str]| ClassSpec {
        class_id: class_id.into(),
        organ: organ.into(),
        finding_templates: templates.iter().map(|s| s.to_string()).collect(),
        keyword: keyword.into(),
        severity,
        texture: TextureParams {
            base_rgb: hsv_to_rgb(hue, 0.48, 0.78),
            noise_amplitude: 14.0,
            noise_scale: 23.0,
        },
    };
    SynthSpec {
        n_cases,
        classes: vec![
            mk("benign_colon", "colon", "benign colonic mucosa", 1, 120.0, &[
                "benign colonic mucosa with intact crypt architecture and no pathologic alteration in any of the examined tissue fragments",
                "benign colonic mucosa with intact crypt architecture and no pathologic alteration in any of the examined tissue fragment",
            ]),
            mk("benign_stomach", "stomach", "oxyntic mucosa", 1, 160.0, &[
                "fragments of unremarkable oxyntic mucosa without intestinal metaplasia or active inflammation in the submitted gastric samples",
                "fragments of unremarkable oxyntic mucosa without intestinal metaplasia or active inflammation in the submitted gastric sample",
            ]),
            mk("benign_duodenum", "duodenum", "villous architecture", 1, 200.0, &[
                "unremarkable small intestinal mucosa showing preserved villous architecture and normal cellularity across the biopsy pieces",
                "unremarkable small intestinal mucosa showing preserved villous architecture and normal cellularity across the biopsy piece",
            ]),
            mk("benign_esophagus", "esophagus", "squamous mucosa", 1, 240.0, &[
                "benign squamous mucosa without evidence of eosinophilic infiltration or dysplasia in the available endoscopic specimens",
                "benign squamous mucosa without evidence of eosinophilic infiltration or dysplasia in the available endoscopic specimen",
            ]),
            mk("adenoma_colon", "colon", "tubular adenoma", 2, 40.0, &[
                "tubular adenoma with adenomatous epithelium and crowded hyperchromatic nuclei involving several of the polypoid fragments",
                "tubular adenoma with adenomatous epithelium and crowded hyperchromatic nuclei involving several of the polypoid fragment",
            ]),
            mk("polyp_stomach", "stomach", "fundic gland polyp", 2, 65.0, &[
                "fundic gland polyp with dilated oxyntic glands and no dysplastic change identified within the retrieved polypectomy specimens",
                "fundic gland polyp with dilated oxyntic glands and no dysplastic change identified within the retrieved polypectomy specimen",
            ]),
            mk("carcinoma_breast", "breast", "invasive ductal carcinoma", 3, 0.0, &[
                "invasive ductal carcinoma with marked nuclear pleomorphism and frequent mitotic figures infiltrating the sampled cores",
                "invasive ductal carcinoma with marked nuclear pleomorphism and frequent mitotic figures infiltrating the sampled core",
            ]),
            mk("carcinoma_skin", "skin", "basal cell carcinoma", 3, 325.0, &[
                "nodular basal cell carcinoma with peripheral palisading extending near the deep edge of the submitted shave specimens",
                "nodular basal cell carcinoma with peripheral palisading extending near the deep edge of the submitted shave specimen",
            ]),
        ],
        category_probs: CategoryProbs { cat1: 1.0, cat2: 0.0, cat3: 0.0 },
        image_size: (512, 512),
        seed,
        max_parts_per_case: 1,
    }
}

pub fn hsv_to_rgb(h_deg: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h_deg.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

fn draw_category(rng: &mut impl Rng, p: &CategoryProbs) -> u8 {
    let u: f64 = rng.gen();
    if u < p.cat1 {
        1
    } else if u < p.cat1 + p.cat2 {
        2
    } else {
        3
    }
}

/// Builds the corpus metadata (documents, slide manifests, ground truth).
/// Pixels are rendered separately by [`render_slide`].
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<SynthCase>, SynthError> {
    spec.validate()?;
    let mut cases = Vec::with_capacity(spec.n_cases);
    for case_index in 0..spec.n_cases {
        let mut rng = seeded_rng_indexed(spec.seed, "synth-case", case_index as u64);
        let case_id = format!("case{case_index:05}");
        let n_parts = rng.gen_range(1..=spec.max_parts_per_case);
        let mut parts = Vec::new();
        let mut slides = Vec::new();
        let mut lines = Vec::new();
        for part_index in 0..n_parts {
            let class = &spec.classes[rng.gen_range(0..spec.classes.len())];
            let template_index = rng.gen_range(0..class.finding_templates.len());
            let text = format!(
                "{}, biopsy : {}.",
                class.organ, class.finding_templates[template_index]
            );
            let indicator = (b'a' + (part_index as u8 % 26)) as char;
            lines.push(format!("{indicator}. {text}"));
            parts.push(SynthPart {
                part_index,
                class_id: class.class_id.clone(),
                template_index,
                text,
            });
            let category = draw_category(&mut rng, &spec.category_probs);
            let layout: Vec<usize> = match category {
                1 => vec![0],
                2 => {
                    let k = rng.gen_range(2..=3);
                    vec![0; k]
                }
                _ => {
                    // At least two blocks, one or two slides on each.
                    let mut v = vec![0, 1];
                    if rng.gen_bool(0.5) {
                        v.push(rng.gen_range(0..2));
                    }
                    v
                }
            };
            for (k, &block_index) in layout.iter().enumerate() {
                let slide_id = format!("{case_id}-p{part_index}-b{block_index}-s{k}");
                slides.push(SlideRecord {
                    slide_id: slide_id.clone(),
                    case_id: case_id.clone(),
                    part_index,
                    block_index,
                    image_uri: format!("images/{slide_id}.png"),
                });
            }
        }
        cases.push(SynthCase {
            document: ReportDocument { case_id, raw_text: lines.join("\n") },
            slides,
            parts,
        });
    }
    Ok(cases)
}

/// Ground-truth rows for every slide of the generated corpus.
pub fn slide_truths(spec: &SynthSpec, cases: &[SynthCase]) -> Vec<SlideTruth> {
    let mut out = Vec::new();
    for case in cases {
        for slide in &case.slides {
            let part = &case.parts[slide.part_index];
            let class = spec
                .classes
                .iter()
                .find(|c| c.class_id == part.class_id)
                .expect("class exists");
            out.push(SlideTruth {
                slide_id: slide.slide_id.clone(),
                case_id: slide.case_id.clone(),
                part_index: slide.part_index,
                class_id: class.class_id.clone(),
                severity: class.severity,
                keyword: class.keyword.clone(),
                text: part.text.clone(),
            });
        }
    }
    out
}

const BACKGROUND: u8 = 250;

/// Renders one slide: pure in (spec, case, slide_id).
pub fn render_slide(
    spec: &SynthSpec,
    case: &SynthCase,
    slide: &SlideRecord,
) -> image::RgbImage {
    let part = &case.parts[slide.part_index];
    let class = spec
        .classes
        .iter()
        .find(|c| c.class_id == part.class_id)
        .expect("slide class exists");
    let (w, h) = spec.image_size;
    let seed_salt = format!("render-{}", slide.slide_id);
    let mut rng = seeded_rng_indexed(spec.seed, &seed_salt, 0);

    let n_blobs = rng.gen_range(2..=4);
    let min_dim = w.min(h) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let cx = rng.gen_range(0.22..0.78) * w as f64;
            let cy = rng.gen_range(0.22..0.78) * h as f64;
            let sx = rng.gen_range(0.07..0.16) * min_dim;
            let sy = rng.gen_range(0.07..0.16) * min_dim;
            (cx, cy, sx, sy)
        })
        .collect();
    // Three noise bands with random orientations and phases.
    let bands: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|k| {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let wavelength = class.texture.noise_scale * (k as f64 + 1.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (angle.cos() / wavelength, angle.sin() / wavelength, phase, 1.0 / (k as f64 + 1.0))
        })
        .collect();

    let base = class.texture.base_rgb;
    let amp = class.texture.noise_amplitude;
    image::RgbImage::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let field: f64 = blobs
            .iter()
            .map(|&(cx, cy, sx, sy)| {
                let dx = (xf - cx) / sx;
                let dy = (yf - cy) / sy;
                (-0.5 * (dx * dx + dy * dy)).exp()
            })
            .sum();
        if field <= 0.55 {
            return image::Rgb([BACKGROUND, BACKGROUND, BACKGROUND]);
        }
        let noise: f64 = bands
            .iter()
            .map(|&(ux, uy, phase, gain)| {
                (std::f64::consts::TAU * (xf * ux + yf * uy) + phase).sin() * gain
            })
            .sum::<f64>()
            / 1.8333;
        let shift = amp * noise;
        let px = |c: u8| (c as f64 + shift).clamp(10.0, 235.0) as u8;
        image::Rgb([px(base[0]), px(base[1]), px(base[2])])
    })
}
