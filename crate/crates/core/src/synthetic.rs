//! A deterministic, differentiable layered generator with ground-truth
//! attributes.
//!
//! Every attribute owns a contiguous block of `2 * layers` pixels. A layer in
//! the attribute's mask writes an affine image of `w_l · direction` into that
//! block; layers outside the mask never touch it. The remaining pixels belong
//! to a smooth `tanh` distractor that only sees the orthogonal complement of
//! the attribute directions, so attribute coordinates and distractor
//! coordinates never interact.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::latent::{dot, ExtendedLatent, ImageVector, LatentCode};
use crate::seed;

/// Column norm of every masked layer's render coefficients.
const RENDER_GAIN: f64 = 1.0;
/// Hidden width of each layer's distractor map.
const DISTRACTOR_HIDDEN: usize = 8;
const OFFSET_SCALE: f64 = 0.1;
const DISTRACTOR_BIAS_SCALE: f64 = 0.5;
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeDef {
    pub name: String,
    /// Unit-norm ground-truth direction in the base latent space.
    pub direction: Vec<f64>,
    /// Layers whose codes render this attribute.
    pub layer_mask: Vec<usize>,
    /// Attribute units per unit of latent distance.
    pub slope: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub layers: usize,
    pub pixels: usize,
    pub attributes: Vec<AttributeDef>,
    pub distractor_strength: f64,
    /// Standard deviation of the additive label noise, in attribute units.
    pub noise_std: f64,
    pub seed: u64,
    /// All layers share one set of render and distractor parameters.
    #[serde(default)]
    pub shared_layers: bool,
}

impl SyntheticSpec {
    /// Pixels reserved for each attribute block.
    pub fn block_len(&self) -> usize {
        2 * self.layers
    }

    /// The world used by the bundled configs and most experiments: three
    /// attributes on early, middle and all layers of an 8-layer generator.
    pub fn reference() -> Self {
        let seed = 7;
        let (d, layers) = (16, 8);
        let dirs = random_orthonormal(d, 3, seed::derive_named(seed, "directions"));
        let masks: [Vec<usize>; 3] = [vec![0, 1, 2], vec![3, 4, 5], (0..layers).collect()];
        let names = ["yaw", "age", "tone"];
        let offsets = [0.0, 40.0, 50.0];
        let attributes = names
            .iter()
            .zip(dirs)
            .zip(masks)
            .zip(offsets)
            .map(|(((name, direction), layer_mask), offset)| AttributeDef {
                name: (*name).to_owned(),
                direction,
                layer_mask,
                slope: 10.0,
                offset,
            })
            .collect();
        Self {
            latent_dim: d,
            layers,
            pixels: 128,
            attributes,
            distractor_strength: 1.0,
            noise_std: 0.5,
            seed,
            shared_layers: false,
        }
    }

    /// A spec with one attribute per mask, random orthonormal directions,
    /// slope 10 and offset 0. Attributes are named `a0`, `a1`, ...
    pub fn with_masks(
        latent_dim: usize,
        layers: usize,
        masks: &[Vec<usize>],
        distractor_strength: f64,
        seed: u64,
    ) -> Self {
        let dirs = random_orthonormal(
            latent_dim,
            masks.len(),
            seed::derive_named(seed, "directions"),
        );
        let attributes = masks
            .iter()
            .zip(dirs)
            .enumerate()
            .map(|(k, (mask, direction))| AttributeDef {
                name: format!("a{k}"),
                direction,
                layer_mask: mask.clone(),
                slope: 10.0,
                offset: 0.0,
            })
            .collect();
        let block = 2 * layers * masks.len();
        Self {
            latent_dim,
            layers,
            pixels: block + 64,
            attributes,
            distractor_strength,
            noise_std: 0.5,
            seed,
            shared_layers: false,
        }
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_owned()))
    }

    pub fn attribute(&self, name: &str) -> Result<&AttributeDef> {
        Ok(&self.attributes[self.attribute_index(name)?])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.latent_dim < 2 {
            return bad(format!("latent_dim must be >= 2, got {}", self.latent_dim));
        }
        if self.layers < 2 {
            return bad(format!("layers must be >= 2, got {}", self.layers));
        }
        if self.pixels < self.layers {
            return bad(format!(
                "pixels ({}) must be >= layers ({})",
                self.pixels, self.layers
            ));
        }
        if self.attributes.is_empty() {
            return bad("at least one attribute is required".into());
        }
        let needed = self.attributes.len() * self.block_len();
        if self.pixels < needed {
            return bad(format!(
                "{} attributes need {needed} block pixels, only {} available",
                self.attributes.len(),
                self.pixels
            ));
        }
        if !(self.distractor_strength >= 0.0 && self.distractor_strength.is_finite()) {
            return bad("distractor_strength must be finite and nonnegative".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and nonnegative".into());
        }
        for (k, a) in self.attributes.iter().enumerate() {
            if self.attributes[..k].iter().any(|b| b.name == a.name) {
                return bad(format!("duplicate attribute name `{}`", a.name));
            }
            if a.direction.len() != self.latent_dim {
                return bad(format!(
                    "attribute `{}` direction has length {}, expected {}",
                    a.name,
                    a.direction.len(),
                    self.latent_dim
                ));
            }
            let norm = dot(&a.direction, &a.direction).sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return bad(format!("attribute `{}` direction has norm {norm}", a.name));
            }
            for b in &self.attributes[..k] {
                let c = dot(&a.direction, &b.direction);
                if c.abs() > UNIT_TOL {
                    return bad(format!(
                        "directions of `{}` and `{}` are not orthogonal (dot {c})",
                        b.name, a.name
                    ));
                }
            }
            if a.layer_mask.is_empty() {
                return bad(format!("attribute `{}` has an empty layer mask", a.name));
            }
            let mut mask = a.layer_mask.clone();
            mask.sort_unstable();
            mask.dedup();
            if mask.len() != a.layer_mask.len() || mask.iter().any(|&l| l >= self.layers) {
                return bad(format!(
                    "attribute `{}` mask must be distinct layers below {}",
                    a.name, self.layers
                ));
            }
            if a.slope == 0.0 || !a.slope.is_finite() || !a.offset.is_finite() {
                return bad(format!(
                    "attribute `{}` needs a finite nonzero slope and finite offset",
                    a.name
                ));
            }
        }
        Ok(())
    }
}

/// `count` orthonormal vectors of length `dim` (Gram-Schmidt on Gaussian draws).
pub fn random_orthonormal(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(count <= dim, "cannot draw {count} orthonormal vectors in R^{dim}");
    let mut rng = seed::rng(seed);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the result orthogonal to machine precision
        for _ in 0..2 {
            for u in &out {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
struct AttributeBlock {
    start: usize,
    /// `block_len x layers`, row-major; zero columns outside the mask.
    coeff: Vec<f64>,
    mask: Vec<usize>,
}

/// Parameters of one layer's distractor map
/// `x ↦ scale · decode · tanh(encode · x + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistractorLayer {
    /// `hidden x latent_dim`, row-major, rows orthogonal to every attribute direction.
    pub encode: Vec<f64>,
    pub bias: Vec<f64>,
    /// `distractor_pixels x hidden`, row-major.
    pub decode: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    spec: SyntheticSpec,
    offset: Vec<f64>,
    blocks: Vec<AttributeBlock>,
    distractor: Vec<DistractorLayer>,
    distractor_start: usize,
    distractor_scale: f64,
}

impl Generator {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let (d, layers, pixels) = (spec.latent_dim, spec.layers, spec.pixels);
        let block_len = spec.block_len();

        let mut rng = seed::rng(seed::derive_named(spec.seed, "offset"));
        let offset: Vec<f64> = (0..pixels)
            .map(|_| OFFSET_SCALE * rng.sample::<f64, _>(StandardNormal))
            .collect();

        let blocks = spec
            .attributes
            .iter()
            .enumerate()
            .map(|(k, attr)| {
                let cols = random_orthonormal(
                    block_len,
                    layers,
                    seed::derive(seed::derive_named(spec.seed, "render"), k as u64),
                );
                let mut coeff = vec![0.0; block_len * layers];
                for &l in &attr.layer_mask {
                    let col = if spec.shared_layers { &cols[0] } else { &cols[l] };
                    for p in 0..block_len {
                        coeff[p * layers + l] = RENDER_GAIN * col[p];
                    }
                }
                let mut mask = attr.layer_mask.clone();
                mask.sort_unstable();
                AttributeBlock {
                    start: k * block_len,
                    coeff,
                    mask,
                }
            })
            .collect();

        let hidden = DISTRACTOR_HIDDEN;
        let free_dims = (d - spec.attributes.len()).max(1) as f64;
        let distractor_start = spec.attributes.len() * block_len;
        let n_dist = pixels - distractor_start;
        let dist_seed = seed::derive_named(spec.seed, "distractor");
        let distractor = (0..layers)
            .map(|l| {
                let layer_seed = if spec.shared_layers { 0 } else { l as u64 };
                let mut rng = seed::stream(dist_seed, layer_seed);
                let mut encode: Vec<f64> = (0..hidden * d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / free_dims.sqrt())
                    .collect();
                for row in encode.chunks_exact_mut(d) {
                    for attr in &spec.attributes {
                        let c = dot(row, &attr.direction);
                        row.iter_mut()
                            .zip(&attr.direction)
                            .for_each(|(x, u)| *x -= c * u);
                    }
                }
                let bias = (0..hidden)
                    .map(|_| DISTRACTOR_BIAS_SCALE * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let decode = (0..n_dist * hidden)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / (hidden as f64).sqrt())
                    .collect();
                DistractorLayer {
                    encode,
                    bias,
                    decode,
                }
            })
            .collect();

        Ok(Self {
            distractor_scale: spec.distractor_strength / (layers as f64).sqrt(),
            spec,
            offset,
            blocks,
            distractor,
            distractor_start,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn layers(&self) -> usize {
        self.spec.layers
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn pixels(&self) -> usize {
        self.spec.pixels
    }

    /// The image rendered from the all-zeros code, minus the distractor.
    pub fn offset_image(&self) -> &[f64] {
        &self.offset
    }

    /// Pixel range owned by attribute `k`.
    pub fn attribute_block(&self, k: usize) -> std::ops::Range<usize> {
        let b = &self.blocks[k];
        b.start..b.start + self.spec.block_len()
    }

    pub fn distractor_pixels(&self) -> std::ops::Range<usize> {
        self.distractor_start..self.spec.pixels
    }

    pub fn distractor_layers(&self) -> &[DistractorLayer] {
        &self.distractor
    }

    /// Multiplier applied to every layer's distractor output.
    pub fn distractor_scale(&self) -> f64 {
        self.distractor_scale
    }

    /// Dense `pixels x latent_dim` matrices (row-major) of the linear part of
    /// every layer.
    pub fn render_matrices(&self) -> Vec<Vec<f64>> {
        let (d, layers) = (self.spec.latent_dim, self.spec.layers);
        let block_len = self.spec.block_len();
        (0..layers)
            .map(|l| {
                let mut m = vec![0.0; self.spec.pixels * d];
                for (block, attr) in self.blocks.iter().zip(&self.spec.attributes) {
                    for p in 0..block_len {
                        let c = block.coeff[p * layers + l];
                        if c != 0.0 {
                            let row = &mut m[(block.start + p) * d..(block.start + p + 1) * d];
                            row.iter_mut()
                                .zip(&attr.direction)
                                .for_each(|(x, u)| *x = c * u);
                        }
                    }
                }
                m
            })
            .collect()
    }

    fn check_latent(&self, w_plus: &ExtendedLatent) -> Result<()> {
        check_dim("extended latent layers", self.spec.layers, w_plus.layers())?;
        check_dim("extended latent dim", self.spec.latent_dim, w_plus.dim())
    }

    pub fn generate(&self, w_plus: &ExtendedLatent) -> Result<ImageVector> {
        self.check_latent(w_plus)?;
        let mut img = ImageVector::zeros(self.spec.pixels);
        self.render_into(w_plus, img.as_mut_slice());
        Ok(img)
    }

    /// Renders the replicated code `w` in every layer.
    pub fn render(&self, w: &LatentCode) -> Result<ImageVector> {
        check_dim("latent code", self.spec.latent_dim, w.dim())?;
        self.generate(&ExtendedLatent::replicate(w, self.spec.layers))
    }

    pub(crate) fn render_into(&self, w_plus: &ExtendedLatent, out: &mut [f64]) {
        let layers = self.spec.layers;
        out.copy_from_slice(&self.offset);
        let mut proj = vec![0.0; layers];
        for (block, attr) in self.blocks.iter().zip(&self.spec.attributes) {
            for &l in &block.mask {
                proj[l] = dot(w_plus.row(l), &attr.direction);
            }
            let pixels = &mut out[block.start..block.start + self.spec.block_len()];
            for (p, px) in pixels.iter_mut().enumerate() {
                let coeff = &block.coeff[p * layers..(p + 1) * layers];
                *px += block.mask.iter().map(|&l| coeff[l] * proj[l]).sum::<f64>();
            }
        }
        if self.distractor_scale == 0.0 || self.distractor_start == self.spec.pixels {
            return;
        }
        let d = self.spec.latent_dim;
        let dist = &mut out[self.distractor_start..];
        let mut act = vec![0.0; DISTRACTOR_HIDDEN];
        for (l, layer) in self.distractor.iter().enumerate() {
            let row = w_plus.row(l);
            for (h, a) in act.iter_mut().enumerate() {
                *a = (dot(&layer.encode[h * d..(h + 1) * d], row) + layer.bias[h]).tanh();
            }
            for (px, dec) in dist.iter_mut().zip(layer.decode.chunks_exact(DISTRACTOR_HIDDEN)) {
                *px += self.distractor_scale * dot(dec, &act);
            }
        }
    }

    /// Gradient of `upstream · generate(w_plus)` with respect to `w_plus`.
    pub fn generate_grad(
        &self,
        w_plus: &ExtendedLatent,
        upstream: &ImageVector,
    ) -> Result<ExtendedLatent> {
        self.check_latent(w_plus)?;
        check_dim("upstream image", self.spec.pixels, upstream.len())?;
        let mut grad = ExtendedLatent::zeros(self.spec.layers, self.spec.latent_dim);
        self.backward_into(w_plus, upstream.as_slice(), &mut grad);
        Ok(grad)
    }

    pub(crate) fn backward_into(
        &self,
        w_plus: &ExtendedLatent,
        upstream: &[f64],
        grad: &mut ExtendedLatent,
    ) {
        let (d, layers) = (self.spec.latent_dim, self.spec.layers);
        grad.as_flat_mut().iter_mut().for_each(|g| *g = 0.0);
        for (block, attr) in self.blocks.iter().zip(&self.spec.attributes) {
            let up = &upstream[block.start..block.start + self.spec.block_len()];
            for &l in &block.mask {
                let s: f64 = up
                    .iter()
                    .enumerate()
                    .map(|(p, v)| block.coeff[p * layers + l] * v)
                    .sum();
                grad.row_mut(l)
                    .iter_mut()
                    .zip(&attr.direction)
                    .for_each(|(g, u)| *g += s * u);
            }
        }
        if self.distractor_scale == 0.0 || self.distractor_start == self.spec.pixels {
            return;
        }
        let up = &upstream[self.distractor_start..];
        let mut back = [0.0; DISTRACTOR_HIDDEN];
        for (l, layer) in self.distractor.iter().enumerate() {
            let row = w_plus.row(l);
            back.iter_mut().for_each(|b| *b = 0.0);
            for (v, dec) in up.iter().zip(layer.decode.chunks_exact(DISTRACTOR_HIDDEN)) {
                back.iter_mut().zip(dec).for_each(|(b, c)| *b += v * c);
            }
            let g = grad.row_mut(l);
            for (h, b) in back.iter().enumerate() {
                let enc = &layer.encode[h * d..(h + 1) * d];
                let t = (dot(enc, row) + layer.bias[h]).tanh();
                let s = self.distractor_scale * b * (1.0 - t * t);
                g.iter_mut().zip(enc).for_each(|(gi, e)| *gi += s * e);
            }
        }
    }

    /// Noise-free attribute value: `slope · mean_{l ∈ mask}(w_l · n) + offset`.
    pub fn clean_attribute(&self, w_plus: &ExtendedLatent, name: &str) -> Result<f64> {
        self.check_latent(w_plus)?;
        let attr = self.spec.attribute(name)?;
        Ok(self.clean_value(w_plus, attr))
    }

    /// Clean value plus Gaussian noise with the spec's `noise_std`.
    pub fn noisy_attribute(
        &self,
        w_plus: &ExtendedLatent,
        name: &str,
        rng: &mut impl rand::Rng,
    ) -> Result<f64> {
        let clean = self.clean_attribute(w_plus, name)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(clean + self.spec.noise_std * z)
    }

    fn clean_value(&self, w_plus: &ExtendedLatent, attr: &AttributeDef) -> f64 {
        let mean = attr
            .layer_mask
            .iter()
            .map(|&l| dot(w_plus.row(l), &attr.direction))
            .sum::<f64>()
            / attr.layer_mask.len() as f64;
        attr.slope * mean + attr.offset
    }
}

/// Labels of one attribute for one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub clean: f64,
    pub noisy: f64,
    /// `+1` when the clean value is at or above the sample median, else `-1`.
    pub binary: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub latent: LatentCode,
    pub extended: ExtendedLatent,
    pub image: ImageVector,
    pub labels: BTreeMap<String, AttributeLabel>,
}

/// Draws `n` codes from the standard Gaussian prior and labels them.
///
/// Item `i` uses its own stream derived from `(seed, i)`, so the dataset does
/// not depend on how the work is scheduled.
pub fn sample_dataset(g: &Generator, n: usize, seed: u64) -> Result<Vec<Record>> {
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let spec = g.spec();
    let mut records: Vec<Record> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream(seed, i as u64);
            let values: Vec<f64> = (0..spec.latent_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let latent = LatentCode::new(values).expect("gaussian draws are finite");
            let extended = ExtendedLatent::replicate(&latent, spec.layers);
            let mut image = ImageVector::zeros(spec.pixels);
            g.render_into(&extended, image.as_mut_slice());
            let labels = spec
                .attributes
                .iter()
                .map(|attr| {
                    let clean = g.clean_value(&extended, attr);
                    let z: f64 = rng.sample(StandardNormal);
                    let label = AttributeLabel {
                        clean,
                        noisy: clean + spec.noise_std * z,
                        binary: 0,
                    };
                    (attr.name.clone(), label)
                })
                .collect();
            Record {
                latent,
                extended,
                image,
                labels,
            }
        })
        .collect();

    for attr in &spec.attributes {
        let clean: Vec<f64> = records.iter().map(|r| r.labels[&attr.name].clean).collect();
        let med = median(&clean);
        for r in &mut records {
            let label = r.labels.get_mut(&attr.name).expect("label present");
            label.binary = if label.clean >= med { 1 } else { -1 };
        }
    }
    Ok(records)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
