//! Synthetic conditional scenes: desk-scale stand-ins for images.
//!
//! A scene is a conditional Gaussian mixture over latents. Each attribute owns
//! a block of latent coordinates and a set of options; the data mean for a
//! combination of options is the base mean plus each chosen option's offset on
//! its attribute's coordinates. Conditions are concatenated one-hot blocks,
//! one block per attribute.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Condition;
use crate::latent::{Latent, Shape};

/// One selectable value of an attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrOption {
    pub label: String,
    /// Mean offset on the attribute's coordinates (same length as `coords`).
    pub offset: Vec<f64>,
}

/// An attribute: a named coordinate block with one-hot encoded options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    /// Flat latent coordinates this attribute controls.
    pub coords: Vec<usize>,
    pub options: Vec<AttrOption>,
}

/// Scene descriptor: shape, base mean, per-attribute mixture structure, and
/// the isotropic sampling noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: (usize, usize, usize),
    pub base_mean: Vec<f64>,
    pub noise_std: f64,
    pub attributes: Vec<Attribute>,
    /// Optional sampling weight per option combination (row-major over
    /// attributes, later attributes fastest). Uniform when absent. Lets a
    /// scene make some combinations rare in training data while still
    /// exposing them as edit targets.
    #[serde(default)]
    pub combo_weights: Option<Vec<f64>>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let shape = self.latent_shape()?;
        if self.base_mean.len() != shape.len() {
            return Err(Error::config(format!(
                "base_mean has {} entries, latent needs {}",
                self.base_mean.len(),
                shape.len()
            )));
        }
        if self.noise_std <= 0.0 {
            return Err(Error::config("noise_std must be positive"));
        }
        if self.attributes.is_empty() {
            return Err(Error::config("scene needs at least one attribute"));
        }
        for attr in &self.attributes {
            if attr.options.len() < 2 {
                return Err(Error::config(format!(
                    "attribute '{}' needs at least two options",
                    attr.name
                )));
            }
            if attr.coords.iter().any(|&c| c >= shape.len()) {
                return Err(Error::config(format!(
                    "attribute '{}' references coordinates outside the latent",
                    attr.name
                )));
            }
            for opt in &attr.options {
                if opt.offset.len() != attr.coords.len() {
                    return Err(Error::config(format!(
                        "option '{}' of '{}' has {} offsets for {} coordinates",
                        opt.label,
                        attr.name,
                        opt.offset.len(),
                        attr.coords.len()
                    )));
                }
            }
        }
        if let Some(weights) = &self.combo_weights {
            if weights.len() != self.combo_count() {
                return Err(Error::config(format!(
                    "combo_weights has {} entries for {} option combinations",
                    weights.len(),
                    self.combo_count()
                )));
            }
            if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
                return Err(Error::config("combo weights must be finite and >= 0"));
            }
            if weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::config("combo weights must not all be zero"));
            }
        }
        Ok(())
    }

    /// Number of option combinations across all attributes.
    pub fn combo_count(&self) -> usize {
        self.attributes.iter().map(|a| a.options.len()).product()
    }

    /// Row-major index of an option combination (later attributes fastest).
    pub fn combo_index(&self, options: &[usize]) -> Result<usize> {
        self.check_options(options)?;
        let mut idx = 0;
        for (attr, &opt) in self.attributes.iter().zip(options) {
            idx = idx * attr.options.len() + opt;
        }
        Ok(idx)
    }

    fn combo_from_index(&self, mut idx: usize) -> Vec<usize> {
        let mut options = vec![0; self.attributes.len()];
        for (k, attr) in self.attributes.iter().enumerate().rev() {
            options[k] = idx % attr.options.len();
            idx /= attr.options.len();
        }
        options
    }

    pub fn latent_shape(&self) -> Result<Shape> {
        Shape::new(self.shape.0, self.shape.1, self.shape.2)
    }

    /// Condition embedding dimension: sum of option counts.
    pub fn cond_dim(&self) -> usize {
        self.attributes.iter().map(|a| a.options.len()).sum()
    }

    /// One-hot block sizes per attribute, in order.
    pub fn block_layout(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.options.len()).collect()
    }

    /// Builds the condition for one option per attribute.
    pub fn condition_for(&self, options: &[usize]) -> Result<Condition> {
        self.check_options(options)?;
        let mut embedding = vec![0.0; self.cond_dim()];
        let mut base = 0;
        let mut label_parts = Vec::new();
        for (attr, &opt) in self.attributes.iter().zip(options) {
            embedding[base + opt] = 1.0;
            label_parts.push(attr.options[opt].label.clone());
            base += attr.options.len();
        }
        Ok(Condition::new(embedding)?.with_label(label_parts.join(" + ")))
    }

    /// Mean latent for one option per attribute.
    pub fn mean_for(&self, options: &[usize]) -> Result<Latent> {
        self.check_options(options)?;
        let shape = self.latent_shape()?;
        let mut data = self.base_mean.clone();
        for (attr, &opt) in self.attributes.iter().zip(options) {
            for (slot, &coord) in attr.options[opt].offset.iter().zip(&attr.coords) {
                data[coord] += slot;
            }
        }
        Latent::new(shape, data)
    }

    /// Draws one latent for the given option combination.
    pub fn sample_for<R: Rng>(&self, options: &[usize], rng: &mut R) -> Result<Latent> {
        let mean = self.mean_for(options)?;
        let normal = StandardNormal;
        let data = mean
            .data()
            .iter()
            .map(|m| {
                let g: f64 = normal.sample(rng);
                m + self.noise_std * g
            })
            .collect();
        Latent::new(mean.shape(), data)
    }

    /// Draws a random option combination (uniform, or by `combo_weights`)
    /// with its latent and condition.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<(Latent, Condition)> {
        let options: Vec<usize> = match &self.combo_weights {
            None => self
                .attributes
                .iter()
                .map(|a| rng.random_range(0..a.options.len()))
                .collect(),
            Some(weights) => {
                let total: f64 = weights.iter().sum();
                let mut draw = rng.random_range(0.0..total);
                let mut picked = weights.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    if draw < w {
                        picked = i;
                        break;
                    }
                    draw -= w;
                }
                self.combo_from_index(picked)
            }
        };
        let x = self.sample_for(&options, rng)?;
        let cond = self.condition_for(&options)?;
        Ok((x, cond))
    }

    /// Binary mask over the latent: 1 on coordinates owned by attributes that
    /// differ between the two option vectors, 0 elsewhere (the background).
    pub fn edit_mask(&self, source: &[usize], target: &[usize]) -> Result<Latent> {
        self.check_options(source)?;
        self.check_options(target)?;
        let shape = self.latent_shape()?;
        let mut data = vec![0.0; shape.len()];
        for ((attr, &s), &t) in self.attributes.iter().zip(source).zip(target) {
            if s != t {
                for &coord in &attr.coords {
                    data[coord] = 1.0;
                }
            }
        }
        Latent::new(shape, data)
    }

    /// Indices of attributes whose option differs between source and target.
    pub fn changed_attributes(&self, source: &[usize], target: &[usize]) -> Result<Vec<usize>> {
        self.check_options(source)?;
        self.check_options(target)?;
        Ok(source
            .iter()
            .zip(target)
            .enumerate()
            .filter(|(_, (s, t))| s != t)
            .map(|(i, _)| i)
            .collect())
    }

    fn check_options(&self, options: &[usize]) -> Result<()> {
        if options.len() != self.attributes.len() {
            return Err(Error::config(format!(
                "expected {} attribute options, got {}",
                self.attributes.len(),
                options.len()
            )));
        }
        for (attr, &opt) in self.attributes.iter().zip(options) {
            if opt >= attr.options.len() {
                return Err(Error::config(format!(
                    "attribute '{}' has no option {opt}",
                    attr.name
                )));
            }
        }
        Ok(())
    }
}

/// A two-option single-attribute scene in the plane; the smallest interesting
/// conditional dataset.
pub fn two_cluster_scene() -> SceneSpec {
    SceneSpec {
        shape: (2, 1, 1),
        base_mean: vec![0.0, 0.0],
        noise_std: 0.3,
        attributes: vec![Attribute {
            name: "cluster".into(),
            coords: vec![0, 1],
            options: vec![
                AttrOption {
                    label: "left".into(),
                    offset: vec![-1.5, -1.5],
                },
                AttrOption {
                    label: "right".into(),
                    offset: vec![1.5, 1.5],
                },
            ],
        }],
        combo_weights: None,
    }
}

/// The three-attribute editing benchmark scene: a 2-channel latent over four
/// spatial positions. Each attribute owns one position (its channel column
/// carries the option offset) and the fourth position is untouched
/// background, so trajectory projection and the aggregation weight maps act
/// per location as in larger latents.
pub fn three_attribute_scene() -> SceneSpec {
    SceneSpec {
        shape: (2, 1, 4),
        // Channel-major layout: coords 0..4 are channel 0 at positions 0..4,
        // coords 4..8 are channel 1. Position 3 is background.
        base_mean: vec![0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.0, -0.6],
        noise_std: 0.25,
        attributes: vec![
            Attribute {
                name: "shade".into(),
                coords: vec![0, 4],
                options: vec![
                    AttrOption {
                        label: "dark".into(),
                        offset: vec![-1.0, -0.5],
                    },
                    AttrOption {
                        label: "bright".into(),
                        offset: vec![1.0, 0.5],
                    },
                ],
            },
            Attribute {
                name: "spread".into(),
                coords: vec![1, 5],
                options: vec![
                    AttrOption {
                        label: "narrow".into(),
                        offset: vec![-0.8, 0.7],
                    },
                    AttrOption {
                        label: "wide".into(),
                        offset: vec![0.8, -0.7],
                    },
                ],
            },
            Attribute {
                name: "tilt".into(),
                coords: vec![2, 6],
                options: vec![
                    AttrOption {
                        label: "level".into(),
                        offset: vec![0.9, -0.4],
                    },
                    AttrOption {
                        label: "tilted".into(),
                        offset: vec![-0.9, 0.4],
                    },
                ],
            },
        ],
        combo_weights: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn condition_is_one_hot_per_block() {
        let scene = three_attribute_scene();
        let c = scene.condition_for(&[0, 1, 0]).unwrap();
        assert_eq!(c.embedding, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(!c.is_null);
    }

    #[test]
    fn mean_adds_offsets_on_owned_coords() {
        let scene = three_attribute_scene();
        let m = scene.mean_for(&[1, 0, 0]).unwrap();
        // "bright" lives at position 0: channel 0 coord 0, channel 1 coord 4.
        assert_eq!(m.data()[0], 1.0);
        assert_eq!(m.data()[4], 0.5);
        assert_eq!(m.data()[1], -0.8);
        // Background position keeps the base mean.
        assert_eq!(m.data()[3], 0.6);
        assert_eq!(m.data()[7], -0.6);
    }

    #[test]
    fn edit_mask_marks_changed_attribute_blocks() {
        let scene = three_attribute_scene();
        let mask = scene.edit_mask(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!(mask.data(), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn weighted_combo_sampling_respects_weights() {
        use rand::SeedableRng;
        let mut scene = two_cluster_scene();
        scene.combo_weights = Some(vec![1.0, 0.0]);
        scene.validate().unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (_, cond) = scene.sample(&mut rng).unwrap();
            assert_eq!(cond.embedding, vec![1.0, 0.0]);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let scene = two_cluster_scene();
        let mut a = ChaCha12Rng::seed_from_u64(9);
        let mut b = ChaCha12Rng::seed_from_u64(9);
        let (xa, ca) = scene.sample(&mut a).unwrap();
        let (xb, cb) = scene.sample(&mut b).unwrap();
        assert_eq!(xa.data(), xb.data());
        assert_eq!(ca.embedding, cb.embedding);
    }

    #[test]
    fn validate_catches_bad_offsets() {
        let mut scene = two_cluster_scene();
        scene.attributes[0].options[0].offset = vec![1.0];
        assert!(scene.validate().is_err());
    }
}
