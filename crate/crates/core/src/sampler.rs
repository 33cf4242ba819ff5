//! Per-kernel attributes recovered from an observed image.
//!
//! Every kernel's attribute is the weighted mean of the pixels it
//! contributes to, using the render's own kernel-to-pixel weights:
//! α_k = Σ_p W_{p,k}·φ_p / Σ_p W_{p,k}.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::blender::{render, WeightStore, NORMALIZE_EPS};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::scene::{Camera, GaussianScene, Image};
use crate::tracer::SelectionConfig;

/// Kernels whose total observed weight falls below this are masked.
pub const SUPPORT_EPS: f64 = 1e-8;

/// How pixel values are weighted in the per-kernel mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SampleWeighting {
    /// Raw rendering weights W_{p,k}.
    #[default]
    Render,
    /// Per-pixel normalized numerator weights W_{p,k}/ΣW_p, so that sampling
    /// a render of isolated kernels returns their attributes exactly.
    Normalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledAttributes {
    /// K×D row-major.
    pub attrs: Vec<f64>,
    pub dim: usize,
    /// Σ_p W_{p,k} per kernel.
    pub support: Vec<f64>,
    /// `true` where the support is below [`SUPPORT_EPS`] and the attribute
    /// was zero-filled.
    pub masked: Vec<bool>,
}

impl SampledAttributes {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn attr(&self, k: usize) -> &[f64] {
        &self.attrs[k * self.dim..(k + 1) * self.dim]
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.masked.is_empty() {
            return 0.0;
        }
        self.masked.iter().filter(|&&m| m).count() as f64 / self.masked.len() as f64
    }
}

const MAX_BLOCKS: usize = 64;

/// Accumulate the weighted means from an existing weight store.
pub fn sample_from_weights(
    weights: &WeightStore,
    observed: &Image,
    kernels: usize,
    weighting: SampleWeighting,
) -> Result<SampledAttributes> {
    let n_pix = observed.height() * observed.width();
    if weights.pixel_count() != n_pix {
        return Err(Error::ShapeMismatch {
            what: "observed image",
            expected: format!("{} pixels", weights.pixel_count()),
            found: format!("{n_pix}"),
        });
    }
    let dim = observed.channels();
    let data = observed.data();
    let blocks = par::block_ranges(n_pix, MAX_BLOCKS);
    let partials = par::map_blocks(blocks.len(), |b| {
        let mut num = vec![0.0; kernels * dim];
        let mut den = vec![0.0; kernels];
        for p in blocks[b].clone() {
            let px = &data[p * dim..(p + 1) * dim];
            let scale = match weighting {
                SampleWeighting::Render => 1.0,
                SampleWeighting::Normalized => 1.0 / weights.weight_sum(p).max(NORMALIZE_EPS),
            };
            for e in weights.pixel(p) {
                let k = e.kernel as usize;
                let wn = e.weight * scale;
                for c in 0..dim {
                    num[k * dim + c] += wn * px[c];
                }
                den[k] += e.weight;
            }
        }
        (num, den)
    });
    let mut num = vec![0.0; kernels * dim];
    let mut support = vec![0.0; kernels];
    for (pn, pd) in partials {
        if pd.len() != kernels {
            return Err(invalid("weight store references more kernels than given"));
        }
        for (a, b) in num.iter_mut().zip(&pn) {
            *a += b;
        }
        for (a, b) in support.iter_mut().zip(&pd) {
            *a += b;
        }
    }
    let mut masked = vec![false; kernels];
    for k in 0..kernels {
        let row = &mut num[k * dim..(k + 1) * dim];
        if support[k] < SUPPORT_EPS {
            masked[k] = true;
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v /= support[k]);
        }
    }
    Ok(SampledAttributes {
        attrs: num,
        dim,
        support,
        masked,
    })
}

/// Render `scene` through `camera` and sample `observed` with its weights.
pub fn sample_attributes(
    observed: &Image,
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
    weighting: SampleWeighting,
) -> Result<SampledAttributes> {
    if observed.height() != camera.height() || observed.width() != camera.width() {
        return Err(invalid(format!(
            "observed image is {}x{} but the camera is {}x{}",
            observed.height(),
            observed.width(),
            camera.height(),
            camera.width()
        )));
    }
    let buffers = render(scene, camera, cfg)?;
    if buffers
        .weights
        .entries()
        .iter()
        .any(|e| e.kernel as usize >= scene.len())
    {
        return Err(invalid(
            "weight store references more kernels than the scene",
        ));
    }
    sample_from_weights(&buffers.weights, observed, scene.len(), weighting)
}

/// Render `scene` with its attributes replaced by the sampled ones.
pub fn resynthesize(
    attrs: &SampledAttributes,
    scene: &GaussianScene,
    camera: &Camera,
    cfg: &SelectionConfig,
) -> Result<Image> {
    if attrs.len() != scene.len() {
        return Err(Error::ShapeMismatch {
            what: "sampled attributes",
            expected: format!("{} kernels", scene.len()),
            found: format!("{}", attrs.len()),
        });
    }
    let swapped = scene.with_attributes(&attrs.attrs, attrs.dim)?;
    Ok(render(&swapped, camera, cfg)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::scene::{ChannelKind, GaussianKernel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_gives_constant_attrs() {
        let scene = crate::synth::random_scene(2, 30);
        let camera = crate::synth::random_orbit_camera(2, 32);
        let img =
            Image::from_data(32, 32, 2, ChannelKind::Feature, vec![0.37; 32 * 32 * 2]).unwrap();
        let s = sample_attributes(
            &img,
            &scene,
            &camera,
            &SelectionConfig::default(),
            SampleWeighting::Render,
        )
        .unwrap();
        for k in 0..scene.len() {
            if !s.masked[k] {
                for &v in s.attr(k) {
                    assert!((v - 0.37).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weights_are_the_render_weights() {
        let scene = crate::synth::random_scene(4, 20);
        let camera = crate::synth::random_orbit_camera(4, 24);
        let buffers = render(&scene, &camera, &SelectionConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..24 * 24).map(|_| rng.gen()).collect();
        let img = Image::from_data(24, 24, 1, ChannelKind::Feature, data).unwrap();
        let a = sample_attributes(
            &img,
            &scene,
            &camera,
            &SelectionConfig::default(),
            SampleWeighting::Render,
        )
        .unwrap();
        let b = sample_from_weights(&buffers.weights, &img, scene.len(), SampleWeighting::Render)
            .unwrap();
        assert_eq!(a, b);
        // Support is exactly the summed render weights.
        let mut sup = vec![0.0; scene.len()];
        for e in buffers.weights.entries() {
            sup[e.kernel as usize] += e.weight;
        }
        for (x, y) in sup.iter().zip(&a.support) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unobserved_kernels_are_masked() {
        let scene = GaussianScene::new(
            vec![
                GaussianKernel::isotropic(Vec3::new(0.0, 0.0, 4.0), 0.05, vec![1.0]),
                GaussianKernel::isotropic(Vec3::new(0.0, 0.0, -4.0), 0.05, vec![1.0]),
            ],
            1.0,
        )
        .unwrap();
        let camera = Camera::identity(20.0, 16, 16).unwrap();
        let img = Image::from_data(16, 16, 1, ChannelKind::Feature, vec![0.5; 256]).unwrap();
        let s = sample_attributes(
            &img,
            &scene,
            &camera,
            &SelectionConfig::default(),
            SampleWeighting::Render,
        )
        .unwrap();
        assert_eq!(s.masked, vec![false, true]);
        assert_eq!(s.attr(1), &[0.0]);
        assert!((s.masked_fraction() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn size_mismatch_rejected() {
        let scene = crate::synth::random_scene(0, 3);
        let camera = Camera::identity(20.0, 16, 16).unwrap();
        let img = Image::zeros(16, 15, 3, ChannelKind::Color);
        assert!(sample_attributes(
            &img,
            &scene,
            &camera,
            &SelectionConfig::default(),
            SampleWeighting::Render
        )
        .is_err());
    }

    #[test]
    fn zero_attrs_resynthesize_black() {
        let scene = crate::synth::random_scene(5, 10);
        let camera = crate::synth::random_orbit_camera(5, 16);
        let attrs = SampledAttributes {
            attrs: vec![0.0; 30],
            dim: 3,
            support: vec![1.0; 10],
            masked: vec![false; 10],
        };
        let img = resynthesize(&attrs, &scene, &camera, &SelectionConfig::default()).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
        let short = SampledAttributes {
            attrs: vec![0.0; 27],
            dim: 3,
            support: vec![1.0; 9],
            masked: vec![false; 9],
        };
        assert!(resynthesize(&short, &scene, &camera, &SelectionConfig::default()).is_err());
    }

    #[test]
    fn normalized_weighting_recovers_separated_colours() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut kernels = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                let c = Vec3::new(-0.9 + 0.6 * i as f64, -0.9 + 0.6 * j as f64, 5.0);
                kernels.push(GaussianKernel::isotropic(
                    c,
                    0.004,
                    vec![rng.gen(), rng.gen(), rng.gen()],
                ));
            }
        }
        let scene = GaussianScene::new(kernels, 1.0).unwrap();
        let camera = Camera::identity(60.0, 64, 64).unwrap();
        let cfg = SelectionConfig::default();
        let observed = render(&scene, &camera, &cfg).unwrap().image;
        let s = sample_attributes(
            &observed,
            &scene,
            &camera,
            &cfg,
            SampleWeighting::Normalized,
        )
        .unwrap();
        for k in 0..scene.len() {
            assert!(s.support[k] > 0.1);
            for (a, b) in s.attr(k).iter().zip(&scene.kernel(k).attr) {
                assert!((a - b).abs() < 0.05, "kernel {k}: {a} vs {b}");
            }
        }
    }
}
