use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cmdm::{AUDIO_DIM, LOWER_SLOTS};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Width of the latent signal embedded into the audio features.
pub const LATENT_DIM: usize = 16;
const NUISANCE: usize = LATENT_DIM - LOWER_SLOTS.len();

/// The fixed linear generator behind the synthetic audio features.
#[derive(Clone, Debug)]
pub struct AudioModel {
    /// `512 x 16`, orthonormal columns.
    pub embed: DMatrix<f64>,
    /// `10 x 10` orthogonal mix of the lower AUs.
    pub mix: DMatrix<f64>,
    /// `(period, phase)` of each smooth nuisance channel.
    pub nuisance: Vec<(f64, f64)>,
}

fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

impl AudioModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let embed = random_orthonormal(&mut rng, AUDIO_DIM, LATENT_DIM);
        let mix = random_orthonormal(&mut rng, LOWER_SLOTS.len(), LOWER_SLOTS.len());
        let nuisance = (0..NUISANCE)
            .map(|_| (rng.random_range(15.0..60.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        Self { embed, mix, nuisance }
    }

    /// Latent `g_t = [M au_lower_t, nuisance_t]`.
    pub fn latent(&self, au_row: &[f64], t: usize) -> Vec<f64> {
        let lower: Vec<f64> = LOWER_SLOTS.iter().map(|&k| au_row[k]).collect();
        let mut g: Vec<f64> = (0..lower.len())
            .map(|i| (0..lower.len()).map(|j| self.mix[(i, j)] * lower[j]).sum())
            .collect();
        g.extend(self.nuisance.iter().map(|&(p, phi)| (2.0 * PI * t as f64 / p + phi).sin()));
        g
    }
}

/// `a_t = E g_t + eta_t` with `eta ~ N(0, noise_sigma^2)` (`T x 512`).
pub fn gen_audio_features(au: &Tensor, seed: u64, noise_sigma: f64) -> Result<Tensor> {
    if au.shape().len() != 2 || au.cols() != 17 {
        return shape_err(format!("AU trajectory {:?}, expected T x 17", au.shape()));
    }
    let model = AudioModel::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let frames = au.rows();
    let mut data = Vec::with_capacity(frames * AUDIO_DIM);
    for t in 0..frames {
        let g = model.latent(au.row_slice(t), t);
        for r in 0..AUDIO_DIM {
            let clean: f64 = (0..LATENT_DIM).map(|c| model.embed[(r, c)] * g[c]).sum();
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push(clean + noise_sigma * noise);
        }
    }
    Tensor::new(&[frames, AUDIO_DIM], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::au::gen_au_traj;

    #[test]
    fn width_and_determinism() {
        let au = gen_au_traj(0, 40).unwrap();
        let a = gen_audio_features(&au, 0, 0.01).unwrap();
        assert_eq!(a.shape(), &[40, 512]);
        assert_eq!(a, gen_audio_features(&au, 0, 0.01).unwrap());
    }

    #[test]
    fn embedding_is_orthonormal() {
        let m = AudioModel::new(5);
        let gram = m.embed.transpose() * &m.embed;
        assert!((gram - DMatrix::identity(16, 16)).abs().max() < 1e-12);
        let mm = m.mix.transpose() * &m.mix;
        assert!((mm - DMatrix::identity(10, 10)).abs().max() < 1e-12);
    }

    #[test]
    fn noiseless_features_recover_lower_aus_exactly() {
        let au = gen_au_traj(2, 200).unwrap();
        let a = gen_audio_features(&au, 2, 0.0).unwrap();
        // least squares with intercept over all 200 frames
        let x = DMatrix::from_fn(200, 513, |t, c| if c == 512 { 1.0 } else { a.row_slice(t)[c] });
        let y = DMatrix::from_fn(200, 10, |t, k| au.row_slice(t)[LOWER_SLOTS[k]]);
        let svd = x.clone().svd(true, true);
        let w = svd.solve(&y, 1e-10).unwrap();
        let resid = (x * w - y).abs().max();
        assert!(resid < 1e-9, "residual {resid}");
    }
}
