use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdm::{au_slot, AU_IDS, AU_MAX};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shortest and longest sinusoid period, in frames.
pub const PERIOD_RANGE: (f64, f64) = (20.0, 80.0);
/// Mean intensity of the jaw-drop and lips-part channels.
pub const MOUTH_AMPLITUDE: f64 = 2.5;

/// Smooth AU trajectories (`T x 17`): each channel is
/// `amp * (1 + sum_j w_j sin(2 pi t / P_j + phi_j))` with three periods in
/// [`PERIOD_RANGE`] and convex weights `w`, so values stay in `[0, 2 amp]`.
pub fn gen_au_traj(seed: u64, frames: usize) -> Result<Tensor> {
    if frames < 8 {
        return Err(Error::Config(format!("AU trajectories need at least 8 frames, got {frames}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let big = [au_slot(25).expect("AU25"), au_slot(26).expect("AU26")];
    let mut data = vec![0.0; frames * AU_IDS.len()];
    for k in 0..AU_IDS.len() {
        let amp = if big.contains(&k) {
            MOUTH_AMPLITUDE
        } else {
            rng.random_range(0.4..1.2)
        };
        let mut waves = [(0.0, 0.0, 0.0); 3];
        for w in waves.iter_mut() {
            *w = (
                rng.random_range(PERIOD_RANGE.0..PERIOD_RANGE.1),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.2..1.0),
            );
        }
        let total: f64 = waves.iter().map(|w| w.2).sum();
        for t in 0..frames {
            let s: f64 = waves
                .iter()
                .map(|&(p, phi, w)| w / total * (2.0 * PI * t as f64 / p + phi).sin())
                .sum();
            data[t * AU_IDS.len() + k] = (amp * (1.0 + s)).clamp(0.0, AU_MAX);
        }
    }
    Tensor::new(&[frames, AU_IDS.len()], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lag1_autocorrelation(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let var: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let cov: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        cov / var
    }

    #[test]
    fn deterministic_and_in_range() {
        let a = gen_au_traj(0, 500).unwrap();
        assert_eq!(a, gen_au_traj(0, 500).unwrap());
        assert_ne!(a, gen_au_traj(1, 500).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=5.0).contains(v)));
        assert!(gen_au_traj(0, 7).is_err());
    }

    #[test]
    fn channels_are_smooth() {
        let a = gen_au_traj(0, 500).unwrap();
        for k in 0..17 {
            let ch: Vec<f64> = (0..500).map(|t| a.row_slice(t)[k]).collect();
            let r = lag1_autocorrelation(&ch);
            assert!(r > 0.9, "AU{:02} lag-1 autocorrelation {r}", AU_IDS[k]);
        }
    }

    #[test]
    fn mouth_channels_carry_the_largest_amplitude() {
        let a = gen_au_traj(3, 500).unwrap();
        let mean = |k: usize| (0..500).map(|t| a.row_slice(t)[k]).sum::<f64>() / 500.0;
        let jaw = mean(au_slot(26).unwrap());
        for id in AU_IDS.iter().filter(|&&id| id != 25 && id != 26) {
            assert!(mean(au_slot(*id).unwrap()) < jaw);
        }
    }
}
