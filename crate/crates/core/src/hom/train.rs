//! Plain SGD over single RoIs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::feature::RoiFeature;
use super::model::{backward, LossWeights};
use super::params::HeadParams;
use super::HeadConfig;
use crate::error::{Error, Result};

/// Steps per entry of the smoothed loss curve.
pub const WINDOW: usize = 100;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub params: HeadParams,
    /// Mean loss of each consecutive 100-step window (the last may be partial).
    pub curve: Vec<f64>,
    /// Loss at every step, measured before that step's update.
    pub step_losses: Vec<f64>,
}

/// Trains a freshly initialised head for `cfg.iters` steps.
pub fn train(dataset: &[RoiFeature], cfg: &HeadConfig) -> Result<TrainOutput> {
    train_from(HeadParams::init(cfg), dataset, cfg, &LossWeights::default())
}

pub fn train_from(
    mut params: HeadParams,
    dataset: &[RoiFeature],
    cfg: &HeadConfig,
    weights: &LossWeights,
) -> Result<TrainOutput> {
    cfg.validate()?;
    params.check_layout(cfg)?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut cursor = order.len();

    let mut step_losses = Vec::with_capacity(cfg.iters);
    let mut curve = Vec::with_capacity(cfg.iters / WINDOW + 1);
    let mut window_sum = 0.0;
    for step in 0..cfg.iters {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let f = &dataset[order[cursor]];
        cursor += 1;

        let initial = curve.first().or(step_losses.first()).copied().unwrap_or(f64::NAN);
        let (l, grad) = match backward(&params, f, cfg, weights) {
            Ok(v) => v,
            // blown-up parameters overflow somewhere inside the head
            Err(Error::NonFinite(_)) if step > 0 => {
                return Err(Error::Diverged {
                    step,
                    loss: f64::INFINITY,
                    initial,
                })
            }
            Err(e) => return Err(e),
        };
        step_losses.push(l.total);
        window_sum += l.total;
        if cfg.lr != 0.0 {
            for (p, g) in params.values.iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
        }
        let done = step + 1;
        if done % WINDOW == 0 || done == cfg.iters {
            let n = if done % WINDOW == 0 { WINDOW } else { done % WINDOW };
            let avg = window_sum / n as f64;
            window_sum = 0.0;
            check_window(done, avg, curve.first().copied().unwrap_or(avg))?;
            curve.push(avg);
        }
    }
    Ok(TrainOutput {
        params,
        curve,
        step_losses,
    })
}

fn check_window(step: usize, avg: f64, initial: f64) -> Result<()> {
    if avg.is_finite() && avg <= DIVERGENCE_FACTOR * initial {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            loss: avg,
            initial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hom::extract_roi_feature;
    use crate::scene::ShapeSpec;
    use crate::Scene;

    fn one_roi(cfg: &HeadConfig) -> RoiFeature {
        let far = ShapeSpec::rectangle(4, 4, 16, 16, [200, 40, 40], 0.8);
        let near = ShapeSpec::rectangle(12, 10, 14, 14, [40, 40, 200], 0.6);
        let s = Scene::from_shapes(32, 32, vec![far, near], 1.0, 0.0, 0).unwrap();
        let a = s.annotations.iter().find(|a| a.occluded).unwrap();
        extract_roi_feature(&s, a.bbox, cfg).unwrap()
    }

    #[test]
    fn zero_lr_keeps_params_bit_exact() {
        let cfg = HeadConfig {
            lr: 0.0,
            iters: 20,
            ..HeadConfig::default()
        };
        let out = train(&[one_roi(&cfg)], &cfg).unwrap();
        assert_eq!(out.params, HeadParams::init(&cfg));
    }

    #[test]
    fn fixed_seed_reproduces_curve() {
        let cfg = HeadConfig {
            channels: 4,
            iters: 150,
            lr: 0.01,
            ..HeadConfig::default()
        };
        let ds = vec![one_roi(&cfg)];
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.curve.len(), 2);
    }

    #[test]
    fn single_roi_overfits() {
        let cfg = HeadConfig {
            channels: 4,
            iters: 500,
            lr: 0.05,
            ..HeadConfig::default()
        };
        let out = train(&[one_roi(&cfg)], &cfg).unwrap();
        let l = &out.step_losses;
        // smoothed over 25-step windows, the loss keeps falling after step 50
        let smooth: Vec<f64> = l[50..].chunks(25).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        for w in smooth.windows(2) {
            assert!(w[1] < w[0], "{smooth:?}");
        }
        assert!(out.curve.last().unwrap() < out.curve.first().unwrap());
    }

    #[test]
    fn window_rule_flags_tenfold_growth() {
        assert!(check_window(100, 0.5, 0.7).is_ok());
        assert!(check_window(100, 6.9, 0.7).is_ok());
        let err = check_window(300, 7.5, 0.7).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 300, .. }));
        assert!(err.to_string().contains("reduce the learning rate"));
        assert!(check_window(100, f64::NAN, 0.7).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(train(&[], &HeadConfig::default()).is_err());
    }
}
