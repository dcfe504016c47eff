//! Small fully connected regression network (ReLU hidden layers, linear
//! output) trained with seeded mini-batch Adam on standardized inputs and
//! targets.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::scaling::Standardizer;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FfnnConfig {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for FfnnConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 64],
            epochs: 200,
            batch: 64,
            step: 1e-3,
            seed: 0,
        }
    }
}

impl FfnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Config("outcome.ffnn.widths must be positive".into()));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config(
                "outcome.ffnn.epochs and outcome.ffnn.batch must be positive".into(),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config("outcome.ffnn.step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnnModel {
    scaler: Standardizer,
    y_mean: f64,
    y_scale: f64,
    layers: Vec<Dense>,
}

struct Adam {
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(layers: &[Dense]) -> Self {
        let zeros = |l: &Dense| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len()));
        Self {
            m: layers.iter().map(zeros).collect(),
            v: layers.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Dense], grads: &[(DMatrix<f64>, DVector<f64>)], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let rate = lr * c2.sqrt() / c1;
        for (l, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            update(
                layer.w.as_mut_slice(),
                mw.as_mut_slice(),
                vw.as_mut_slice(),
                gw.as_slice(),
                rate,
            );
            update(
                layer.b.as_mut_slice(),
                mb.as_mut_slice(),
                vb.as_mut_slice(),
                gb.as_slice(),
                rate,
            );
        }
    }
}

fn update(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], rate: f64) {
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        p[i] -= rate * m[i] / (v[i].sqrt() + ADAM_EPS);
    }
}

fn relu_in_place(z: &mut DMatrix<f64>) {
    z.apply(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Column-wise forward pass; `x` is features × batch. Returns the
/// activations of every layer (input first, output last).
fn forward(layers: &[Dense], x: DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x);
    for (l, layer) in layers.iter().enumerate() {
        let prev = acts.last().unwrap();
        let mut z = &layer.w * prev;
        for mut col in z.column_iter_mut() {
            col += &layer.b;
        }
        if l + 1 < layers.len() {
            relu_in_place(&mut z);
        }
        acts.push(z);
    }
    acts
}

impl FfnnModel {
    /// Fits `y ~ f(x)` by minimizing mean squared error.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], cfg: &FfnnConfig) -> Result<Self> {
        cfg.validate()?;
        let n = x.nrows();
        if n == 0 || y.len() != n {
            return Err(Error::Fit(format!("network fit on {n} rows, {} targets", y.len())));
        }
        let scaler = Standardizer::fit(x);
        let xt = scaler.transform(x).transpose();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if y_sd > 1e-12 * (1.0 + y_mean.abs()) { y_sd } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

        let mut rng = rng_from_seed(cfg.seed);
        let mut dims = vec![x.ncols()];
        dims.extend(&cfg.widths);
        dims.push(1);
        let mut layers: Vec<Dense> = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                let gain = if l + 2 < dims.len() { 2.0 } else { 1.0 };
                let sd = (gain / d[0].max(1) as f64).sqrt();
                Dense {
                    w: DMatrix::from_fn(d[1], d[0], |_, _| sd * rng.sample::<f64, _>(StandardNormal)),
                    b: DVector::zeros(d[1]),
                }
            })
            .collect();

        let mut adam = Adam::new(&layers);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch) {
                let xb = xt.select_columns(chunk);
                let acts = forward(&layers, xb);
                let out = acts.last().unwrap();
                let bsz = chunk.len() as f64;
                // d(mean squared error)/d(output)
                let mut delta = DMatrix::from_fn(1, chunk.len(), |_, c| 2.0 * (out[(0, c)] - ys[chunk[c]]) / bsz);
                epoch_loss += chunk
                    .iter()
                    .enumerate()
                    .map(|(c, &i)| (out[(0, c)] - ys[i]).powi(2))
                    .sum::<f64>();

                let mut grads = Vec::with_capacity(layers.len());
                for l in (0..layers.len()).rev() {
                    let prev = &acts[l];
                    let gw = &delta * prev.transpose();
                    let gb = delta.column_sum();
                    if l > 0 {
                        let mut back = layers[l].w.tr_mul(&delta);
                        back.zip_apply(prev, |d, a| {
                            if a <= 0.0 {
                                *d = 0.0
                            }
                        });
                        delta = back;
                    }
                    grads.push((gw, gb));
                }
                grads.reverse();
                adam.step(&mut layers, &grads, cfg.step);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Fit(format!(
                    "network training diverged (non-finite loss at epoch {epoch})"
                )));
            }
        }
        Ok(Self {
            scaler,
            y_mean,
            y_scale,
            layers,
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let xt = self.scaler.transform(x).transpose();
        let acts = forward(&self.layers, xt);
        acts.last()
            .unwrap()
            .iter()
            .map(|v| self.y_mean + self.y_scale * v)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    /// Central-difference check of the analytic gradient for a tiny network.
    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let layers = vec![
            Dense {
                w: DMatrix::from_fn(4, 3, |_, _| rng.sample::<f64, _>(StandardNormal)),
                b: DVector::from_fn(4, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal)),
            },
            Dense {
                w: DMatrix::from_fn(1, 4, |_, _| rng.sample::<f64, _>(StandardNormal)),
                b: DVector::from_element(1, 0.2),
            },
        ];
        let x = DMatrix::from_fn(3, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = [0.3, -1.0, 0.5, 2.0, 0.0];
        let loss = |ls: &[Dense]| {
            let out = forward(ls, x.clone());
            out.last()
                .unwrap()
                .iter()
                .zip(&y)
                .map(|(o, t)| (o - t).powi(2))
                .sum::<f64>()
                / 5.0
        };
        let acts = forward(&layers, x.clone());
        let mut delta = DMatrix::from_fn(1, 5, |_, c| 2.0 * (acts[2][(0, c)] - y[c]) / 5.0);
        let gw1 = &delta * acts[1].transpose();
        let mut back = layers[1].w.tr_mul(&delta);
        back.zip_apply(&acts[1], |d, a| {
            if a <= 0.0 {
                *d = 0.0
            }
        });
        delta = back;
        let gw0 = &delta * acts[0].transpose();

        let h = 1e-6;
        for (l, g) in [(0usize, &gw0), (1usize, &gw1)] {
            for r in 0..g.nrows() {
                for c in 0..g.ncols() {
                    let mut plus = layers.clone();
                    plus[l].w[(r, c)] += h;
                    let mut minus = layers.clone();
                    minus[l].w[(r, c)] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    assert!(
                        (fd - g[(r, c)]).abs() < 1e-6,
                        "layer {l} ({r},{c}): {fd} vs {}",
                        g[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = DMatrix::from_fn(50, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0);
        let y: Vec<f64> = (0..50).map(|i| x[(i, 0)].sin() + x[(i, 1)]).collect();
        let cfg = FfnnConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = FfnnModel::fit(&x, &y, &cfg).unwrap().predict(&x);
        let b = FfnnModel::fit(&x, &y, &cfg).unwrap().predict(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn learns_smooth_function() {
        let mut rng = rng_from_seed(11);
        let n = 400;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-2.0f64..2.0));
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)].powi(2)).collect();
        let m = FfnnModel::fit(&x, &y, &FfnnConfig::default()).unwrap();
        let pred = m.predict(&x);
        let rmse = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!(rmse < 0.15, "rmse {rmse}");
    }
}
