//! Detection loss, demographic loss and the group-accuracy variance penalty.
//!
//! The penalty uses a soft per-group accuracy, `mean[y·p + (1 − y)(1 − p)]`, so that it
//! is differentiable in the real/fake logits. Hard, thresholded accuracies are computed by
//! the evaluation module for reporting. Variance is taken over the groups present in the
//! batch only.

use serde::{Deserialize, Serialize};

use crate::data::DemographicGroup;
use crate::error::{Error, Result};
use crate::nn::{Batch, LogitGrads, DEM_CLASSES};

/// Probability clamp applied before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

const GROUPS: usize = DemographicGroup::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_real: f64,
    pub l_dem: f64,
    pub var_acc: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(l_real: f64, l_dem: f64, var_acc: f64, lambda: f64) -> Self {
        Self {
            l_real,
            l_dem,
            var_acc,
            lambda,
            total: l_real + lambda * var_acc + l_dem,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_real, self.l_dem, self.var_acc, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1 − ε]`, and its gradient
/// with respect to each probability (zero where the clamp is active).
pub fn bce_loss(p: &[f64], y: &[u8]) -> Result<(f64, Vec<f64>)> {
    if p.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if p.len() != y.len() {
        return Err(Error::Shape(format!("{} probabilities, {} labels", p.len(), y.len())));
    }
    let n = p.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.iter().zip(y) {
        let q = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let yf = f64::from(yi);
        loss += -(yf * q.ln() + (1.0 - yf) * (1.0 - q).ln());
        let inside = pi > PROB_EPS && pi < 1.0 - PROB_EPS;
        grad.push(if inside {
            (-yf / q + (1.0 - yf) / (1.0 - q)) / n
        } else {
            0.0
        });
    }
    Ok((loss / n, grad))
}

/// Mean softmax cross-entropy over 8 classes and its gradient `(softmax − onehot) / B`.
pub fn demographic_ce(
    logits: &[[f64; DEM_CLASSES]],
    targets: &[usize],
) -> Result<(f64, Vec<[f64; DEM_CLASSES]>)> {
    if logits.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if logits.len() != targets.len() || targets.iter().any(|&t| t >= DEM_CLASSES) {
        return Err(Error::Shape("demographic targets do not match the logits".into()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &t) in logits.iter().zip(targets) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = row.map(|z| (z - m).exp());
        let sum: f64 = exps.iter().sum();
        loss += m + sum.ln() - row[t];
        let mut g = exps.map(|e| e / sum / n);
        g[t] -= 1.0 / n;
        grads.push(g);
    }
    Ok((loss / n, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupAccuracyVector {
    pub acc: [f64; GROUPS],
    pub present: [bool; GROUPS],
    pub counts: [usize; GROUPS],
}

impl GroupAccuracyVector {
    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }
}

/// Soft accuracy of each group present in the batch.
pub fn soft_group_accuracy(p: &[f64], y: &[u8], group_ids: &[usize]) -> Result<GroupAccuracyVector> {
    if p.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if p.len() != y.len() || p.len() != group_ids.len() || group_ids.iter().any(|&g| g >= GROUPS) {
        return Err(Error::Shape("probabilities, labels and groups do not line up".into()));
    }
    let mut out = GroupAccuracyVector::default();
    for ((&pi, &yi), &g) in p.iter().zip(y).zip(group_ids) {
        let yf = f64::from(yi);
        out.acc[g] += yf * pi + (1.0 - yf) * (1.0 - pi);
        out.counts[g] += 1;
    }
    for g in 0..GROUPS {
        if out.counts[g] > 0 {
            out.present[g] = true;
            out.acc[g] /= out.counts[g] as f64;
        }
    }
    Ok(out)
}

/// Population variance over present groups and its gradient (zero for absent groups).
pub fn accuracy_variance(acc: &GroupAccuracyVector) -> Result<(f64, [f64; GROUPS])> {
    let k = acc.present_count();
    if k == 0 {
        return Err(Error::invalid("no group present"));
    }
    let kf = k as f64;
    let mean = (0..GROUPS)
        .filter(|&g| acc.present[g])
        .map(|g| acc.acc[g])
        .sum::<f64>()
        / kf;
    let mut var = 0.0;
    let mut grad = [0.0; GROUPS];
    for g in (0..GROUPS).filter(|&g| acc.present[g]) {
        let d = acc.acc[g] - mean;
        var += d * d;
        grad[g] = 2.0 * d / kf;
    }
    Ok((var / kf, grad))
}

/// `L = L_real + λ·Var_acc + L_dem` and its gradients with respect to both logit sets.
pub fn total_loss(
    fake_logits: &[f64],
    dem_logits: &[[f64; DEM_CLASSES]],
    batch: &Batch,
    lambda: f64,
) -> Result<(LossBreakdown, LogitGrads)> {
    if fake_logits.len() != batch.len() || dem_logits.len() != batch.len() {
        return Err(Error::Shape("logits do not match the batch".into()));
    }
    let p: Vec<f64> = fake_logits.iter().map(|&z| sigmoid(z)).collect();
    let (l_real, d_bce) = bce_loss(&p, &batch.labels_real)?;
    let (l_dem, d_dem) = demographic_ce(dem_logits, batch.labels_dem())?;
    let acc = soft_group_accuracy(&p, &batch.labels_real, &batch.group_ids)?;
    let (var_acc, d_var) = accuracy_variance(&acc)?;

    let fake = fake_logits
        .iter()
        .zip(&p)
        .enumerate()
        .map(|(i, (&z, &pi))| {
            let g = batch.group_ids[i];
            let sign = 2.0 * f64::from(batch.labels_real[i]) - 1.0;
            let d_p = d_bce[i] + lambda * d_var[g] * sign / acc.counts[g] as f64;
            d_p * pi * sigmoid(-z)
        })
        .collect();
    Ok((
        LossBreakdown::compose(l_real, l_dem, var_acc, lambda),
        LogitGrads { fake, dem: d_dem },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageTensor;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bce_examples() {
        let (l, _) = bce_loss(&[0.5], &[1]).unwrap();
        assert!(close(l, 2f64.ln(), 1e-12));
        let (l, _) = bce_loss(&[1.0 - 1e-7], &[1]).unwrap();
        assert!(close(l, 1e-7, 1e-12), "{l}");
        let (l, _) = bce_loss(&[0.9, 0.2], &[1, 0]).unwrap();
        assert!(close(l, 0.164252, 1e-6), "{l}");
        assert!(bce_loss(&[], &[]).is_err());
    }

    #[test]
    fn demographic_ce_examples() {
        let (l, _) = demographic_ce(&[[0.3; 8]], &[5]).unwrap();
        assert!(close(l, 8f64.ln(), 1e-12));
        let mut row = [0.0; 8];
        row[2] = 30.0;
        let (l, _) = demographic_ce(&[row], &[2]).unwrap();
        assert!(l < 1e-9);
        let mut row = [0.0; 8];
        row[0] = 1.0;
        let (l, _) = demographic_ce(&[row], &[0]).unwrap();
        let e = std::f64::consts::E;
        assert!(close(l, -(e / (e + 7.0)).ln(), 1e-12));
        assert!(close(l, 1.274009, 1e-6), "{l}");
    }

    #[test]
    fn soft_accuracy_examples() {
        let acc = soft_group_accuracy(&[0.8, 0.4, 0.1], &[1, 1, 0], &[0, 0, 3]).unwrap();
        assert!(close(acc.acc[0], 0.6, 1e-12));
        assert!(close(acc.acc[3], 0.9, 1e-12));
        assert_eq!(acc.present_count(), 2);

        let acc = soft_group_accuracy(&[1.0, 0.0], &[1, 0], &[4, 4]).unwrap();
        assert_eq!(acc.present_count(), 1);
        assert!(close(acc.acc[4], 1.0, 1e-12));
    }

    #[test]
    fn variance_examples() {
        let mut v = GroupAccuracyVector::default();
        for g in 0..3 {
            v.acc[g] = 0.9;
            v.present[g] = true;
        }
        assert!(close(accuracy_variance(&v).unwrap().0, 0.0, 1e-15));

        let mut one = GroupAccuracyVector::default();
        one.acc[2] = 0.4;
        one.present[2] = true;
        assert_eq!(accuracy_variance(&one).unwrap().0, 0.0);

        let mut two = GroupAccuracyVector::default();
        two.acc[0] = 0.9;
        two.acc[1] = 0.8;
        two.present[0] = true;
        two.present[1] = true;
        assert!(close(accuracy_variance(&two).unwrap().0, 0.0025, 1e-15));

        assert!(accuracy_variance(&GroupAccuracyVector::default()).is_err());
    }

    fn batch(labels: Vec<u8>, groups: Vec<usize>) -> Batch {
        let images = (0..labels.len()).map(|_| ImageTensor::filled(8, 8, 0.5).unwrap()).collect();
        Batch::new(images, labels, groups).unwrap()
    }

    #[test]
    fn total_loss_composition() {
        let b = batch(vec![1, 0, 1, 0], vec![0, 0, 5, 5]);
        let z = [0.3, -1.2, 2.0, 0.7];
        let dem = [[0.1, 0.2, 0.0, -0.3, 0.5, 0.0, 0.0, 0.1]; 4];
        let (l0, _) = total_loss(&z, &dem, &b, 0.0).unwrap();
        assert_eq!(l0.total, l0.l_real + l0.l_dem);
        let (l20, _) = total_loss(&z, &dem, &b, 20.0).unwrap();
        assert_eq!(l20.total, l20.l_real + 20.0 * l20.var_acc + l20.l_dem);
        assert_eq!(l20.lambda, 20.0);
        assert!(l20.var_acc > 0.0);
    }

    /// Central differences in f64 for each component, h = 1e-6.
    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
    }

    #[test]
    fn component_gradients_match_central_differences() {
        let p = [0.31, 0.77, 0.05, 0.6];
        let y = [1u8, 0, 1, 1];
        let (_, g) = bce_loss(&p, &y).unwrap();
        for i in 0..p.len() {
            let num = central(
                |x| {
                    let mut q = p;
                    q[i] = x;
                    bce_loss(&q, &y).unwrap().0
                },
                p[i],
            );
            assert!(rel_err(g[i], num) < 1e-6, "bce {i}: {} vs {num}", g[i]);
        }

        let logits = [[0.4, -1.0, 2.2, 0.0, 0.3, -0.7, 1.1, 0.9], [1.0; 8]];
        let targets = [2, 6];
        let (_, g) = demographic_ce(&logits, &targets).unwrap();
        for s in 0..2 {
            for c in 0..8 {
                let num = central(
                    |x| {
                        let mut l = logits;
                        l[s][c] = x;
                        demographic_ce(&l, &targets).unwrap().0
                    },
                    logits[s][c],
                );
                assert!(rel_err(g[s][c], num) < 1e-6);
            }
        }

        let mut acc = GroupAccuracyVector::default();
        for (g, a) in [(0, 0.7), (2, 0.95), (5, 0.4)] {
            acc.acc[g] = a;
            acc.present[g] = true;
        }
        let (_, g) = accuracy_variance(&acc).unwrap();
        for k in [0, 2, 5] {
            let num = central(
                |x| {
                    let mut a = acc;
                    a.acc[k] = x;
                    accuracy_variance(&a).unwrap().0
                },
                acc.acc[k],
            );
            assert!(rel_err(g[k], num) < 1e-6);
        }
    }

    #[test]
    fn total_loss_logit_gradient_matches_central_differences() {
        let b = batch(vec![1, 0, 1, 0, 1], vec![0, 0, 5, 5, 7]);
        let z = [0.3, -1.2, 2.0, 0.7, -0.4];
        let dem = [[0.1, 0.2, 0.0, -0.3, 0.5, 0.0, 0.0, 0.1]; 5];
        let (_, g) = total_loss(&z, &dem, &b, 20.0).unwrap();
        for i in 0..z.len() {
            let num = central(
                |x| {
                    let mut zz = z;
                    zz[i] = x;
                    total_loss(&zz, &dem, &b, 20.0).unwrap().0.total
                },
                z[i],
            );
            assert!(rel_err(g.fake[i], num) < 1e-6, "{i}: {} vs {num}", g.fake[i]);
        }
        for c in 0..8 {
            let num = central(
                |x| {
                    let mut d = dem;
                    d[3][c] = x;
                    total_loss(&z, &d, &b, 20.0).unwrap().0.total
                },
                dem[3][c],
            );
            assert!(rel_err(g.dem[3][c], num) < 1e-6);
        }
    }

    #[test]
    fn surrogate_approaches_hard_accuracy() {
        let p = [0.9995, 0.0004, 0.9992, 0.0001];
        let y = [1u8, 0, 0, 0];
        let g = [1usize, 1, 2, 2];
        let soft = soft_group_accuracy(&p, &y, &g).unwrap();
        let hard = |k: usize| {
            let rows: Vec<usize> = (0..4).filter(|&i| g[i] == k).collect();
            rows.iter().filter(|&&i| (p[i] >= 0.5) == (y[i] == 1)).count() as f64 / rows.len() as f64
        };
        // Each sample contributes at most |p − round(p)| < 1e-3 of error.
        assert!((soft.acc[1] - hard(1)).abs() < 1e-3);
        assert!((soft.acc[2] - hard(2)).abs() < 1e-3);

        let p = [1.0 - 1e-7, 5e-8, 1.0 - 2e-7];
        let y = [1u8, 0, 0];
        let soft = soft_group_accuracy(&p, &y, &[3, 3, 3]).unwrap();
        assert!((soft.acc[3] - 2.0 / 3.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn losses_are_bounded_and_order_invariant(
            rows in proptest::collection::vec(
                (-8.0f64..8.0, 0u8..2, 0usize..8, proptest::array::uniform8(-5.0f64..5.0)),
                1..12,
            ),
            lambda in 0.0f64..50.0,
            rot in 0usize..12,
        ) {
            let z: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let y: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let g: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let d: Vec<[f64; 8]> = rows.iter().map(|r| r.3).collect();
            let b = batch(y.clone(), g.clone());
            let (l, _) = total_loss(&z, &d, &b, lambda).unwrap();
            prop_assert!(l.l_real >= 0.0 && l.l_dem >= 0.0 && l.var_acc >= 0.0);
            prop_assert!(l.var_acc <= 0.25);

            let k = rot % rows.len();
            let rotate = |v: &[f64]| { let mut v = v.to_vec(); v.rotate_left(k); v };
            let mut y2 = y.clone(); y2.rotate_left(k);
            let mut g2 = g.clone(); g2.rotate_left(k);
            let mut d2 = d.clone(); d2.rotate_left(k);
            let (l2, _) = total_loss(&rotate(&z), &d2, &batch(y2, g2), lambda).unwrap();
            prop_assert!((l.total - l2.total).abs() <= 1e-12 * l.total.abs().max(1.0));
        }
    }
}
