use super::FlowField;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outlier definition for [`f1_all`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierRule {
    /// End-point error above 3 px and above 5% of the true magnitude.
    #[default]
    And,
    /// End-point error above 3 px or above 5% of the true magnitude.
    Or,
}

fn masked_epe(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<Vec<(f64, f64)>> {
    pred.check_same_shape(gt)?;
    if mask.len() != gt.valid.len() {
        return Err(Error::Shape(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            gt.valid.len()
        )));
    }
    let (p, g) = (pred.uv.data(), gt.uv.data());
    let out: Vec<(f64, f64)> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| {
            let du = p[2 * i] as f64 - g[2 * i] as f64;
            let dv = p[2 * i + 1] as f64 - g[2 * i + 1] as f64;
            let mag = (g[2 * i] as f64).hypot(g[2 * i + 1] as f64);
            (du.hypot(dv), mag)
        })
        .collect();
    if out.is_empty() {
        return Err(Error::Usage("metric over an empty mask".into()));
    }
    Ok(out)
}

/// Mean end-point error over masked pixels.
pub fn aepe(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<f64> {
    let e = masked_epe(pred, gt, mask)?;
    Ok(e.iter().map(|(d, _)| d).sum::<f64>() / e.len() as f64)
}

/// Percentage of masked pixels counted as outliers.
pub fn f1_all(pred: &FlowField, gt: &FlowField, mask: &[bool], rule: OutlierRule) -> Result<f64> {
    let e = masked_epe(pred, gt, mask)?;
    let bad = e
        .iter()
        .filter(|&&(d, mag)| match rule {
            OutlierRule::And => d > 3.0 && d > 0.05 * mag,
            OutlierRule::Or => d > 3.0 || d > 0.05 * mag,
        })
        .count();
    Ok(100.0 * bad as f64 / e.len() as f64)
}

/// `sum_k gamma^(K-k) * L1(pred_k, gt)` over a sequence of K estimates,
/// with L1 the mean absolute difference.
pub fn flow_loss<T: Scalar>(tape: &mut Tape<T>, preds: &[Var], gt: Var, gamma: f64) -> Result<Var> {
    let k = preds.len();
    if k == 0 {
        return Err(Error::Usage("flow loss needs at least one estimate".into()));
    }
    let mut total: Option<Var> = None;
    for (i, &p) in preds.iter().enumerate() {
        let l = tape.l1_loss(p, gt);
        let wgt = gamma.powi((k - 1 - i) as i32);
        let term = if wgt == 1.0 { l } else { tape.scale(l, T::lit(wgt)) };
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    Ok(total.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(h: usize, w: usize, f: impl FnMut(usize) -> f32) -> FlowField {
        FlowField::new(Tensor::from_fn([h, w, 2], f))
    }

    #[test]
    fn aepe_hand_cases() {
        let gt = field(3, 3, |i| i as f32 * 0.1);
        let all = vec![true; 9];
        assert_eq!(aepe(&gt, &gt, &all).unwrap(), 0.0);
        let off = field(3, 3, |i| i as f32 * 0.1 + if i % 2 == 0 { 3.0 } else { 4.0 });
        assert!((aepe(&off, &gt, &all).unwrap() - 5.0).abs() < 1e-5);
        assert!(aepe(&gt, &gt, &[false; 9]).is_err());
    }

    #[test]
    fn aepe_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = field(4, 4, |_| rng.gen_range(-5.0..5.0));
        let b = field(4, 4, |_| rng.gen_range(-5.0..5.0));
        let mask: Vec<bool> = (0..16).map(|i| i % 3 != 0).collect();
        let mut sum = 0.0;
        let mut n = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                if mask[y * 4 + x] {
                    let (p, q) = (a.at(y, x), b.at(y, x));
                    sum += (((p.0 - q.0) as f64).powi(2) + ((p.1 - q.1) as f64).powi(2)).sqrt();
                    n += 1.0;
                }
            }
        }
        assert!((aepe(&a, &b, &mask).unwrap() - sum / n).abs() < 1e-12);
    }

    #[test]
    fn f1_single_pixel_cases() {
        let gt = field(1, 1, |i| if i == 0 { 100.0 } else { 0.0 });
        let near = field(1, 1, |i| if i == 0 { 104.0 } else { 0.0 });
        let far = field(1, 1, |i| if i == 0 { 106.0 } else { 0.0 });
        assert_eq!(f1_all(&gt, &gt, &[true], OutlierRule::And).unwrap(), 0.0);
        assert_eq!(f1_all(&near, &gt, &[true], OutlierRule::And).unwrap(), 0.0);
        assert_eq!(f1_all(&far, &gt, &[true], OutlierRule::And).unwrap(), 100.0);
        assert_eq!(f1_all(&near, &gt, &[true], OutlierRule::Or).unwrap(), 100.0);
    }

    #[test]
    fn flow_loss_hand_case() {
        let mut tape = Tape::<f64>::new();
        let gt = tape.constant(Tensor::zeros([1, 2, 2, 2]));
        let p1 = tape.constant(Tensor::full([1, 2, 2, 2], 2.0));
        let p2 = tape.constant(Tensor::full([1, 2, 2, 2], -1.0));
        let l = flow_loss(&mut tape, &[p1, p2], gt, 0.5).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);
        let z = flow_loss(&mut tape, &[gt], gt, 0.8).unwrap();
        assert_eq!(tape.value(z).item(), 0.0);
        assert!(flow_loss(&mut tape, &[], gt, 0.8).is_err());
    }
}
