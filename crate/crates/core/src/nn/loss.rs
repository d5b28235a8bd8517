use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

/// A scalar loss together with its gradient w.r.t. the loss input.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f32,
    pub grad: Tensor,
}

fn logits_dims(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = match *logits.shape() {
        [b, k] => (b, k),
        _ => {
            return Err(shape_err(format!(
                "cross entropy expects [batch, classes] logits, got {:?}",
                logits.shape()
            )))
        }
    };
    if k < 2 {
        return Err(invalid(format!("cross entropy needs at least 2 classes, got {k}")));
    }
    if labels.len() != b {
        return Err(shape_err(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    Ok((b, k))
}

/// Mean over the batch of `-log softmax(logits)[label]`, with gradient.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossGrad> {
    let (b, k) = logits_dims(logits, labels)?;
    let mut grad = vec![0.0f32; b * k];
    let mut total = 0.0f64;
    let inv_b = 1.0 / b as f32;
    for (i, (row, g)) in logits.data().chunks(k).zip(grad.chunks_mut(k)).enumerate() {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f32 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        total += f64::from(lse - row[labels[i]]);
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - lse).exp() * inv_b;
        }
        g[labels[i]] -= inv_b;
    }
    let loss = (total / b as f64) as f32;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross entropy".into()));
    }
    Ok(LossGrad {
        loss,
        grad: Tensor::from_parts(vec![b, k], grad),
    })
}

/// Predicted class per row (first maximum on ties).
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[logits.ndim() - 1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// Mean squared error with gradient w.r.t. `prediction`.
pub fn mse(prediction: &Tensor, target: &Tensor) -> Result<LossGrad> {
    prediction.expect_same_shape(target, "mse")?;
    let n = prediction.len() as f32;
    let mut total = 0.0f64;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            total += f64::from(d * d);
            2.0 * d / n
        })
        .collect();
    Ok(LossGrad {
        loss: (total / f64::from(n)) as f32,
        grad: Tensor::from_parts(prediction.shape().to_vec(), grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        for k in [2usize, 3, 7, 10] {
            let logits = Tensor::full(&[4, k], 0.3);
            let l = cross_entropy(&logits, &[0, 1, 0, 1]).unwrap();
            assert!((l.loss - (k as f32).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_logits_give_zero_loss() {
        let logits = Tensor::new(vec![1, 2], vec![20.0, -20.0]).unwrap();
        assert!(cross_entropy(&logits, &[0]).unwrap().loss <= 1e-8);
    }

    #[test]
    fn scalar_value() {
        // ln(1 + e^-1)
        let logits = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let want = (1.0f64 + (-1.0f64).exp()).ln();
        assert!((f64::from(cross_entropy(&logits, &[0]).unwrap().loss) - want).abs() < 1e-6);
        assert!((want - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn errors() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(matches!(
            cross_entropy(&logits, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(cross_entropy(&Tensor::zeros(&[2, 1]), &[0, 0]).is_err());
        assert!(cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.7).sin() * 3.0);
        let l = cross_entropy(&logits, &[3, 0, 2]).unwrap();
        for row in l.grad.data().chunks(4) {
            assert!(row.iter().sum::<f32>().abs() < 1e-6);
        }
    }

    #[test]
    fn mse_unit_offset() {
        let a = Tensor::from_fn(&[2, 3], |i| i as f32);
        let b = a.map(|v| v + 1.0);
        assert_eq!(mse(&a, &a).unwrap().loss, 0.0);
        assert!((mse(&a, &b).unwrap().loss - 1.0).abs() < 1e-7);
    }
}
