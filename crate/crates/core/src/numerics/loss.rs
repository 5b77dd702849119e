use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Label value marking a missing answer.
pub const SENTINEL: i64 = -100;

/// Rows whose label is not `sentinel`, after range-checking every label.
pub fn valid_rows(labels: &[i64], classes: usize, sentinel: i64) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for (row, &label) in labels.iter().enumerate() {
        if label == sentinel {
            continue;
        }
        if label < 0 || label as usize >= classes {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Mean negative log-likelihood over rows whose label is not `sentinel`.
///
/// Returns a zero scalar with no gradient path when every label is masked.
pub fn cross_entropy_masked(
    graph: &mut Graph,
    logits: Var,
    labels: &[i64],
    sentinel: i64,
) -> Result<Var> {
    let shape = graph.shape(logits).to_vec();
    let [rows, classes] = shape[..] else {
        return Err(Error::shape(
            "cross_entropy_masked",
            &shape,
            &[labels.len()],
        ));
    };
    if rows != labels.len() {
        return Err(Error::shape(
            "cross_entropy_masked",
            &shape,
            &[labels.len()],
        ));
    }
    let valid = valid_rows(labels, classes, sentinel)?;
    if valid.is_empty() {
        return graph.constant(Tensor::scalar(0.0));
    }
    let logp = graph.log_softmax(logits, 1)?;
    // one-hot selector scaled by -1/N
    let mut pick = vec![0.0; rows * classes];
    let scale = -1.0 / valid.len() as f64;
    for &r in &valid {
        pick[r * classes + labels[r] as usize] = scale;
    }
    let pick = graph.constant(Tensor::new(shape, pick)?)?;
    let picked = graph.mul(logp, pick)?;
    graph.sum(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(g: &mut Graph, rows: &[Vec<f64>]) -> Var {
        g.variable(Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let mut g = Graph::new();
        let l = logits(&mut g, &[vec![10.0, -10.0]]);
        let loss = cross_entropy_masked(&mut g, l, &[0], SENTINEL).unwrap();
        assert!(g.value(loss).item() < 1e-4);
    }

    #[test]
    fn uniform_is_ln2() {
        let mut g = Graph::new();
        let l = logits(&mut g, &[vec![0.0, 0.0]]);
        let loss = cross_entropy_masked(&mut g, l, &[1], SENTINEL).unwrap();
        assert!((g.value(loss).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn masked_row_matches_single_example_and_gets_zero_grad() {
        let row = vec![0.3, -1.2, 2.0];
        let mut single = Graph::new();
        let l1 = logits(&mut single, &[row.clone()]);
        let loss1 = cross_entropy_masked(&mut single, l1, &[2], SENTINEL).unwrap();
        let g1 = single.backward(loss1).unwrap();

        let mut pair = Graph::new();
        let l2 = logits(&mut pair, &[vec![5.0, 1.0, -3.0], row]);
        let loss2 = cross_entropy_masked(&mut pair, l2, &[SENTINEL, 2], SENTINEL).unwrap();
        assert!((pair.value(loss2).item() - single.value(loss1).item()).abs() < 1e-15);
        let g2 = pair.backward(loss2).unwrap();
        let g2 = g2.get(l2).unwrap();
        assert!(g2[..3].iter().all(|v| *v == 0.0));
        for (a, b) in g2[3..].iter().zip(g1.get(l1).unwrap()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn all_masked_is_zero_without_gradient() {
        let mut g = Graph::new();
        let l = logits(&mut g, &[vec![1.0, 2.0]]);
        let loss = cross_entropy_masked(&mut g, l, &[SENTINEL], SENTINEL).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(l).is_none());
    }

    #[test]
    fn out_of_range_label_is_error() {
        let mut g = Graph::new();
        let l = logits(&mut g, &[vec![1.0, 2.0]]);
        assert!(matches!(
            cross_entropy_masked(&mut g, l, &[2], SENTINEL),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(cross_entropy_masked(&mut g, l, &[-1], SENTINEL).is_err());
    }
}
